"""
Testes da leitura da configuração, dos relatórios CSV e do ponto de entrada
"""

import pytest

from main import main
from src.adapt import AdaptState
from src.fem import initial_mesh
from src.models import CoefficientRow, ConfigError, ConvergenceRow
from src.processors import (COEFFICIENT_FILE, CONVERGENCE_FILE, ReportWriter,
                            load_experiment_config, read_convergence)
from src.utils import format_duration, print_run_summary

CONVERGENCE_HEADER = ("iteration,tag,M,d_max,r_max,m_dofs,tt_dofs,op_dofs,"
                      "eta_det,eta_param,eta_disc,eta_all,mc_rrms")


def _config_file(tmp_path, text):
    path = tmp_path / "experimento.env"
    path.write_text(text, encoding="utf-8")
    return path


def _row(iteration, mc_rrms=None):
    return ConvergenceRow(iteration=iteration, tag="DET", M=1, d_max=2, r_max=3, m_dofs=9,
                          tt_dofs=40, op_dofs=228, eta_det=0.125, eta_param=1e-3,
                          eta_disc=2.5e-4, eta_all=0.12625, mc_rrms=mc_rrms)


def teste_configuracao_completa(tmp_path):
    path = _config_file(tmp_path, (
        "# campo de teste\n"
        "AMP=0.6\nDECAY=4\nM_TRUNC=20\nRHO=1\nTHETA=0.1\nMARKING=0.5\n"
        "TOLERANCE=1e-4\nMAX_ITERATIONS=7\nRANK_CAP=12\nINITIAL_MESH=8\nMODE=mesh_only\n"
        "VERBOSE=true\nN_MC=20\nMC_EVERY=3\nREFERENCE_DEPTH=1\nSEED=99\n"
        f"OUTPUT_DIR={tmp_path / 'out'}\nCOEFF_STUDY=false\nCOEFF_STUDY_L=10,20\n"
    ))
    config = load_experiment_config(path)
    assert config.field_spec.amp == 0.6
    assert config.field_spec.decay == 4.0
    assert config.field_spec.m_trunc == 20
    assert config.adapt.marking == 0.5
    assert config.adapt.max_iterations == 7
    assert config.adapt.rank_cap == 12
    assert config.adapt.mode == "mesh_only"
    assert config.adapt.verbose is True
    assert config.n_mc == 20 and config.mc_every == 3 and config.reference_depth == 1
    assert config.coeff_study is False
    assert config.coeff_study_lengths == (10, 20)
    # a semente vale também para o laço adaptativo
    assert config.seed == 99 and config.adapt.seed == 99
    assert config.adapt.checkpoint_dir is None


def teste_configuracao_com_checkpoint(tmp_path):
    path = _config_file(tmp_path, f"M_TRUNC=10\nOUTPUT_DIR={tmp_path}\nCHECKPOINT=sim\n")
    config = load_experiment_config(path)
    assert config.adapt.checkpoint_dir == str(tmp_path / "checkpoints")


def teste_configuracao_vazia_usa_padroes(tmp_path):
    config = load_experiment_config(_config_file(tmp_path, ""))
    assert config.field_spec.amp == 0.9
    assert config.field_spec.decay == 2.0
    assert config.mc_every == 1


@pytest.mark.parametrize("text", [
    "CHAVE_ESTRANHA=1\n",
    "AMP=\n",
    "AMP\n",
    "N_MC=muitos\n",
    "VERBOSE=talvez\n",
    "MARKING=1.5\n",
    "DECAY=0.5\n",
    "AMP=-1\n",
    "N_MC=0\n",
    "M_TRUNC=5\n",
])
def teste_configuracao_invalida(tmp_path, text):
    with pytest.raises(ConfigError):
        load_experiment_config(_config_file(tmp_path, text))


def teste_configuracao_ausente(tmp_path):
    with pytest.raises(ConfigError):
        load_experiment_config(tmp_path / "nao_existe.env")


def teste_relatorio_de_convergencia(tmp_path):
    writer = ReportWriter(tmp_path / "novo" / "dir")
    path = writer.write_convergence([_row(1, 0.5), _row(2)])
    assert path.name == CONVERGENCE_FILE
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == CONVERGENCE_HEADER
    assert lines[1] == "1,DET,1,2,3,9,40,228,1.2500000000e-01,1.0000000000e-03,2.5000000000e-04,1.2625000000e-01,5.0000000000e-01"
    # mc_rrms ausente fica vazio
    assert lines[2].endswith(",")
    df = read_convergence(path)
    assert list(df["iteration"]) == [1, 2]
    assert df["mc_rrms"].isna().tolist() == [False, True]


def teste_relatorio_vazio_mantem_cabecalho(tmp_path):
    path = ReportWriter(tmp_path).write_convergence([])
    assert path.read_text(encoding="utf-8") == CONVERGENCE_HEADER + "\n"
    assert len(read_convergence(path)) == 0


def teste_relatorio_do_coeficiente(tmp_path):
    row = CoefficientRow(L=10, s_max=20, rrms=1.21e-3, tt_dofs=3000, full_dofs=10 ** 12, seconds=1.5)
    path = ReportWriter(tmp_path).write_coefficient_report([row])
    assert path.name == COEFFICIENT_FILE
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "L,s_max,rrms,tt_dofs,full_dofs,seconds"
    assert lines[1].startswith("10,20,1.2100000000e-03,3000,1000000000000,")


def teste_cabecalho_inesperado(tmp_path):
    path = tmp_path / "convergence.csv"
    path.write_text("iteration,tag\n1,DET\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_convergence(path)


def teste_main_configuracao_ausente(tmp_path):
    assert main([str(tmp_path / "nao_existe.env")]) == 2


def teste_main_execucao_curta(tmp_path):
    path = _config_file(tmp_path, (
        "AMP=0\nM_TRUNC=10\nQUAD_CELLS=5\nQUAD_ORDER=3\nMAX_ITERATIONS=2\n"
        "TOLERANCE=1e-12\nMC_EVERY=0\nCOEFF_STUDY=false\n"
    ))
    out = tmp_path / "saida"
    assert main([str(path), "--output-dir", str(out)]) == 0
    df = read_convergence(out / CONVERGENCE_FILE)
    assert list(df["iteration"]) == [1, 2]
    assert df["mc_rrms"].isna().all()


def teste_resumo_sem_iteracoes(capsys):
    state = AdaptState(mesh=initial_mesh(2), degrees=(2,))
    print_run_summary(state)
    assert "Nenhuma iteração" in capsys.readouterr().out


def teste_formatar_duracao():
    assert format_duration(0.0123) == "12 ms"
    assert format_duration(12.54) == "12.5 s"
    assert format_duration(123.4) == "2 min 03 s"
    assert format_duration(3900) == "1 h 05 min"
    with pytest.raises(ValueError):
        format_duration(-1.0)
