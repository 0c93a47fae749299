"""
Testes da validação por Monte Carlo, do estudo do coeficiente e da CLI
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.sparse.linalg import spsolve

import src.adapt as adapt
import src.bench as bench
from src.adapt import RANK, choose_branch
from src.bench import (EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, build_reference,
                       cli_run, coefficient_study, convergence_row, mc_error,
                       reference_solve, run_experiment, sample_solution)
from src.fem import (assemble_load, assemble_stiffness, element_data,
                     initial_mesh, uniform_refine)
from src.galerkin import cold_start
from src.lognormal import a_exact
from src.models import AdaptConfig, ExperimentConfig, FieldSpec, SolverError
from src.processors import read_convergence
from src.ttcore import TTTensor

from .conftest import SMALL_QUAD
from .oracles import sample_dense

FLAT_CONFIG = """\
AMP=0
M_TRUNC=10
QUAD_CELLS=5
QUAD_ORDER=3
MAX_ITERATIONS=3
TOLERANCE=1e-12
N_MC=2
REFERENCE_DEPTH=1
SEED=7
COEFF_STUDY=false
"""


def _write_config(tmp_path, text, name="experimento.env"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def teste_amostra_contra_contracao_densa(small_spec, mesh4, rng):
    params = small_spec.measure()
    W = cold_start((9, 3, 2), 2, rng)
    y = np.array([0.7, -1.2, 3.0])
    sample = sample_solution(W, mesh4, params, y)
    assert_allclose(sample.values, sample_dense(W, y, params.sigma[:2]), atol=1e-12)


def teste_amostra_separavel_e_na_origem(small_spec, mesh4, rng):
    params = small_spec.measure()
    u = rng.standard_normal(9)
    v = np.array([0.5, 2.0, -1.0])
    W = TTTensor.rank1([u, v])
    sigma = params.sigma[0]
    y = 0.8
    expected = u * (v[0] + v[1] * y / sigma + v[2] * ((y / sigma) ** 2 - 1) / np.sqrt(2))
    assert_allclose(sample_solution(W, mesh4, params, [y]).values, expected, rtol=1e-12)
    at_zero = sample_solution(TTTensor.rank1([u, [3.0]]), mesh4, params, [0.0])
    assert_allclose(at_zero.values, 3.0 * u)
    with pytest.raises(ValueError):
        sample_solution(cold_start((9, 2, 2), 1, rng), mesh4, params, [0.1])


def teste_referencia_poisson(flat_spec):
    mesh = initial_mesh(32)
    u = reference_solve(flat_spec, np.zeros(10), mesh)
    assert np.max(u.values) == pytest.approx(0.07367, abs=2e-3)


def teste_referencia_igual_a_solucao_direta(small_spec, mesh4, rng):
    y = rng.standard_normal(10)
    data = element_data(mesh4)
    a_vals = a_exact(data.points, y, small_spec, M=10)
    direct = spsolve(assemble_stiffness(mesh4, a_vals, data=data).tocsc(), assemble_load(mesh4, data=data))
    assert_allclose(reference_solve(small_spec, y, mesh4).values, direct, rtol=1e-12, atol=1e-15)


def teste_referencia_aninhada_tem_mais_energia(flat_spec):
    coarse = initial_mesh(4)
    fine = uniform_refine(coarse, 2)
    y = np.zeros(10)

    def energy(mesh):
        u = reference_solve(flat_spec, y, mesh).values
        return float(assemble_load(mesh) @ u)

    assert energy(fine) >= energy(coarse)


def teste_referencia_amostra_patologica(small_spec, mesh4):
    with np.errstate(over="ignore", under="ignore"):
        with pytest.raises(SolverError):
            reference_solve(small_spec, np.full(10, 1e6), mesh4)


def teste_referencia_deterministica_e_independente_do_paralelismo(small_spec, mesh4):
    first = build_reference(small_spec, mesh4, 3, seed=5, max_concurrent=1)
    second = build_reference(small_spec, mesh4, 3, seed=5, max_concurrent=4)
    assert first.n_samples == 3
    assert first.samples.shape == (3, 10)
    assert np.array_equal(first.samples, second.samples)
    assert np.array_equal(first.solutions, second.solutions)
    # cada amostra tem o seu próprio fluxo
    shorter = build_reference(small_spec, mesh4, 2, seed=5)
    assert np.array_equal(shorter.samples, first.samples[:2])
    other = build_reference(small_spec, mesh4, 2, seed=6)
    assert not np.array_equal(other.samples, shorter.samples)
    with pytest.raises(ValueError):
        build_reference(small_spec, mesh4, 0, seed=5)


def teste_referencia_com_campo_truncado(small_spec, mesh4):
    """Referência do modo somente malha: amostras com truncation entradas"""
    reference = build_reference(small_spec, mesh4, 2, seed=5, max_concurrent=1, truncation=2)
    assert reference.samples.shape == (2, 2)
    padded = np.concatenate([reference.samples[0], np.zeros(small_spec.m_trunc - 2)])
    assert_allclose(reference.solutions[0], reference_solve(small_spec, padded, mesh4).values,
                    rtol=1e-12, atol=1e-14)
    with pytest.raises(ValueError):
        build_reference(small_spec, mesh4, 1, seed=5, truncation=small_spec.m_trunc + 1)


def teste_referencia_reamostra_falhas(small_spec, mesh4, monkeypatch):
    original = bench.reference_solve
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 1:
            raise SolverError("amostra patológica")
        return original(*args, **kwargs)

    monkeypatch.setattr(bench, "reference_solve", flaky)
    reference = build_reference(small_spec, mesh4, 1, seed=5, max_concurrent=1)
    assert calls["n"] == 2
    assert np.all(np.isfinite(reference.solutions))


def teste_referencia_desiste_apos_reamostragens(small_spec, mesh4, monkeypatch):
    def always_fails(*args, **kwargs):
        raise SolverError("amostra patológica")

    monkeypatch.setattr(bench, "reference_solve", always_fails)
    with pytest.raises(SolverError):
        build_reference(small_spec, mesh4, 2, seed=5, max_concurrent=1)


def teste_erro_mc_solucao_nula_e_exata(flat_spec, mesh4):
    params = flat_spec.measure()
    reference = build_reference(flat_spec, mesh4, 3, seed=1)
    assert mc_error(TTTensor.zeros((9, 2)), mesh4, params, reference) == pytest.approx(1.0)
    u = reference.solutions[0]
    W = TTTensor.rank1([u, [1.0, 0.0]])
    assert mc_error(W, mesh4, params, reference) <= 1e-12


def teste_erro_mc_com_prolongamento(flat_spec, mesh4):
    params = flat_spec.measure()
    reference = build_reference(flat_spec, uniform_refine(mesh4, 1), 2, seed=1)
    u = spsolve(assemble_stiffness(mesh4).tocsc(), assemble_load(mesh4))
    error = mc_error(TTTensor.rank1([u, [1.0, 0.0]]), mesh4, params, reference)
    assert 0.0 < error < 1.0


def teste_estudo_do_coeficiente(small_spec):
    rows = coefficient_study(small_spec, lengths=(2,), ranks=(1, 3), degree=3, n_samples=5, seed=3)
    assert [(r.L, r.s_max) for r in rows] == [(2, 1), (2, 3)]
    assert rows[1].rrms <= rows[0].rrms
    assert all(r.tt_dofs <= r.full_dofs for r in rows)
    assert all(r.seconds >= 0 for r in rows)


def teste_experimento_com_mc_intercalado(small_spec):
    adapt_config = AdaptConfig(field_spec=small_spec, tolerance=1e-8, max_iterations=3,
                               als_tol=1e-10, als_max_sweeps=20, seed=3)
    config = ExperimentConfig(adapt=adapt_config, n_mc=3, mc_every=2, reference_depth=1,
                              seed=3, coeff_study=False)
    result = run_experiment(config)
    assert len(result.rows) == 3
    assert result.coefficient_rows == []
    assert result.rows[1].mc_rrms is None
    for row in (result.rows[0], result.rows[2]):
        assert 0.0 < row.mc_rrms < 1.0
    assert result.rows[0] == convergence_row(result.state.history[0], result.rows[0].mc_rrms)


def teste_experimento_somente_malha_trunca_a_referencia(small_spec, monkeypatch):
    seen = []
    original = bench.build_reference

    def recording(*args, **kwargs):
        seen.append(kwargs.get("truncation"))
        return original(*args, **kwargs)

    monkeypatch.setattr(bench, "build_reference", recording)
    adapt_config = AdaptConfig(field_spec=small_spec, tolerance=1e-8, max_iterations=2, mode="mesh_only",
                               mesh_only_dims=2, mesh_only_degree=2, mesh_only_rank=2,
                               als_tol=1e-10, als_max_sweeps=20, seed=3)
    config = ExperimentConfig(adapt=adapt_config, n_mc=2, mc_every=1, reference_depth=1,
                              seed=3, coeff_study=False)
    result = run_experiment(config)
    assert seen == [2]
    assert all(0.0 < row.mc_rrms < 1.0 for row in result.rows)


def teste_cli_configuracao_ausente(tmp_path):
    out = tmp_path / "saida"
    assert cli_run(tmp_path / "nao_existe.env", output_dir=out) == EXIT_CONFIG
    assert not out.exists()


def teste_cli_chave_desconhecida(tmp_path):
    path = _write_config(tmp_path, "CHAVE_ESTRANHA=1\n")
    assert cli_run(path, output_dir=tmp_path / "saida") == EXIT_CONFIG
    assert not (tmp_path / "saida").exists()


def teste_cli_campo_constante(tmp_path):
    path = _write_config(tmp_path, FLAT_CONFIG)
    assert cli_run(path, output_dir=tmp_path / "a") == EXIT_OK
    df = read_convergence(tmp_path / "a" / "convergence.csv")
    assert len(df) == 3
    assert list(df["tag"]) == ["DET"] * 3
    assert (df["eta_param"] <= 1e-6 * df["eta_det"]).all()
    assert df["mc_rrms"].notna().all()
    assert not (tmp_path / "a" / "coefficient_report.csv").exists()


def teste_cli_reexecucao_identica(tmp_path):
    path = _write_config(tmp_path, FLAT_CONFIG)
    assert cli_run(path, output_dir=tmp_path / "a") == EXIT_OK
    assert cli_run(path, output_dir=tmp_path / "b") == EXIT_OK
    first = (tmp_path / "a" / "convergence.csv").read_bytes()
    second = (tmp_path / "b" / "convergence.csv").read_bytes()
    assert first == second
    assert first.endswith(b"\n") and b"\r" not in first


def teste_cli_falha_do_solver(tmp_path, monkeypatch):
    def failing(*args, **kwargs):
        raise SolverError("sistema local não SPD")

    monkeypatch.setattr(adapt, "als_solve", failing)
    path = _write_config(tmp_path, FLAT_CONFIG)
    assert cli_run(path, output_dir=tmp_path / "a") == EXIT_SOLVER
    assert len(read_convergence(tmp_path / "a" / "convergence.csv")) == 0


def teste_cli_estudo_do_coeficiente(tmp_path):
    text = (
        "AMP=0.9\nM_TRUNC=10\nQUAD_CELLS=5\nQUAD_ORDER=3\nMAX_ITERATIONS=1\nMC_EVERY=0\n"
        "COEFF_STUDY=true\nCOEFF_STUDY_L=2\nCOEFF_STUDY_SMAX=1,2\n"
        "COEFF_STUDY_DEGREE=3\nCOEFF_STUDY_SAMPLES=4\n"
    )
    path = _write_config(tmp_path, text)
    assert cli_run(path, output_dir=tmp_path / "a") == EXIT_OK
    report = (tmp_path / "a" / "coefficient_report.csv").read_text(encoding="utf-8").splitlines()
    assert report[0] == "L,s_max,rrms,tt_dofs,full_dofs,seconds"
    assert len(report) == 3


@pytest.mark.slow
def teste_experimento_de_referencia_reduz_o_erro():
    """15 iterações a partir de |T|=32, M=1, d=2, r=2: erro MC final ≤ 1/5 do inicial"""
    spec = FieldSpec(amp=0.9, decay=2.0, L=1, m_trunc=100, **SMALL_QUAD)
    adapt_config = AdaptConfig(field_spec=spec, max_iterations=15, seed=1)
    config = ExperimentConfig(adapt=adapt_config, n_mc=50, mc_every=14, reference_depth=1,
                              seed=1, coeff_study=False)
    result = run_experiment(config)
    first, last = result.rows[0], result.rows[-1]
    assert last.mc_rrms <= first.mc_rrms / 5
    assert last.eta_all < first.eta_all
    for record in result.state.history:
        best = choose_branch(record.report)
        # ramo RANK sem ligação livre recorre ao maior dos outros dois
        assert record.tag == best or (best == RANK and record.tag == choose_branch(record.report, exclude=(RANK,)))
    assert max(row.M for row in result.rows) >= 2
