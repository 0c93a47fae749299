"""
Processadores de entrada e saída: leitura do arquivo de configuração do
experimento e escrita dos relatórios CSV
"""

import logging
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Dict, List, Union

import pandas as pd
from dotenv import dotenv_values

from config.settings import RESULTS_DIR
from .models import (AdaptConfig, CoefficientRow, ConfigError, ConvergenceRow,
                     ExperimentConfig, FieldSpec)

logger = logging.getLogger(__name__)

CONVERGENCE_FILE = "convergence.csv"
COEFFICIENT_FILE = "coefficient_report.csv"
CSV_FLOAT_FORMAT = "%.10e"


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes", "sim"):
        return True
    if lowered in ("false", "0", "no", "nao", "não"):
        return False
    raise ValueError(f"valor booleano inválido: {value}")


def _parse_ints(value: str) -> tuple:
    return tuple(int(v) for v in value.replace(";", ",").split(",") if v.strip())


# chave -> (seção, campo, conversor)
CONFIG_KEYS: Dict[str, tuple] = {
    "AMP": ("field", "amp", float),
    "DECAY": ("field", "decay", float),
    "M_TRUNC": ("field", "m_trunc", int),
    "QUAD_CELLS": ("field", "quad_cells", int),
    "QUAD_ORDER": ("field", "quad_order", int),
    "RHO": ("adapt", "rho", float),
    "THETA": ("adapt", "theta", float),
    "MARKING": ("adapt", "marking", float),
    "TOLERANCE": ("adapt", "tolerance", float),
    "MAX_ITERATIONS": ("adapt", "max_iterations", int),
    "MAX_TT_DOFS": ("adapt", "max_tt_dofs", int),
    "RANK_CAP": ("adapt", "rank_cap", int),
    "COEFF_MAX_RANK": ("adapt", "coeff_max_rank", int),
    "INITIAL_MESH": ("adapt", "initial_mesh", int),
    "INITIAL_DEGREE": ("adapt", "initial_degree", int),
    "INITIAL_RANK": ("adapt", "initial_rank", int),
    "MODE": ("adapt", "mode", str),
    "VERBOSE": ("adapt", "verbose", _parse_bool),
    "N_MC": ("experiment", "n_mc", int),
    "MC_EVERY": ("experiment", "mc_every", int),
    "REFERENCE_DEPTH": ("experiment", "reference_depth", int),
    "SEED": ("experiment", "seed", int),
    "OUTPUT_DIR": ("experiment", "output_dir", str),
    "COEFF_STUDY": ("experiment", "coeff_study", _parse_bool),
    "COEFF_STUDY_L": ("experiment", "coeff_study_lengths", _parse_ints),
    "COEFF_STUDY_SMAX": ("experiment", "coeff_study_ranks", _parse_ints),
    "COEFF_STUDY_DEGREE": ("experiment", "coeff_study_degree", int),
    "COEFF_STUDY_SAMPLES": ("experiment", "coeff_study_samples", int),
    "CHECKPOINT": ("experiment", "checkpoint", _parse_bool),
}


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Lê um arquivo KEY=VALUE e monta o ExperimentConfig.

    Raises:
        ConfigError: arquivo ausente, chave desconhecida, valor inválido ou
        invariante violado
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Arquivo de configuração não encontrado: {path}")
    raw = dotenv_values(path)

    sections: Dict[str, Dict[str, Any]] = {"field": {}, "adapt": {}, "experiment": {}}
    for key, value in raw.items():
        name = key.strip().upper()
        if name not in CONFIG_KEYS:
            raise ConfigError(f"Chave desconhecida na configuração: {key}")
        if value is None or not value.strip():
            raise ConfigError(f"Chave {name} sem valor")
        section, attr, convert = CONFIG_KEYS[name]
        try:
            sections[section][attr] = convert(value.strip())
        except ValueError as e:
            raise ConfigError(f"Valor inválido para {name}: {value!r} ({e})") from e

    experiment = sections["experiment"]
    checkpoint = experiment.pop("checkpoint", False)
    seed = experiment.get("seed")
    try:
        field_spec = FieldSpec(**sections["field"])
        adapt_kwargs = dict(sections["adapt"], field_spec=field_spec)
        if seed is not None:
            adapt_kwargs["seed"] = seed
        if checkpoint:
            out = experiment.get("output_dir", str(RESULTS_DIR))
            adapt_kwargs["checkpoint_dir"] = str(Path(out) / "checkpoints")
        config = ExperimentConfig(adapt=AdaptConfig(**adapt_kwargs), **experiment)
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from e

    logger.info(f"Configuração carregada de {path} ({len(raw)} chaves, semente {config.seed})")
    return config


class ReportWriter:
    """Escreve os relatórios CSV de um experimento"""

    def __init__(self, output_dir: Union[str, Path]):
        self.output_dir = Path(output_dir)

    def _write(self, rows: List[Any], row_type: type, filename: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        columns = [f.name for f in fields(row_type)]
        df = pd.DataFrame([asdict(r) for r in rows], columns=columns)
        path = self.output_dir / filename
        df.to_csv(path, index=False, encoding="utf-8", lineterminator="\n",
                  float_format=CSV_FLOAT_FORMAT)
        logger.info(f"Relatório salvo em: {path} ({len(df)} linhas)")
        return path

    def write_convergence(self, rows: List[ConvergenceRow]) -> Path:
        return self._write(rows, ConvergenceRow, CONVERGENCE_FILE)

    def write_coefficient_report(self, rows: List[CoefficientRow]) -> Path:
        return self._write(rows, CoefficientRow, COEFFICIENT_FILE)


def read_convergence(path: Union[str, Path]) -> pd.DataFrame:
    """Lê um convergence.csv escrito por ReportWriter"""
    df = pd.read_csv(path)
    expected = [f.name for f in fields(ConvergenceRow)]
    if list(df.columns) != expected:
        raise ValueError(f"Cabeçalho inesperado em {path}: {list(df.columns)}")
    return df
