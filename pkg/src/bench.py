"""
Validação por Monte Carlo contra soluções de referência amostrais,
estudo de aproximação do coeficiente e execução completa de um experimento.
"""

import asyncio
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from scipy.sparse.linalg import splu

from config.settings import MC_MAX_CONCURRENT
from .adapt import AdaptState, IterationRecord, run
from .chaos import scaled_hermite_table
from .fem import (FeFunction, Mesh, assemble_load, assemble_stiffness,
                  element_data, prolongate_free, uniform_refine)
from .lognormal import a_exact, coeff_rrms, split_coefficient
from .models import (CoefficientRow, ConfigError, ConvergenceRow, ExperimentConfig,
                     FieldSpec, MeasureParams, SolverError)
from .processors import ReportWriter, load_experiment_config
from .ttcore import TTTensor, full_dofs, tt_dofs
from .utils import format_duration, print_run_summary

logger = logging.getLogger(__name__)

# Fluxo de números aleatórios do MC, separado do laço adaptativo
MC_STREAM = 1
MAX_RESAMPLES = 5

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def sample_solution(W: TTTensor, mesh: Mesh, params: MeasureParams, y: Sequence[float]) -> FeFunction:
    """Contrai os núcleos estocásticos com H_ν(y_m/σ_m)"""
    y = np.asarray(y, dtype=float)
    M = W.order - 1
    if len(y) < M:
        raise ValueError(f"Amostra com {len(y)} entradas para solução com M={M}")
    vec = np.ones(1)
    for m in range(M, 0, -1):
        core = W.core(m)
        H = scaled_hermite_table(core.shape[1] - 1, y[m - 1], params.sigma[m - 1])
        vec = np.einsum("aib,i,b->a", core, H, vec)
    return FeFunction(mesh, W.core(0)[0] @ vec)


def reference_solve(spec: FieldSpec, y: Sequence[float], mesh_ref: Mesh,
                    f: Optional[Callable] = None, data=None,
                    truncation: Optional[int] = None) -> FeFunction:
    """Solução P1 de −∇·(a(·,y)∇u) = f com o campo exato truncado em truncation (padrão M_trunc)"""
    data = data or element_data(mesh_ref)
    a_vals = a_exact(data.points, y, spec, M=spec.m_trunc if truncation is None else truncation)
    if not np.all(np.isfinite(a_vals)) or np.min(a_vals) <= 0:
        raise SolverError("Coeficiente amostral não finito ou não positivo")
    K = assemble_stiffness(mesh_ref, a_vals, data=data).tocsc()
    b = assemble_load(mesh_ref, f, data=data)
    lu = splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    if np.any(lu.U.diagonal() <= 0):
        raise SolverError("Sistema de referência não SPD")
    return FeFunction(mesh_ref, lu.solve(b))


@dataclass
class MonteCarloReference:
    """Amostras y e soluções de referência na malha fina"""
    mesh: Mesh
    samples: np.ndarray
    solutions: np.ndarray
    seed: int

    @property
    def n_samples(self) -> int:
        return len(self.samples)


class ReferenceSolver:
    """Soluções de referência concorrentes com limite de tarefas simultâneas"""

    def __init__(self, spec: FieldSpec, mesh_ref: Mesh, f: Optional[Callable] = None,
                 max_concurrent: int = MC_MAX_CONCURRENT, truncation: Optional[int] = None):
        self.spec = spec
        self.truncation = spec.m_trunc if truncation is None else int(truncation)
        if not 1 <= self.truncation <= spec.m_trunc:
            raise ValueError(f"Truncamento da referência fora de [1, M_trunc]: {self.truncation}")
        self.mesh = mesh_ref
        self.f = f
        self.data = element_data(mesh_ref)
        self.semaphore = asyncio.Semaphore(max_concurrent)

    def _solve_with_resampling(self, index: int, rng: np.random.Generator):
        y = rng.standard_normal(self.truncation)
        for attempt in range(MAX_RESAMPLES):
            try:
                return y, reference_solve(self.spec, y, self.mesh, self.f, self.data, self.truncation).values
            except SolverError as e:
                logger.warning(f"Amostra {index} descartada (tentativa {attempt + 1}): {e}")
                y = rng.standard_normal(self.truncation)
        raise SolverError(f"Amostra {index} falhou após {MAX_RESAMPLES} reamostragens")

    async def solve(self, index: int, rng: np.random.Generator):
        async with self.semaphore:
            return await asyncio.to_thread(self._solve_with_resampling, index, rng)

    async def solve_batch(self, n_samples: int, seed: int):
        streams = [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(MC_STREAM, i)))
                   for i in range(n_samples)]
        tasks = [asyncio.create_task(self.solve(i, rng)) for i, rng in enumerate(streams)]
        logger.info(f"Iniciando {n_samples} soluções de referência ({self.mesh.n_free} dofs)")
        # ordem das amostras preservada para a redução
        return await asyncio.gather(*tasks)


def build_reference(spec: FieldSpec, mesh_ref: Mesh, n_samples: int, seed: int,
                    f: Optional[Callable] = None,
                    max_concurrent: int = MC_MAX_CONCURRENT,
                    truncation: Optional[int] = None) -> MonteCarloReference:
    """N_MC soluções de referência; no modo somente malha o campo exato usa truncation dimensões"""
    if n_samples < 1:
        raise ValueError(f"N_MC deve ser ≥ 1: {n_samples}")

    async def _batch():
        return await ReferenceSolver(spec, mesh_ref, f, max_concurrent, truncation).solve_batch(n_samples, seed)

    results = asyncio.run(_batch())
    samples = np.stack([y for y, _ in results])
    solutions = np.stack([u for _, u in results])
    logger.info(f"✓ {n_samples} soluções de referência (semente {seed})")
    return MonteCarloReference(mesh=mesh_ref, samples=samples, solutions=solutions, seed=seed)


def mc_error(W: TTTensor, mesh: Mesh, params: MeasureParams, reference: MonteCarloReference) -> float:
    """√(Σ‖u − w‖²_X / Σ‖u‖²_X) com w interpolada na malha de referência"""
    K = assemble_stiffness(reference.mesh)
    error_sq = 0.0
    norm_sq = 0.0
    for y, u in zip(reference.samples, reference.solutions):
        w = prolongate_free(sample_solution(W, mesh, params, y).values, mesh, reference.mesh)
        diff = u - w
        error_sq += float(diff @ (K @ diff))
        norm_sq += float(u @ (K @ u))
    if norm_sq == 0.0:
        return 0.0 if error_sq == 0.0 else float("inf")
    return float(np.sqrt(error_sq / norm_sq))


def coefficient_study(spec: FieldSpec, lengths: Sequence[int], ranks: Sequence[int],
                      degree: int, n_samples: int, seed: int) -> List[CoefficientRow]:
    """RRMS, tt-dofs e tempo da divisão do coeficiente para cada par (L, s_max)"""
    rows = []
    total = len(lengths) * len(ranks)
    count = 0
    for L in lengths:
        spec_L = replace(spec, L=L, m_trunc=max(spec.m_trunc, L))
        for s_max in ranks:
            count += 1
            start = time.time()
            c = split_coefficient(spec_L, (degree,) * L, s_max)
            seconds = time.time() - start
            rrms = coeff_rrms(c, n_samples, np.random.default_rng(seed))
            # a0 nos nós da quadratura faz o papel do primeiro núcleo
            A = TTTensor([c.a0.T[None]] + list(c.cores))
            rows.append(CoefficientRow(L=L, s_max=s_max, rrms=rrms, tt_dofs=tt_dofs(A),
                                       full_dofs=full_dofs(A), seconds=seconds))
            logger.info(f"[{count}/{total}] L={L}, s_max={s_max}: RRMS={rrms:.3e}, tt-dofs={tt_dofs(A)}, {format_duration(seconds)}")
    return rows


def convergence_row(record: IterationRecord, mc_rrms: Optional[float] = None) -> ConvergenceRow:
    report = record.report
    return ConvergenceRow(
        iteration=record.iteration,
        tag=record.tag,
        M=record.M,
        d_max=record.d_max,
        r_max=record.r_max,
        m_dofs=record.m_dofs,
        tt_dofs=record.tt_dofs,
        op_dofs=record.op_dofs,
        eta_det=report.eta_det,
        eta_param=report.eta_param,
        eta_disc=report.eta_disc,
        eta_all=report.eta_all,
        mc_rrms=mc_rrms
    )


@dataclass
class _Snapshot:
    iteration: int
    mesh: Mesh
    W: TTTensor


@dataclass
class ExperimentResult:
    state: AdaptState
    rows: List[ConvergenceRow]
    coefficient_rows: List[CoefficientRow]


def run_experiment(config: ExperimentConfig, f: Optional[Callable] = None, full: bool = False,
                   with_coefficient_study: Optional[bool] = None) -> ExperimentResult:
    """
    Laço adaptativo, erro MC por iteração contra uma referência comum
    (malha final refinada REFERENCE_DEPTH vezes) e estudo do coeficiente.
    """
    snapshots: Dict[int, _Snapshot] = {}

    def keep(state: AdaptState, record: IterationRecord):
        snapshots[record.iteration] = _Snapshot(record.iteration, state.mesh, state.W)

    state = run(config.adapt, f, on_iteration=keep)

    errors: Dict[int, float] = {}
    if state.history and config.mc_every:
        last = state.history[-1].iteration
        selected = [s for it, s in sorted(snapshots.items())
                    if (it - 1) % config.mc_every == 0 or it == last]
        mesh_ref = uniform_refine(snapshots[last].mesh, config.reference_depth)
        params = config.field_spec.measure(rho=config.adapt.rho, theta=config.adapt.theta)
        # no modo somente malha a referência usa o mesmo campo de dimensão fixa
        truncation = config.adapt.mesh_only_dims if config.adapt.mode == "mesh_only" else None
        reference = build_reference(config.field_spec, mesh_ref, config.n_mc, config.seed, f,
                                    truncation=truncation)
        for snap in selected:
            errors[snap.iteration] = mc_error(snap.W, snap.mesh, params, reference)
            logger.info(f"Iteração {snap.iteration}: erro MC relativo {errors[snap.iteration]:.4e}")

    rows = [convergence_row(r, errors.get(r.iteration)) for r in state.history]

    coefficient_rows: List[CoefficientRow] = []
    if with_coefficient_study is None:
        with_coefficient_study = config.coeff_study
    if with_coefficient_study:
        lengths = list(config.coeff_study_lengths)
        ranks = list(config.coeff_study_ranks)
        if full:
            logger.warning("Estudo completo com L=100 e s_max=100: execução longa")
            lengths = sorted(set(lengths) | {100})
            ranks = sorted(set(ranks) | {100})
        coefficient_rows = coefficient_study(config.field_spec, lengths, ranks,
                                             config.coeff_study_degree, config.coeff_study_samples,
                                             config.seed)
    return ExperimentResult(state=state, rows=rows, coefficient_rows=coefficient_rows)


def cli_run(config_path: Union[str, Path], full: bool = False,
            output_dir: Optional[Union[str, Path]] = None) -> int:
    """
    Executa um experimento a partir do arquivo de configuração.

    Returns:
        0 em sucesso, 2 em erro de configuração, 3 em falha do solver
    """
    try:
        config = load_experiment_config(config_path)
    except ConfigError as e:
        logger.error(f"❌ Erro de configuração: {e}")
        return EXIT_CONFIG
    writer = ReportWriter(output_dir or config.output_dir)

    try:
        result = run_experiment(config, full=full)
    except SolverError as e:
        logger.error(f"❌ Falha do solver: {e}")
        return EXIT_SOLVER

    writer.write_convergence(result.rows)
    if result.coefficient_rows:
        writer.write_coefficient_report(result.coefficient_rows)
    print_run_summary(result.state)
    if not result.state.success:
        logger.error(f"❌ Execução interrompida: {result.state.error}")
        return EXIT_SOLVER
    return EXIT_OK
