"""
Laço adaptativo: resolve, estima, escolhe o ramo de maior estimador e
refina malha, graus estocásticos ou posto TT.
"""

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .estimate import estimate
from .fem import Mesh, initial_mesh, refine
from .galerkin import (build_problem, cold_start, mean_preconditioner,
                       pad_degrees, prolongate_solution, als_solve)
from .lognormal import CoeffTT, positive_coefficient
from .models import AdaptConfig, EstimatorReport, SolverError
from .ttcore import (TTTensor, feasible_ranks, op_dofs, tt_add, tt_dofs, tt_norm,
                     tt_round, tt_scale)

logger = logging.getLogger(__name__)

DET, PARAM, RANK = "DET", "PARAM", "RANK"
BRANCHES = (DET, PARAM, RANK)

# Graus do coeficiente na dimensão de reserva M+1 e grau de ativação
BUFFER_DEGREE = 3
ACTIVATION_DEGREE = 2
RANK_PERTURBATION = 1e-6


class RankCapError(ValueError):
    """Posto máximo atingido; o laço recorre ao próximo ramo"""


@dataclass
class IterationRecord:
    """Registro de uma iteração adaptativa"""
    iteration: int
    tag: str
    refined: bool
    M: int
    d_max: int
    r_max: int
    m_dofs: int
    tt_dofs: int
    op_dofs: int
    report: EstimatorReport
    sweeps: int
    seconds: float


@dataclass
class AdaptState:
    """Estado corrente e histórico do laço"""
    mesh: Mesh
    degrees: Tuple[int, ...]
    W: Optional[TTTensor] = None
    coeff: Optional[CoeffTT] = None
    history: List[IterationRecord] = field(default_factory=list)
    converged: bool = False
    success: bool = True
    error: Optional[str] = None

    @property
    def M(self) -> int:
        return len(self.degrees)

    def branch_counts(self) -> dict:
        counts = {tag: 0 for tag in BRANCHES}
        for record in self.history:
            if record.refined:
                counts[record.tag] += 1
        return counts


def mark_doerfler(values: Iterable[float], theta: float) -> List[int]:
    """
    Conjunto mínimo (ordem decrescente, empates pelo menor índice) cuja
    soma atinge theta·total.
    """
    values = np.asarray(list(values), dtype=float)
    if not 0 < theta <= 1:
        raise ValueError(f"Fração de marcação fora de (0,1]: {theta}")
    if np.any(values < 0):
        raise ValueError("Valores de marcação devem ser não negativos")
    total = float(np.sum(values))
    if values.size == 0 or total == 0.0:
        return []
    order = np.argsort(-values, kind="stable")
    cumulative = np.cumsum(values[order])
    # tolerância de arredondamento para theta → 1
    k = int(np.searchsorted(cumulative, theta * total * (1.0 - 1e-14), side="left")) + 1
    return sorted(int(i) for i in order[:min(k, values.size)])


def refine_stochastic(degrees: Sequence[int], marked: Iterable[int]) -> Tuple[int, ...]:
    """d_m + 1 nas dimensões marcadas (1-indexadas); M+1 marcada ativa a dimensão com grau 2"""
    degrees = list(int(d) for d in degrees)
    M = len(degrees)
    marked = set(int(m) for m in marked)
    if any(m < 1 or m > M + 1 for m in marked):
        raise ValueError(f"Dimensões marcadas fora de 1..{M + 1}: {sorted(marked)}")
    for m in marked:
        if m <= M:
            degrees[m - 1] += 1
    if M + 1 in marked:
        degrees.append(ACTIVATION_DEGREE)
    return tuple(degrees)


def rank_caps(W: TTTensor, rank_cap: Optional[int] = None) -> List[int]:
    """Teto de cada ligação: posto admissível pelas dimensões, limitado por rank_cap"""
    caps = feasible_ranks(W.dims)
    return caps if rank_cap is None else [min(c, int(rank_cap)) for c in caps]


def can_refine_rank(W: TTTensor, rank_cap: Optional[int] = None) -> bool:
    return any(r < c for r, c in zip(W.ranks[1:-1], rank_caps(W, rank_cap)))


def refine_rank(W: TTTensor, rng: np.random.Generator, rank_cap: Optional[int] = None) -> TTTensor:
    """
    W + δ·G com G aleatório de posto 1 e norma unitária, δ = 1e−6·‖W‖ (ou 1 se W = 0).

    Ligações já no teto não crescem; sem nenhuma ligação abaixo do teto
    levanta RankCapError.
    """
    caps = rank_caps(W, rank_cap)
    inner = W.ranks[1:-1]
    if not can_refine_rank(W, rank_cap):
        raise RankCapError(f"Postos {W.ranks} já no teto {tuple(caps)}")
    vectors = []
    for q in W.dims:
        v = rng.standard_normal(q)
        vectors.append(v / np.linalg.norm(v))
    G = TTTensor.rank1(vectors)
    norm = tt_norm(W)
    delta = RANK_PERTURBATION * norm if norm > 0 else 1.0
    result = tt_add(W, tt_scale(G, delta))
    if any(r >= c for r, c in zip(inner, caps)):
        # ligação saturada: o posto r+1 é exatamente deficiente
        result = tt_round(result, 0.0, [min(r + 1, c) for r, c in zip(inner, caps)])
    return result


def choose_branch(report: EstimatorReport, exclude: Sequence[str] = ()) -> str:
    """argmax de (η_det, η_param, η_disc) com prioridade DET > PARAM > RANK nos empates"""
    candidates = [(report.eta_det, DET), (report.eta_param, PARAM), (report.eta_disc, RANK)]
    candidates = [c for c in candidates if c[1] not in exclude]
    best = candidates[0]
    for value, tag in candidates[1:]:
        if value > best[0]:
            best = (value, tag)
    return best[1]


def coefficient_degrees(degrees: Sequence[int], with_buffer: bool) -> Tuple[int, ...]:
    """q_m = max(2d_m − 1, 3) nas dimensões ativas, mais a dimensão de reserva"""
    q = tuple(max(2 * int(d) - 1, BUFFER_DEGREE) for d in degrees)
    return q + ((BUFFER_DEGREE,) if with_buffer else ())


def _record(iteration: int, tag: str, refined: bool, state: AdaptState, problem,
            report: EstimatorReport, sweeps: int, seconds: float) -> IterationRecord:
    W = state.W
    return IterationRecord(
        iteration=iteration,
        tag=tag,
        refined=refined,
        M=state.M,
        d_max=max(state.degrees) if state.degrees else 0,
        r_max=max(W.ranks),
        m_dofs=state.mesh.n_free,
        tt_dofs=tt_dofs(W),
        op_dofs=op_dofs(problem.operator),
        report=report,
        sweeps=sweeps,
        seconds=seconds
    )


def save_checkpoint(state: AdaptState, iteration: int, directory) -> Path:
    """JSON com graus, malha e núcleos de W"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"checkpoint_{iteration:03d}.json"
    payload = {
        "iteration": iteration,
        "degrees": list(state.degrees),
        "mesh": {
            "vertices": state.mesh.vertices.tolist(),
            "triangles": state.mesh.triangles.tolist()
        },
        "tensor": {
            "format": "tt",
            "cores": [{"shape": list(c.shape), "data": c.ravel().tolist()} for c in state.W.cores]
        }
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    logger.debug(f"Checkpoint salvo em {path}")
    return path


def _refine_det(state: AdaptState, report: EstimatorReport, marking: float) -> None:
    mesh = state.mesh
    owners = mesh.edge_triangles[mesh.interior_facets]
    indicators = report.element_indicators(owners)
    marked = mark_doerfler(indicators, marking ** 2)
    fine = refine(mesh, marked)
    state.W = prolongate_solution(state.W, mesh, fine)
    state.mesh = fine
    logger.info(f"Refinamento DET: {len(marked)} elementos marcados, {mesh.n_triangles} -> {fine.n_triangles}")


def _refine_param(state: AdaptState, report: EstimatorReport, marking: float) -> None:
    # marca pelo modo que o refinamento remove da cauda (d_m -> d_m + 1, ativação -> modo 1)
    indicators = report.eta_param_m if report.eta_param_next is None else report.eta_param_next
    values = np.asarray(indicators) ** 2
    marked = [i + 1 for i in mark_doerfler(values, marking ** 2)]
    if not marked:
        marked = [int(np.argmax(values)) + 1]
    degrees = refine_stochastic(state.degrees, marked)
    state.W = pad_degrees(state.W, degrees)
    logger.info(f"Refinamento PARAM: dimensões {marked}, graus {state.degrees} -> {degrees}")
    state.degrees = degrees


def run(config: AdaptConfig, f: Optional[Callable] = None,
        on_iteration: Optional[Callable[[AdaptState, IterationRecord], None]] = None) -> AdaptState:
    """
    Executa o laço adaptativo.

    Em falha do solver o estado retorna com success=False e o histórico
    parcial preservado.
    """
    rng = np.random.default_rng(config.seed)
    spec = config.field_spec
    params = spec.measure(rho=config.rho, theta=config.theta)
    mesh_only = config.mode == "mesh_only"

    if mesh_only:
        degrees = (config.mesh_only_degree,) * config.mesh_only_dims
        rank = config.mesh_only_rank
    else:
        degrees = (config.initial_degree,)
        rank = config.initial_rank
    state = AdaptState(mesh=initial_mesh(config.initial_mesh), degrees=degrees)
    coeff_key = None

    logger.info(f"Iniciando laço adaptativo ({config.mode}): ϑ={config.marking}, ε={config.tolerance:.1e}")
    for iteration in range(1, config.max_iterations + 1):
        start = time.time()
        try:
            q = coefficient_degrees(state.degrees, with_buffer=not mesh_only)
            if q != coeff_key:
                state.coeff = positive_coefficient(spec, q, config.coeff_max_rank, params,
                                                   seed=config.seed + iteration)
                coeff_key = q
            problem = build_problem(state.coeff, state.mesh, state.degrees, f)
            if state.W is None:
                state.W = cold_start(problem.dims, rank, rng)
            result = als_solve(problem, state.W, mean_preconditioner(state.coeff, state.mesh),
                               tol=config.als_tol, max_sweeps=config.als_max_sweeps,
                               verbose=config.verbose)
            state.W = result.tensor
            report = estimate(problem, state.W, f)
        except SolverError as e:
            logger.error(f"❌ Falha do solver na iteração {iteration}: {e}")
            state.success = False
            state.error = str(e)
            return state

        tag = DET if mesh_only else choose_branch(report)
        stop = report.eta_all <= config.tolerance
        over_budget = tt_dofs(state.W) >= config.max_tt_dofs
        last = iteration == config.max_iterations
        refined = not (stop or over_budget or last)

        if refined and tag == RANK and not can_refine_rank(state.W, config.rank_cap):
            tag = choose_branch(report, exclude=(RANK,))
            logger.warning(f"Postos {state.W.ranks} no teto; recorrendo ao ramo {tag}")

        record = _record(iteration, tag, refined, state, problem, report, result.sweeps, time.time() - start)
        state.history.append(record)
        logger.info(
            f"[{iteration}/{config.max_iterations}] {tag}: M={record.M}, d_max={record.d_max}, "
            f"r_max={record.r_max}, tt-dofs={record.tt_dofs}, η={report.eta_all:.4e}"
        )
        if on_iteration is not None:
            on_iteration(state, record)
        if config.checkpoint_dir:
            save_checkpoint(state, iteration, config.checkpoint_dir)

        if stop:
            state.converged = True
            logger.info(f"✓ Tolerância atingida na iteração {iteration}")
            break
        if over_budget:
            logger.info(f"Orçamento de tt-dofs atingido ({record.tt_dofs} ≥ {config.max_tt_dofs})")
            break
        if not refined:
            break

        if tag == DET:
            _refine_det(state, report, config.marking)
        elif tag == PARAM:
            _refine_param(state, report, config.marking)
        else:
            state.W = refine_rank(state.W, rng, config.rank_cap)
            logger.info(f"Refinamento RANK: postos {state.W.ranks}")

    return state
