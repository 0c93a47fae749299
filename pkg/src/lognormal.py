"""
Modelo do coeficiente lognormal: funções b_m, campo exato, divisão do
coeficiente em formato TT com primeira componente contínua, média e RRMS.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from .chaos import exp_coeffs, hermite_table
from .models import FieldSpec, MeasureParams, QuadratureRule, SolverError

logger = logging.getLogger(__name__)

# Tolerância relativa para descartar autovalores da matriz de correlação
EPS_EIG = 1e-14
NEGATIVE_EIG_TOL = 1e-10

# Verificação de positividade após a divisão no laço adaptativo
POSITIVITY_SAMPLES = 100
POSITIVITY_ATTEMPTS = 4


def physical_quadrature(cells: int, order: int) -> QuadratureRule:
    """Gauss-Legendre tensorizada em grade uniforme de cells×cells células"""
    g, w = leggauss(order)
    offsets = np.arange(cells) / cells
    nodes_1d = (offsets[:, None] + 0.5 * (g[None, :] + 1.0) / cells).ravel()
    weights_1d = np.tile(0.5 * w / cells, cells)
    X, Y = np.meshgrid(nodes_1d, nodes_1d, indexing="ij")
    points = np.column_stack([X.ravel(), Y.ravel()])
    weights = np.outer(weights_1d, weights_1d).ravel()
    return QuadratureRule(points=points, weights=weights, cells=cells, order=order)


def mode_frequencies(m: int) -> Tuple[int, int]:
    """(ρ₁(m), ρ₂(m)) da enumeração dos modos planares"""
    if m < 1:
        raise ValueError(f"Índice de modo deve ser ≥ 1: {m}")
    k = (math.isqrt(1 + 8 * m) - 1) // 2
    rho1 = m - k * (k + 1) // 2
    return rho1, k - rho1


def bm_eval(m: int, x, spec: FieldSpec) -> np.ndarray:
    """b_m(x) = amp·m^(−decay)·cos(2πρ₁x₁)·cos(2πρ₂x₂)"""
    rho1, rho2 = mode_frequencies(m)
    x = np.asarray(x, dtype=float)
    amplitude = spec.amp * float(m) ** (-spec.decay)
    return amplitude * np.cos(2 * np.pi * rho1 * x[..., 0]) * np.cos(2 * np.pi * rho2 * x[..., 1])


def expansion_table(spec: FieldSpec, n_modes: int, points: np.ndarray) -> np.ndarray:
    """Matriz (n_modes, P) com b_m nos pontos"""
    return np.stack([bm_eval(m, points, spec) for m in range(1, n_modes + 1)])


def a_exact(x, y, spec: FieldSpec, M: Optional[int] = None) -> np.ndarray:
    """exp(Σ_{m≤M} b_m(x) y_m)"""
    y = np.asarray(y, dtype=float)
    M = len(y) if M is None else min(M, len(y))
    x = np.asarray(x, dtype=float)
    exponent = np.zeros(x.shape[:-1])
    for m in range(1, M + 1):
        exponent = exponent + bm_eval(m, x, spec) * y[m - 1]
    return np.exp(exponent)


@dataclass
class CoeffTT:
    """
    Coeficiente em formato TT com primeira componente contínua.

    a0 guarda a0[k1] nos nós da quadratura física; cores[ℓ−1] tem forma
    (s_ℓ, q_ℓ, s_{ℓ+1}).
    """
    a0: np.ndarray
    cores: List[np.ndarray]
    degrees: Tuple[int, ...]
    params: MeasureParams
    spec: FieldSpec
    quad: QuadratureRule

    @property
    def L(self) -> int:
        return len(self.cores)

    @property
    def ranks(self) -> Tuple[int, ...]:
        return (1, self.a0.shape[0]) + tuple(c.shape[2] for c in self.cores)

    def mode_coefficients(self, ell: int, points: np.ndarray) -> np.ndarray:
        """c^(ℓ)_ν nos pontos, forma (q_ℓ, P)"""
        sigma = self.params.sigma[ell - 1]
        return exp_coeffs(bm_eval(ell, points, self.spec) * sigma, self.degrees[ell - 1] - 1)

    def eval_a0(self, points: np.ndarray) -> np.ndarray:
        """Reavalia a0[k1] em pontos arbitrários pela retro-substituição da base reduzida"""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        tilde = np.ones((1, points.shape[0]))
        for ell in range(self.L, 0, -1):
            c = self.mode_coefficients(ell, points)
            tilde = np.einsum("kvj,vp,jp->kp", self.cores[ell - 1], c, tilde, optimize=True)
        return tilde

    def stochastic_vector(self, y: Sequence[float]) -> np.ndarray:
        """Contração dos núcleos estocásticos com H_ν(y_ℓ/σ_ℓ); vetor de tamanho s1"""
        y = np.asarray(y, dtype=float)
        if len(y) < self.L:
            raise ValueError(f"Amostra com {len(y)} entradas para coeficiente com L={self.L}")
        vec = np.ones(1)
        for ell in range(self.L, 0, -1):
            core = self.cores[ell - 1]
            H = hermite_table(core.shape[1] - 1, y[ell - 1] / self.params.sigma[ell - 1])
            vec = np.einsum("kvj,v,j->k", core, H, vec)
        return vec

    def mean_vector(self) -> np.ndarray:
        vec = np.ones(1)
        for core in reversed(self.cores):
            vec = core[:, 0, :] @ vec
        return vec

    def evaluate(self, y: Sequence[float], points: Optional[np.ndarray] = None) -> np.ndarray:
        """a_{Δ,s}(x, y); por omissão nos nós da quadratura"""
        a0 = self.a0 if points is None else self.eval_a0(points)
        return self.stochastic_vector(y) @ a0

    def mean(self, points: Optional[np.ndarray] = None) -> np.ndarray:
        """ā(x): núcleos contraídos em ν = 0"""
        a0 = self.a0 if points is None else self.eval_a0(points)
        return self.mean_vector() @ a0


def _normalize_signs(vectors: np.ndarray) -> np.ndarray:
    # maior componente em módulo positiva
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def split_coefficient(spec: FieldSpec, degrees: Sequence[int], max_rank: int,
                      params: Optional[MeasureParams] = None,
                      quad: Optional[QuadratureRule] = None) -> CoeffTT:
    """
    Divisão do coeficiente: varredura da direita para a esquerda com
    matrizes de correlação montadas por quadratura e autodecomposição.
    """
    degrees = tuple(int(q) for q in degrees)
    if not degrees or min(degrees) < 1:
        raise ValueError(f"Graus inválidos: {degrees}")
    if max_rank < 1:
        raise ValueError(f"Posto máximo deve ser ≥ 1: {max_rank}")
    params = params or spec.measure()
    if len(params) < len(degrees):
        raise ValueError(f"Parâmetros de medida cobrem {len(params)} dimensões, exigidas {len(degrees)}")
    quad = quad or physical_quadrature(spec.quad_cells, spec.quad_order)

    L = len(degrees)
    P = quad.points.shape[0]
    cores: List[np.ndarray] = [None] * L
    tilde = np.ones((1, P))
    holder = CoeffTT(a0=tilde, cores=cores, degrees=degrees, params=params, spec=spec, quad=quad)

    for ell in range(L, 0, -1):
        q = degrees[ell - 1]
        c = holder.mode_coefficients(ell, quad.points)
        G = (c[:, None, :] * tilde[None, :, :]).reshape(q * tilde.shape[0], P)
        C = (G * quad.weights) @ G.T
        lam, V = np.linalg.eigh(0.5 * (C + C.T))
        lam, V = lam[::-1], V[:, ::-1]
        lam_max = lam[0]
        if lam[-1] < -NEGATIVE_EIG_TOL * abs(lam_max):
            raise ValueError(
                f"Autovalor negativo {lam[-1]:.3e} na dimensão {ell} "
                f"(λ_max={lam_max:.3e}): quadratura inadequada"
            )
        keep = int(np.count_nonzero(lam > EPS_EIG * lam_max))
        s = max(1, min(max_rank, keep))
        V = _normalize_signs(V[:, :s])
        cores[ell - 1] = V.T.reshape(s, q, tilde.shape[0])
        tilde = V.T @ G
        logger.debug(f"Dimensão {ell}: posto {s} (λ_max={lam_max:.3e}, descartado={lam[s] if s < len(lam) else 0.0:.3e})")

    result = CoeffTT(a0=tilde, cores=cores, degrees=degrees, params=params, spec=spec, quad=quad)
    logger.info(f"Coeficiente dividido: L={L}, postos={result.ranks}")
    return result


def coeff_mean(c: CoeffTT) -> np.ndarray:
    """ā nos nós da quadratura física"""
    return c.mean()


def coeff_rrms(c: CoeffTT, n_samples: int, rng: np.random.Generator,
               spec: Optional[FieldSpec] = None) -> float:
    """
    Erro relativo RMS (E[‖a − a_{Δ,s}‖²/‖a‖²])^(1/2) por Monte Carlo,
    com o campo exato truncado no mesmo comprimento L.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples deve ser ≥ 1: {n_samples}")
    spec = spec or c.spec
    w = c.quad.weights
    table = expansion_table(spec, c.L, c.quad.points)
    ratios = np.empty(n_samples)
    for i in range(n_samples):
        y = rng.standard_normal(c.L)
        exact = np.exp(y @ table)
        approx = c.evaluate(y)
        ratios[i] = np.sum(w * (exact - approx) ** 2) / np.sum(w * exact ** 2)
    return float(np.sqrt(np.mean(ratios)))


def check_positivity(c: CoeffTT, n_samples: int, rng: np.random.Generator) -> float:
    """Fração de amostras com a_{Δ,s} > 0 em todos os nós"""
    positive = 0
    for _ in range(n_samples):
        if np.min(c.evaluate(rng.standard_normal(c.L))) > 0:
            positive += 1
    fraction = positive / n_samples
    if fraction < 1.0:
        logger.warning(f"Coeficiente discreto não positivo em {(1 - fraction) * 100:.1f}% das amostras")
    return fraction


def positive_coefficient(spec: FieldSpec, degrees: Sequence[int], max_rank: int,
                         params: Optional[MeasureParams] = None, seed: int = 0,
                         n_samples: int = POSITIVITY_SAMPLES,
                         max_attempts: int = POSITIVITY_ATTEMPTS) -> CoeffTT:
    """
    Divide o coeficiente e, se a_{Δ,s} não for positivo em todas as amostras,
    dobra o posto e sobe os graus em 2 (mantendo grau polinomial par).

    Raises:
        SolverError: coeficiente ainda não positivo após max_attempts aumentos
    """
    degrees = tuple(int(q) for q in degrees)
    rank = int(max_rank)
    for attempt in range(max_attempts + 1):
        c = split_coefficient(spec, degrees, rank, params)
        fraction = check_positivity(c, n_samples, np.random.default_rng(seed))
        if fraction == 1.0:
            if attempt:
                logger.info(f"✓ Coeficiente positivo com graus {degrees} e posto máximo {rank}")
            return c
        if attempt < max_attempts:
            rank *= 2
            degrees = tuple(q + 2 for q in degrees)
            logger.warning(f"Tentativa {attempt + 1}/{max_attempts}: graus {degrees}, posto máximo {rank}")
    raise SolverError(
        f"Coeficiente discreto não positivo em {(1 - fraction) * 100:.1f}% das amostras "
        f"após {max_attempts} aumentos de grau e posto"
    )


def save_coefficient(c: CoeffTT, path: Union[str, Path]) -> None:
    """Salva núcleos, a0, graus, campo e descritor da quadratura em JSON"""
    payload = {
        "spec": asdict(c.spec),
        "params": {"beta": list(c.params.beta), "rho": c.params.rho, "theta": c.params.theta},
        "degrees": list(c.degrees),
        "quad": {"cells": c.quad.cells, "order": c.quad.order},
        "a0": {"shape": list(c.a0.shape), "data": c.a0.ravel().tolist()},
        "cores": [{"shape": list(core.shape), "data": core.ravel().tolist()} for core in c.cores]
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    logger.info(f"Coeficiente salvo em {path}")


def load_coefficient(path: Union[str, Path]) -> CoeffTT:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    spec = FieldSpec(**payload["spec"])
    params = MeasureParams(**payload["params"])
    quad = physical_quadrature(payload["quad"]["cells"], payload["quad"]["order"])
    a0 = np.asarray(payload["a0"]["data"], dtype=float).reshape(payload["a0"]["shape"])
    cores = [np.asarray(c["data"], dtype=float).reshape(c["shape"]) for c in payload["cores"]]
    return CoeffTT(a0=a0, cores=cores, degrees=tuple(payload["degrees"]),
                   params=params, spec=spec, quad=quad)
