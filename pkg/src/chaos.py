"""
Álgebra de caos de Hermite: avaliação, produtos triplos, expansão da
exponencial, quadratura de Gauss-Hermite e Gramianas das medidas escaladas.

Convenção: polinômios de Hermite probabilísticos ortonormais sob N(0,1),
H_{n+1}(y) = (y·H_n(y) − √n·H_{n−1}(y)) / √(n+1).
"""

import logging
import math
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .models import MeasureParams, GramianPair

logger = logging.getLogger(__name__)

# Acima deste grau os fatoriais são calculados por lgamma
_LOG_FACTORIAL_THRESHOLD = 20


def hermite_table(n_max: int, y) -> np.ndarray:
    """Valores H_0..H_{n_max} em y; forma (n_max+1, *y.shape)"""
    if n_max < 0:
        raise ValueError(f"Grau deve ser ≥ 0: {n_max}")
    y = np.asarray(y, dtype=float)
    table = np.empty((n_max + 1,) + y.shape)
    table[0] = 1.0
    if n_max >= 1:
        table[1] = y
    for n in range(1, n_max):
        table[n + 1] = (y * table[n] - math.sqrt(n) * table[n - 1]) / math.sqrt(n + 1)
    return table


def hermite_eval(n: int, y):
    """H_n(y) pela recorrência de três termos"""
    values = hermite_table(n, y)[n]
    return float(values) if np.ndim(values) == 0 else values


def _log_factorial(n: int) -> float:
    return math.lgamma(n + 1)


def triple_product(nu: int, mu: int, eta: int) -> float:
    """κ_{ν,μ,η} = ∫ H_ν H_μ H_η dγ"""
    if min(nu, mu, eta) < 0:
        raise ValueError("Graus devem ser ≥ 0")
    total = nu + mu + eta
    if total % 2 == 1:
        return 0.0
    xi = (nu + mu - eta) // 2
    if xi < 0 or xi > nu or xi > mu:
        return 0.0
    if max(nu, mu, eta) <= _LOG_FACTORIAL_THRESHOLD:
        f = math.factorial
        return math.sqrt(f(nu) * f(mu) * f(eta)) / (f(xi) * f(nu - xi) * f(mu - xi))
    log_value = 0.5 * (_log_factorial(nu) + _log_factorial(mu) + _log_factorial(eta)) \
        - _log_factorial(xi) - _log_factorial(nu - xi) - _log_factorial(mu - xi)
    return math.exp(log_value)


@lru_cache(maxsize=64)
def _triple_tensor(n1: int, n2: int, n3: int) -> np.ndarray:
    kappa = np.zeros((n1, n2, n3))
    for a in range(n1):
        for b in range(n2):
            lo, hi = abs(a - b), min(a + b, n3 - 1)
            for c in range(lo, hi + 1, 2):
                kappa[a, b, c] = triple_product(a, b, c)
    kappa.setflags(write=False)
    return kappa


def triple_tensor(n1: int, n2: int, n3: int) -> np.ndarray:
    """Tensor κ[ν, μ, η] para ν < n1, μ < n2, η < n3 (somente leitura)"""
    return _triple_tensor(int(n1), int(n2), int(n3))


def exp_coeffs(t, n_max: int) -> np.ndarray:
    """
    Coeficientes de exp(t·Y) na base de Hermite, c_n = tⁿ/√(n!)·exp(t²/2).

    t pode ser um array; o resultado tem forma (n_max+1, *t.shape).
    """
    if n_max < 0:
        raise ValueError(f"Grau deve ser ≥ 0: {n_max}")
    t = np.asarray(t, dtype=float)
    coeffs = np.empty((n_max + 1,) + t.shape)
    coeffs[0] = np.exp(0.5 * t ** 2)
    for n in range(1, n_max + 1):
        coeffs[n] = coeffs[n - 1] * t / math.sqrt(n)
    return coeffs


@lru_cache(maxsize=128)
def _gauss_hermite(n: int) -> Tuple[np.ndarray, np.ndarray]:
    # Golub-Welsch: matriz de Jacobi com subdiagonal √k
    diagonal = np.zeros(n)
    off = np.sqrt(np.arange(1, n, dtype=float))
    if n == 1:
        return np.zeros(1), np.ones(1)
    nodes, vectors = eigh_tridiagonal(diagonal, off)
    weights = vectors[0, :] ** 2
    weights = weights / weights.sum()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_hermite(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nós e pesos de Gauss-Hermite para N(0,1); exata até grau 2n−1"""
    if n < 1:
        raise ValueError(f"Número de nós deve ser ≥ 1: {n}")
    return _gauss_hermite(int(n))


def nodes_for_degree(degree: int) -> int:
    """Número de nós para integrando polinomial de grau D: ⌈D/2⌉ + 2"""
    return (max(degree, 0) + 1) // 2 + 2


def gramians(m: int, d: int, params: MeasureParams, z: int = None) -> GramianPair:
    """
    Gramianas da dimensão m (1-indexada).

    Z é d×d sob dγ; Z̃ é z×z sob ζ²dγ = c_σ·dN(0, σ′²). Por omissão z = d.
    """
    if m < 1 or m > len(params):
        raise ValueError(f"Dimensão {m} fora de 1..{len(params)}")
    if d < 1:
        raise ValueError(f"Número de graus deve ser ≥ 1: {d}")
    z = d if z is None else z
    sigma = params.sigma[m - 1]
    sigma_prime = params.sigma_prime[m - 1]
    c_sigma = params.c_sigma[m - 1]

    n = max(d, z)
    nodes, weights = gauss_hermite(nodes_for_degree(2 * (n - 1)))

    H = hermite_table(d - 1, nodes / sigma)
    Z = (H * weights) @ H.T

    Ht = hermite_table(z - 1, sigma_prime * nodes / sigma)
    Ztilde = c_sigma * (Ht * weights) @ Ht.T

    # simetria exata
    Z = 0.5 * (Z + Z.T)
    Ztilde = 0.5 * (Ztilde + Ztilde.T)
    return GramianPair(Z=Z, Ztilde=Ztilde, m=m)


def scaled_hermite_table(n_max: int, y, sigma: float) -> np.ndarray:
    """Valores de H^τ_ν(y) = H_ν(y/σ) para ν = 0..n_max"""
    return hermite_table(n_max, np.asarray(y, dtype=float) / sigma)
