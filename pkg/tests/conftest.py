"""
Fixtures compartilhadas: campo pequeno, malhas grossas e problemas de
Galerkin com tamanho completo ≤ 10⁴
"""

import numpy as np
import pytest

from src.fem import initial_mesh
from src.galerkin import build_problem
from src.lognormal import split_coefficient
from src.models import FieldSpec

SMALL_QUAD = dict(quad_cells=5, quad_order=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_spec():
    return FieldSpec(amp=0.9, decay=2.0, L=3, m_trunc=10, **SMALL_QUAD)


@pytest.fixture(scope="session")
def flat_spec():
    """b ≡ 0: problema de Poisson determinístico"""
    return FieldSpec(amp=0.0, decay=2.0, L=3, m_trunc=10, **SMALL_QUAD)


@pytest.fixture(scope="session")
def mesh4():
    return initial_mesh(4)


@pytest.fixture(scope="session")
def coeff3(small_spec):
    """Coeficiente com L=3 e q=(3,3,3)"""
    return split_coefficient(small_spec, (3, 3, 3), max_rank=10)


@pytest.fixture(scope="session")
def coeff2(small_spec):
    """Coeficiente com L=2 e q=(3,3) (uma dimensão ativa e a de reserva)"""
    return split_coefficient(small_spec, (3, 3), max_rank=10)


@pytest.fixture(scope="session")
def flat_coeff(flat_spec):
    return split_coefficient(flat_spec, (3, 3), max_rank=10)


@pytest.fixture(scope="session")
def problem_m2(coeff3, mesh4):
    """N = 9, M = 2, d = (2,2)"""
    return build_problem(coeff3, mesh4, (2, 2))


@pytest.fixture(scope="session")
def problem_m1(coeff2, mesh4):
    """N = 9, M = 1, d = 2"""
    return build_problem(coeff2, mesh4, (2,))


@pytest.fixture(scope="session")
def flat_problem(flat_coeff, mesh4):
    return build_problem(flat_coeff, mesh4, (2,))
