"""
Modelos de dados para o sistema TT-ASGFEM
"""

from dataclasses import dataclass, field
from typing import Optional, List, Tuple, Any
import numpy as np

from config.settings import (
    RANK_CAP, ALS_TOL, ALS_MAX_SWEEPS, COEFF_MAX_RANK,
    QUAD_CELLS, QUAD_ORDER, N_MC, DEFAULT_SEED, RESULTS_DIR
)


class ConfigError(ValueError):
    """Erro de configuração do experimento"""


class SolverError(RuntimeError):
    """Falha numérica: sistema local não SPD, K(ā) indefinida ou Gramiana singular"""


@dataclass(frozen=True)
class MeasureParams:
    """
    Parâmetros da medida gaussiana alargada γ_θρ.

    beta[m] guarda β da dimensão estocástica m+1 (indexação a partir de zero).
    """
    beta: Tuple[float, ...]
    rho: float = 1.0
    theta: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if self.rho <= 0:
            raise ValueError(f"rho deve ser positivo: {self.rho}")
        if not 0 < self.theta < 1:
            raise ValueError(f"theta deve estar em (0,1): {self.theta}")
        if any(b < 0 for b in self.beta):
            raise ValueError("beta deve ser não negativo")
        bad = np.flatnonzero(self.sigma ** 2 >= 2.0)
        if bad.size:
            raise ValueError(
                f"σ² ≥ 2 na dimensão {int(bad[0]) + 1}: σ′ indefinido "
                f"(σ={self.sigma[bad[0]]:.4f})"
            )

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.theta * self.rho * np.asarray(self.beta, dtype=float))

    @property
    def sigma_prime(self) -> np.ndarray:
        s = self.sigma
        return s / np.sqrt(2.0 - s ** 2)

    @property
    def c_sigma(self) -> np.ndarray:
        s = self.sigma
        return 1.0 / (s * np.sqrt(2.0 - s ** 2))

    def __len__(self) -> int:
        return len(self.beta)


@dataclass
class GramianPair:
    """Gramianas Z (sob γ) e Z̃ (sob ζ²γ) de uma dimensão"""
    Z: np.ndarray
    Ztilde: np.ndarray
    m: int


@dataclass(frozen=True)
class FieldSpec:
    """Campo lognormal de teste: a = exp(Σ b_m y_m)"""
    amp: float = 0.9
    decay: float = 2.0
    L: int = 10
    m_trunc: int = 100
    quad_cells: int = QUAD_CELLS
    quad_order: int = QUAD_ORDER

    def __post_init__(self):
        # amp = 0 representa o caso determinístico b ≡ 0
        if self.amp < 0:
            raise ValueError(f"amp deve ser não negativo: {self.amp}")
        if self.decay <= 1:
            raise ValueError(f"decay deve ser > 1: {self.decay}")
        if not 1 <= self.L <= self.m_trunc:
            raise ValueError(f"Exige-se 1 ≤ L ≤ M_trunc (L={self.L}, M_trunc={self.m_trunc})")
        if self.quad_cells < 1 or self.quad_order < 1:
            raise ValueError("Quadratura física inválida")

    def beta(self, n: int) -> np.ndarray:
        """β_m = amp·m^(−decay) para m = 1..n"""
        m = np.arange(1, n + 1, dtype=float)
        return self.amp * m ** (-self.decay)

    def measure(self, n: Optional[int] = None, rho: float = 1.0, theta: float = 0.1) -> MeasureParams:
        return MeasureParams(beta=tuple(self.beta(self.m_trunc if n is None else n)), rho=rho, theta=theta)


@dataclass
class QuadratureRule:
    """Regra de quadratura física (Gauss-Legendre tensorizada em grade uniforme)"""
    points: np.ndarray
    weights: np.ndarray
    cells: int
    order: int


@dataclass
class SolveResult:
    """Resultado do solver ALS"""
    tensor: Any
    converged: bool
    sweeps: int
    deltas: List[float] = field(default_factory=list)
    energies: List[float] = field(default_factory=list)
    success: bool = True
    error: Optional[str] = None
    stagnated: bool = False


@dataclass
class EstimatorReport:
    """Estimadores a posteriori de uma iteração"""
    eta_det_T: np.ndarray
    eta_det_F: np.ndarray
    eta_det: float
    eta_param: float
    eta_param_m: np.ndarray
    eta_disc: float
    eta_all: float
    eta_param_next: Optional[np.ndarray] = None

    def element_indicators(self, facet_elements: np.ndarray) -> np.ndarray:
        """η_T² + metade de η_F² de cada aresta interior do elemento"""
        values = self.eta_det_T ** 2
        share = 0.5 * self.eta_det_F ** 2
        np.add.at(values, facet_elements[:, 0], share)
        np.add.at(values, facet_elements[:, 1], share)
        return values


@dataclass
class AdaptConfig:
    """Configuração do laço adaptativo"""
    field_spec: FieldSpec = field(default_factory=FieldSpec)
    marking: float = 0.5
    tolerance: float = 1e-4
    max_iterations: int = 15
    max_tt_dofs: int = 200_000
    rho: float = 1.0
    theta: float = 0.1
    rank_cap: int = RANK_CAP
    coeff_max_rank: int = COEFF_MAX_RANK
    initial_mesh: int = 4
    initial_degree: int = 2
    initial_rank: int = 2
    mode: str = "full"
    mesh_only_dims: int = 5
    mesh_only_degree: int = 10
    mesh_only_rank: int = 10
    als_tol: float = ALS_TOL
    als_max_sweeps: int = ALS_MAX_SWEEPS
    seed: int = DEFAULT_SEED
    verbose: bool = False
    checkpoint_dir: Optional[str] = None

    def __post_init__(self):
        if not 0 < self.marking < 1:
            raise ConfigError(f"Parâmetro de marcação fora de (0,1): {self.marking}")
        if self.tolerance <= 0:
            raise ConfigError(f"Tolerância deve ser positiva: {self.tolerance}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations deve ser ≥ 1")
        if self.mode not in ("full", "mesh_only"):
            raise ConfigError(f"Modo desconhecido: {self.mode}")
        if self.initial_rank < 1 or self.rank_cap < 1:
            raise ConfigError("Postos devem ser ≥ 1")


@dataclass
class ExperimentConfig:
    """Configuração completa de um experimento (arquivo de configuração)"""
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    n_mc: int = N_MC
    mc_every: int = 1
    reference_depth: int = 2
    seed: int = DEFAULT_SEED
    output_dir: str = str(RESULTS_DIR)
    coeff_study: bool = True
    coeff_study_lengths: Tuple[int, ...] = (10, 50)
    coeff_study_ranks: Tuple[int, ...] = (10, 20, 50)
    coeff_study_degree: int = 15
    coeff_study_samples: int = 250

    def __post_init__(self):
        if self.n_mc < 1:
            raise ConfigError(f"N_MC deve ser ≥ 1: {self.n_mc}")
        if self.mc_every < 0 or self.reference_depth < 0:
            raise ConfigError("MC_EVERY e REFERENCE_DEPTH devem ser ≥ 0")

    @property
    def field_spec(self) -> FieldSpec:
        return self.adapt.field_spec


@dataclass
class ConvergenceRow:
    """Linha de convergence.csv"""
    iteration: int
    tag: str
    M: int
    d_max: int
    r_max: int
    m_dofs: int
    tt_dofs: int
    op_dofs: int
    eta_det: float
    eta_param: float
    eta_disc: float
    eta_all: float
    mc_rrms: Optional[float] = None


@dataclass
class CoefficientRow:
    """Linha de coefficient_report.csv"""
    L: int
    s_max: int
    rrms: float
    tt_dofs: int
    full_dofs: int
    seconds: float
