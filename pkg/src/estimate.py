"""
Estimadores a posteriori em formato TT: resíduo com primeira componente
contínua, estimador determinístico (elementos e arestas), estimador de
cauda paramétrica (total e por dimensão) e estimador algébrico.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse.linalg import splu

from .chaos import gramians, triple_tensor
from .fem import (ElementData, Mesh, assemble_stiffness, element_data,
                  element_gradients, expand_free, facet_jump,
                  facet_quadrature)
from .galerkin import DiscreteProblem, element_coefficient_values
from .lognormal import CoeffTT
from .models import EstimatorReport, MeasureParams, SolverError
from .ttcore import (TTTensor, mask_hadamard, mpo_apply, right_orthogonalize,
                     tt_add, tt_scale)

logger = logging.getLogger(__name__)

_NEGATIVE_TOL = 1e-12


@dataclass
class ResidualTT:
    """
    Resíduo r(x, η) = Σ a0[k′]∇w0[k] · S_1 ⋯ S_L com posto combinado k″ = k′·r1 + k.

    flux: (nt, 3, t1, 2) nos pontos de quadratura; div: (nt, t1) constante por
    elemento; jumps: (nf, 2, t1) nos pontos de Gauss das arestas interiores;
    cores[ℓ−1]: (t_ℓ, z_ℓ, t_{ℓ+1}).
    """
    flux: np.ndarray
    div: np.ndarray
    jumps: np.ndarray
    cores: List[np.ndarray]
    degrees: Tuple[int, ...]
    z: Tuple[int, ...]
    mesh: Mesh
    data: ElementData
    facet_weights: np.ndarray
    params: MeasureParams

    @property
    def M(self) -> int:
        return len(self.degrees)

    @property
    def L(self) -> int:
        return len(self.cores)

    @property
    def ranks(self) -> Tuple[int, ...]:
        return tuple(c.shape[0] for c in self.cores) + (1,)

    def active_masks(self, degrees: Optional[Sequence[int]] = None) -> List[np.ndarray]:
        """Máscaras de Λ: η_m < d_m nas dimensões ativas e η_ℓ = 0 nas demais"""
        degrees = self.degrees if degrees is None else tuple(degrees)
        masks = []
        for ell, z in enumerate(self.z, start=1):
            idx = np.arange(z)
            masks.append(idx < degrees[ell - 1] if ell <= len(degrees) else idx == 0)
        return [m.astype(float) for m in masks]

    def stochastic_vector(self, eta: Sequence[int]) -> np.ndarray:
        vec = np.ones(1)
        for core, e in zip(reversed(self.cores), reversed(list(eta))):
            vec = core[:, e, :] @ vec
        return vec

    def flux_at(self, eta: Sequence[int]) -> np.ndarray:
        """Fluxo r(·, η) nos pontos de quadratura, forma (nt, 3, 2)"""
        return np.einsum("tqkd,k->tqd", self.flux, self.stochastic_vector(eta))


def build_residual(W: TTTensor, c: CoeffTT, degrees: Sequence[int], mesh: Mesh,
                   data: Optional[ElementData] = None) -> ResidualTT:
    """Núcleos S_m = Σ_{ν,μ} A_m W_m κ_{ν,μ,η}; dimensões M+1..L do coeficiente mantidas"""
    degrees = tuple(int(d) for d in degrees)
    M = len(degrees)
    if W.dims != (mesh.n_free,) + degrees:
        raise ValueError(f"Dimensões de W {W.dims} incompatíveis com Λ={degrees} e N={mesh.n_free}")
    if M > c.L:
        raise ValueError(f"M={M} maior que L={c.L}")
    data = data or element_data(mesh)

    X0 = W.core(0)[0]
    r1 = X0.shape[1]
    grad_w = element_gradients(mesh, expand_free(mesh, X0), data)        # (nt, r1, 2)
    a0q = element_coefficient_values(c, mesh, data)                      # (s1, nt, 3)
    s1 = a0q.shape[0]
    grad_a = element_gradients(mesh, c.eval_a0(mesh.vertices).T, data)  # (nt, s1, 2)

    nt = mesh.n_triangles
    flux = np.einsum("ptq,tkd->tqpkd", a0q, grad_w).reshape(nt, 3, s1 * r1, 2)
    div = np.einsum("tpd,tkd->tpk", grad_a, grad_w).reshape(nt, s1 * r1)

    fpoints, fweights = facet_quadrature(mesh)
    nf = fpoints.shape[0]
    if nf:
        jw = facet_jump(mesh, grad_w)                                    # (nf, r1)
        a0f = c.eval_a0(fpoints.reshape(-1, 2)).reshape(s1, nf, 2)
        jumps = np.einsum("pfg,fk->fgpk", a0f, jw).reshape(nf, 2, s1 * r1)
    else:
        jumps = np.zeros((0, 2, s1 * r1))

    cores, z = [], []
    for ell in range(1, c.L + 1):
        A = c.cores[ell - 1]
        if ell <= M:
            Wm = W.core(ell)
            s, q, s2 = A.shape
            r, d, r2 = Wm.shape
            extent = q + d - 1
            kappa = triple_tensor(q, d, extent)
            S = np.einsum("anb,cmd,nme->acebd", A, Wm, kappa, optimize=True)
            cores.append(S.reshape(s * r, extent, s2 * r2))
            z.append(extent)
        else:
            cores.append(A.copy())
            z.append(A.shape[1])

    return ResidualTT(flux=flux, div=div, jumps=jumps, cores=cores, degrees=degrees,
                      z=tuple(z), mesh=mesh, data=data, facet_weights=fweights, params=c.params)


def residual_gramians(res: ResidualTT) -> List[np.ndarray]:
    """Z̃_ℓ de tamanho z_ℓ para cada dimensão do resíduo"""
    result = []
    for ell, z in enumerate(res.z, start=1):
        d = res.degrees[ell - 1] if ell <= res.M else 1
        result.append(gramians(ell, d, res.params, z=z).Ztilde)
    return result


def stochastic_gram(cores_a: Sequence[np.ndarray], cores_b: Sequence[np.ndarray],
                    weights: Sequence[np.ndarray]) -> np.ndarray:
    """E[a, c] = Σ S_a Z̃ S_b contraído da direita para a esquerda"""
    E = np.ones((1, 1))
    for Sa, Sb, Zt in zip(reversed(cores_a), reversed(cores_b), reversed(weights)):
        tmp = np.einsum("cjd,bd->cjb", Sb, E)
        tmp = np.einsum("ij,cjb->cib", Zt, tmp)
        E = np.einsum("aib,cib->ac", Sa, tmp)
    return E


def _clamp(values, label: str):
    values = np.asarray(values, dtype=float)
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    if np.any(values < -_NEGATIVE_TOL * scale):
        logger.warning(f"Forma quadrática negativa em {label} (min={values.min():.3e}); truncada em 0")
    return np.maximum(values, 0.0)


def _augment_with_load(cores: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Acrescenta o ramo de posto 1 e0 ⊗ … ⊗ e0 do termo f em blocos diagonais"""
    out = []
    last = len(cores) - 1
    for ell, S in enumerate(cores):
        t, z, t2 = S.shape
        if ell == last:
            block = np.zeros((t + 1, z, 1))
            block[:t] = S
            block[t, 0, 0] = 1.0
        else:
            block = np.zeros((t + 1, z, t2 + 1))
            block[:t, :, :t2] = S
            block[t, 0, t2] = 1.0
        out.append(block)
    return out


def eta_det(res: ResidualTT, f: Optional[Callable] = None,
            weights: Optional[Sequence[np.ndarray]] = None):
    """
    Estimador determinístico.

    Returns:
        (η_T por elemento, η_F por aresta interior, η_det total)
    """
    weights = weights or residual_gramians(res)
    data = res.data
    mesh = res.mesh
    S_active = mask_hadamard(res.cores, res.active_masks())
    E = stochastic_gram(_augment_with_load(S_active), _augment_with_load(S_active), weights)
    t1 = res.div.shape[1]

    if f is None:
        fvals = np.ones(data.weights.shape)
    else:
        fvals = np.asarray(f(data.points.reshape(-1, 2)), dtype=float).reshape(data.weights.shape)
    G = np.concatenate([np.repeat(res.div[:, None, :], 3, axis=1), fvals[..., None]], axis=2)
    volume = np.einsum("tqa,ab,tqb,tq->t", G, E, G, data.weights, optimize=True)
    volume = data.diameters ** 2 * _clamp(volume, "η_det,T")

    E_active = E[:t1, :t1]
    facets = np.einsum("fga,ab,fgb,fg->f", res.jumps, E_active, res.jumps, res.facet_weights, optimize=True)
    h_F = mesh.facet_lengths[mesh.interior_facets]
    facets = h_F * _clamp(facets, "η_det,F")

    eta_T = np.sqrt(volume)
    eta_F = np.sqrt(facets)
    total = float(np.sqrt(np.sum(volume) + np.sum(facets)))
    return eta_T, eta_F, total


def _flux_gram(res: ResidualTT) -> np.ndarray:
    return np.einsum("tqad,tqbd,tq->ab", res.flux, res.flux, res.data.weights, optimize=True)


def _form(G: np.ndarray, cores_a, cores_b, weights) -> float:
    return float(np.sum(G * stochastic_gram(cores_a, cores_b, weights)))


def _dimension_masks(res: ResidualTT, m: int, degrees: Sequence[int], next_only: bool) -> List[np.ndarray]:
    """Máscaras de Ξ_m: η_m ≥ d_m (ou η_m = d_m) e as demais dimensões em Λ"""
    M = len(degrees)
    masks = []
    for ell, z in enumerate(res.z, start=1):
        idx = np.arange(z)
        if ell == m:
            start = degrees[ell - 1] if ell <= M else 1
            masks.append(idx == start if next_only else idx >= start)
        elif ell <= M:
            masks.append(idx < degrees[ell - 1])
        else:
            masks.append(idx == 0)
    return [mask.astype(float) for mask in masks]


def _dimension_indicators(res: ResidualTT, G: np.ndarray, weights, degrees: Sequence[int],
                          next_only: bool) -> np.ndarray:
    M = len(degrees)
    n_dims = M + 1 if res.L > M else M
    values = []
    for m in range(1, n_dims + 1):
        S_m = mask_hadamard(res.cores, _dimension_masks(res, m, degrees, next_only))
        label = f"η_param,{m}" + (" (próximo modo)" if next_only else "")
        values.append(float(_clamp(_form(G, S_m, S_m, weights), label)))
    return np.sqrt(np.asarray(values))


def eta_param(res: ResidualTT, weights: Optional[Sequence[np.ndarray]] = None,
              degrees: Optional[Sequence[int]] = None):
    """
    Estimador de cauda: Q(S) − 2B(S, S_Λ) + Q(S_Λ) e indicadores por dimensão.

    Returns:
        (η_param total, array com η_param,m para m = 1..M e a dimensão de reserva M+1 se L > M)
    """
    weights = weights or residual_gramians(res)
    degrees = res.degrees if degrees is None else tuple(degrees)
    G = _flux_gram(res)
    S = list(res.cores)
    S_active = mask_hadamard(S, res.active_masks(degrees))
    total = _form(G, S, S, weights) - 2.0 * _form(G, S, S_active, weights) + _form(G, S_active, S_active, weights)
    total = float(_clamp(total, "η_param"))
    return float(np.sqrt(total)), _dimension_indicators(res, G, weights, degrees, next_only=False)


def eta_param_next(res: ResidualTT, weights: Optional[Sequence[np.ndarray]] = None,
                   degrees: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Parte da cauda que sai do resíduo ao refinar cada dimensão: só o modo
    η_m = d_m (η_{M+1} = 1 na dimensão de reserva), demais dimensões em Λ.
    """
    weights = weights or residual_gramians(res)
    degrees = res.degrees if degrees is None else tuple(degrees)
    return _dimension_indicators(res, _flux_gram(res), weights, degrees, next_only=True)


def eta_disc(problem: DiscreteProblem, W: TTTensor) -> float:
    """⟨R, H⁻¹R⟩^(1/2) com R = A(W) − F"""
    R = tt_add(mpo_apply(problem.operator, W), tt_scale(problem.rhs, -1.0))
    R = right_orthogonalize(R)
    params = problem.params

    E = np.ones((1, 1))
    for m in range(R.order - 1, 0, -1):
        core = R.core(m)
        r, d, r2 = core.shape
        Z = gramians(m, d, params).Z
        try:
            factor = cho_factor(Z)
        except LinAlgError as e:
            raise SolverError(f"Gramiana Z_{m} singular") from e
        solved = cho_solve(factor, core.transpose(1, 0, 2).reshape(d, -1))
        solved = solved.reshape(d, r, r2).transpose(1, 0, 2)
        E = np.einsum("aib,cid,bd->ac", core, solved, E)

    Y0 = R.core(0)[0]
    Z0 = assemble_stiffness(problem.mesh).tocsc()
    Z0_inv_Y0 = splu(Z0).solve(np.ascontiguousarray(Y0))
    value = float(np.sum((Y0.T @ Z0_inv_Y0) * E))
    return float(np.sqrt(_clamp(value, "η_disc")))


def eta_all(det: float, param: float, disc: float) -> float:
    """√((η_det + η_param + η_disc)² + η_disc²) com constantes iguais a 1"""
    if min(det, param, disc) < 0:
        raise ValueError("Estimadores devem ser não negativos")
    return float(np.sqrt((det + param + disc) ** 2 + disc ** 2))


def estimate(problem: DiscreteProblem, W: TTTensor, f: Optional[Callable] = None) -> EstimatorReport:
    """Todos os estimadores de uma iteração"""
    res = build_residual(W, problem.coeff, problem.degrees, problem.mesh)
    weights = residual_gramians(res)
    eta_T, eta_F, det = eta_det(res, f, weights)
    param, param_m = eta_param(res, weights)
    param_next = eta_param_next(res, weights)
    disc = eta_disc(problem, W)
    report = EstimatorReport(
        eta_det_T=eta_T,
        eta_det_F=eta_F,
        eta_det=det,
        eta_param=param,
        eta_param_m=param_m,
        eta_param_next=param_next,
        eta_disc=disc,
        eta_all=eta_all(det, param, disc)
    )
    logger.info(f"Estimadores: det={det:.4e}, param={param:.4e}, disc={disc:.4e}, all={report.eta_all:.4e}")
    return report
