"""
Sistema de Galerkin estocástico em formato TT: operador MPO, lado direito,
precondicionador pela média e solver ALS de um núcleo.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse.linalg import LinearOperator, cg, splu

from config.settings import ALS_MAX_SWEEPS, ALS_TOL, LOCAL_DENSE_LIMIT
from .chaos import triple_tensor
from .fem import (ElementData, Mesh, assemble_load, assemble_stiffness,
                  element_data, prolongate_free)
from .lognormal import CoeffTT
from .models import SolveResult, SolverError
from .ttcore import (TTOperator, TTTensor, right_orthogonalize, tt_distance,
                     tt_norm, tt_scale)

logger = logging.getLogger(__name__)

# Parada por estagnação do ALS: Δ abaixo do piso sem melhorar o menor Δ anterior pela razão
STAGNATION_FLOOR = 1e-9
STAGNATION_RATIO = 0.5
STAGNATION_SWEEPS = 2


@dataclass
class DiscreteProblem:
    """Operador MPO, lado direito de posto 1 e graus ativos Λ"""
    operator: TTOperator
    rhs: TTTensor
    degrees: Tuple[int, ...]
    mesh: Mesh
    coeff: CoeffTT

    @property
    def dims(self) -> tuple:
        return (self.mesh.n_free,) + tuple(self.degrees)

    @property
    def params(self):
        return self.coeff.params


def element_coefficient_values(c: CoeffTT, mesh: Mesh, data: Optional[ElementData] = None) -> np.ndarray:
    """a0[k1] nos pontos de quadratura dos elementos, forma (s1, nt, 3)"""
    data = data or element_data(mesh)
    values = c.eval_a0(data.points.reshape(-1, 2))
    return values.reshape(values.shape[0], mesh.n_triangles, -1)


def assemble_operator(c: CoeffTT, mesh: Mesh, degrees: Sequence[int],
                      data: Optional[ElementData] = None) -> TTOperator:
    """Operador de Galerkin em MPO com o primeiro núcleo como banco de rigidezes"""
    degrees = tuple(int(d) for d in degrees)
    M = len(degrees)
    if M > c.L:
        raise ValueError(f"Ordem estocástica M={M} maior que o comprimento do coeficiente L={c.L}")
    for m, d in enumerate(degrees, start=1):
        if d < 1:
            raise ValueError(f"Grau ativo inválido na dimensão {m}: {d}")
        if c.degrees[m - 1] < 2 * d - 1:
            raise ValueError(
                f"Grau do coeficiente q_{m}={c.degrees[m - 1]} < 2d_{m}−1={2 * d - 1}: "
                "produtos triplos truncados"
            )
    data = data or element_data(mesh)
    a0 = element_coefficient_values(c, mesh, data)
    bank = [assemble_stiffness(mesh, a0[k], data=data) for k in range(a0.shape[0])]

    cores = []
    for m, d in enumerate(degrees, start=1):
        A = c.cores[m - 1]
        kappa = triple_tensor(A.shape[1], d, d)
        cores.append(np.einsum("anb,nij->aijb", A, kappa))

    tail = np.ones(1)
    for ell in range(c.L, M, -1):
        tail = c.cores[ell - 1][:, 0, :] @ tail
    if M > 0:
        cores[-1] = np.tensordot(cores[-1], tail, axes=(3, 0))[..., None]
    else:
        folded = tail[0] * bank[0]
        for t, K in zip(tail[1:], bank[1:]):
            folded = folded + t * K
        bank = [folded]
    operator = TTOperator(cores, bank=bank)
    logger.debug(f"Operador montado: {operator!r}")
    return operator


def assemble_rhs(mesh: Mesh, f: Optional[Callable], degrees: Sequence[int],
                 data: Optional[ElementData] = None) -> TTTensor:
    """F = f0 ⊗ e0 ⊗ … ⊗ e0"""
    f0 = assemble_load(mesh, f, data=data)
    vectors = [f0]
    for d in degrees:
        e0 = np.zeros(int(d))
        e0[0] = 1.0
        vectors.append(e0)
    return TTTensor.rank1(vectors)


def build_problem(c: CoeffTT, mesh: Mesh, degrees: Sequence[int],
                  f: Optional[Callable] = None) -> DiscreteProblem:
    data = element_data(mesh)
    return DiscreteProblem(
        operator=assemble_operator(c, mesh, degrees, data),
        rhs=assemble_rhs(mesh, f, degrees, data),
        degrees=tuple(int(d) for d in degrees),
        mesh=mesh,
        coeff=c
    )


class MeanPreconditioner:
    """Fatoração esparsa de K(ā); resolve com K(ā) coluna a coluna"""

    def __init__(self, c: CoeffTT, mesh: Mesh, data: Optional[ElementData] = None):
        data = data or element_data(mesh)
        abar = c.mean(data.points.reshape(-1, 2)).reshape(mesh.n_triangles, -1)
        if np.any(abar <= 0):
            raise SolverError(
                f"Coeficiente médio não positivo (min={abar.min():.3e}): K(ā) não é SPD"
            )
        self.matrix = assemble_stiffness(mesh, abar, data=data).tocsc()
        self.size = self.matrix.shape[0]
        self._factor = self._factorize(self.matrix)

    @staticmethod
    def _factorize(K: sp.csc_matrix):
        try:
            from sksparse.cholmod import cholesky, CholmodNotPositiveDefiniteError
        except ImportError:
            lu = splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                      options={"SymmetricMode": True})
            if np.any(lu.U.diagonal() <= 0):
                raise SolverError("K(ā) não é SPD (pivô não positivo)")
            return lu.solve
        try:
            return cholesky(K)
        except CholmodNotPositiveDefiniteError as e:
            raise SolverError(f"K(ā) não é SPD: {e}") from e

    def solve(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.size:
            raise ValueError(f"Vetor de tamanho {v.shape[0]} para precondicionador de tamanho {self.size}")
        return np.asarray(self._factor(v)).reshape(v.shape)


def mean_preconditioner(c: CoeffTT, mesh: Mesh) -> MeanPreconditioner:
    return MeanPreconditioner(c, mesh)


def cold_start(dims: Sequence[int], rank: int, rng: np.random.Generator) -> TTTensor:
    """Tensor aleatório de posto (rank, …) com norma unitária"""
    t = TTTensor.random(dims, rank, rng)
    return tt_scale(t, 1.0 / tt_norm(t))


def prolongate_solution(W: TTTensor, coarse: Mesh, fine: Mesh) -> TTTensor:
    """Interpolação nodal de cada coluna do núcleo físico para a malha fina"""
    cores = list(W.cores)
    X0 = cores[0][0]
    cores[0] = prolongate_free(X0, coarse, fine)[None]
    return TTTensor(cores)


def pad_degrees(W: TTTensor, degrees: Sequence[int]) -> TTTensor:
    """Completa com zeros os núcleos estocásticos e acrescenta e0 em dimensões novas"""
    cores = list(W.cores)
    M_old = W.order - 1
    if len(degrees) < M_old:
        raise ValueError("Não é possível remover dimensões estocásticas")
    for m, d in enumerate(degrees, start=1):
        if m <= M_old:
            core = cores[m]
            r, q, r2 = core.shape
            if d < q:
                raise ValueError(f"Grau {d} menor que o atual {q} na dimensão {m}")
            padded = np.zeros((r, d, r2))
            padded[:, :q, :] = core
            cores[m] = padded
        else:
            e0 = np.zeros((1, d, 1))
            e0[0, 0, 0] = 1.0
            cores.append(e0)
    return TTTensor(cores)


def _left_env(L: np.ndarray, W: np.ndarray, O: np.ndarray) -> np.ndarray:
    return np.einsum("asc,aib,sijt,cjd->btd", L, W, O, W, optimize=True)


def _right_env(R: np.ndarray, W: np.ndarray, O: np.ndarray) -> np.ndarray:
    return np.einsum("aib,sijt,cjd,btd->asc", W, O, W, R, optimize=True)


def _first_env(bank, X0: np.ndarray) -> np.ndarray:
    return np.stack([X0.T @ (K @ X0) for K in bank], axis=1)


class _Sweeper:
    """Estado de uma execução ALS (ambientes esquerdo/direito e núcleos)"""

    def __init__(self, problem: DiscreteProblem, w0: TTTensor,
                 precond: Optional[MeanPreconditioner], dense_limit: int):
        A = problem.operator
        if A.col_dims != w0.dims:
            raise ValueError(f"Dimensões do chute inicial {w0.dims} ≠ operador {A.col_dims}")
        if A.bank is None:
            raise ValueError("O operador precisa do banco esparso no primeiro núcleo")
        if problem.rhs.ranks != (1,) * (problem.rhs.order + 1):
            raise ValueError("O lado direito deve ter posto 1")
        self.bank = A.bank
        self.ops = A.cores
        self.f0 = problem.rhs.core(0)[0, :, 0]
        self.e = [None] + [problem.rhs.core(m)[0, :, 0] for m in range(1, problem.rhs.order)]
        self.precond = precond
        self.dense_limit = dense_limit
        self.cores = [c.copy() for c in right_orthogonalize(w0).cores]
        self.n = len(self.cores)
        n = self.n
        self.Lenv = [None] * (n + 1)
        self.Lf = [None] * (n + 1)
        self.Renv = [None] * (n + 1)
        self.Rf = [None] * (n + 1)
        self.Renv[n] = np.ones((1, 1, 1))
        self.Rf[n] = np.ones(1)
        for m in range(n - 1, 0, -1):
            self._update_right(m)
        self.sweep = 0
        self.energies: List[float] = []

    def _update_left(self, m: int):
        # ambiente à esquerda do núcleo m+1
        if m == 0:
            X0 = self.cores[0][0]
            self.Lenv[1] = _first_env(self.bank, X0)
            self.Lf[1] = X0.T @ self.f0
        else:
            W = self.cores[m]
            self.Lenv[m + 1] = _left_env(self.Lenv[m], W, self.ops[m - 1])
            self.Lf[m + 1] = np.einsum("a,aib,i->b", self.Lf[m], W, self.e[m])

    def _update_right(self, m: int):
        W = self.cores[m]
        self.Renv[m] = _right_env(self.Renv[m + 1], W, self.ops[m - 1])
        self.Rf[m] = np.einsum("aib,i,b->a", W, self.e[m], self.Rf[m + 1])

    def _dense_solve(self, B: np.ndarray, g: np.ndarray, m: int) -> np.ndarray:
        try:
            factor = cho_factor(0.5 * (B + B.T))
        except LinAlgError as e:
            raise SolverError(f"Sistema local não SPD (varredura {self.sweep}, núcleo {m})") from e
        return cho_solve(factor, g)

    def _cg_solve(self, matvec, g: np.ndarray, x0: np.ndarray, m: int, prec=None) -> np.ndarray:
        size = g.shape[0]
        op = LinearOperator((size, size), matvec=matvec, dtype=float)
        residual = np.linalg.norm(g - matvec(x0))
        if residual == 0.0:
            return x0
        x, info = cg(op, g, x0=x0, rtol=0.0, atol=1e-2 * residual, maxiter=10 * size, M=prec)
        if info < 0:
            raise SolverError(f"CG falhou (varredura {self.sweep}, núcleo {m})")
        if info > 0:
            logger.warning(f"CG local sem convergência em {info} iterações (núcleo {m})")
        return x

    def _record(self, x: np.ndarray, Bx: np.ndarray, g: np.ndarray):
        self.energies.append(float(0.5 * x @ Bx - g @ x))

    def solve_core(self, m: int):
        if m == 0:
            self._solve_physical()
            return
        L, R = self.Lenv[m], self.Renv[m + 1]
        O = self.ops[m - 1]
        shape = (L.shape[0], O.shape[1], R.shape[0])
        g = np.einsum("a,i,b->aib", self.Lf[m], self.e[m], self.Rf[m + 1]).ravel()
        size = g.shape[0]
        if size <= self.dense_limit:
            B = np.einsum("asc,sijt,btd->aibcjd", L, O, R, optimize=True).reshape(size, size)
            x = self._dense_solve(B, g, m)
            self._record(x, B @ x, g)
        else:
            def matvec(v):
                V = v.reshape(shape)
                return np.einsum("asc,sijt,btd,cjd->aib", L, O, R, V, optimize=True).ravel()
            x = self._cg_solve(matvec, g, self.cores[m].ravel(), m)
            self._record(x, matvec(x), g)
        self.cores[m] = x.reshape(shape)

    def _solve_physical(self):
        R = self.Renv[1]
        N = self.f0.shape[0]
        r1 = R.shape[0]
        g = np.outer(self.f0, self.Rf[1]).ravel()
        size = N * r1
        if size <= self.dense_limit:
            B = sum(np.kron(K.toarray(), R[:, k, :]) for k, K in enumerate(self.bank))
            x = self._dense_solve(B, g, 0)
            self._record(x, B @ x, g)
        else:
            def matvec(v):
                X = v.reshape(N, r1)
                Y = np.zeros_like(X)
                for k, K in enumerate(self.bank):
                    Y += (K @ X) @ R[:, k, :].T
                return Y.ravel()
            prec = None
            if self.precond is not None:
                prec = LinearOperator((size, size), dtype=float,
                                      matvec=lambda v: self.precond.solve(v.reshape(N, r1)).ravel())
            x = self._cg_solve(matvec, g, self.cores[0][0].ravel(), 0, prec)
            self._record(x, matvec(x), g)
        self.cores[0] = x.reshape(1, N, r1)

    def left_orthogonalize(self, m: int):
        r, q, r2 = self.cores[m].shape
        Q, Rm = np.linalg.qr(self.cores[m].reshape(r * q, r2))
        self.cores[m] = Q.reshape(r, q, Q.shape[1])
        self.cores[m + 1] = np.tensordot(Rm, self.cores[m + 1], axes=(1, 0))
        self._update_left(m)

    def right_orthogonalize(self, m: int):
        r, q, r2 = self.cores[m].shape
        Q, Rm = np.linalg.qr(self.cores[m].reshape(r, q * r2).T)
        self.cores[m] = Q.T.reshape(Q.shape[1], q, r2)
        self.cores[m - 1] = np.tensordot(self.cores[m - 1], Rm.T, axes=(2, 0))
        self._update_right(m)

    def run_sweep(self):
        self.sweep += 1
        n = self.n
        for m in range(n):
            self.solve_core(m)
            if m < n - 1:
                self.left_orthogonalize(m)
        for m in range(n - 1, 0, -1):
            self.right_orthogonalize(m)
            self.solve_core(m - 1)

    def tensor(self) -> TTTensor:
        return TTTensor(self.cores)


def als_solve(problem: DiscreteProblem, w0: TTTensor,
              precond: Optional[MeanPreconditioner] = None,
              tol: float = ALS_TOL, max_sweeps: int = ALS_MAX_SWEEPS,
              verbose: bool = False, dense_limit: int = LOCAL_DENSE_LIMIT) -> SolveResult:
    """
    ALS de um núcleo com postos fixos.

    Para quando ‖w_k − w_{k−1}‖ ≤ tol·‖w_k‖, quando Δ estaciona abaixo de
    STAGNATION_FLOOR por STAGNATION_SWEEPS varreduras (nível de arredondamento)
    ou após max_sweeps; a energia não cresce entre soluções locais, então o
    último iterado é o melhor.
    """
    sweeper = _Sweeper(problem, w0, precond, dense_limit)
    previous = sweeper.tensor()
    deltas: List[float] = []
    converged = stagnated = False
    stalled = 0
    if verbose:
        logger.info("sweep,delta,energy")
    for _ in range(max_sweeps):
        sweeper.run_sweep()
        current = sweeper.tensor()
        norm = float(np.linalg.norm(sweeper.cores[0]))
        diff = tt_distance(current, previous)
        delta = diff / norm if norm > 0 else diff
        deltas.append(delta)
        if verbose:
            logger.info(f"{sweeper.sweep},{delta:.6e},{sweeper.energies[-1]:.12e}")
        previous = current
        if delta <= tol:
            converged = True
            break
        if len(deltas) > 1 and delta <= STAGNATION_FLOOR and delta >= STAGNATION_RATIO * min(deltas[:-1]):
            stalled += 1
        else:
            stalled = 0
        if stalled >= STAGNATION_SWEEPS:
            stagnated = True
            break

    if converged:
        logger.debug(f"✓ ALS convergiu em {sweeper.sweep} varreduras (Δ={deltas[-1]:.2e})")
    elif stagnated:
        logger.info(f"ALS estacionou em Δ={deltas[-1]:.2e} após {sweeper.sweep} varreduras (tol={tol:.1e})")
    else:
        logger.warning(f"ALS sem convergência após {sweeper.sweep} varreduras (Δ={deltas[-1]:.2e})")
    return SolveResult(
        tensor=previous,
        converged=converged,
        sweeps=sweeper.sweep,
        deltas=deltas,
        energies=list(sweeper.energies),
        success=True,
        error=None if converged else ("estagnação no nível de arredondamento" if stagnated else "max_sweeps atingido"),
        stagnated=stagnated
    )
