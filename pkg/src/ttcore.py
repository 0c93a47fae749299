"""
Tensores tensor-train (TT) e operadores em formato MPO.

O núcleo ℓ de um TTTensor tem forma (r_ℓ, q_ℓ, r_{ℓ+1}) com postos de
fronteira iguais a 1. O núcleo ℓ de um TTOperator tem forma
(s_ℓ, q_ℓ, q′_ℓ, s_{ℓ+1}); o primeiro núcleo pode ser guardado como um
banco de matrizes esparsas N×N indexado por s_1.
"""

import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from config.settings import RANK_CAP

logger = logging.getLogger(__name__)


class TTTensor:
    """Tensor em formato TT (imutável após construção)"""

    def __init__(self, cores: Sequence[np.ndarray]):
        cores = [np.array(c, dtype=float) for c in cores]
        if not cores:
            raise ValueError("Um TTTensor precisa de ao menos um núcleo")
        for pos, core in enumerate(cores):
            if core.ndim != 3:
                raise ValueError(f"Núcleo {pos} deve ser 3D, recebido {core.shape}")
            core.setflags(write=False)
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("Postos de fronteira devem ser 1")
        for pos in range(len(cores) - 1):
            if cores[pos].shape[2] != cores[pos + 1].shape[0]:
                raise ValueError(
                    f"Postos incompatíveis entre núcleos {pos} e {pos + 1}: "
                    f"{cores[pos].shape} x {cores[pos + 1].shape}"
                )
        self._cores = tuple(cores)

    @property
    def cores(self):
        return self._cores

    @property
    def order(self) -> int:
        return len(self._cores)

    @property
    def dims(self) -> tuple:
        return tuple(c.shape[1] for c in self._cores)

    @property
    def ranks(self) -> tuple:
        return (1,) + tuple(c.shape[2] for c in self._cores)

    def core(self, pos: int) -> np.ndarray:
        return self._cores[pos]

    def with_cores(self, cores: Sequence[np.ndarray]) -> "TTTensor":
        return TTTensor(cores)

    def full(self) -> np.ndarray:
        """Reconstrução densa"""
        result = self._cores[0].reshape(self._cores[0].shape[1], -1)
        for core in self._cores[1:]:
            r, q, r2 = core.shape
            result = (result @ core.reshape(r, q * r2)).reshape(-1, r2)
        return result.reshape(self.dims)

    def __repr__(self) -> str:
        return f"TTTensor(dims={self.dims}, ranks={self.ranks})"

    @classmethod
    def rank1(cls, vectors: Sequence[np.ndarray]) -> "TTTensor":
        return cls([np.asarray(v, dtype=float).reshape(1, -1, 1) for v in vectors])

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "TTTensor":
        return cls([np.zeros((1, q, 1)) for q in dims])

    @classmethod
    def random(cls, dims: Sequence[int], ranks: Union[int, Sequence[int]],
               rng: np.random.Generator) -> "TTTensor":
        """Núcleos gaussianos; postos internos limitados ao máximo admissível"""
        n = len(dims)
        if isinstance(ranks, (int, np.integer)):
            ranks = [int(ranks)] * (n - 1)
        if len(ranks) != n - 1:
            raise ValueError(f"Esperados {n - 1} postos internos, recebidos {len(ranks)}")
        full_ranks = [1] + [min(int(r), r_max) for r, r_max in zip(ranks, feasible_ranks(dims))] + [1]
        cores = [rng.standard_normal((full_ranks[k], q, full_ranks[k + 1])) for k, q in enumerate(dims)]
        return cls(cores)


def feasible_ranks(dims: Sequence[int]) -> List[int]:
    """Maior posto interno possível em cada ligação"""
    result = []
    for k in range(1, len(dims)):
        left = int(np.prod(dims[:k], dtype=float))
        right = int(np.prod(dims[k:], dtype=float))
        result.append(min(left, right))
    return result


def tt_eval(t: TTTensor, idx: Sequence[int]) -> float:
    """Entrada do tensor no multi-índice idx"""
    if len(idx) != t.order:
        raise IndexError(f"Índice com {len(idx)} entradas para tensor de ordem {t.order}")
    for pos, (i, q) in enumerate(zip(idx, t.dims)):
        if not 0 <= i < q:
            raise IndexError(f"Índice {i} fora do intervalo [0,{q}) na dimensão {pos}")
    vec = t.core(0)[:, idx[0], :]
    for core, i in zip(t.cores[1:], idx[1:]):
        vec = vec @ core[:, i, :]
    return float(vec[0, 0])


def _check_same_dims(a: TTTensor, b: TTTensor):
    if a.dims != b.dims:
        raise ValueError(f"Dimensões incompatíveis: {a.dims} vs {b.dims}")


def tt_add(a: TTTensor, b: TTTensor) -> TTTensor:
    """Soma com postos concatenados em blocos diagonais"""
    _check_same_dims(a, b)
    if a.order == 1:
        return TTTensor([a.core(0) + b.core(0)])
    cores = []
    last = a.order - 1
    for pos, (x, y) in enumerate(zip(a.cores, b.cores)):
        if pos == 0:
            cores.append(np.concatenate([x, y], axis=2))
        elif pos == last:
            cores.append(np.concatenate([x, y], axis=0))
        else:
            r1, q, r2 = x.shape
            s1, _, s2 = y.shape
            block = np.zeros((r1 + s1, q, r2 + s2))
            block[:r1, :, :r2] = x
            block[r1:, :, r2:] = y
            cores.append(block)
    return TTTensor(cores)


def tt_scale(t: TTTensor, alpha: float) -> TTTensor:
    cores = list(t.cores)
    cores[0] = alpha * cores[0]
    return TTTensor(cores)


def tt_dot(a: TTTensor, b: TTTensor) -> float:
    """Produto interno de Frobenius, contraído da esquerda para a direita"""
    _check_same_dims(a, b)
    env = np.ones((1, 1))
    for x, y in zip(a.cores, b.cores):
        tmp = np.tensordot(env, x, axes=(0, 0))          # (rb, q, ra')
        env = np.tensordot(tmp, y, axes=([0, 1], [0, 1]))  # (ra', rb')
    return float(env[0, 0])


def tt_norm(t: TTTensor) -> float:
    return float(np.sqrt(max(tt_dot(t, t), 0.0)))


def right_orthogonalize(t: TTTensor) -> TTTensor:
    """Núcleos 1..L ortonormais por linhas; a norma fica no núcleo 0"""
    cores = [c.copy() for c in t.cores]
    for pos in range(len(cores) - 1, 0, -1):
        r, q, r2 = cores[pos].shape
        Q, R = np.linalg.qr(cores[pos].reshape(r, q * r2).T)
        k = Q.shape[1]
        cores[pos] = Q.T.reshape(k, q, r2)
        cores[pos - 1] = np.tensordot(cores[pos - 1], R.T, axes=(2, 0))
    return TTTensor(cores)


def left_orthogonalize(t: TTTensor) -> TTTensor:
    """Núcleos 0..L−1 ortonormais por colunas; a norma fica no último núcleo"""
    cores = [c.copy() for c in t.cores]
    for pos in range(len(cores) - 1):
        r, q, r2 = cores[pos].shape
        Q, R = np.linalg.qr(cores[pos].reshape(r * q, r2))
        k = Q.shape[1]
        cores[pos] = Q.reshape(r, q, k)
        cores[pos + 1] = np.tensordot(R, cores[pos + 1], axes=(1, 0))
    return TTTensor(cores)


def tt_distance(a: TTTensor, b: TTTensor) -> float:
    """‖a − b‖ via ortogonalização (sem o cancelamento de √dot)"""
    diff = right_orthogonalize(tt_add(a, tt_scale(b, -1.0)))
    return float(np.linalg.norm(diff.core(0)))


def _truncation_rank(singular_values: np.ndarray, delta: float, cap: int) -> int:
    tails = np.cumsum((singular_values ** 2)[::-1])[::-1]
    # menor k com cauda Σ_{j≥k} σ_j² ≤ δ²
    keep = int(np.count_nonzero(tails > delta ** 2))
    return max(1, min(keep, cap))


def tt_round(t: TTTensor, tol: float = 0.0,
             max_ranks: Optional[Union[int, Sequence[int]]] = None) -> TTTensor:
    """
    Arredondamento HSVD: ortogonalização à direita seguida de SVDs truncadas
    da esquerda para a direita, com δ = tol·‖t‖/√L por desdobramento.
    """
    if tol < 0:
        raise ValueError(f"Tolerância deve ser ≥ 0: {tol}")
    n = t.order
    if n == 1:
        return TTTensor(t.cores)
    if max_ranks is None:
        caps = [RANK_CAP] * (n - 1)
    elif isinstance(max_ranks, (int, np.integer)):
        caps = [int(max_ranks)] * (n - 1)
    else:
        caps = [int(r) for r in max_ranks]

    orth = right_orthogonalize(t)
    cores = [c.copy() for c in orth.cores]
    delta = tol * np.linalg.norm(cores[0]) / np.sqrt(n - 1)
    for pos in range(n - 1):
        r, q, r2 = cores[pos].shape
        U, S, Vt = np.linalg.svd(cores[pos].reshape(r * q, r2), full_matrices=False)
        k = _truncation_rank(S, delta, caps[pos])
        cores[pos] = U[:, :k].reshape(r, q, k)
        cores[pos + 1] = np.tensordot(S[:k, None] * Vt[:k], cores[pos + 1], axes=(1, 0))
    return TTTensor(cores)


def mask_hadamard(t: Union[TTTensor, Sequence[np.ndarray]],
                  masks: Sequence[Optional[np.ndarray]]) -> Union[TTTensor, List[np.ndarray]]:
    """
    Produto de Hadamard com uma máscara de posto 1 (None = passa tudo).

    Aceita um TTTensor ou uma lista de núcleos com postos de fronteira
    arbitrários (núcleos estocásticos do resíduo); devolve o mesmo tipo.
    """
    cores_in = t.cores if isinstance(t, TTTensor) else list(t)
    if len(masks) != len(cores_in):
        raise ValueError(f"Esperadas {len(cores_in)} máscaras, recebidas {len(masks)}")
    cores = []
    for core, mask in zip(cores_in, masks):
        if mask is None:
            cores.append(core)
            continue
        mask = np.asarray(mask, dtype=float)
        if mask.shape != (core.shape[1],):
            raise ValueError(f"Máscara de forma {mask.shape} para modo de tamanho {core.shape[1]}")
        cores.append(core * mask[None, :, None])
    return TTTensor(cores) if isinstance(t, TTTensor) else cores


def tt_dofs(t: TTTensor) -> int:
    """
    Dimensão da variedade TT: q_0·r_1 + Σ_{ℓ=1}^{L−1}(r_ℓ q_ℓ r_{ℓ+1} − r_{ℓ+1}²) + r_L·q_L.
    """
    dims, ranks = t.dims, t.ranks
    if t.order == 1:
        return int(dims[0])
    L = t.order - 1
    total = dims[0] * ranks[1]
    for pos in range(1, L):
        total += ranks[pos] * dims[pos] * ranks[pos + 1] - ranks[pos + 1] ** 2
    total += ranks[L] * dims[L]
    return int(total)


def full_dofs(t: TTTensor) -> int:
    """Tamanho do tensor completo ∏ q_ℓ"""
    return int(np.prod(t.dims, dtype=object))


class TTOperator:
    """Operador MPO; o primeiro núcleo pode ser um banco de matrizes esparsas"""

    def __init__(self, cores: Sequence[np.ndarray], bank: Optional[Sequence[sp.spmatrix]] = None):
        cores = [np.array(c, dtype=float) for c in cores]
        for pos, core in enumerate(cores):
            if core.ndim != 4:
                raise ValueError(f"Núcleo de operador {pos} deve ser 4D, recebido {core.shape}")
            core.setflags(write=False)
        self._bank = None
        if bank is not None:
            bank = [sp.csr_matrix(K) for K in bank]
            if not bank:
                raise ValueError("Banco de matrizes vazio")
            shape = bank[0].shape
            if any(K.shape != shape for K in bank) or shape[0] != shape[1]:
                raise ValueError("Banco deve conter matrizes quadradas de mesmo tamanho")
            self._bank = tuple(bank)
        self._cores = tuple(cores)

        if self._bank is None and not self._cores:
            raise ValueError("Operador sem núcleos")
        left = len(self._bank) if self._bank is not None else 1
        for pos, core in enumerate(self._cores):
            if core.shape[0] != left:
                raise ValueError(f"Postos incompatíveis no núcleo {pos} do operador: {core.shape}")
            left = core.shape[3]
        if left != 1:
            raise ValueError("Postos de fronteira do operador devem ser 1")

    @property
    def bank(self):
        return self._bank

    @property
    def cores(self):
        return self._cores

    @property
    def order(self) -> int:
        return len(self._cores) + (1 if self._bank is not None else 0)

    @property
    def row_dims(self) -> tuple:
        head = (self._bank[0].shape[0],) if self._bank is not None else ()
        return head + tuple(c.shape[1] for c in self._cores)

    @property
    def col_dims(self) -> tuple:
        head = (self._bank[0].shape[1],) if self._bank is not None else ()
        return head + tuple(c.shape[2] for c in self._cores)

    @property
    def ranks(self) -> tuple:
        head = (1, len(self._bank)) if self._bank is not None else (1,)
        return head + tuple(c.shape[3] for c in self._cores)

    def dense_cores(self) -> List[np.ndarray]:
        """Todos os núcleos como arrays 4D (o banco é densificado)"""
        cores = list(self._cores)
        if self._bank is not None:
            first = np.stack([K.toarray() for K in self._bank], axis=-1)[None]
            cores.insert(0, first)
        return cores

    def to_dense(self) -> np.ndarray:
        """Matriz densa de tamanho (∏q, ∏q′)"""
        cores = self.dense_cores()
        first = cores[0]
        mat = first.reshape(first.shape[1], first.shape[2], first.shape[3])
        for core in cores[1:]:
            s, q, q2, s2 = core.shape
            rows, cols, _ = mat.shape
            mat = np.einsum("abs,sijt->aibjt", mat, core).reshape(rows * q, cols * q2, s2)
        return mat[:, :, 0]

    def __repr__(self) -> str:
        return f"TTOperator(dims={self.row_dims}, ranks={self.ranks})"


def mpo_apply(A: TTOperator, t: TTTensor) -> TTTensor:
    """Aplica o MPO núcleo a núcleo; postos resultantes s_ℓ·r_ℓ"""
    if A.col_dims != t.dims:
        raise ValueError(f"Dimensões incompatíveis: operador {A.col_dims}, tensor {t.dims}")
    cores = []
    op_cores = list(A.cores)
    tensor_cores = list(t.cores)
    if A.bank is not None:
        x0 = tensor_cores.pop(0)[0]                    # (N, r1)
        blocks = [K @ x0 for K in A.bank]              # s1 x (N, r1)
        y0 = np.stack(blocks, axis=1)                  # (N, s1, r1)
        cores.append(y0.reshape(1, x0.shape[0], -1))
    for O, X in zip(op_cores, tensor_cores):
        s, q, _, s2 = O.shape
        r, _, r2 = X.shape
        Y = np.einsum("sijt,rju->sritu", O, X).reshape(s * r, q, s2 * r2)
        cores.append(Y)
    return TTTensor(cores)


def op_dofs(A: TTOperator) -> int:
    """N²s_1 − s_1² + Σ_{ℓ=1}^{L−1}(s_ℓ q_ℓ² s_{ℓ+1} − s_{ℓ+1}²) + s_L q_L²"""
    dims, ranks = A.row_dims, A.ranks
    if A.order == 1:
        return int(dims[0] ** 2)
    L = A.order - 1
    total = dims[0] ** 2 * ranks[1] - ranks[1] ** 2
    for pos in range(1, L):
        total += ranks[pos] * dims[pos] ** 2 * ranks[pos + 1] - ranks[pos + 1] ** 2
    total += ranks[L] * dims[L] ** 2
    return int(total)


def save_tt(t: TTTensor, path: Union[str, Path]) -> None:
    """Serializa os núcleos em JSON (cabeçalho de forma + dados row-major)"""
    payload = {
        "format": "tt",
        "cores": [{"shape": list(c.shape), "data": c.ravel().tolist()} for c in t.cores]
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    logger.debug(f"Tensor {t!r} salvo em {path}")


def load_tt(path: Union[str, Path]) -> TTTensor:
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if payload.get("format") != "tt":
        raise ValueError(f"Arquivo {path} não contém um tensor TT")
    cores = [np.asarray(c["data"], dtype=float).reshape(c["shape"]) for c in payload["cores"]]
    return TTTensor(cores)
