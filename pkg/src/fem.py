"""
Elementos finitos P1 no quadrado unitário: malha com bissecção pelo
vértice mais novo, montagem de rigidez ponderada, carga, dados de
quadratura por elemento e aresta, saltos normais e seminorma H¹.

Convenção dos triângulos: (v0, v1, v2) orientado positivamente, v0 é o
vértice mais novo e a aresta de refinamento é (v1, v2).
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

# Regra de 3 pontos de ordem 2 (coordenadas baricêntricas)
_BARY = np.array([
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
])
# Gauss de 2 pontos em [0,1]
_FACET_S = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
_AREA_TOL = 1e-14


class Mesh:
    """Triangulação conforme do quadrado unitário"""

    def __init__(self, vertices: np.ndarray, triangles: np.ndarray,
                 generation: Optional[np.ndarray] = None,
                 parents: Optional[np.ndarray] = None,
                 parent: Optional["Mesh"] = None):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        nt = len(self.triangles)
        self.generation = np.zeros(nt, dtype=np.int64) if generation is None else np.asarray(generation)
        nv = len(self.vertices)
        if parents is None:
            parents = np.repeat(np.arange(nv)[:, None], 2, axis=1)
        self.parents = np.asarray(parents, dtype=np.int64)
        self.parent = parent

        areas = self._signed_areas()
        if np.any(areas <= _AREA_TOL):
            bad = int(np.argmin(areas))
            raise ValueError(f"Triângulo degenerado ou mal orientado: {bad} (área={areas[bad]:.3e})")
        self.areas = areas
        self._build_edges()

    def _signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def _build_edges(self):
        t = self.triangles
        # aresta local j oposta ao vértice j; a aresta 0 é a de refinamento
        local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
        flat = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(flat, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        self.edges = edges
        self.triangle_edges = inverse.reshape(-1, 3)

        edge_triangles = -np.ones((len(edges), 2), dtype=np.int64)
        owners = np.repeat(np.arange(len(t)), 3)
        order = np.argsort(inverse, kind="stable")
        sorted_edges = inverse[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = sorted_edges[1:] != sorted_edges[:-1]
        edge_triangles[sorted_edges[first], 0] = owners[order[first]]
        edge_triangles[sorted_edges[~first], 1] = owners[order[~first]]
        counts = np.bincount(inverse, minlength=len(edges))
        if np.any(counts > 2):
            raise ValueError("Malha não conforme: aresta com mais de dois triângulos")
        self.edge_triangles = edge_triangles

        boundary_edges = edge_triangles[:, 1] < 0
        self.boundary_edges = boundary_edges
        self.interior_facets = np.flatnonzero(~boundary_edges)
        boundary_vertices = np.zeros(len(self.vertices), dtype=bool)
        boundary_vertices[edges[boundary_edges].ravel()] = True
        self.boundary_vertices = boundary_vertices
        self.free = np.flatnonzero(~boundary_vertices)
        self.free_index = -np.ones(len(self.vertices), dtype=np.int64)
        self.free_index[self.free] = np.arange(len(self.free))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_free(self) -> int:
        return len(self.free)

    @property
    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        lengths = np.stack([
            np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 1], axis=1),
        ], axis=1)
        return lengths.max(axis=1)

    @property
    def facet_lengths(self) -> np.ndarray:
        p = self.vertices[self.edges]
        return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)

    def angles(self) -> np.ndarray:
        """Ângulos internos em graus, forma (nt, 3)"""
        p = self.vertices[self.triangles]
        result = np.empty((self.n_triangles, 3))
        for j in range(3):
            a = p[:, (j + 1) % 3] - p[:, j]
            b = p[:, (j + 2) % 3] - p[:, j]
            cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            result[:, j] = np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))
        return result

    def __repr__(self) -> str:
        return f"Mesh(vertices={self.n_vertices}, triangles={self.n_triangles}, free={self.n_free})"


@dataclass
class FeFunction:
    """Função P1 com valores nos vértices livres (Dirichlet nulo no bordo)"""
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.mesh.n_free:
            raise ValueError(f"Esperados {self.mesh.n_free} valores livres, recebidos {self.values.shape[0]}")

    def full(self) -> np.ndarray:
        return expand_free(self.mesh, self.values)


@dataclass
class ElementData:
    """Pontos e pesos de quadratura, gradientes P1, áreas e diâmetros por elemento"""
    points: np.ndarray
    weights: np.ndarray
    grads: np.ndarray
    areas: np.ndarray
    diameters: np.ndarray


def initial_mesh(n: int) -> Mesh:
    """Grade n×n com 2 triângulos por célula; arestas de refinamento nas hipotenusas"""
    if n < 1:
        raise ValueError(f"Número de subdivisões deve ser ≥ 1: {n}")
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def v(i, j):
        return j * (n + 1) + i

    triangles = []
    for j in range(n):
        for i in range(n):
            triangles.append((v(i + 1, j), v(i + 1, j + 1), v(i, j)))
            triangles.append((v(i, j + 1), v(i, j), v(i + 1, j + 1)))
    return Mesh(vertices, np.array(triangles))


def refine(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """Bissecção dos triângulos marcados mais fecho conforme"""
    marked = np.unique(np.asarray(list(marked), dtype=np.int64))
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_triangles:
        raise ValueError("Triângulo marcado fora da malha")

    tri_edges = mesh.triangle_edges
    marked_edges = np.zeros(len(mesh.edges), dtype=bool)
    marked_edges[tri_edges[marked, 0]] = True
    while True:
        need = marked_edges[tri_edges].any(axis=1) & ~marked_edges[tri_edges[:, 0]]
        if not need.any():
            break
        marked_edges[tri_edges[need, 0]] = True

    split = np.flatnonzero(marked_edges)
    nv = mesh.n_vertices
    new_ids = nv + np.arange(len(split))
    endpoints = mesh.edges[split]
    vertices = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[endpoints[:, 0]] + mesh.vertices[endpoints[:, 1]])])
    parents = np.vstack([np.repeat(np.arange(nv)[:, None], 2, axis=1), endpoints])
    midpoint = {(int(a), int(b)): int(m) for (a, b), m in zip(endpoints, new_ids)}

    touched = marked_edges[tri_edges].any(axis=1)
    keep = np.flatnonzero(~touched)
    triangles = [mesh.triangles[keep]]
    generation = [mesh.generation[keep]]
    children, child_gen = [], []

    def bisect(t, g):
        a, b, c = t
        key = (b, c) if b < c else (c, b)
        m = midpoint.get(key)
        if m is None:
            children.append(t)
            child_gen.append(g)
            return
        bisect((m, a, b), g + 1)
        bisect((m, c, a), g + 1)

    for idx in np.flatnonzero(touched):
        bisect(tuple(int(x) for x in mesh.triangles[idx]), int(mesh.generation[idx]))

    if children:
        triangles.append(np.array(children, dtype=np.int64))
        generation.append(np.array(child_gen, dtype=np.int64))
    fine = Mesh(vertices, np.vstack(triangles), generation=np.concatenate(generation),
                parents=parents, parent=mesh)
    logger.debug(f"Refinamento: {mesh.n_triangles} -> {fine.n_triangles} triângulos")
    return fine


def uniform_refine(mesh: Mesh, depth: int = 1) -> Mesh:
    for _ in range(depth):
        mesh = refine(mesh, range(mesh.n_triangles))
    return mesh


def expand_free(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Valores livres -> todos os vértices (zeros no bordo); aceita colunas"""
    values = np.asarray(values, dtype=float)
    full = np.zeros((mesh.n_vertices,) + values.shape[1:])
    full[mesh.free] = values
    return full


def prolongate(values: np.ndarray, coarse: Mesh, fine: Mesh) -> np.ndarray:
    """Interpolação nodal P1 exata de coarse para fine (valores em todos os vértices)"""
    chain = []
    mesh = fine
    while mesh is not coarse:
        if mesh is None:
            raise ValueError("A malha fina não descende da malha grossa")
        chain.append(mesh)
        mesh = mesh.parent
    values = np.asarray(values, dtype=float)
    for step in reversed(chain):
        n_old = step.parent.n_vertices
        new = np.empty((step.n_vertices,) + values.shape[1:])
        new[:n_old] = values
        p = step.parents[n_old:]
        new[n_old:] = 0.5 * (values[p[:, 0]] + values[p[:, 1]])
        values = new
    return values


def prolongate_free(values: np.ndarray, coarse: Mesh, fine: Mesh) -> np.ndarray:
    return prolongate(expand_free(coarse, values), coarse, fine)[fine.free]


def element_data(mesh: Mesh) -> ElementData:
    p = mesh.vertices[mesh.triangles]                 # (nt, 3, 2)
    points = np.einsum("qi,tid->tqd", _BARY, p)
    weights = np.repeat(mesh.areas[:, None] / 3.0, 3, axis=1)
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # colunas
    Jinv = np.linalg.inv(J)                           # linhas = ∇λ1, ∇λ2
    grads = np.empty((mesh.n_triangles, 3, 2))
    grads[:, 1] = Jinv[:, 0]
    grads[:, 2] = Jinv[:, 1]
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    return ElementData(points=points, weights=weights, grads=grads,
                       areas=mesh.areas.copy(), diameters=mesh.diameters)


def element_gradients(mesh: Mesh, values_full: np.ndarray, data: Optional[ElementData] = None) -> np.ndarray:
    """Gradiente constante por elemento de funções P1; values_full (nv,) ou (nv, k)"""
    data = data or element_data(mesh)
    local = np.asarray(values_full)[mesh.triangles]   # (nt, 3, ...)
    return np.einsum("tid,ti...->t...d", data.grads, local)


def assemble_stiffness(mesh: Mesh, a_vals: Optional[np.ndarray] = None,
                       full: bool = False, data: Optional[ElementData] = None) -> sp.csr_matrix:
    """K_ij = ∫ a ∇φ_i·∇φ_j com a nos pontos de quadratura do elemento"""
    data = data or element_data(mesh)
    nt = mesh.n_triangles
    if a_vals is None:
        a_mean = np.ones(nt)
    else:
        a_vals = np.asarray(a_vals, dtype=float).reshape(nt, -1)
        a_mean = a_vals.mean(axis=1)
    local = (a_mean * data.areas)[:, None, None] * np.einsum("tid,tjd->tij", data.grads, data.grads)
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_vertices,) * 2).tocsr()
    if full:
        return K
    return K[mesh.free][:, mesh.free].tocsr()


def assemble_load(mesh: Mesh, f: Optional[Callable] = None, full: bool = False,
                  data: Optional[ElementData] = None) -> np.ndarray:
    """Vetor de carga ∫ f φ_i por quadratura de ordem 2"""
    data = data or element_data(mesh)
    if f is None:
        fvals = np.ones(data.weights.shape)
    else:
        fvals = np.asarray(f(data.points.reshape(-1, 2)), dtype=float).reshape(data.weights.shape)
    local = np.einsum("tq,qi->ti", data.weights * fvals, _BARY)
    b = np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)
    return b if full else b[mesh.free]


def facet_normals(mesh: Mesh, facets: Optional[np.ndarray] = None) -> np.ndarray:
    facets = mesh.interior_facets if facets is None else np.asarray(facets)
    p = mesh.vertices[mesh.edges[facets]]
    tangent = p[:, 1] - p[:, 0]
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
    return normal / np.linalg.norm(normal, axis=1, keepdims=True)


def facet_quadrature(mesh: Mesh, facets: Optional[np.ndarray] = None):
    """Pontos (nf, 2, 2) e pesos (nf, 2) de Gauss em cada aresta"""
    facets = mesh.interior_facets if facets is None else np.asarray(facets)
    p = mesh.vertices[mesh.edges[facets]]
    points = p[:, None, 0] + _FACET_S[None, :, None] * (p[:, None, 1] - p[:, None, 0])
    lengths = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    weights = np.repeat(0.5 * lengths[:, None], 2, axis=1)
    return points, weights


def facet_jump(mesh: Mesh, flux: np.ndarray, facets: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Salto normal [[χ·n]] = χ|T1·n − χ|T2·n de um fluxo constante por elemento.

    flux tem forma (nt, 2) ou (nt, k, 2); o resultado (nf,) ou (nf, k).
    """
    facets = mesh.interior_facets if facets is None else np.asarray(facets, dtype=np.int64)
    owners = mesh.edge_triangles[facets]
    if np.any(owners[:, 1] < 0):
        raise ValueError("Salto interior pedido em aresta de bordo")
    normals = facet_normals(mesh, facets)
    flux = np.asarray(flux, dtype=float)
    diff = flux[owners[:, 0]] - flux[owners[:, 1]]
    if diff.ndim == 2:
        return np.einsum("fd,fd->f", diff, normals)
    return np.einsum("fkd,fd->fk", diff, normals)


def h1_seminorm(w: FeFunction) -> float:
    """‖∇w‖ = √(wᵀK₁w)"""
    K = assemble_stiffness(w.mesh)
    return float(np.sqrt(max(w.values @ (K @ w.values), 0.0)))


def h1_seminorm_nodal(mesh: Mesh, values_full: np.ndarray) -> float:
    """Seminorma H¹ de uma função P1 dada em todos os vértices"""
    K = assemble_stiffness(mesh, full=True)
    values_full = np.asarray(values_full, dtype=float)
    return float(np.sqrt(max(values_full @ (K @ values_full), 0.0)))


def export_mesh(mesh: Mesh, path: Union[str, Path]) -> None:
    """Listagem em texto simples de vértices e triângulos"""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        f.write(f"triangles {mesh.n_triangles}\n")
        for a, b, c in mesh.triangles:
            f.write(f"{a} {b} {c}\n")
    logger.info(f"Malha exportada para {path}")
