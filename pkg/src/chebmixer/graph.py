"""Sparse undirected graphs, Laplacians and spectral scaling."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "CsrGraph",
    "SparseLaplacian",
    "ConvergenceError",
    "build_csr",
    "sym_norm_laplacian",
    "combinatorial_laplacian",
    "normalized_adjacency",
    "estimate_lambda_max",
    "scale_laplacian",
    "spmm",
    "knn_graph",
]

LAPLACIAN_KINDS = ("combinatorial", "symmetric-normalized", "scaled", "normalized-adjacency")


LAMBDA_MARGIN = 1e-6


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CsrGraph:
    """Weighted undirected graph stored as symmetric CSR arrays."""

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    weights: np.ndarray
    self_loops: bool = False

    def __post_init__(self):
        for arr in (self.row_ptr, self.col_idx, self.weights):
            arr.setflags(write=False)

    @property
    def n_edges(self) -> int:
        """Number of undirected edges (self-loops count once)."""
        rows = np.repeat(np.arange(self.n), np.diff(self.row_ptr))
        return int(np.count_nonzero(rows <= self.col_idx))

    def degrees(self) -> np.ndarray:
        """Weighted degrees, i.e. row sums of the adjacency matrix."""
        rows = np.repeat(np.arange(self.n), np.diff(self.row_ptr))
        return np.bincount(rows, weights=self.weights, minlength=self.n).astype(np.float64)

    def edges(self) -> list[tuple[int, int, float]]:
        """Each undirected edge once as ``(u, v, w)`` with ``u <= v``."""
        out = []
        for u in range(self.n):
            for p in range(self.row_ptr[u], self.row_ptr[u + 1]):
                v = int(self.col_idx[p])
                if u <= v:
                    out.append((u, v, float(self.weights[p])))
        return out

    def to_scipy(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.weights, self.col_idx, self.row_ptr), shape=(self.n, self.n))

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def permute(self, perm: Sequence[int]) -> "CsrGraph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        edges = [(int(perm[u]), int(perm[v]), w) for u, v, w in self.edges()]
        return build_csr(self.n, edges, symmetrize=True, allow_self_loops=self.self_loops)


def build_csr(
    n: int,
    edges: Iterable[tuple],
    symmetrize: bool = True,
    allow_self_loops: bool = False,
) -> CsrGraph:
    """Build a validated CSR graph from ``(u, v, weight)`` triples.

    With ``symmetrize`` each edge is inserted in both directions; otherwise
    the input must already list both directions with equal weights.
    Duplicate edges are rejected rather than merged.
    """
    if n < 0:
        raise ValueError(f"node count must be non-negative, got {n}")
    entries: dict[tuple[int, int], float] = {}

    def put(u, v, w):
        if (u, v) in entries:
            raise ValueError(f"duplicate edge ({u}, {v})")
        entries[(u, v)] = w

    for e in edges:
        if len(e) == 2:
            u, v, w = e[0], e[1], 1.0
        else:
            u, v, w = e
        u, v, w = int(u), int(v), float(w)
        if not (0 <= u < n and 0 <= v < n):
            raise IndexError(f"edge ({u}, {v}) out of range for n={n}")
        if not w > 0 or not np.isfinite(w):
            raise ValueError(f"edge ({u}, {v}) has non-positive weight {w}")
        if u == v and not allow_self_loops:
            raise ValueError(f"self-loop at node {u} not allowed")
        put(u, v, w)
        if symmetrize and u != v:
            put(v, u, w)

    if not symmetrize:
        for (u, v), w in entries.items():
            if entries.get((v, u)) != w:
                raise ValueError(f"edge ({u}, {v}) has no symmetric counterpart with equal weight")

    keys = sorted(entries)
    row_ptr = np.zeros(n + 1, dtype=np.int64)
    col_idx = np.empty(len(keys), dtype=np.int64)
    weights = np.empty(len(keys), dtype=np.float64)
    for p, (u, v) in enumerate(keys):
        row_ptr[u + 1] += 1
        col_idx[p] = v
        weights[p] = entries[(u, v)]
    np.cumsum(row_ptr, out=row_ptr)
    return CsrGraph(n, row_ptr, col_idx, weights, self_loops=allow_self_loops)


@dataclass(frozen=True, eq=False)
class SparseLaplacian:
    """A symmetric sparse operator over the nodes of a graph."""

    matrix: sp.csr_matrix
    kind: str
    lambda_max_used: float | None = None

    def __post_init__(self):
        if self.kind not in LAPLACIAN_KINDS:
            raise ValueError(f"unknown Laplacian kind {self.kind!r}")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _csr(mat) -> sp.csr_matrix:
    m = sp.csr_matrix(mat, dtype=np.float64)
    m.sum_duplicates()
    m.sort_indices()
    return m


def _inv_sqrt_degrees(deg: np.ndarray) -> np.ndarray:
    out = np.zeros_like(deg)
    nz = deg > 0
    out[nz] = 1.0 / np.sqrt(deg[nz])
    return out


def sym_norm_laplacian(g: CsrGraph) -> SparseLaplacian:
    """``I - D^-1/2 A D^-1/2``; isolated nodes keep an identity row."""
    A = g.to_scipy()
    s = sp.diags(_inv_sqrt_degrees(g.degrees()))
    L = sp.identity(g.n, format="csr") - s @ A @ s
    return SparseLaplacian(_csr(L), "symmetric-normalized")


def combinatorial_laplacian(g: CsrGraph) -> SparseLaplacian:
    A = g.to_scipy()
    L = sp.diags(g.degrees()) - A
    return SparseLaplacian(_csr(L), "combinatorial")


def normalized_adjacency(g: CsrGraph) -> SparseLaplacian:
    """Self-loop normalized adjacency ``D~^-1/2 (A + I) D~^-1/2``."""
    A = g.to_scipy() + sp.identity(g.n, format="csr")
    s = sp.diags(_inv_sqrt_degrees(np.asarray(A.sum(axis=1)).ravel()))
    return SparseLaplacian(_csr(s @ A @ s), "normalized-adjacency")


def _power_iteration(M: sp.csr_matrix, x: np.ndarray, tol: float, max_iter: int):
    x = x / np.linalg.norm(x)
    lam = 0.0
    for it in range(1, max_iter + 1):
        y = M @ x
        lam_new = float(x @ y)
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0, True
        x = y / ny
        if it > 1 and abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return lam_new, True
        lam = lam_new
    return lam, False


def estimate_lambda_max(L: SparseLaplacian, tol: float = 1e-6, max_iter: int = 1000) -> float:
    """Largest eigenvalue of a PSD Laplacian by power iteration, inflated by 1e-6.

    The iteration starts from the all-ones vector and is repeated from a
    fixed-seed random vector, which recovers the dominant eigenvalue when
    the first start is (near) orthogonal to it. The random restart must
    converge. Its estimate replaces the all-ones one only when it is larger
    by more than the safety margin: the all-ones run does not depend on node
    order, so node relabelings then give bitwise-equal results, and the
    inflated value still bounds both estimates. Convergence is declared on
    the relative change of the Rayleigh quotient, checked against
    ``tol * 1e-2`` so the returned bound is tight to ``tol``.
    """
    if L.n == 0:
        raise ValueError("empty Laplacian")
    M = L.matrix
    inner_tol = tol * 1e-2
    lam1, ok1 = _power_iteration(M, np.ones(L.n), inner_tol, max_iter)
    rng = np.random.default_rng(0x5EED)
    lam2, ok2 = _power_iteration(M, rng.standard_normal(L.n), inner_tol, max_iter)
    if not ok2:
        if L.kind == "symmetric-normalized":
            warnings.warn("power iteration did not converge; using the bound lambda_max = 2", RuntimeWarning, stacklevel=2)
            return 2.0
        raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")
    # Rayleigh quotients never exceed the top eigenvalue
    lam = lam1 if ok1 and lam2 <= lam1 * (1.0 + LAMBDA_MARGIN) else lam2
    if lam <= 0:
        # zero operator: any positive scale is valid
        return 1.0
    return lam * (1.0 + LAMBDA_MARGIN)


def scale_laplacian(L: SparseLaplacian, lambda_max: float) -> SparseLaplacian:
    """``2 L / lambda_max - I``, mapping a spectrum in [0, lambda_max] onto [-1, 1]."""
    if not lambda_max > 0:
        raise ValueError(f"lambda_max must be positive, got {lambda_max}")
    coo = L.matrix.tocoo()
    n = L.n
    # the diagonal stays structurally present even where it cancels to 0
    rows = np.concatenate([coo.row, np.arange(n)])
    cols = np.concatenate([coo.col, np.arange(n)])
    vals = np.concatenate([(2.0 / lambda_max) * coo.data, -np.ones(n)])
    m = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    m.sum_duplicates()
    m.sort_indices()
    return SparseLaplacian(m, "scaled", float(lambda_max))


def spmm(L: SparseLaplacian | sp.csr_matrix, X: np.ndarray) -> np.ndarray:
    """Sparse-dense product; rows are summed in ascending column order."""
    M = L.matrix if isinstance(L, SparseLaplacian) else L
    X = np.asarray(X, dtype=np.float64)
    if X.ndim not in (1, 2) or X.shape[0] != M.shape[1]:
        raise ValueError(f"spmm: operator of shape {M.shape} cannot multiply matrix of shape {X.shape}")
    return M @ X


def knn_graph(features: np.ndarray, k: int, metric: str = "euclidean") -> CsrGraph:
    """Symmetrized (union) k-nearest-neighbour graph with unit weights.

    Ties in distance are broken towards the lower node index.
    """
    if metric != "euclidean":
        raise ValueError(f"unsupported metric {metric!r}")
    F = np.asarray(features, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    n = F.shape[0]
    if not 1 <= k < n:
        raise ValueError(f"k must satisfy 1 <= k < n={n}, got {k}")
    diff = F[:, None, :] - F[None, :, :]
    dist = np.einsum("ijc,ijc->ij", diff, diff)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, :k]
    pairs = set()
    for i in range(n):
        for j in order[i]:
            j = int(j)
            pairs.add((min(i, j), max(i, j)))
    return build_csr(n, [(u, v, 1.0) for u, v in sorted(pairs)], symmetrize=True)
