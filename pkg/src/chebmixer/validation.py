"""Input coercion shared by the estimators and the CLI."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.utils.validation import check_array

from .graph import CsrGraph, build_csr


def check_graph(graph, n_nodes: int | None = None) -> CsrGraph:
    """Coerce ``graph`` to a :class:`CsrGraph`.

    Accepts a CsrGraph, a scipy sparse adjacency matrix or a dense square
    array. Matrices must be symmetric with non-negative weights.
    """
    if isinstance(graph, CsrGraph):
        g = graph
    else:
        if sp.issparse(graph):
            A = sp.coo_matrix(graph)
        else:
            dense = check_array(graph, dtype=np.float64)
            A = sp.coo_matrix(dense)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"adjacency matrix must be square, got shape {A.shape}")
        if A.nnz and A.data.min() < 0:
            raise ValueError("adjacency weights must be non-negative")
        keep = A.data != 0
        edges = list(zip(A.row[keep].tolist(), A.col[keep].tolist(), A.data[keep].tolist()))
        loops = any(u == v for u, v, _ in edges)
        g = build_csr(A.shape[0], edges, symmetrize=False, allow_self_loops=loops)
    if n_nodes is not None and g.n != n_nodes:
        raise ValueError(f"graph has {g.n} nodes but {n_nodes} feature rows were given")
    return g


def check_features(X) -> np.ndarray:
    return check_array(X, dtype=np.float64, ensure_2d=True)


def check_order(K) -> int:
    if isinstance(K, bool) or not isinstance(K, (int, np.integer)) or K < 0:
        raise ValueError(f"K must be a non-negative integer, got {K!r}")
    return int(K)
