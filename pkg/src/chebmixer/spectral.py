"""K-hop token extraction by Chebyshev recurrence, and the dense filtering oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, as_tensor, record
from .graph import CsrGraph, SparseLaplacian, normalized_adjacency, spmm

__all__ = [
    "HopSequence",
    "cheb_hop_extract",
    "hop2token_extract",
    "cheb_polynomial_scalar",
    "cheb_nodes",
    "exact_spectral_filter",
    "hop_stack",
]

ORACLE_MAX_NODES = 64


@dataclass(frozen=True, eq=False)
class HopSequence:
    """Per-node token sequences, shape ``(N, K + 1, d)``."""

    data: np.ndarray
    k_order: int
    source: str = "chebyshev"

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[1] != self.k_order + 1:
            raise ValueError(f"hop data of shape {self.data.shape} does not match K={self.k_order}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def hop(self, k: int) -> np.ndarray:
        return self.data[:, k, :]


def _check_features(op: SparseLaplacian, X: np.ndarray, K: int) -> np.ndarray:
    if K < 0:
        raise ValueError(f"order K must be non-negative, got {K}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != op.n:
        raise ValueError(f"feature matrix of shape {X.shape} does not match a graph of {op.n} nodes")
    return X


def _cheb_recurrence(M, X: np.ndarray, K: int) -> np.ndarray:
    out = np.empty((X.shape[0], K + 1, X.shape[1]))
    out[:, 0, :] = X
    if K >= 1:
        out[:, 1, :] = spmm(M, X)
    for i in range(2, K + 1):
        out[:, i, :] = 2.0 * spmm(M, out[:, i - 1, :]) - out[:, i - 2, :]
    return out


def _power_recurrence(M, X: np.ndarray, K: int) -> np.ndarray:
    out = np.empty((X.shape[0], K + 1, X.shape[1]))
    out[:, 0, :] = X
    for i in range(1, K + 1):
        out[:, i, :] = spmm(M, out[:, i - 1, :])
    return out


def cheb_hop_extract(L_hat: SparseLaplacian, X, K: int) -> HopSequence:
    """Stack ``T_k(L_hat) X`` for ``k = 0..K`` using the three-term recurrence."""
    if L_hat.kind != "scaled":
        raise ValueError(f"expected a scaled Laplacian, got kind {L_hat.kind!r}")
    X = _check_features(L_hat, X, K)
    return HopSequence(_cheb_recurrence(L_hat.matrix, X, K), K, "chebyshev")


def hop2token_extract(g: CsrGraph, X, K: int) -> HopSequence:
    """Stack ``A_hat^k X`` with ``A_hat`` the self-loop normalized adjacency."""
    A_hat = normalized_adjacency(g)
    X = _check_features(A_hat, X, K)
    return HopSequence(_power_recurrence(A_hat.matrix, X, K), K, "hop2token")


def hop_stack(op: SparseLaplacian, x, K: int) -> Tensor:
    """Differentiable hop extraction of a tensor ``x`` (N, d) -> (N, K+1, d).

    A scaled Laplacian runs the Chebyshev recurrence, a normalized adjacency
    runs plain powers. The operator itself is a constant.
    """
    x = as_tensor(x)
    X = _check_features(op, x.data, K)
    M = op.matrix
    Mt = M.T.tocsr()
    if op.kind == "scaled":
        out = _cheb_recurrence(M, X, K)

        def vjp(g):
            acc = g.copy()
            for k in range(K, 1, -1):
                acc[:, k - 1, :] += 2.0 * spmm(Mt, acc[:, k, :])
                acc[:, k - 2, :] -= acc[:, k, :]
            if K >= 1:
                acc[:, 0, :] += spmm(Mt, acc[:, 1, :])
            return (acc[:, 0, :],)

    elif op.kind == "normalized-adjacency":
        out = _power_recurrence(M, X, K)

        def vjp(g):
            acc = g.copy()
            for k in range(K, 0, -1):
                acc[:, k - 1, :] += spmm(Mt, acc[:, k, :])
            return (acc[:, 0, :],)

    else:
        raise ValueError(f"hop extraction needs a scaled Laplacian or normalized adjacency, got {op.kind!r}")
    return record(out, (x,), vjp)


def cheb_polynomial_scalar(k: int, x: float) -> float:
    if k < 0:
        raise ValueError(f"order must be non-negative, got {k}")
    prev, cur = 1.0, x
    if k == 0:
        return prev
    for _ in range(k - 1):
        prev, cur = cur, 2.0 * x * cur - prev
    return cur


def cheb_polynomial_matrix(K: int, x: np.ndarray) -> np.ndarray:
    """Rows ``T_0(x), ..., T_K(x)`` evaluated elementwise on ``x``."""
    x = np.asarray(x, dtype=np.float64)
    T = np.empty((K + 1,) + x.shape)
    T[0] = 1.0
    if K >= 1:
        T[1] = x
    for k in range(2, K + 1):
        T[k] = 2.0 * x * T[k - 1] - T[k - 2]
    return T


def cheb_nodes(K: int) -> np.ndarray:
    """Roots of ``T_{K+1}``: ``cos((j + 1/2) pi / (K + 1))`` for ``j = 0..K``."""
    if K < 0:
        raise ValueError(f"order must be non-negative, got {K}")
    j = np.arange(K + 1)
    return np.cos((j + 0.5) * math.pi / (K + 1))


def exact_spectral_filter(L, X, theta, lambda_max: float) -> np.ndarray:
    """Filter ``X`` by ``sum_k theta_k T_k(2 lambda / lambda_max - 1)`` in the eigenbasis of ``L``.

    Dense and O(n^3); intended as a reference for the recurrence path.
    """
    L = L.to_dense() if isinstance(L, SparseLaplacian) else np.asarray(L, dtype=np.float64)
    n = L.shape[0]
    if L.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {L.shape}")
    if n > ORACLE_MAX_NODES:
        raise ValueError(f"oracle limited to {ORACLE_MAX_NODES} nodes, got {n}")
    if not np.allclose(L, L.T, atol=1e-12):
        raise ValueError("oracle requires a symmetric matrix")
    X = np.asarray(X, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    try:
        lam, U = np.linalg.eigh(L)
    except np.linalg.LinAlgError as exc:
        raise RuntimeError(f"eigendecomposition failed: {exc}") from exc
    T = cheb_polynomial_matrix(theta.size - 1, 2.0 * lam / lambda_max - 1.0)
    h = theta @ T
    return U @ (h[:, None] * (U.T @ X))
