"""Collapse hop sequences into node embeddings.

The learnable aggregation stores values ``gamma`` at the Chebyshev nodes
``x_j`` and derives per-channel hop weights by interpolation::

    W[k, c] = 2 / (K + 1) * sum_j gamma[j, c] * T_k(x_j)

The ``halved_c0`` option applies the classical half weight to ``k = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .spectral import cheb_nodes, cheb_polynomial_matrix

__all__ = [
    "AggregatorParams",
    "AGGREGATOR_MODES",
    "interp_matrix",
    "cheb_interp_weights",
    "aggregate",
    "baseline_aggregate",
    "init_gamma",
]

AGGREGATOR_MODES = ("chebinterp", "chebinterp_shared", "sum", "mean", "max")


@dataclass
class AggregatorParams:
    gamma: np.ndarray  # (K+1, d), or (K+1, 1) when shared across channels


def interp_matrix(K: int, halved_c0: bool = False) -> np.ndarray:
    """Linear map ``M`` with ``W = M @ gamma``; ``M[k, j] = 2/(K+1) T_k(x_j)``."""
    M = cheb_polynomial_matrix(K, cheb_nodes(K)) * (2.0 / (K + 1))
    if halved_c0:
        M[0] *= 0.5
    return M


def cheb_interp_weights(gamma, halved_c0: bool = False) -> Tensor:
    gamma = ad.as_tensor(gamma)
    if gamma.ndim != 2:
        raise ValueError(f"gamma must be (K+1) x d, got shape {gamma.shape}")
    K = gamma.shape[0] - 1
    return ad.matmul(interp_matrix(K, halved_c0), gamma)


def aggregate(xg, W) -> Tensor:
    """``out[n, c] = sum_k W[k, c] * xg[n, k, c]``."""
    return ad.hop_weighted_sum(xg, W)


def baseline_aggregate(xg, mode: str) -> Tensor:
    if mode not in ("sum", "mean", "max"):
        raise ValueError(f"unknown aggregation mode {mode!r}; expected sum, mean or max")
    return ad.hop_reduce(xg, mode)


def init_gamma(K: int, d: int, seed=None) -> AggregatorParams:
    """All-ones gamma, giving initial weights ``(2, 0, ..., 0)`` per channel.

    ``seed`` is accepted for interface symmetry; the result is deterministic.
    """
    if K < 0 or d < 1:
        raise ValueError(f"invalid aggregator extents K={K}, d={d}")
    return AggregatorParams(np.ones((K + 1, d)))
