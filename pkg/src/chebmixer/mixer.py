"""Per-node MLP-Mixer layer over hop tokens.

Each node carries a ``(K + 1) x d`` token matrix. A layer applies a
token-mixing MLP across the hop axis and a channel-mixing MLP across the
feature axis, each pre-normalized and wrapped in a residual connection.
Nodes never interact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

__all__ = ["MixerLayerParams", "init_mixer", "mixer_forward", "glorot_uniform"]

LN_EPS = 1e-5


@dataclass
class MixerLayerParams:
    W1: np.ndarray  # (d_s, K+1)
    b1: np.ndarray | None
    W2: np.ndarray  # (K+1, d_s)
    b2: np.ndarray | None
    W3: np.ndarray  # (d_c, d)
    b3: np.ndarray | None
    W4: np.ndarray  # (d, d_c)
    b4: np.ndarray | None
    ln1_gain: np.ndarray
    ln1_bias: np.ndarray
    ln2_gain: np.ndarray
    ln2_bias: np.ndarray

    def named(self) -> list[tuple[str, object]]:
        """Present tensors in a fixed order; absent biases are skipped."""
        return [(f.name, getattr(self, f.name)) for f in fields(self) if getattr(self, f.name) is not None]

    def map(self, fn) -> "MixerLayerParams":
        return replace(self, **{name: fn(name, v) for name, v in self.named()})

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """``(K + 1, d, d_s, d_c)``."""
        d_s, hops = _shape(self.W1)
        d_c, d = _shape(self.W3)
        return hops, d, d_s, d_c


def _shape(a) -> tuple[int, ...]:
    return tuple(a.shape)


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_mixer(K: int, d: int, d_s: int, d_c: int, seed, bias: bool = True) -> MixerLayerParams:
    """Glorot-uniform weights, zero biases, unit LayerNorm gains.

    ``seed`` may be an int or a ``numpy.random.Generator``. With
    ``bias=False`` the MLP biases are absent (held at zero).
    """
    if min(K + 1, d, d_s, d_c) < 1 or K < 0:
        raise ValueError(f"invalid mixer extents K={K}, d={d}, d_s={d_s}, d_c={d_c}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    hops = K + 1
    W1 = glorot_uniform(rng, d_s, hops)
    W2 = glorot_uniform(rng, hops, d_s)
    W3 = glorot_uniform(rng, d_c, d)
    W4 = glorot_uniform(rng, d, d_c)

    def zeros(m):
        return np.zeros(m) if bias else None

    return MixerLayerParams(
        W1, zeros(d_s), W2, zeros(hops), W3, zeros(d_c), W4, zeros(d),
        np.ones(d), np.zeros(d), np.ones(d), np.zeros(d),
    )


def mixer_forward(xg, p: MixerLayerParams) -> Tensor:
    """One mixer layer on ``xg`` of shape ``(N, K + 1, d)``; output has the same shape."""
    xg = ad.as_tensor(xg)
    hops, d, _, _ = p.dims
    if xg.ndim != 3 or xg.shape[1:] != (hops, d):
        raise ValueError(f"mixer expects tokens of shape (N, {hops}, {d}), got {xg.shape}")
    # token mixing along the hop axis
    h = ad.layer_norm(xg, p.ln1_gain, p.ln1_bias, LN_EPS)
    h = ad.gelu(ad.hop_linear(h, p.W1, p.b1))
    h = ad.hop_linear(h, p.W2, p.b2)
    xg = ad.add(xg, h)
    # channel mixing along the feature axis
    h = ad.layer_norm(xg, p.ln2_gain, p.ln2_bias, LN_EPS)
    h = ad.gelu(ad.linear(h, p.W3, p.b3))
    h = ad.linear(h, p.W4, p.b4)
    return ad.add(xg, h)
