"""Dense float64 tensors with a small tape-based reverse-mode engine.

Only the kernels the model needs are provided. Every kernel computes its
forward value with numpy and, when a :class:`GradTape` is recording and at
least one input is tracked, appends a vector-Jacobian closure to the tape.

Example
-------
>>> w = Tensor([[2.0]], requires_grad=True)
>>> with GradTape() as tape:
...     y = sum_all(matmul(w, w))
>>> tape.gradient(y, [w])[0]
array([[4.]])
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "GradTape",
    "GradCheckReport",
    "NonFiniteError",
    "as_tensor",
    "record",
    "matmul",
    "linear",
    "hop_linear",
    "add",
    "sub",
    "scale",
    "absolute",
    "sum_all",
    "layer_norm",
    "gelu",
    "hop_weighted_sum",
    "hop_reduce",
    "cross_entropy",
    "grad_check",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NonFiniteError(ArithmeticError):
    """Raised when a function under evaluation produces NaN or Inf."""


class Tensor:
    """A float64 array of rank 1 to 3 that the tape can differentiate through."""

    __slots__ = ("data", "requires_grad", "name", "_tracked")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not 1 <= arr.ndim <= 3:
            raise ValueError(f"Tensor rank must be 1..3, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._tracked = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Op:
    out: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_state = threading.local()


def _active_tapes() -> list["GradTape"]:
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


class GradTape:
    """Ordered record of executed kernels, replayed backwards by :meth:`gradient`.

    A tape may be re-entered to append further operations. It is owned by a
    single thread.
    """

    def __init__(self):
        self.ops: list[_Op] = []

    def __enter__(self) -> "GradTape":
        _active_tapes().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _active_tapes()
        stack.remove(self)

    def __len__(self) -> int:
        return len(self.ops)

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        if target.data.size != 1:
            raise ValueError(f"gradient target must be scalar, got shape {target.shape}")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for op in reversed(self.ops):
            g_out = grads.get(id(op.out))
            if g_out is None:
                continue
            for inp, g in zip(op.inputs, op.vjp(g_out)):
                if g is None or not inp._tracked:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
        return [
            grads[id(s)].copy() if id(s) in grads else np.zeros_like(s.data)
            for s in sources
        ]


def record(out_data: np.ndarray, inputs: Sequence[Tensor], vjp) -> Tensor:
    """Wrap ``out_data`` as a Tensor and log ``vjp`` on every recording tape.

    ``vjp`` maps the output cotangent to one cotangent (or None) per input.
    This is the extension point for kernels defined outside this module.
    """
    out = Tensor(out_data)
    if any(t._tracked for t in inputs):
        tapes = _active_tapes()
        if tapes:
            out._tracked = True
            op = _Op(out, tuple(inputs), vjp)
            for tape in tapes:
                tape.ops.append(op)
    return out


def _shape_error(op: str, a, b) -> ValueError:
    return ValueError(f"{op}: incompatible shapes {tuple(a)} and {tuple(b)}")


# ---------------------------------------------------------------------------
# kernels


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape)
    A, B = a.data, b.data

    def vjp(g):
        return g @ B.T, A.T @ g

    return record(A @ B, (a, b), vjp)


def linear(x, w, b=None) -> Tensor:
    """Affine map on the last axis: ``x @ w.T + b`` for x of shape (..., n_in)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise _shape_error("linear", x.shape, w.shape)
    X, W = x.data, w.data
    out = X @ W.T
    inputs = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise _shape_error("linear bias", b.shape, (W.shape[0],))
        out = out + b.data
        inputs.append(b)
    lead = tuple(range(X.ndim - 1))

    def vjp(g):
        gx = g @ W
        gw = g.reshape(-1, g.shape[-1]).T @ X.reshape(-1, X.shape[-1])
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=lead)

    return record(out, inputs, vjp)


def hop_linear(x, w, b=None) -> Tensor:
    """Mix along axis 1 of a (N, H, C) tensor: ``out[n] = w @ x[n] + b[:, None]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise _shape_error("hop_linear", x.shape, w.shape)
    X, W = x.data, w.data
    out = np.matmul(W, X)
    inputs = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise _shape_error("hop_linear bias", b.shape, (W.shape[0],))
        out = out + b.data[:, None]
        inputs.append(b)

    def vjp(g):
        gx = np.matmul(W.T, g)
        # sum over nodes of g[n] @ x[n].T
        gw = np.einsum("nsc,nkc->sk", g, X, optimize=False)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2))

    return record(out, inputs, vjp)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("add", a.shape, b.shape)
    return record(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise _shape_error("sub", a.shape, b.shape)
    return record(a.data - b.data, (a, b), lambda g: (g, -g))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return record(a.data * c, (a,), lambda g: (g * c,))


def absolute(a) -> Tensor:
    """Elementwise |a|; the derivative at 0 is taken as 0."""
    a = as_tensor(a)
    A = a.data
    return record(np.abs(A), (a,), lambda g: (g * np.sign(A),))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return record(np.array([a.data.sum()]), (a,), lambda g: (np.full(shape, g[0]),))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each slice along the last axis, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise _shape_error("layer_norm", x.shape, gain.shape)
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    X = x.data
    mu = X.mean(axis=-1, keepdims=True)
    xc = X - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    G = gain.data
    lead = tuple(range(X.ndim - 1))

    def vjp(g):
        gxhat = g * G
        gx = inv * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record(xhat * G + bias.data, (x, gain, bias), vjp)


def gelu(x) -> Tensor:
    """Exact GELU, x * Phi(x), with Phi the standard normal CDF."""
    x = as_tensor(x)
    X = x.data
    cdf = 0.5 * (1.0 + erf(X / _SQRT2))

    def vjp(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * X * X)
        return (g * (cdf + X * pdf),)

    return record(X * cdf, (x,), vjp)


def hop_weighted_sum(xg, w) -> Tensor:
    """``out[n, c] = sum_k w[k, c] * xg[n, k, c]``; ``w`` may have one column shared by all channels."""
    xg, w = as_tensor(xg), as_tensor(w)
    if xg.ndim != 3 or w.ndim != 2 or w.shape[0] != xg.shape[1] or w.shape[1] not in (1, xg.shape[2]):
        raise _shape_error("hop_weighted_sum", xg.shape, w.shape)
    XG, W = xg.data, w.data
    H = XG.shape[1]
    out = XG[:, 0, :] * W[0]
    for k in range(1, H):
        out = out + XG[:, k, :] * W[k]
    shared = W.shape[1] == 1 and XG.shape[2] != 1

    def vjp(g):
        gx = g[:, None, :] * W[None, :, :]
        gw = np.einsum("nc,nkc->kc", g, XG, optimize=False)
        if shared:
            gw = gw.sum(axis=1, keepdims=True)
        return gx, gw

    return record(out, (xg, w), vjp)


def hop_reduce(xg, mode: str) -> Tensor:
    """Reduce a (N, H, C) tensor over axis 1 with ``sum``, ``mean`` or ``max``.

    For ``max`` the gradient is routed to the lowest hop index among ties.
    """
    xg = as_tensor(xg)
    if xg.ndim != 3:
        raise ValueError(f"hop_reduce expects a rank-3 tensor, got shape {xg.shape}")
    XG = xg.data
    H = XG.shape[1]
    if mode == "sum":
        return record(XG.sum(axis=1), (xg,), lambda g: (np.repeat(g[:, None, :], H, axis=1),))
    if mode == "mean":
        return record(XG.mean(axis=1), (xg,), lambda g: (np.repeat(g[:, None, :], H, axis=1) / H,))
    if mode == "max":
        idx = XG.argmax(axis=1)

        def vjp(g):
            gx = np.zeros_like(XG)
            np.put_along_axis(gx, idx[:, None, :], g[:, None, :], axis=1)
            return (gx,)

        return record(np.take_along_axis(XG, idx[:, None, :], axis=1)[:, 0, :], (xg,), vjp)
    raise ValueError(f"unknown hop reduction {mode!r}; expected sum, mean or max")


def cross_entropy(logits, labels, mask) -> Tensor:
    """Mean negative log-likelihood of ``labels`` over the nodes selected by ``mask``."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ValueError(f"cross_entropy expects N x C logits, got shape {logits.shape}")
    n, c = logits.shape
    labels = np.asarray(labels)
    idx = np.flatnonzero(np.asarray(mask)) if np.asarray(mask).dtype == bool else np.asarray(mask, dtype=np.intp)
    if idx.size == 0:
        raise ValueError("cross_entropy: mask selects no nodes")
    y = labels[idx]
    if y.min() < 0 or y.max() >= c:
        bad = int(idx[np.flatnonzero((y < 0) | (y >= c))[0]])
        raise ValueError(f"cross_entropy: label {int(labels[bad])} of node {bad} outside [0, {c})")
    Z = logits.data[idx]
    shifted = Z - Z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(idx.size)
    loss = float((lse - shifted[rows, y]).mean())

    def vjp(g):
        p = np.exp(shifted - lse[:, None])
        p[rows, y] -= 1.0
        full = np.zeros((n, c))
        full[idx] = p * (g[0] / idx.size)
        return (full,)

    return record(np.array([loss]), (logits,), vjp)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    per_param: list[float] = field(default_factory=list)
    kinks: list[tuple[int, int]] = field(default_factory=list)

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        extra = f", {len(self.kinks)} non-differentiable coordinate(s)" if self.kinks else ""
        return f"grad_check {status}: max rel err {self.max_rel_error:.3e}{extra}"


def _rel_err(a: float, b: float) -> float:
    if abs(a) < 1e-8 and abs(b) < 1e-8:
        return abs(a - b)
    return abs(a - b) / max(abs(a), abs(b))


def grad_check(f: Callable[..., Tensor], params: Sequence, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f(*params)`` with central differences.

    A coordinate whose forward and backward one-sided differences disagree by
    more than ``sqrt(h)`` (relative) is reported as a kink and fails the check.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"grad_check: step {h} outside [1e-7, 1e-3]")
    tensors = [Tensor(np.array(as_tensor(p).data, copy=True), requires_grad=True) for p in params]

    def evaluate() -> float:
        val = float(as_tensor(f(*tensors)).data.reshape(-1)[0])
        if not math.isfinite(val):
            raise NonFiniteError(f"grad_check: function returned {val}")
        return val

    with GradTape() as tape:
        out = f(*tensors)
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError("grad_check: function returned a non-finite value")
    analytic = tape.gradient(out, tensors)
    f0 = float(out.data.reshape(-1)[0])

    worst = 0.0
    per_param = []
    kinks = []
    for p_idx, (t, ga) in enumerate(zip(tensors, analytic)):
        flat = t.data.reshape(-1)
        gflat = ga.reshape(-1)
        p_worst = 0.0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = evaluate()
            flat[i] = orig - h
            fm = evaluate()
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            fwd, bwd = (fp - f0) / h, (f0 - fm) / h
            if abs(fwd - bwd) > math.sqrt(h) * max(1.0, abs(fwd) + abs(bwd)):
                kinks.append((p_idx, i))
            p_worst = max(p_worst, _rel_err(float(gflat[i]), numeric))
        per_param.append(p_worst)
        worst = max(worst, p_worst)
    return GradCheckReport(worst < tol and not kinks, worst, per_param, kinks)
