"""Full node classifier: projection, hop extraction, mixer stack, aggregation, head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .aggregator import AGGREGATOR_MODES, AggregatorParams, aggregate, baseline_aggregate, cheb_interp_weights, init_gamma
from .autodiff import Tensor
from .graph import CsrGraph, SparseLaplacian, estimate_lambda_max, normalized_adjacency, scale_laplacian, sym_norm_laplacian
from .mixer import MixerLayerParams, glorot_uniform, init_mixer, mixer_forward
from .spectral import hop_stack

__all__ = [
    "ModelConfig",
    "ModelParams",
    "rng_stream",
    "prepare_operator",
    "init_params",
    "model_forward",
    "predict",
    "param_count",
]

STREAM_INIT = 1
STREAM_SPLIT = 2
STREAM_DATA = 3

EXTRACTORS = ("chebyshev", "hop2token")
LAMBDA_MODES = ("auto", "fixed")


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """PCG64 generator for one named stream of a run seed."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))


@dataclass(frozen=True)
class ModelConfig:
    K: int = 7
    d: int = 64
    layers: int = 1
    d_s: int = 64
    d_c: int = 64
    n_classes: int = 2
    aggregator: str = "chebinterp"
    lambda_max: str = "auto"
    extractor: str = "chebyshev"
    mixer_bias: bool = True
    halved_c0: bool = False

    def __post_init__(self):
        if self.K < 0:
            raise ValueError(f"K must be >= 0, got {self.K}")
        for name in ("d", "d_s", "d_c", "n_classes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.layers < 0:
            raise ValueError(f"layers must be >= 0, got {self.layers}")
        if self.aggregator not in AGGREGATOR_MODES:
            raise ValueError(f"aggregator must be one of {AGGREGATOR_MODES}, got {self.aggregator!r}")
        if self.lambda_max not in LAMBDA_MODES:
            raise ValueError(f"lambda_max must be one of {LAMBDA_MODES}, got {self.lambda_max!r}")
        if self.extractor not in EXTRACTORS:
            raise ValueError(f"extractor must be one of {EXTRACTORS}, got {self.extractor!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    w_in: np.ndarray
    b_in: np.ndarray
    mixers: list[MixerLayerParams] = field(default_factory=list)
    agg: AggregatorParams | None = None
    w_out: np.ndarray = None
    b_out: np.ndarray = None

    def named(self) -> list[tuple[str, object]]:
        """All trainable tensors in a fixed order, with dotted names."""
        out = [("w_in", self.w_in), ("b_in", self.b_in)]
        for i, layer in enumerate(self.mixers):
            out += [(f"mixers.{i}.{name}", v) for name, v in layer.named()]
        if self.agg is not None:
            out.append(("agg.gamma", self.agg.gamma))
        out += [("w_out", self.w_out), ("b_out", self.b_out)]
        return out

    def map(self, fn) -> "ModelParams":
        """New params with ``fn(name, tensor)`` applied to every trainable tensor."""
        return ModelParams(
            w_in=fn("w_in", self.w_in),
            b_in=fn("b_in", self.b_in),
            mixers=[layer.map(lambda n, v, i=i: fn(f"mixers.{i}.{n}", v)) for i, layer in enumerate(self.mixers)],
            agg=None if self.agg is None else AggregatorParams(fn("agg.gamma", self.agg.gamma)),
            w_out=fn("w_out", self.w_out),
            b_out=fn("b_out", self.b_out),
        )

    def with_values(self, values: dict) -> "ModelParams":
        return self.map(lambda name, _: values[name])

    def copy(self) -> "ModelParams":
        return self.map(lambda _, v: np.array(v, copy=True))


def prepare_operator(graph: CsrGraph, cfg: ModelConfig) -> SparseLaplacian:
    """Propagation operator for the configured extractor."""
    if cfg.extractor == "hop2token":
        return normalized_adjacency(graph)
    L = sym_norm_laplacian(graph)
    lam = 2.0 if cfg.lambda_max == "fixed" else estimate_lambda_max(L)
    return scale_laplacian(L, lam)


def init_params(cfg: ModelConfig, n_features: int, seed: int) -> ModelParams:
    rng = rng_stream(seed, STREAM_INIT)
    w_in = glorot_uniform(rng, cfg.d, n_features)
    mixers = [init_mixer(cfg.K, cfg.d, cfg.d_s, cfg.d_c, rng, bias=cfg.mixer_bias) for _ in range(cfg.layers)]
    agg = None
    if cfg.aggregator == "chebinterp":
        agg = init_gamma(cfg.K, cfg.d)
    elif cfg.aggregator == "chebinterp_shared":
        agg = init_gamma(cfg.K, 1)
    w_out = glorot_uniform(rng, cfg.n_classes, cfg.d)
    return ModelParams(w_in, np.zeros(cfg.d), mixers, agg, w_out, np.zeros(cfg.n_classes))


def _stage(name: str, fn, *args):
    try:
        return fn(*args)
    except ValueError as exc:
        raise ValueError(f"{name}: {exc}") from exc


def model_forward(op: SparseLaplacian, X_raw, params: ModelParams, cfg: ModelConfig, return_embedding: bool = False):
    """Logits ``(N, C)`` for every node. Parameters may be arrays or tracked Tensors."""
    x = _stage("projection", ad.linear, X_raw, params.w_in, params.b_in)
    xg = _stage("extraction", hop_stack, op, x, cfg.K)
    for i, layer in enumerate(params.mixers):
        xg = _stage(f"mixer {i}", mixer_forward, xg, layer)
    if cfg.aggregator in ("chebinterp", "chebinterp_shared"):
        if params.agg is None:
            raise ValueError("aggregation: missing gamma for Chebyshev aggregation")
        W = _stage("aggregation", cheb_interp_weights, params.agg.gamma, cfg.halved_c0)
        emb = _stage("aggregation", aggregate, xg, W)
    else:
        emb = _stage("aggregation", baseline_aggregate, xg, cfg.aggregator)
    logits = _stage("head", ad.linear, emb, params.w_out, params.b_out)
    if return_embedding:
        return logits, emb
    return logits


def predict(logits) -> np.ndarray:
    """Row-wise argmax; ties go to the lowest class index."""
    Z = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return np.argmax(Z, axis=1)


def param_count(params: ModelParams) -> int:
    return int(sum(np.asarray(v.data if isinstance(v, Tensor) else v).size for _, v in params.named()))
