"""Loss, AdamW, random splits and the full-batch early-stopping loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import GradTape, Tensor, cross_entropy
from .model import STREAM_SPLIT, ModelConfig, ModelParams, init_params, model_forward, predict, prepare_operator, rng_stream

__all__ = [
    "TRAIN",
    "VAL",
    "TEST",
    "SPLIT_NAMES",
    "TrainConfig",
    "OptimizerState",
    "EpochRecord",
    "TrainHistory",
    "cross_entropy",
    "adamw_step",
    "make_splits",
    "accuracy",
    "resolve_splits",
    "train_loop",
    "evaluate",
]

logger = logging.getLogger(__name__)

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 2000
    patience: int = 50
    seed: int = 0
    fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        _check_fractions(self.fractions)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["fractions"] = list(self.fractions)
        return out


def _check_fractions(fractions) -> None:
    if len(fractions) != 3 or min(fractions) <= 0 or sum(fractions) > 1 + 1e-12:
        raise ValueError(f"split fractions must be three positive values summing to at most 1, got {fractions}")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    cfg: TrainConfig,
    decay: dict[str, bool] | None = None,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One AdamW update with decoupled weight decay.

    ``decay`` marks which tensors receive weight decay; by default only
    2-D weight matrices do, so biases and LayerNorm vectors are exempt.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
    t = state.t + 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} of shape {p.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        step = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        wd = cfg.weight_decay if (decay[name] if decay is not None else p.ndim == 2) else 0.0
        new_params[name] = p - step - cfg.lr * wd * p
        new_m[name], new_v[name] = m, v
    return new_params, OptimizerState(new_m, new_v, t)


def make_splits(n: int, fractions=(0.6, 0.2, 0.2), seed: int = 0) -> np.ndarray:
    """Seeded random assignment of nodes to TRAIN / VAL / TEST.

    Validation and test take ``floor(fraction * n)`` nodes each; all the
    remaining nodes are used for training.
    """
    _check_fractions(fractions)
    n_val = math.floor(fractions[1] * n)
    n_test = math.floor(fractions[2] * n)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ValueError(f"split of {n} nodes with fractions {tuple(fractions)} leaves an empty subset")
    perm = rng_stream(seed, STREAM_SPLIT).permutation(n)
    splits = np.full(n, TRAIN, dtype=np.int64)
    splits[perm[:n_val]] = VAL
    splits[perm[n_val : n_val + n_test]] = TEST
    return splits


def accuracy(preds, labels, mask) -> float:
    idx = _indices(mask)
    if idx.size == 0:
        raise ValueError("accuracy: mask selects no nodes")
    return float(np.mean(np.asarray(preds)[idx] == np.asarray(labels)[idx]))


def _indices(mask) -> np.ndarray:
    mask = np.asarray(mask)
    return np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.intp)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    epoch_seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_acc: float = -1.0


def resolve_splits(dataset, cfg: TrainConfig) -> np.ndarray:
    if dataset.splits is not None:
        return dataset.splits
    return make_splits(dataset.n, cfg.fractions, cfg.seed)


def _model_config(dataset, cfg: TrainConfig) -> ModelConfig:
    return replace(cfg.model, n_classes=dataset.class_count)


def train_loop(dataset, cfg: TrainConfig, on_epoch=None) -> tuple[ModelParams, TrainHistory]:
    """Full-batch training with early stopping on validation accuracy.

    Each record holds the loss and train accuracy of the parameters the step
    started from and the validation accuracy of the parameters it produced.
    Only a strict improvement in validation accuracy replaces the kept
    parameters, so ties favour the earlier epoch. ``on_epoch`` is called with
    each :class:`EpochRecord`.
    """
    mcfg = _model_config(dataset, cfg)
    splits = resolve_splits(dataset, cfg)
    train_idx = np.flatnonzero(splits == TRAIN)
    val_idx = np.flatnonzero(splits == VAL)
    if train_idx.size == 0 or val_idx.size == 0:
        raise ValueError("training needs non-empty train and validation splits")
    op = prepare_operator(dataset.graph, mcfg)
    X, y = dataset.features, dataset.labels

    params = init_params(mcfg, X.shape[1], cfg.seed)
    names = [name for name, _ in params.named()]
    values = dict(params.named())
    state = OptimizerState.zeros(values)

    def forward(vals):
        tracked = {k: Tensor(v, requires_grad=True, name=k) for k, v in vals.items()}
        tape = GradTape()
        with tape:
            logits = model_forward(op, X, params.with_values(tracked), mcfg)
        return tape, tracked, logits

    history = TrainHistory()
    best = dict(values)
    since_best = 0
    tape, tracked, logits = forward(values)
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        with tape:
            loss = cross_entropy(logits, y, train_idx)
        loss_val = loss.item()
        if not math.isfinite(loss_val):
            raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
        train_acc = accuracy(predict(logits), y, train_idx)
        grads = dict(zip(names, tape.gradient(loss, [tracked[k] for k in names])))
        values, state = adamw_step(values, grads, state, cfg)
        tape, tracked, logits = forward(values)
        val_acc = accuracy(predict(logits), y, val_idx)
        rec = EpochRecord(epoch, loss_val, train_acc, val_acc, time.perf_counter() - t0)
        history.records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        if val_acc > history.best_val_acc:
            history.best_val_acc = val_acc
            history.best_epoch = epoch
            best = values
            since_best = 0
        else:
            since_best += 1
            if since_best >= cfg.patience:
                logger.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
                break
    return params.with_values(best), history


def evaluate(dataset, params: ModelParams, cfg: TrainConfig, splits=None) -> dict[str, float]:
    """Accuracy of ``params`` on each split, keyed ``train_acc``/``val_acc``/``test_acc``."""
    mcfg = _model_config(dataset, cfg)
    if splits is None:
        splits = resolve_splits(dataset, cfg)
    op = prepare_operator(dataset.graph, mcfg)
    preds = predict(model_forward(op, dataset.features, params, mcfg))
    out = {}
    for code, name in enumerate(SPLIT_NAMES):
        idx = np.flatnonzero(splits == code)
        if idx.size:
            out[f"{name}_acc"] = accuracy(preds, dataset.labels, idx)
    return out
