"""Dataset directories, synthetic block-model graphs and binary checkpoints.

Dataset directory (UTF-8, tab-separated, LF)::

    meta.tsv      key<TAB>value lines; needs n, d_raw, classes, name
    graph.tsv     u<TAB>v[<TAB>weight], 0-based, u < v, one line per edge
    features.tsv  d_raw floats per line, line i is node i
    labels.tsv    one integer class per line
    splits.tsv    optional, one of train / val / test per line

Checkpoint: ``b"CMX1"``, a little-endian uint32 header length, a UTF-8
``key=value`` header (config plus ``tensor=name:shape`` manifest lines),
then raw little-endian float64 data in manifest order.
"""

from __future__ import annotations

import json
import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import CsrGraph, build_csr
from .model import STREAM_DATA, ModelConfig, ModelParams, init_params, rng_stream
from .training import SPLIT_NAMES

__all__ = [
    "Dataset",
    "DataFormatError",
    "CheckpointError",
    "load_dataset",
    "save_dataset",
    "gen_sbm",
    "convert_cora",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CMX1"
CHECKPOINT_VERSION = 1


class DataFormatError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(eq=False)
class Dataset:
    graph: CsrGraph
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = "dataset"
    splits: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.graph.n
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DataFormatError(f"features of shape {self.features.shape} do not match {n} nodes")
        if self.labels.shape != (n,):
            raise DataFormatError(f"labels of shape {self.labels.shape} do not match {n} nodes")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            bad = int(np.flatnonzero((self.labels < 0) | (self.labels >= self.class_count))[0])
            raise DataFormatError(f"label {self.labels[bad]} of node {bad} outside [0, {self.class_count})")
        if self.splits is not None:
            self.splits = np.asarray(self.splits, dtype=np.int64)
            if self.splits.shape != (n,):
                raise DataFormatError(f"splits of shape {self.splits.shape} do not match {n} nodes")
            missing = set(range(self.class_count)) - set(self.labels[self.splits == 0].tolist())
            if missing:
                warnings.warn(f"classes {sorted(missing)} absent from the train split", stacklevel=2)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def _fmt(x: float) -> str:
    return repr(float(x)) if np.isfinite(x) else str(x)


def save_dataset(ds: Dataset, directory) -> None:
    """Write ``ds`` as a dataset directory; floats use shortest round-trip repr."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"n": ds.n, "d_raw": ds.n_features, "classes": ds.class_count, "name": ds.name}
    (d / "meta.tsv").write_text("".join(f"{k}\t{v}\n" for k, v in meta.items()), encoding="utf-8")
    lines = []
    for u, v, w in ds.graph.edges():
        lines.append(f"{u}\t{v}\n" if w == 1.0 else f"{u}\t{v}\t{_fmt(w)}\n")
    (d / "graph.tsv").write_text("".join(lines), encoding="utf-8")
    (d / "features.tsv").write_text(
        "".join("\t".join(_fmt(x) for x in row) + "\n" for row in ds.features), encoding="utf-8"
    )
    (d / "labels.tsv").write_text("".join(f"{int(y)}\n" for y in ds.labels), encoding="utf-8")
    split_path = d / "splits.tsv"
    if ds.splits is not None:
        split_path.write_text("".join(SPLIT_NAMES[s] + "\n" for s in ds.splits), encoding="utf-8")
    elif split_path.exists():
        split_path.unlink()


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise FileNotFoundError(f"missing dataset file {path}")
    text = path.read_text(encoding="utf-8")
    if not text:
        return []
    lines = text.split("\n")
    return lines[:-1] if lines[-1] == "" else lines


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    meta = {}
    for i, line in enumerate(_read_lines(d / "meta.tsv"), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataFormatError(f"meta.tsv line {i}: expected key<TAB>value")
        meta[parts[0]] = parts[1]
    for key in ("n", "d_raw", "classes", "name"):
        if key not in meta:
            raise DataFormatError(f"meta.tsv: missing key {key!r}")
    try:
        n, d_raw, classes = int(meta["n"]), int(meta["d_raw"]), int(meta["classes"])
    except ValueError as exc:
        raise DataFormatError(f"meta.tsv: {exc}") from exc

    edges = []
    for i, line in enumerate(_read_lines(d / "graph.tsv"), 1):
        parts = line.split("\t")
        try:
            if len(parts) not in (2, 3):
                raise ValueError("expected u<TAB>v[<TAB>weight]")
            u, v = int(parts[0]), int(parts[1])
            w = float(parts[2]) if len(parts) == 3 else 1.0
            if not u < v:
                raise ValueError(f"expected u < v, got {u}, {v}")
        except ValueError as exc:
            raise DataFormatError(f"graph.tsv line {i}: {exc}") from exc
        edges.append((u, v, w))
    try:
        graph = build_csr(n, edges, symmetrize=True)
    except (ValueError, IndexError) as exc:
        raise DataFormatError(f"graph.tsv: {exc}") from exc

    rows = _read_lines(d / "features.tsv")
    if len(rows) != n:
        raise DataFormatError(f"features.tsv: expected {n} lines, found {len(rows)}")
    features = np.empty((n, d_raw))
    for i, line in enumerate(rows):
        parts = line.split("\t")
        if len(parts) != d_raw:
            raise DataFormatError(f"features.tsv line {i + 1}: expected {d_raw} values, found {len(parts)}")
        try:
            features[i] = [float(x) for x in parts]
        except ValueError as exc:
            raise DataFormatError(f"features.tsv line {i + 1}: {exc}") from exc

    label_lines = _read_lines(d / "labels.tsv")
    if len(label_lines) != n:
        raise DataFormatError(f"labels.tsv: expected {n} lines, found {len(label_lines)}")
    labels = np.empty(n, dtype=np.int64)
    for i, line in enumerate(label_lines):
        try:
            labels[i] = int(line)
        except ValueError as exc:
            raise DataFormatError(f"labels.tsv line {i + 1}: {exc}") from exc
        if not 0 <= labels[i] < classes:
            raise DataFormatError(f"labels.tsv line {i + 1}: class {labels[i]} outside [0, {classes})")

    splits = None
    if (d / "splits.tsv").exists():
        split_lines = _read_lines(d / "splits.tsv")
        if len(split_lines) != n:
            raise DataFormatError(f"splits.tsv: expected {n} lines, found {len(split_lines)}")
        splits = np.empty(n, dtype=np.int64)
        for i, line in enumerate(split_lines):
            if line not in SPLIT_NAMES:
                raise DataFormatError(f"splits.tsv line {i + 1}: unknown split {line!r}")
            splits[i] = SPLIT_NAMES.index(line)
    return Dataset(graph, features, labels, classes, meta["name"], splits)


def gen_sbm(
    n: int,
    blocks: int,
    p_in: float,
    p_out: float,
    feat_dim: int,
    feat_sep: float,
    seed: int,
) -> Dataset:
    """Stochastic block model with Gaussian block-mean features.

    Node ``i`` belongs to block ``i // (n // blocks)``. Block ``b`` has mean
    ``feat_sep * e_b`` (unit axis ``b``), plus standard normal noise.
    """
    if blocks < 2:
        raise ValueError(f"need at least 2 blocks, got {blocks}")
    if n % blocks:
        raise ValueError(f"n={n} is not divisible by blocks={blocks}")
    if not 0 <= p_out < p_in <= 1:
        raise ValueError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if feat_dim < blocks:
        raise ValueError(f"feat_dim={feat_dim} must be at least the number of blocks")
    rng = rng_stream(seed, STREAM_DATA)
    labels = np.arange(n) // (n // blocks)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    edges = [(int(u), int(v), 1.0) for u, v in zip(iu[keep], ju[keep])]
    means = np.zeros((blocks, feat_dim))
    means[np.arange(blocks), np.arange(blocks)] = feat_sep
    features = means[labels] + rng.standard_normal((n, feat_dim))
    return Dataset(build_csr(n, edges), features, labels, blocks, f"sbm-n{n}-b{blocks}-s{seed}")


def convert_cora(content_path, cites_path, row_normalize: bool = False, name: str = "cora") -> Dataset:
    """Build a :class:`Dataset` from the ``cora.content`` / ``cora.cites`` pair.

    ``cora.content`` lines are ``paper_id<TAB>f_1 .. f_d<TAB>class_label``;
    ``cora.cites`` lines are ``cited<TAB>citing``. Nodes follow content-file
    order, class ids follow sorted label names. Citations are treated as
    undirected, duplicates and self-citations are dropped, and citations to
    papers missing from the content file are skipped with a warning.
    ``row_normalize`` divides each feature row by its sum (zero rows kept).
    """
    ids: dict[str, int] = {}
    rows, names = [], []
    for i, line in enumerate(_read_lines(Path(content_path)), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 3:
            raise DataFormatError(f"{content_path} line {i}: expected id, features, label")
        if parts[0] in ids:
            raise DataFormatError(f"{content_path} line {i}: duplicate paper id {parts[0]}")
        try:
            rows.append([float(x) for x in parts[1:-1]])
        except ValueError as exc:
            raise DataFormatError(f"{content_path} line {i}: {exc}") from None
        if len(rows[-1]) != len(rows[0]):
            raise DataFormatError(f"{content_path} line {i}: {len(rows[-1])} features, expected {len(rows[0])}")
        ids[parts[0]] = len(ids)
        names.append(parts[-1])
    classes = sorted(set(names))
    labels = np.array([classes.index(c) for c in names], dtype=np.int64)
    features = np.array(rows, dtype=np.float64)
    if row_normalize:
        sums = features.sum(axis=1, keepdims=True)
        features = np.divide(features, sums, out=features.copy(), where=sums != 0)

    pairs = set()
    skipped = 0
    for i, line in enumerate(_read_lines(Path(cites_path)), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DataFormatError(f"{cites_path} line {i}: expected two paper ids")
        if parts[0] not in ids or parts[1] not in ids:
            skipped += 1
            continue
        u, v = ids[parts[0]], ids[parts[1]]
        if u != v:
            pairs.add((min(u, v), max(u, v)))
    if skipped:
        warnings.warn(f"skipped {skipped} citations to unknown papers", stacklevel=2)
    graph = build_csr(len(ids), [(u, v, 1.0) for u, v in sorted(pairs)])
    return Dataset(graph, features, labels, len(classes), name)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(params: ModelParams, cfg: ModelConfig, path, extra: dict | None = None) -> None:
    """Write params with their model config; ``extra`` keys are stored in the header verbatim."""
    named = params.named()
    header = [f"version={CHECKPOINT_VERSION}", f"n_features={params.w_in.shape[1]}"]
    header += [f"model.{k}={json.dumps(v)}" for k, v in cfg.to_dict().items()]
    header += [f"extra.{k}={json.dumps(v, sort_keys=True)}" for k, v in sorted((extra or {}).items())]
    header += [f"tensor={name}:{','.join(str(s) for s in np.shape(arr))}" for name, arr in named]
    blob = "\n".join(header).encode("utf-8")
    body = b"".join(np.ascontiguousarray(arr, dtype="<f8").tobytes() for _, arr in named)
    Path(path).write_bytes(CHECKPOINT_MAGIC + struct.pack("<I", len(blob)) + blob + body)


def load_checkpoint(path, expected: ModelConfig | None = None, n_features: int | None = None):
    """Return ``(params, model_config, extra)``.

    Shapes are validated against the embedded config, and also against
    ``expected`` / ``n_features`` when given.
    """
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        lines = raw[8 : 8 + hlen].decode("utf-8").split("\n")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    fields: dict = {}
    model_kw: dict = {}
    extra: dict = {}
    manifest: list[tuple[str, tuple[int, ...]]] = []
    for line in lines:
        key, _, value = line.partition("=")
        if key == "tensor":
            name, _, shape = value.partition(":")
            manifest.append((name, tuple(int(s) for s in shape.split(",") if s)))
        elif key.startswith("model."):
            model_kw[key[6:]] = json.loads(value)
        elif key.startswith("extra."):
            extra[key[6:]] = json.loads(value)
        else:
            fields[key] = value
    if fields.get("version") != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"{path}: unsupported checkpoint version {fields.get('version')!r}")
    cfg = ModelConfig(**model_kw)
    d_raw = int(fields["n_features"])

    want = sum(int(np.prod(s)) for _, s in manifest) * 8
    body = raw[8 + hlen :]
    if len(body) != want:
        raise CheckpointError(f"{path}: truncated data ({len(body)} of {want} bytes)")

    def check_against(ref_cfg: ModelConfig, ref_features: int, what: str):
        ref = dict((k, np.shape(v)) for k, v in init_params(ref_cfg, ref_features, 0).named())
        got = dict(manifest)
        for name in list(ref) + [k for k in got if k not in ref]:
            if ref.get(name) != got.get(name):
                raise CheckpointError(
                    f"{path}: shape mismatch for tensor {name}: checkpoint {got.get(name)}, {what} {ref.get(name)}"
                )

    check_against(cfg, d_raw, "config")
    if expected is not None or n_features is not None:
        check_against(expected or cfg, n_features if n_features is not None else d_raw, "expected")

    values = {}
    offset = 0
    for name, shape in manifest:
        size = int(np.prod(shape))
        values[name] = np.frombuffer(body, dtype="<f8", count=size, offset=offset).astype(np.float64).reshape(shape)
        offset += size * 8
    template = init_params(cfg, d_raw, 0)
    return template.with_values(values), cfg, extra
