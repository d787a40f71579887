"""``chebmixer`` command line.

Every subcommand prints JSON (or JSON lines) on stdout and diagnostics on
stderr. Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

Run configs are flat ``key = value`` files with ``#`` comments. Values are
layered: built-in defaults, then ``--config`` file, then ``--set k=v``
overrides, then the dedicated flags (``--seed``, ``--data``, ``--out``).
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .data_io import (
    CheckpointError,
    DataFormatError,
    convert_cora,
    gen_sbm,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
)
from .graph import estimate_lambda_max, scale_laplacian, sym_norm_laplacian
from .model import ModelConfig, param_count, prepare_operator
from .spectral import cheb_hop_extract, hop2token_extract
from .training import TrainConfig, evaluate, resolve_splits, train_loop
from .verify import SUITES, run_suites

logger = logging.getLogger("chebmixer")

METRICS_SCHEMA = 1


class ConfigError(ValueError):
    """Bad configuration; maps to exit code 2."""


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# config key -> (parser, default)
CONFIG_KEYS = {
    "K": (int, 7),
    "d": (int, 64),
    "l": (int, 1),
    "d_s": (int, 64),
    "d_c": (int, 64),
    "aggregator": (str, "chebinterp"),
    "lambda_max": (str, "auto"),
    "extractor": (str, "chebyshev"),
    "mixer_bias": (_parse_bool, True),
    "halved_c0": (_parse_bool, False),
    "lr": (float, 1e-3),
    "weight_decay": (float, 5e-4),
    "beta1": (float, 0.9),
    "beta2": (float, 0.999),
    "eps": (float, 1e-8),
    "max_epochs": (int, 2000),
    "patience": (int, 50),
    "seed": (int, 0),
    "train_frac": (float, 0.6),
    "val_frac": (float, 0.2),
    "test_frac": (float, 0.2),
    "data": (str, None),
    "out": (str, None),
}


def default_config() -> dict:
    return {k: default for k, (_, default) in CONFIG_KEYS.items()}


def _set_key(cfg: dict, key: str, raw: str, where: str) -> None:
    if key not in CONFIG_KEYS:
        raise ConfigError(f"{where}: unknown config key {key!r}")
    parse = CONFIG_KEYS[key][0]
    try:
        cfg[key] = parse(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None


def parse_config_text(text: str, cfg: dict | None = None, source: str = "config") -> dict:
    """Apply ``key = value`` lines from ``text`` on top of ``cfg`` (defaults if None)."""
    cfg = default_config() if cfg is None else dict(cfg)
    for i, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source} line {i}: expected key = value")
        _set_key(cfg, key.strip(), value, f"{source} line {i}")
    return cfg


def resolve_config(args) -> dict:
    cfg = default_config()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        cfg = parse_config_text(path.read_text(encoding="utf-8"), cfg, str(path))
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set {item!r}: expected key=value")
        _set_key(cfg, key.strip(), value, "--set")
    for key in ("seed", "data", "out"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def build_train_config(cfg: dict) -> TrainConfig:
    try:
        model = ModelConfig(
            K=cfg["K"],
            d=cfg["d"],
            layers=cfg["l"],
            d_s=cfg["d_s"],
            d_c=cfg["d_c"],
            aggregator=cfg["aggregator"],
            lambda_max=cfg["lambda_max"],
            extractor=cfg["extractor"],
            mixer_bias=cfg["mixer_bias"],
            halved_c0=cfg["halved_c0"],
        )
        return TrainConfig(
            lr=cfg["lr"],
            weight_decay=cfg["weight_decay"],
            beta1=cfg["beta1"],
            beta2=cfg["beta2"],
            eps=cfg["eps"],
            max_epochs=cfg["max_epochs"],
            patience=cfg["patience"],
            seed=cfg["seed"],
            fractions=(cfg["train_frac"], cfg["val_frac"], cfg["test_frac"]),
            model=model,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _require(cfg: dict, key: str) -> str:
    if not cfg.get(key):
        raise ConfigError(f"missing required setting {key!r} (use --{key} or the config file)")
    return cfg[key]


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    tcfg = build_train_config(cfg)
    data_dir, out_dir = _require(cfg, "data"), Path(_require(cfg, "out"))
    ds = load_dataset(data_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = resolve_splits(ds, tcfg)

    t_start = time.perf_counter()
    with open(out_dir / "metrics.jsonl", "w", encoding="utf-8") as metrics, open(
        out_dir / "timing.jsonl", "w", encoding="utf-8"
    ) as timing:

        def on_epoch(rec):
            row = {"epoch": rec.epoch, "train_loss": rec.train_loss, "train_acc": rec.train_acc, "val_acc": rec.val_acc}
            if rec.epoch == 1:
                row = {"schema": METRICS_SCHEMA, **row}
            metrics.write(json.dumps(row) + "\n")
            timing.write(json.dumps({"epoch": rec.epoch, "epoch_seconds": rec.epoch_seconds}) + "\n")

        params, history = train_loop(ds, tcfg, on_epoch=on_epoch)
    total = time.perf_counter() - t_start

    model_cfg = replace(tcfg.model, n_classes=ds.class_count)
    extra = {"seed": tcfg.seed, "fractions": list(tcfg.fractions), "dataset": ds.name}
    save_checkpoint(params, model_cfg, out_dir / "best.ckpt", extra=extra)
    accs = evaluate(ds, params, tcfg, splits)
    result = {
        "best_epoch": history.best_epoch,
        "epochs_run": len(history.records),
        "train_acc": accs["train_acc"],
        "val_acc": accs["val_acc"],
        "test_acc": accs["test_acc"],
        "param_count": param_count(params),
        "total_seconds": total,
        "seed": tcfg.seed,
        "dataset": ds.name,
        "config": cfg,
    }
    (out_dir / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _emit({"test_acc": accs["test_acc"], "val_acc": accs["val_acc"], "best_epoch": history.best_epoch})
    return 0


def cmd_eval(args) -> int:
    ckpt = Path(args.model)
    if not ckpt.is_file():
        raise FileNotFoundError(f"checkpoint {ckpt} not found")
    ds = load_dataset(args.data)
    params, model_cfg, extra = load_checkpoint(ckpt, n_features=ds.n_features)
    if params.w_out.shape[0] != ds.class_count:
        raise CheckpointError(
            f"{ckpt}: shape mismatch for tensor w_out: checkpoint has {params.w_out.shape[0]} classes, data has {ds.class_count}"
        )
    seed = int(extra.get("seed", 0)) if args.seed is None else args.seed
    fractions = tuple(extra.get("fractions", (0.6, 0.2, 0.2)))
    tcfg = TrainConfig(seed=seed, fractions=fractions, model=model_cfg)
    accs = evaluate(ds, params, tcfg)
    _emit({**accs, "seed": seed, "checkpoint": str(ckpt)})
    return 0


def cmd_verify(args) -> int:
    results = run_suites(args.suite)
    for res in results:
        _emit(res.to_dict())
    return 0 if all(r.passed for r in results) else 1


def _hop_operator(ds, lambda_max: str, extractor: str):
    if extractor == "hop2token":
        return None, None
    L = sym_norm_laplacian(ds.graph)
    lam = estimate_lambda_max(L) if lambda_max == "auto" else 2.0
    return scale_laplacian(L, lam), lam


def cmd_extract(args) -> int:
    if args.k < 0:
        raise ConfigError(f"--k must be non-negative, got {args.k}")
    ds = load_dataset(args.data)
    L_hat, lam = _hop_operator(ds, args.lambda_max, args.extractor)
    if L_hat is None:
        hops = hop2token_extract(ds.graph, ds.features, args.k)
    else:
        hops = cheb_hop_extract(L_hat, ds.features, args.k)
    data = hops.data
    summary = {"shape": list(data.shape), "source": hops.source, "k_order": hops.k_order, "lambda_max": lam}
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(f"#shape\t{data.shape[0]}\t{data.shape[1]}\t{data.shape[2]}\n")
            for node in range(data.shape[0]):
                for k in range(data.shape[1]):
                    fh.write(f"{node}\t{k}\t" + "\t".join(repr(float(x)) for x in data[node, k]) + "\n")
        summary["out"] = args.out
    else:
        summary["values"] = data.tolist()
    _emit(summary)
    return 0


def cmd_bench(args) -> int:
    if args.epochs < 1:
        raise ConfigError(f"--epochs must be positive, got {args.epochs}")
    cfg = resolve_config(args)
    cfg.update(max_epochs=args.epochs, patience=args.epochs)
    tcfg = build_train_config(cfg)
    ds = load_dataset(_require(cfg, "data"))
    t0 = time.perf_counter()
    op = prepare_operator(ds.graph, replace(tcfg.model, n_classes=ds.class_count))
    setup = time.perf_counter() - t0
    params, history = train_loop(ds, tcfg)
    secs = [r.epoch_seconds for r in history.records]
    _emit(
        {
            "epochs": len(secs),
            "mean_epoch_seconds": statistics.fmean(secs),
            "stdev_epoch_seconds": statistics.stdev(secs) if len(secs) > 1 else 0.0,
            "operator_seconds": setup,
            "operator_nnz": int(op.matrix.nnz),
            "param_count": param_count(params),
            "nodes": ds.n,
            "extractor": tcfg.model.extractor,
            "aggregator": tcfg.model.aggregator,
        }
    )
    return 0


def cmd_gen_synth(args) -> int:
    try:
        ds = gen_sbm(args.nodes, args.blocks, args.p_in, args.p_out, args.feat_dim, args.feat_sep, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    save_dataset(ds, args.out)
    _emit({"out": args.out, "name": ds.name, "nodes": ds.n, "edges": ds.graph.n_edges, "classes": ds.class_count})
    return 0


def cmd_convert_cora(args) -> int:
    src = Path(args.source)
    ds = convert_cora(src / "cora.content", src / "cora.cites", row_normalize=args.row_normalize)
    save_dataset(ds, args.out)
    _emit({"out": args.out, "name": ds.name, "nodes": ds.n, "edges": ds.graph.n_edges, "classes": ds.class_count})
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="seed for init and splits")
    p.add_argument("--data", help="dataset directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chebmixer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a dataset directory")
    _add_run_args(p)
    p.add_argument("--out", help="output directory for metrics, checkpoint and result")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="recompute accuracies from a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="checkpoint written by train")
    p.add_argument("--seed", type=int, help="split seed (default: the one stored in the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the seeded property suites")
    p.add_argument("--suite", action="append", choices=sorted(SUITES), help="run only this suite (repeatable)")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("extract", help="dump the K-hop tensor of a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--lambda-max", choices=("auto", "fixed"), default="auto")
    p.add_argument("--extractor", choices=("chebyshev", "hop2token"), default="chebyshev")
    p.add_argument("--out", help="write values as TSV here instead of inline JSON")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("bench", help="time a fixed number of training epochs")
    _add_run_args(p)
    p.add_argument("--epochs", type=int, default=20)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-synth", help="write a stochastic block model dataset")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--p-in", type=float, required=True)
    p.add_argument("--p-out", type=float, required=True)
    p.add_argument("--feat-dim", type=int, default=8)
    p.add_argument("--feat-sep", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("convert-cora", help="convert cora.content/cora.cites into a dataset directory")
    p.add_argument("--source", required=True, help="directory holding cora.content and cora.cites")
    p.add_argument("--out", required=True)
    p.add_argument("--row-normalize", action="store_true", help="scale each feature row to sum 1")
    p.set_defaults(func=cmd_convert_cora)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"chebmixer {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, DataFormatError, CheckpointError, FloatingPointError, ValueError, KeyError) as exc:
        print(f"chebmixer {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
