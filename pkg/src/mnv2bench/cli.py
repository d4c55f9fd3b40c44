"""Command line interface.

Every command reads options in a fixed precedence order, highest
first: explicit flags, then values from a ``--config`` JSON file, then
(for ``--threads`` only) the ``MNV2_THREADS`` environment variable,
then built-in defaults.  The config file is a flat JSON object whose
keys are the long option names with underscores, e.g.
``{"epochs": 30, "lr0": 0.001, "sizes": [32, 64]}``.  Keys a command
does not understand are rejected so typos fail loudly.

Exit status: 0 on success, 1 on runtime failure with a one-line
diagnostic on stderr, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .archive import load_model, read_archive, write_archive
from .bench import (
    BenchConfig,
    build_manifest,
    end_to_end_throughput,
    forward_throughput,
    hardware_info,
    render_confusion,
    render_report,
    run_resolution_sweep,
    set_threads,
    write_manifest,
)
from .dataset import (
    CLASS_NAMES,
    SPLITS,
    class_counts,
    find_duplicates,
    scan_dataset,
    stratified_subset,
    write_stats_csv,
)
from .model import FEATURE_DIM, backbone_fingerprint, forward
from .pipeline import AugmentConfig, PreprocConfig, load_rgb8, preprocess
from .tensor import softmax
from .training import (
    TrainConfig,
    compute_features,
    evaluate_head,
    labels_of,
    train_head,
)

__all__ = ["main"]


class UsageError(ValueError):
    """Missing or malformed required option (exit status 2)."""


class Options:
    """Flag/config/default resolution for one command invocation."""

    def __init__(self, args, known: frozenset):
        self._args = args
        self._config = {}
        path = getattr(args, "config", None)
        if path:
            with open(path, encoding="utf-8") as fh:
                cfg = json.load(fh)
            if not isinstance(cfg, dict):
                raise UsageError("config file must hold a JSON object")
            unknown = sorted(set(cfg) - known)
            if unknown:
                raise UsageError(
                    f"unknown config keys for this command: "
                    f"{', '.join(unknown)}")
            for key, value in cfg.items():
                if isinstance(value, dict):
                    raise UsageError(
                        f"config must be flat; {key!r} holds an object")
            self._config = cfg

    def get(self, name, default=None):
        value = getattr(self._args, name, None)
        if value is not None:
            return value
        if name in self._config:
            return self._config[name]
        return default

    def require(self, name):
        value = self.get(name)
        if value is None:
            raise UsageError(f"missing --{name.replace('_', '-')}")
        return value


def _resolve_threads(opts: Options):
    value = opts.get("threads")
    if value is None:
        env = os.environ.get("MNV2_THREADS", "").strip()
        if env:
            try:
                value = int(env)
            except ValueError:
                raise ValueError(
                    f"MNV2_THREADS must be an integer, got {env!r}")
    return None if value is None else int(value)


def _train_config(opts: Options) -> TrainConfig:
    d = TrainConfig()
    return TrainConfig(
        lr0=float(opts.get("lr0", d.lr0)),
        momentum=float(opts.get("momentum", d.momentum)),
        nesterov=bool(opts.get("nesterov", d.nesterov)),
        weight_decay=float(opts.get("weight_decay", d.weight_decay)),
        epochs=int(opts.get("epochs", d.epochs)),
        lr_step=int(opts.get("lr_step", d.lr_step)),
        lr_gamma=float(opts.get("lr_gamma", d.lr_gamma)),
        batch_train=int(opts.get("batch_train", d.batch_train)),
        batch_val=int(opts.get("batch_val", d.batch_val)),
        batch_eval=int(opts.get("batch_eval", d.batch_eval)),
        seed=int(opts.get("seed", d.seed)),
    )


def _int_tuple(value) -> tuple:
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
        value = parts
    elif not isinstance(value, (list, tuple)):
        value = [value]
    if not value:
        raise UsageError("need at least one size")
    return tuple(int(v) for v in value)


def _class_names(k: int) -> list:
    if k == len(CLASS_NAMES):
        return list(CLASS_NAMES)
    return [f"class{i}" for i in range(k)]


def _load_model(opts: Options):
    """Model from --weights, classifier optionally replaced by --head."""
    weights = opts.require("weights")
    classes = opts.get("classes")
    model = load_model(weights,
                       num_classes=None if classes is None else int(classes))
    head = opts.get("head")
    if head:
        tensors = read_archive(head)
        missing = {"classifier.w", "classifier.b"} - set(tensors)
        if missing:
            raise ValueError(
                f"head archive lacks {', '.join(sorted(missing))}")
        w, b = tensors["classifier.w"], tensors["classifier.b"]
        if w.ndim != 2 or w.shape[1] != FEATURE_DIM or b.shape != (w.shape[0],):
            raise ValueError(
                f"head classifier shapes {w.shape} / {b.shape} do not fit "
                f"{FEATURE_DIM}-dim features")
        model = replace(model, num_classes=w.shape[0],
                        classifier_w=w, classifier_b=b)
    return model


def _scan_records(opts: Options, *, verify: bool = False):
    """Scan --data, then optionally keep a stratified --fraction."""
    root = opts.require("data")
    scan = scan_dataset(root, verify=verify)
    records = scan.records
    fraction = float(opts.get("fraction", 1.0))
    if fraction != 1.0:
        records = stratified_subset(records, fraction,
                                    int(opts.get("seed", 0)))
    return scan, records


def _split(records, name: str) -> list:
    return [r for r in records if r.split == name]


def _write_curve_csv(path, curve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "train_loss", "train_acc", "val_loss",
                    "val_acc"])
        for e in curve:
            w.writerow([e.epoch, repr(e.lr), f"{e.train_loss:.6f}",
                        f"{e.train_acc:.6f}", f"{e.val_loss:.6f}",
                        f"{e.val_acc:.6f}"])


# -- commands -----------------------------------------------------------

_STATS_KEYS = frozenset({"data", "verify", "duplicates", "out"})


def _cmd_stats(args) -> int:
    opts = Options(args, _STATS_KEYS)
    root = opts.require("data")
    scan = scan_dataset(root, verify=bool(opts.get("verify", False)))
    counts = class_counts(scan.records)
    total = 0
    for split in SPLITS:
        n = int(counts[split].sum()) if split in counts else 0
        total += n
        print(f"{split}: {n}")
    print(f"total: {total}")
    print(f"skipped: {len(scan.skipped)}")
    if opts.get("duplicates", False):
        groups = find_duplicates(scan.records)
        print(f"cross_split_duplicates: {len(groups)}")
        for group in groups:
            print("  " + " | ".join(f"{r.split}/{r.path.name}"
                                    for r in group))
    out = opts.get("out")
    if out:
        write_stats_csv(out, scan)
        print(f"wrote {out}")
    return 0


_VALIDATE_KEYS = frozenset({"weights", "classes"})


def _cmd_validate_weights(args) -> int:
    opts = Options(args, _VALIDATE_KEYS)
    weights = opts.require("weights")
    tensors = read_archive(weights)
    classes = opts.get("classes")
    model = load_model(tensors,
                       num_classes=None if classes is None else int(classes))
    n_params = sum(int(np.prod(t.shape)) for t in tensors.values()
                   if t.ndim > 0)
    print(f"tensors: {len(tensors)}")
    print(f"archive_values: {n_params}")
    print(f"classes: {model.num_classes}")
    print(f"fingerprint: {backbone_fingerprint(model)[:16]}")
    print("ok")
    return 0


_CLASSIFY_KEYS = frozenset({"weights", "head", "classes", "size", "top",
                            "threads"})


def _cmd_classify(args) -> int:
    opts = Options(args, _CLASSIFY_KEYS)
    set_threads(_resolve_threads(opts))
    model = _load_model(opts)
    cfg = PreprocConfig(size=int(opts.get("size", 224)))
    top = int(opts.get("top", 3))
    if top < 1:
        raise UsageError("--top must be at least 1")
    names = _class_names(model.num_classes)
    top = min(top, model.num_classes)
    for path in args.images:
        img = load_rgb8(path)
        logits = forward(model, preprocess(img, cfg)[None])
        probs = softmax(logits)[0]
        order = np.argsort(-probs, kind="stable")[:top]
        ranked = ", ".join(f"{names[i]} {probs[i]:.3f}" for i in order)
        print(f"{path}: {ranked}")
    return 0


_TRAIN_KEYS = frozenset({
    "data", "weights", "out", "size", "fraction", "threads", "quiet",
    "epochs", "lr0", "momentum", "weight_decay", "lr_step", "lr_gamma",
    "batch_train", "batch_val", "batch_eval", "nesterov", "augment", "seed",
})


def _cmd_train_head(args) -> int:
    opts = Options(args, _TRAIN_KEYS)
    threads = _resolve_threads(opts)
    set_threads(threads)
    # flag validation before any file is touched
    outdir = opts.require("out")
    opts.require("weights")
    opts.require("data")
    model = _load_model(opts)
    scan, records = _scan_records(opts)
    train_records = _split(records, "training")
    val_records = _split(records, "validation")
    cfg = _train_config(opts)
    pp = PreprocConfig(size=int(opts.get("size", 224)))
    aug = AugmentConfig() if bool(opts.get("augment", True)) else None

    os.makedirs(outdir, exist_ok=True)
    manifest = {"package_version": __version__}
    manifest.update(hardware_info(threads))
    manifest.update({
        "size": pp.size, "epochs": cfg.epochs, "seed": cfg.seed,
        "lr0": cfg.lr0, "augmented": aug is not None,
        "n_train": len(train_records), "n_val": len(val_records),
    })
    manifest_path = os.path.join(outdir, "manifest.json")
    write_manifest(manifest_path, manifest)  # before the slow part

    quiet = bool(opts.get("quiet", False))

    def progress(e):
        if not quiet:
            print(f"epoch {e.epoch}/{cfg.epochs} lr {e.lr:g} "
                  f"train {e.train_loss:.4f}/{e.train_acc:.4f} "
                  f"val {e.val_loss:.4f}/{e.val_acc:.4f}")

    result = train_head(model, train_records, val_records, train_cfg=cfg,
                        preproc_cfg=pp, aug_cfg=aug, progress=progress)

    head_path = os.path.join(outdir, "head.mnv2")
    write_archive(head_path, {"classifier.w": result.head_w,
                              "classifier.b": result.head_b})
    _write_curve_csv(os.path.join(outdir, "curves.csv"), result.curve)
    manifest["final_val_acc"] = round(result.final_val_acc, 6)
    write_manifest(manifest_path, manifest)
    print(f"final val acc: {result.final_val_acc * 100:.2f}%")
    print(f"wrote {head_path}")
    return 0


_EVAL_KEYS = frozenset({"data", "weights", "head", "classes", "split",
                        "size", "fraction", "seed", "batch_eval", "out",
                        "threads"})


def _cmd_evaluate(args) -> int:
    opts = Options(args, _EVAL_KEYS)
    set_threads(_resolve_threads(opts))
    opts.require("weights")
    opts.require("data")
    model = _load_model(opts)
    split = opts.get("split", "evaluation")
    if split not in SPLITS:
        raise UsageError(f"unknown split {split!r}; choose from "
                         f"{', '.join(SPLITS)}")
    scan, records = _scan_records(opts)
    records = _split(records, split)
    if not records:
        raise ValueError(f"no images in split {split!r}")
    pp = PreprocConfig(size=int(opts.get("size", 224)))
    batch = int(opts.get("batch_eval", 128))

    chunks = []
    for i in range(0, len(records), batch):
        images = [load_rgb8(r.path) for r in records[i : i + batch]]
        chunks.append(compute_features(model, images, pp, batch))
    feats = np.concatenate(chunks)
    metrics = evaluate_head(feats, labels_of(records), model.classifier_w,
                            model.classifier_b, model.num_classes)

    print(f"split: {split}")
    print(f"n: {metrics.n}")
    print(f"loss: {metrics.loss:.4f}")
    print(f"accuracy: {metrics.accuracy * 100:.2f}%")
    print(f"macro_f1: {metrics.macro_f1:.4f}")
    out = opts.get("out")
    if out:
        for p in render_confusion(metrics.confusion, out):
            print(f"wrote {p}")
    return 0


_BENCH_KEYS = frozenset({"weights", "classes", "size", "batch", "warmup",
                         "iters", "seed", "threads"})


def _cmd_bench(args) -> int:
    opts = Options(args, _BENCH_KEYS)
    threads = _resolve_threads(opts)
    pools = set_threads(threads)
    model = _load_model(opts)
    size = int(opts.get("size", 224))
    batch = int(opts.get("batch", 64))
    warmup = int(opts.get("warmup", 2))
    iters = int(opts.get("iters", 5))
    rng = np.random.default_rng(int(opts.get("seed", 0)))
    # synthetic "decoded photos", larger than the network input
    images = [rng.integers(0, 256, (256, 256, 3), dtype=np.uint8)
              for _ in range(batch)]
    cfg = PreprocConfig(size=size)

    fwd = forward_throughput(model, size, batch, warmup=warmup, iters=iters)
    e2e = end_to_end_throughput(model, images, cfg, warmup=warmup,
                                iters=iters)
    print(f"size: {size}")
    print(f"batch: {batch}")
    print(f"threads: {threads if threads is not None else 'default'}")
    print(f"pools: {json.dumps(pools)}")
    print(f"forward_ips: {fwd:.1f}")
    print(f"end_to_end_ips: {e2e:.1f}")
    return 0


_SWEEP_KEYS = (_TRAIN_KEYS | {"sizes", "runs", "bench_batch", "warmup",
                              "iters"}) - {"size", "quiet"}


def _cmd_sweep(args) -> int:
    opts = Options(args, _SWEEP_KEYS)
    threads = _resolve_threads(opts)
    outdir = opts.require("out")
    opts.require("weights")
    opts.require("data")
    model = _load_model(opts)
    scan, records = _scan_records(opts)
    cfg = _train_config(opts)
    bench_cfg = BenchConfig(
        sizes=_int_tuple(opts.get("sizes", (32, 64, 128, 256))),
        runs=int(opts.get("runs", 5)),
        bench_batch=int(opts.get("bench_batch", 64)),
        warmup_iters=int(opts.get("warmup", 2)),
        timed_iters=int(opts.get("iters", 5)),
        threads=threads,
    )
    aug = AugmentConfig() if bool(opts.get("augment", True)) else None
    os.makedirs(outdir, exist_ok=True)

    def progress(size, run, acc):
        print(f"size {size} run {run}: eval acc {acc * 100:.2f}%")

    result = run_resolution_sweep(
        model, _split(records, "training"), _split(records, "validation"),
        _split(records, "evaluation"), bench_cfg=bench_cfg, train_cfg=cfg,
        aug_cfg=aug, progress=progress,
        manifest_path=os.path.join(outdir, "manifest.json"))

    result_path = os.path.join(outdir, "sweep_result.json")
    with open(result_path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    render_report(result, outdir)
    print(f"wrote {result_path}")
    with open(os.path.join(outdir, "sweep.md"), encoding="utf-8") as fh:
        print(fh.read(), end="")
    return 0


_REPORT_KEYS = frozenset({"result", "out"})


def _cmd_report(args) -> int:
    opts = Options(args, _REPORT_KEYS)
    result_path = opts.require("result")
    with open(result_path, encoding="utf-8") as fh:
        result = json.load(fh)
    for p in render_report(result, opts.require("out")):
        print(f"wrote {p}")
    return 0


# -- parser -------------------------------------------------------------


def _add_config_opt(p):
    p.add_argument("--config", metavar="JSON",
                   help="flat JSON file with option defaults")


def _add_train_opts(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--lr-step", type=int, dest="lr_step")
    p.add_argument("--lr-gamma", type=float, dest="lr_gamma")
    p.add_argument("--batch-train", type=int, dest="batch_train")
    p.add_argument("--batch-val", type=int, dest="batch_val")
    p.add_argument("--batch-eval", type=int, dest="batch_eval")
    p.add_argument("--seed", type=int)
    p.add_argument("--nesterov", action=argparse.BooleanOptionalAction,
                   default=None)
    p.add_argument("--augment", action=argparse.BooleanOptionalAction,
                   default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mnv2bench",
        description="Food image classification with a from-scratch "
                    "MobileNetV2 inference engine.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="scan a dataset and print counts")
    p.add_argument("--data")
    p.add_argument("--verify", action=argparse.BooleanOptionalAction,
                   default=None, help="decode every image while scanning")
    p.add_argument("--duplicates", action=argparse.BooleanOptionalAction,
                   default=None, help="report cross-split duplicate files")
    p.add_argument("--out", help="also write a per-class CSV here")
    _add_config_opt(p)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("validate-weights",
                       help="check a weight archive loads cleanly")
    p.add_argument("--weights")
    p.add_argument("--classes", type=int)
    _add_config_opt(p)
    p.set_defaults(func=_cmd_validate_weights)

    p = sub.add_parser("classify", help="classify images")
    p.add_argument("images", nargs="+", metavar="IMAGE")
    p.add_argument("--weights")
    p.add_argument("--head", help="archive with a trained classifier head")
    p.add_argument("--classes", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--top", type=int)
    p.add_argument("--threads", type=int)
    _add_config_opt(p)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("train-head",
                       help="train the classifier head on frozen features")
    p.add_argument("--data")
    p.add_argument("--weights")
    p.add_argument("--out")
    p.add_argument("--size", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--threads", type=int)
    p.add_argument("--quiet", action=argparse.BooleanOptionalAction,
                   default=None)
    _add_train_opts(p)
    _add_config_opt(p)
    p.set_defaults(func=_cmd_train_head)

    p = sub.add_parser("evaluate", help="evaluate on a dataset split")
    p.add_argument("--data")
    p.add_argument("--weights")
    p.add_argument("--head")
    p.add_argument("--classes", type=int)
    p.add_argument("--split", choices=SPLITS)
    p.add_argument("--size", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-eval", type=int, dest="batch_eval")
    p.add_argument("--out", help="write confusion and per-class files here")
    p.add_argument("--threads", type=int)
    _add_config_opt(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("bench", help="measure inference throughput")
    p.add_argument("--weights")
    p.add_argument("--classes", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    _add_config_opt(p)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("sweep",
                       help="accuracy and speed across input sizes")
    p.add_argument("--data")
    p.add_argument("--weights")
    p.add_argument("--out")
    p.add_argument("--sizes", help="comma-separated, e.g. 32,64,128,256")
    p.add_argument("--runs", type=int)
    p.add_argument("--bench-batch", type=int, dest="bench_batch")
    p.add_argument("--warmup", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--threads", type=int)
    _add_train_opts(p)
    _add_config_opt(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("report",
                       help="re-render report files from a sweep result")
    p.add_argument("--result", help="sweep_result.json from a sweep run")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
