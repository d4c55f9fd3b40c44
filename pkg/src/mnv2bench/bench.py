"""Throughput measurement, resolution sweeps, and report rendering.

Timing uses the median of several measured iterations after warmup;
the clock is injectable so the rate arithmetic is unit-testable.
Thread control goes through threadpoolctl and is recorded alongside
the results: a sweep result carries everything needed to re-render its
report files byte-identically (no timestamps, sorted JSON keys).

Report files, all derived from one :class:`SweepResult`:

* ``sweep.csv`` / ``sweep.md`` -- accuracy mean and spread (max-min
  across runs) plus throughput per input size
* ``curves.csv`` -- full per-epoch training curves for every run
* ``confusion_raw.csv`` / ``confusion_norm.csv`` / ``confusion.pgm`` --
  evaluation confusion of the first run at the largest size; the PGM
  renders row-normalised cells scaled to 24x24-pixel blocks
* ``per_class.csv`` -- precision/recall/F1/support from that confusion
* ``manifest.json`` -- flat, sorted summary of config, hardware, and
  headline numbers
"""

from __future__ import annotations

import csv
import json
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import threadpoolctl

from . import __version__
from .dataset import CLASS_NAMES
from .model import Model, forward
from .pipeline import AugmentConfig, PreprocConfig, load_rgb8, preprocess
from .training import (
    FeatureCache,
    TrainConfig,
    evaluate_head,
    labels_of,
    metrics_from_confusion,
    run_seed,
    summarize,
    train_head,
)

__all__ = [
    "BenchConfig",
    "SizeResult",
    "SweepResult",
    "set_threads",
    "hardware_info",
    "measure_rate",
    "forward_throughput",
    "end_to_end_throughput",
    "run_resolution_sweep",
    "render_report",
    "render_confusion",
    "build_manifest",
    "write_manifest",
    "REPORT_FILES",
]

REPORT_FILES = ("sweep.csv", "sweep.md", "curves.csv", "confusion_raw.csv",
                "confusion_norm.csv", "confusion.pgm", "per_class.csv",
                "manifest.json")


@dataclass(frozen=True)
class BenchConfig:
    sizes: tuple = (32, 64, 128, 256)
    runs: int = 5
    bench_batch: int = 64
    warmup_iters: int = 2
    timed_iters: int = 5
    threads: int | None = None


def set_threads(n: int | None):
    """Pin BLAS/OpenMP pools to ``n`` threads (None leaves them alone).
    Returns the active limits so they can be recorded."""
    if n is not None:
        if n < 1:
            raise ValueError(f"threads must be >= 1, got {n}")
        threadpoolctl.threadpool_limits(limits=n)
    return [
        {"api": info["user_api"], "threads": info["num_threads"]}
        for info in threadpoolctl.ThreadpoolController().info()
    ]


def hardware_info(threads: int | None = None) -> dict:
    """Flat description of the machine the numbers came from."""
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
        "thread_limit": threads if threads is not None else 0,
    }


def measure_rate(work, n_items: int, *, warmup: int = 2, iters: int = 5,
                 clock=time.perf_counter) -> float:
    """Items per second: n_items over the median duration of ``work``."""
    if n_items < 1:
        raise ValueError("n_items must be positive")
    if iters < 1:
        raise ValueError("iters must be positive")
    for _ in range(warmup):
        work()
    times = []
    for _ in range(iters):
        t0 = clock()
        work()
        elapsed = clock() - t0
        if elapsed <= 0:
            raise ValueError("clock did not advance during measurement")
        times.append(elapsed)
    return n_items / statistics.median(times)


def forward_throughput(model: Model, size: int, batch: int = 64, *,
                       warmup: int = 2, iters: int = 5,
                       clock=time.perf_counter) -> float:
    """Images/second through the network alone, preprocessed input."""
    x = np.random.default_rng(0).standard_normal(
        (batch, 3, size, size)).astype(np.float32)
    return measure_rate(lambda: forward(model, x), batch,
                        warmup=warmup, iters=iters, clock=clock)


def end_to_end_throughput(model: Model, images, cfg: PreprocConfig, *,
                          warmup: int = 2, iters: int = 5,
                          clock=time.perf_counter) -> float:
    """Images/second from decoded uint8 RGB through resize, normalise,
    and the full forward pass."""
    if not images:
        raise ValueError("need at least one image")

    def work():
        x = np.stack([preprocess(img, cfg) for img in images])
        forward(model, x)

    return measure_rate(work, len(images), warmup=warmup, iters=iters,
                        clock=clock)


@dataclass
class SizeResult:
    size: int
    accuracies: list  # percent, one per run
    speed_ips: float
    forward_ips: float
    curves: list  # per run: list of epoch-stat dicts
    confusion: list  # run-0 evaluation confusion, row-major int lists

    @property
    def acc_mean(self) -> float:
        return summarize(self.accuracies).mean

    @property
    def acc_spread(self) -> float:
        return summarize(self.accuracies).spread


@dataclass
class SweepResult:
    config: dict
    hardware: dict
    threadpools: list
    sizes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "hardware": self.hardware,
            "threadpools": self.threadpools,
            "sizes": [asdict(s) for s in self.sizes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepResult":
        return cls(d["config"], d["hardware"], d["threadpools"],
                   [SizeResult(**s) for s in d["sizes"]])


def run_resolution_sweep(model: Model, train_records, val_records,
                         eval_records, *,
                         bench_cfg: BenchConfig = BenchConfig(),
                         train_cfg: TrainConfig = TrainConfig(),
                         mean=PreprocConfig.mean, std=PreprocConfig.std,
                         aug_cfg: AugmentConfig | None = None,
                         progress=None, manifest_path=None) -> SweepResult:
    """Train and evaluate the head at each input size, timing inference.

    Per size: ``runs`` repetitions of head training with derived seeds,
    evaluation accuracy for each, plus end-to-end and forward-only
    throughput.  The sweep result is self-contained for re-rendering.
    With ``manifest_path`` a config/hardware manifest is written before
    any heavy work, so an interrupted run still leaves a record.
    """
    threadpools = set_threads(bench_cfg.threads)
    result = SweepResult(
        config={
            "sizes": list(bench_cfg.sizes),
            "runs": bench_cfg.runs,
            "bench_batch": bench_cfg.bench_batch,
            "warmup_iters": bench_cfg.warmup_iters,
            "timed_iters": bench_cfg.timed_iters,
            "train": asdict(train_cfg),
            "augment": asdict(aug_cfg) if aug_cfg is not None else None,
            "mean": list(mean),
            "std": list(std),
            "n_train": len(train_records),
            "n_val": len(val_records),
            "n_eval": len(eval_records),
        },
        hardware=hardware_info(bench_cfg.threads),
        threadpools=threadpools,
    )
    if manifest_path is not None:
        write_manifest(manifest_path, build_manifest(result))
    cache = FeatureCache()
    eval_labels = labels_of(eval_records)
    bench_images = [load_rgb8(r.path)
                    for r in eval_records[: bench_cfg.bench_batch]]

    for size in bench_cfg.sizes:
        pp = PreprocConfig(size=size, mean=tuple(mean), std=tuple(std))
        eval_feats = cache.features(model, eval_records, pp,
                                    train_cfg.batch_eval)
        accuracies, curves = [], []
        confusion = None
        for run in range(bench_cfg.runs):
            cfg_run = replace(train_cfg, seed=run_seed(train_cfg.seed, run))
            res = train_head(model, train_records, val_records,
                             train_cfg=cfg_run, preproc_cfg=pp,
                             aug_cfg=aug_cfg, cache=cache)
            m = evaluate_head(eval_feats, eval_labels, res.head_w, res.head_b,
                              model.num_classes)
            accuracies.append(m.accuracy * 100.0)
            curves.append([asdict(e) for e in res.curve])
            if run == 0:
                confusion = m.confusion.tolist()
            if progress:
                progress(size, run, m.accuracy)
        speed = end_to_end_throughput(model, bench_images, pp,
                                      warmup=bench_cfg.warmup_iters,
                                      iters=bench_cfg.timed_iters)
        fwd = forward_throughput(model, size, bench_cfg.bench_batch,
                                 warmup=bench_cfg.warmup_iters,
                                 iters=bench_cfg.timed_iters)
        result.sizes.append(SizeResult(size, accuracies, speed, fwd,
                                       curves, confusion))
    return result


# -- rendering ----------------------------------------------------------


def _fmt_acc(v: float) -> str:
    return f"{v:.2f}"


def _fmt_speed(v: float) -> str:
    return f"{v:.1f}"


def render_report(result, outdir) -> list:
    """Write all report files from a sweep result (object or dict).

    Rendering is pure: the same result always produces byte-identical
    files, so a report can be regenerated from a saved result later.
    """
    if isinstance(result, dict):
        result = SweepResult.from_dict(result)
    if not result.sizes:
        raise ValueError("sweep result contains no sizes")
    os.makedirs(outdir, exist_ok=True)
    paths = []

    def out(name):
        p = os.path.join(outdir, name)
        paths.append(p)
        return p

    with open(out("sweep.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["size", "run", "accuracy_pct", "acc_mean", "acc_spread",
                    "speed_ips", "forward_ips"])
        for s in result.sizes:
            for run, acc in enumerate(s.accuracies):
                w.writerow([s.size, run, _fmt_acc(acc), _fmt_acc(s.acc_mean),
                            _fmt_acc(s.acc_spread), _fmt_speed(s.speed_ips),
                            _fmt_speed(s.forward_ips)])

    with open(out("sweep.md"), "w", encoding="utf-8") as fh:
        fh.write("| Input size | Accuracy (%) | Spread | Speed (img/s) |\n")
        fh.write("|---:|---:|---:|---:|\n")
        for s in result.sizes:
            fh.write(f"| {s.size} | {_fmt_acc(s.acc_mean)} | "
                     f"{_fmt_acc(s.acc_spread)} | {_fmt_speed(s.speed_ips)} |\n")

    with open(out("curves.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["size", "run", "epoch", "lr", "train_loss", "train_acc",
                    "val_loss", "val_acc"])
        for s in result.sizes:
            for run, curve in enumerate(s.curves):
                for e in curve:
                    w.writerow([s.size, run, e["epoch"], repr(e["lr"]),
                                f"{e['train_loss']:.6f}",
                                f"{e['train_acc']:.6f}",
                                f"{e['val_loss']:.6f}",
                                f"{e['val_acc']:.6f}"])

    paths.extend(render_confusion(result.sizes[-1].confusion, outdir))
    write_manifest(out("manifest.json"), build_manifest(result))

    return paths


def render_confusion(confusion, outdir) -> list:
    """Write confusion_raw.csv, confusion_norm.csv, confusion.pgm, and
    per_class.csv for one confusion matrix."""
    confusion = np.asarray(confusion, dtype=np.int64)
    k = confusion.shape[0]
    names = list(CLASS_NAMES) if k == len(CLASS_NAMES) else [
        f"class{i}" for i in range(k)]
    os.makedirs(outdir, exist_ok=True)
    paths = []

    def out(name):
        p = os.path.join(outdir, name)
        paths.append(p)
        return p

    with open(out("confusion_raw.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + names)
        for i, row in enumerate(confusion):
            w.writerow([names[i]] + [int(v) for v in row])

    row_sums = confusion.sum(axis=1, keepdims=True)
    norm = np.divide(confusion, row_sums, out=np.zeros_like(confusion,
                     dtype=np.float64), where=row_sums > 0)
    with open(out("confusion_norm.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + names)
        for i, row in enumerate(norm):
            w.writerow([names[i]] + [f"{v:.4f}" for v in row])

    _write_pgm(out("confusion.pgm"), norm)

    metrics = metrics_from_confusion(confusion)
    with open(out("per_class.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class_index", "class_name", "precision", "recall", "f1",
                    "support"])
        for i in range(k):
            w.writerow([i, names[i], f"{metrics.precision[i]:.4f}",
                        f"{metrics.recall[i]:.4f}", f"{metrics.f1[i]:.4f}",
                        int(confusion[i].sum())])
    return paths


def build_manifest(result: SweepResult) -> dict:
    """Flat manifest dict: config and hardware always, plus headline
    numbers for whatever sizes have finished (none for a fresh run)."""
    manifest = {"package_version": __version__}
    manifest.update(result.hardware)
    manifest["runs"] = result.config["runs"]
    manifest["sizes"] = result.config["sizes"]
    manifest["epochs"] = result.config["train"]["epochs"]
    manifest["seed"] = result.config["train"]["seed"]
    manifest["augmented"] = result.config.get("augment") is not None
    manifest["n_train"] = result.config["n_train"]
    manifest["n_eval"] = result.config["n_eval"]
    for s in result.sizes:
        manifest[f"acc_mean_{s.size}"] = float(_fmt_acc(s.acc_mean))
        manifest[f"acc_spread_{s.size}"] = float(_fmt_acc(s.acc_spread))
        manifest[f"speed_ips_{s.size}"] = float(_fmt_speed(s.speed_ips))
        manifest[f"forward_ips_{s.size}"] = float(_fmt_speed(s.forward_ips))
    return manifest


def write_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_pgm(path, norm, cell: int = 24):
    """Binary PGM (P5) heatmap: one cell x cell block per matrix entry,
    gray value round(fraction * 255)."""
    blocks = np.round(np.asarray(norm, dtype=np.float64) * 255.0)
    img = np.kron(blocks, np.ones((cell, cell))).astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + img.tobytes())
