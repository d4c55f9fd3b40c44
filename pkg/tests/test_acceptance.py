"""Release gate: one verdict line per shipping criterion.

Each test prints ``[PASS|FAIL|SKIP] <criterion>: <numbers>`` and the
lines are replayed in a summary block after the run (see conftest).
Tolerances are pinned here and nowhere else; a criterion that cannot
hold on this engine still runs at full strength and is allowed to go
red rather than being loosened.

Two checks need external inputs that cannot ship with the repo:

* ``MNV2_FOOD11_ROOT``   path to an extracted Food-11 dataset
* ``MNV2_PRETRAINED``    path to a backbone archive converted from
                         pretrained weights (see README)

Without them those tests skip, stating what to set.
"""

import math
import os
import time

import numpy as np
import pytest

from mnv2bench.archive import load_model, read_archive, write_archive
from mnv2bench.bench import BenchConfig, forward_throughput, set_threads
from mnv2bench.dataset import scan_dataset, stratified_subset, class_counts
from mnv2bench.model import (
    archive_plan,
    build_mobilenetv2,
    conv_specs,
    extract_features,
    forward,
    init_head,
    parameter_count,
)
from mnv2bench.reference import conv2d_naive, linear_naive
from mnv2bench.tensor import conv2d, global_avg_pool, linear
from mnv2bench.training import (
    TrainConfig,
    confusion_matrix,
    evaluate_head,
    head_gradients,
    lr_at,
    metrics_from_confusion,
    sgd_step,
    summarize,
)

from conftest import ACCEPTANCE_REPORT, PARITY_DIR

FOOD11_ENV = "MNV2_FOOD11_ROOT"
PRETRAINED_ENV = "MNV2_PRETRAINED"

# Expected totals for a pristine Food-11 tree.  The distribution's own
# accounts of the validation split disagree (3430 by per-class sum,
# 3439 in accompanying text), so either is accepted and the line says
# which one matched.
FOOD11_TRAIN_COUNTS = (994, 429, 1500, 986, 848, 1325, 440, 280, 855, 1500, 709)
FOOD11_TRAIN_TOTAL = 9866
FOOD11_EVAL_TOTAL = 3347
FOOD11_GRAND_TOTAL = 16643
FOOD11_VAL_TOTALS = (3430, 3439)

# Five-run accuracy lists per input size with the rounded mean and
# max-min disparity the summary arithmetic must reproduce.
REPEATED_RUNS = {
    32: ([59.81, 61.06, 59.71, 60.11, 60.18], 60.17, 1.35),
    64: ([77.86, 77.69, 77.96, 76.89, 76.91], 77.46, 1.07),
    128: ([87.78, 88.41, 88.12, 88.68, 88.02], 88.20, 0.90),
    256: ([92.98, 92.81, 93.05, 92.71, 93.29], 92.97, 0.58),
}


def _verdict(name: str, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    print(line)
    ACCEPTANCE_REPORT.append(line)
    assert ok, line


def _skip(name: str, reason: str):
    line = f"[SKIP] {name}: {reason}"
    print(line)
    ACCEPTANCE_REPORT.append(line)
    pytest.skip(reason)


def test_parameter_count():
    """Trainable parameter totals at 11 and 1000 classes."""
    want = {11: 2_237_963, 1000: 3_504_872}
    got = {k: parameter_count(k) for k in want}

    # independent tally from the archive layout: everything except the
    # batch-norm running statistics is trainable
    def from_plan(k):
        return sum(
            int(np.prod(shape))
            for name, shape in archive_plan(k).items()
            if not name.endswith((".bn_mean", ".bn_var"))
        )

    built = build_mobilenetv2(11)
    ok = (
        got == want
        and all(from_plan(k) == want[k] for k in want)
        and built.classifier_w.shape == (11, 1280)
    )
    _verdict(
        "parameter-count",
        ok,
        f"11 classes: {got[11]:,} (want {want[11]:,}); "
        f"1000 classes: {got[1000]:,} (want {want[1000]:,})",
    )


def test_kernel_oracles():
    """Fast kernels vs naive loop references over randomized shapes
    drawn from the layer table; >= 200 cases in under a minute."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(20260819)
    stem, blocks, head = conv_specs()
    specs = [stem] + [s for _, _, units in blocks for s in units] + [head]

    def rel(a, b):
        scale = max(float(np.abs(b).max()), 1e-12)
        return float(np.abs(a - b).max()) / scale

    worst, cases = 0.0, 0
    for rep in range(4):
        for spec in specs:
            n = int(rng.integers(1, 3))
            h = int(rng.integers(spec.kernel, 8))
            wd = int(rng.integers(spec.kernel, 8))
            x = rng.uniform(-1, 1, (n, spec.cin, h, wd)).astype(np.float32)
            k = rng.uniform(-0.5, 0.5, spec.weight_shape).astype(np.float32)
            bias = (rng.uniform(-0.5, 0.5, spec.cout).astype(np.float32)
                    if rep % 2 else None)
            got = conv2d(x, k, bias, stride=spec.stride,
                         padding=spec.kernel // 2, groups=spec.groups)
            ref = conv2d_naive(x, k, bias, stride=spec.stride,
                               padding=spec.kernel // 2, groups=spec.groups)
            worst = max(worst, rel(got, ref))
            cases += 1

    # classifier shapes; one full-width case, the rest 11-way
    for dout in (11, 11, 11, 11, 11, 11, 11, 1000):
        n = int(rng.integers(1, 4))
        x = rng.uniform(-1, 1, (n, 1280)).astype(np.float32)
        w = rng.uniform(-0.05, 0.05, (dout, 1280)).astype(np.float32)
        b = rng.uniform(-0.05, 0.05, dout).astype(np.float32)
        worst = max(worst, rel(linear(x, w, b), linear_naive(x, w, b)))
        cases += 1

    # pooling at feature widths from the table
    for c in (32, 96, 320, 1280, 1280, 160, 64, 24):
        n = int(rng.integers(1, 3))
        h = int(rng.integers(2, 8))
        x = rng.uniform(-3, 3, (n, c, h, h)).astype(np.float32)
        ref = np.empty((n, c), dtype=np.float64)
        for i in range(n):
            for ch in range(c):
                acc = 0.0
                for r in range(h):
                    for col in range(h):
                        acc += float(x[i, ch, r, col])
                ref[i, ch] = acc / (h * h)
        pooled = global_avg_pool(x).reshape(n, c)  # (n, c, 1, 1) on the way out
        worst = max(worst, rel(pooled, ref.astype(np.float32)))
        cases += 1

    dt = time.perf_counter() - t0
    ok = worst <= 1e-5 and cases >= 200 and dt < 60.0
    _verdict(
        "kernel-oracles",
        ok,
        f"{cases} cases, max rel err {worst:.2e} (tol 1e-5), {dt:.1f}s",
    )


def test_head_gradient_check():
    """Analytic classifier gradient vs central finite differences of an
    independently written float64 cross-entropy, 50 random instances."""

    def loss64(feats, labels, w, b):
        z = feats @ w.T + b
        z = z - z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        return float(np.mean(lse - z[np.arange(len(labels)), labels]))

    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 13))
        k, d = 11, 1280
        feats = rng.normal(0, 1, (n, d)).astype(np.float32)
        labels = rng.integers(0, k, n)
        w = rng.uniform(-1, 1, (k, d)).astype(np.float32) / np.sqrt(d)
        b = rng.uniform(-0.01, 0.01, k).astype(np.float32)
        _, gw, gb = head_gradients(feats, labels, w, b)

        f64, w64, b64 = feats.astype(np.float64), w.astype(np.float64), b.astype(np.float64)
        eps = 1e-5
        probes = [(gw, w64, (int(rng.integers(k)), int(rng.integers(d))))
                  for _ in range(6)]
        probes += [(gb, b64, (int(rng.integers(k)),)) for _ in range(2)]
        for grad, theta, idx in probes:
            orig = theta[idx]
            theta[idx] = orig + eps
            hi = loss64(f64, labels, w64, b64)
            theta[idx] = orig - eps
            lo = loss64(f64, labels, w64, b64)
            theta[idx] = orig
            fd = (hi - lo) / (2 * eps)
            g = float(grad[idx])
            worst = max(worst, abs(g - fd) / max(abs(g) + abs(fd), 1e-6))

    ok = worst <= 1e-4
    _verdict(
        "head-gradient-check",
        ok,
        f"50 instances x 8 probed coordinates, max rel err {worst:.1e} (tol 1e-4)",
    )


def test_optimizer_arithmetic():
    """Hand-worked single-step updates and the stepped learning-rate
    schedule at its boundaries."""
    p = np.array([1.0])
    v = np.zeros(1)
    sgd_step(p, np.array([1.0]), v, lr=0.1, momentum=0.9, nesterov=True)
    nes = float(p[0])  # 1 - 0.1 * (1 + 0.9 * 1) = 0.81

    p = np.array([1.0])
    v = np.zeros(1)
    sgd_step(p, np.array([1.0]), v, lr=0.1, momentum=0.9, nesterov=False)
    plain = float(p[0])  # 1 - 0.1 * 1 = 0.90

    cfg = TrainConfig()
    sched = [lr_at(e, cfg) for e in (0, 9, 10, 19, 20, 29)]
    want = [1e-3, 1e-3, 1e-4, 1e-4, 1e-5, 1e-5]
    sched_ok = all(
        math.isclose(a, b, rel_tol=1e-9) for a, b in zip(sched, want)
    )

    ok = abs(nes - 0.81) < 1e-6 and abs(plain - 0.90) < 1e-6 and sched_ok
    _verdict(
        "optimizer-arithmetic",
        ok,
        f"nesterov step gives {nes:.8f} (want 0.81), plain momentum "
        f"{plain:.8f} (want 0.90), lr at epochs 0/9/10/19/20/29 = "
        + "/".join(f"{s:.0e}" for s in sched),
    )


def test_repeated_run_arithmetic():
    """Mean and max-min disparity over stored five-run accuracy lists
    reproduce the rounded figures to within 0.005."""
    rows = []
    ok = True
    for size, (values, want_mean, want_spread) in REPEATED_RUNS.items():
        s = summarize(values)
        ok = ok and abs(s.mean - want_mean) <= 0.005
        ok = ok and abs(s.spread - want_spread) <= 0.005
        rows.append(f"{size}: {s.mean:.3f}/{s.spread:.2f}")
    _verdict(
        "repeated-run-arithmetic",
        ok,
        "mean/disparity " + ", ".join(rows) + " (tol 0.005)",
    )


def test_accuracy_trend_over_input_size():
    """Head-only training on a 10% stratified subset: mean accuracy
    must rise strictly with input size and the 64 to 128 gain must
    exceed the 128 to 256 gain.  Needs the real dataset and a
    pretrained backbone, so this skips unless both are supplied."""
    root = os.environ.get(FOOD11_ENV)
    weights = os.environ.get(PRETRAINED_ENV)
    if not root:
        _skip("accuracy-trend", f"set {FOOD11_ENV} to a Food-11 root to run")
    if not weights:
        _skip("accuracy-trend",
              f"set {PRETRAINED_ENV} to a converted backbone archive to run")

    from mnv2bench.bench import run_resolution_sweep

    model = load_model(weights, num_classes=11)
    res = scan_dataset(root)
    subsets = {
        split: stratified_subset(res.by_split(split), 0.10, seed=0)
        for split in ("training", "validation", "evaluation")
    }
    sweep = run_resolution_sweep(
        model,
        subsets["training"],
        subsets["validation"],
        subsets["evaluation"],
        bench_cfg=BenchConfig(sizes=(32, 64, 128, 256), runs=3),
        train_cfg=TrainConfig(),
    )
    means = {r.size: float(np.mean(r.accuracies)) for r in sweep.sizes}
    rising = (means[32] < means[64] < means[128] < means[256])
    gains_taper = (means[128] - means[64]) > (means[256] - means[128])
    _verdict(
        "accuracy-trend",
        rising and gains_taper,
        "mean acc over 3 runs at 32/64/128/256: "
        + "/".join(f"{means[s]:.2f}" for s in (32, 64, 128, 256))
        + f"; gain 64-128 {means[128] - means[64]:.2f} vs "
        f"128-256 {means[256] - means[128]:.2f}",
    )


def test_throughput_ordering():
    """Forward images/second must fall strictly with input size AND the
    absolute drop from 128 to 256 must exceed the drop from 64 to 128.

    The second clause contradicts how a compute-bound engine scales
    (per-image cost grows with the pixel count, so the rate curve
    flattens at large sizes and absolute drops shrink); it is kept at
    full strength anyway and this line is expected to go red.  The
    drop measured relative to the preceding rate does widen.
    """
    set_threads(None)
    model = build_mobilenetv2(11, seed=3)
    rates = {}
    for size, batch in ((32, 8), (64, 8), (128, 4), (256, 2)):
        rates[size] = forward_throughput(model, size, batch=batch,
                                         warmup=1, iters=3)
    decreasing = rates[32] > rates[64] > rates[128] > rates[256]
    drop_mid = rates[64] - rates[128]
    drop_high = rates[128] - rates[256]
    rel_mid = drop_mid / rates[64]
    rel_high = drop_high / rates[128]
    _verdict(
        "throughput-ordering",
        decreasing and drop_high > drop_mid,
        "img/s at 32/64/128/256: "
        + "/".join(f"{rates[s]:.1f}" for s in (32, 64, 128, 256))
        + f"; monotone decreasing: {decreasing}; absolute drop 64 to 128 "
        f"{drop_mid:.1f} vs 128 to 256 {drop_high:.1f} (relative: "
        f"{rel_mid:.0%} vs {rel_high:.0%})",
    )


def test_untrained_head_chance():
    """A freshly initialised 11-way head on a balanced sample scores
    chance accuracy, 0.09 +/- 0.03."""
    model = build_mobilenetv2(11, seed=5)
    rng = np.random.default_rng(11)
    labels = np.repeat(np.arange(11), 60)  # 660 images, balanced
    x = rng.uniform(-1, 1, (len(labels), 3, 32, 32)).astype(np.float32)
    feats = np.concatenate(
        [extract_features(model, x[i : i + 128])
         for i in range(0, len(labels), 128)]
    )
    w, b = init_head(11, seed=123)
    acc = evaluate_head(feats, labels, w, b, 11).accuracy
    ok = abs(acc - 0.09) <= 0.03
    _verdict(
        "untrained-head-chance",
        ok,
        f"accuracy {acc:.4f} on 660 balanced samples (want 0.09 +/- 0.03)",
    )


def test_confusion_identities():
    """Row-normalised confusion rows sum to one and accuracy equals the
    count-weighted diagonal exactly."""
    rng = np.random.default_rng(7)
    y_true = np.repeat(np.arange(11), 40)
    rng.shuffle(y_true)
    y_pred = y_true.copy()
    flip = rng.random(y_true.shape) < 0.35
    y_pred[flip] = rng.integers(0, 11, int(flip.sum()))

    m = confusion_matrix(y_true, y_pred, 11)
    rows = m / m.sum(axis=1, keepdims=True)
    row_err = float(np.abs(rows.sum(axis=1) - 1.0).max())
    met = metrics_from_confusion(m)
    diag_acc = float(np.trace(m)) / float(m.sum())
    direct_acc = float((y_true == y_pred).mean())

    ok = (row_err <= 1e-9 and met.accuracy == diag_acc
          and met.accuracy == direct_acc and int(m.sum()) == len(y_true))
    _verdict(
        "confusion-identities",
        ok,
        f"max row-sum error {row_err:.1e} (tol 1e-9); accuracy "
        f"{met.accuracy:.6f} equals diagonal and direct count: "
        f"{met.accuracy == diag_acc == direct_acc}",
    )


def test_dataset_counts():
    """Scan of a pristine Food-11 tree reports the expected split and
    per-class totals.  Skips unless the dataset is supplied."""
    root = os.environ.get(FOOD11_ENV)
    if not root:
        _skip("dataset-counts", f"set {FOOD11_ENV} to a Food-11 root to run")

    res = scan_dataset(root)
    train = res.by_split("training")
    val = res.by_split("validation")
    ev = res.by_split("evaluation")
    per_class = tuple(int(c) for c in class_counts(train)["training"])

    val_note = (f"validation {len(val)} matches a circulated total"
                if len(val) in FOOD11_VAL_TOTALS
                else f"validation {len(val)} matches neither 3430 nor 3439")
    ok = (
        len(train) == FOOD11_TRAIN_TOTAL
        and len(ev) == FOOD11_EVAL_TOTAL
        and len(res.records) == FOOD11_GRAND_TOTAL
        and per_class == FOOD11_TRAIN_COUNTS
        and len(val) in FOOD11_VAL_TOTALS
    )
    _verdict(
        "dataset-counts",
        ok,
        f"training {len(train)} (want {FOOD11_TRAIN_TOTAL}), evaluation "
        f"{len(ev)} (want {FOOD11_EVAL_TOTAL}), total {len(res.records)} "
        f"(want {FOOD11_GRAND_TOTAL}); {val_note}; per-class training "
        f"counts match: {per_class == FOOD11_TRAIN_COUNTS}",
    )


@pytest.mark.skipif(not (PARITY_DIR / "fixtures.mnv2").exists(),
                    reason="parity fixtures not present")
def test_cross_runtime_parity():
    """Engine output against fixtures computed by the exporter's
    double-precision unfused reference, at 64 and 224 pixels."""
    model = load_model(PARITY_DIR / "model.mnv2")
    fx = read_archive(PARITY_DIR / "fixtures.mnv2")
    gaps = {}
    for size in (64, 224):
        x = fx[f"s{size}.input"][None]
        feat_gap = float(np.abs(extract_features(model, x)[0]
                                - fx[f"s{size}.features"]).max())
        logit_gap = float(np.abs(forward(model, x)[0]
                                 - fx[f"s{size}.logits"]).max())
        gaps[size] = (feat_gap, logit_gap)
    worst = max(g for pair in gaps.values() for g in pair)
    ok = worst <= 1e-3
    _verdict(
        "cross-runtime-parity",
        ok,
        "max abs gap (features/logits) "
        + ", ".join(f"{s}: {f:.1e}/{l:.1e}" for s, (f, l) in gaps.items())
        + " (tol 1e-3)",
    )


@pytest.mark.skipif(not (PARITY_DIR / "model.mnv2").exists(),
                    reason="parity fixtures not present")
def test_archive_round_trip(tmp_path):
    """An exported archive validates against the closed-world layout
    and rewriting its tensors reproduces the file byte for byte."""
    src = PARITY_DIR / "model.mnv2"
    model = load_model(src)  # rejects unknown/missing/misshapen tensors
    tensors = read_archive(src)
    out = tmp_path / "roundtrip.mnv2"
    write_archive(out, tensors)
    identical = out.read_bytes() == src.read_bytes()
    ok = identical and model.num_classes == 11
    _verdict(
        "archive-round-trip",
        ok,
        f"closed-world load ok ({len(tensors)} tensors), rewrite "
        f"byte-identical: {identical}",
    )
