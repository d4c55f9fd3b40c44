"""Head training, evaluation, metrics, and repeated-run summaries.

The backbone stays frozen throughout: training fits only the final
linear classifier on pooled backbone features, with SGD (momentum,
optional Nesterov, decoupled-from-nothing plain L2 weight decay folded
into the gradient) and a step learning-rate schedule.

Epoch numbering: the schedule is 0-based over training epochs, so the
first training epoch uses ``lr_at(0)``.  Result curves carry one extra
leading row for epoch 0, the untouched fresh head evaluated before any
update, with lr recorded as 0.0.

Determinism: given a seed, runs are bit-reproducible.  The shuffle
stream for epoch e is ``rng_for(seed, e)`` and the augmentation stream
for image i in epoch e is ``rng_for(seed, e, i)``, where i is the
image's index in the (stable) training record order, not its position
in the shuffled batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    Model,
    backbone_fingerprint,
    classify_features,
    extract_features,
    init_head,
)
from .pipeline import (
    AugmentConfig,
    PreprocConfig,
    augment,
    load_rgb8,
    preprocess,
    rng_for,
)
from .tensor import softmax, softmax_xent

__all__ = [
    "TrainConfig",
    "EpochStats",
    "Metrics",
    "RunResult",
    "RunSummary",
    "lr_at",
    "sgd_step",
    "head_gradients",
    "confusion_matrix",
    "metrics_from_confusion",
    "FeatureCache",
    "compute_features",
    "labels_of",
    "evaluate",
    "evaluate_head",
    "train_head",
    "run_seed",
    "summarize",
]


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    momentum: float = 0.9
    nesterov: bool = True
    weight_decay: float = 1e-4
    epochs: int = 30
    lr_step: int = 10
    lr_gamma: float = 0.1
    batch_train: int = 64
    batch_val: int = 128
    batch_eval: int = 128
    seed: int = 0


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step schedule: lr0 * gamma^(epoch // step), epoch 0-based."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    return cfg.lr0 * cfg.lr_gamma ** (epoch // cfg.lr_step)


def sgd_step(param, grad, velocity, *, lr, momentum=0.0, nesterov=False,
             weight_decay=0.0):
    """One SGD update, in place on ``param`` and ``velocity``.

    g = grad + weight_decay * param
    v = momentum * v + g
    param -= lr * (g + momentum * v)   if nesterov
    param -= lr * v                    otherwise
    """
    if nesterov and momentum == 0.0:
        raise ValueError("nesterov momentum requires momentum > 0")
    g = grad + np.float32(weight_decay) * param
    velocity *= np.float32(momentum)
    velocity += g
    if nesterov:
        param -= np.float32(lr) * (g + np.float32(momentum) * velocity)
    else:
        param -= np.float32(lr) * velocity


def head_gradients(feats, labels, w, b):
    """Loss and classifier gradients for one batch of pooled features."""
    logits = feats @ w.T + b
    loss, glogits = softmax_xent(logits, labels)
    gw = glogits.T @ feats
    gb = glogits.sum(axis=0)
    return loss, gw.astype(np.float32), gb.astype(np.float32)


def confusion_matrix(y_true, y_pred, num_classes: int):
    """Counts with true labels in rows, predictions in columns."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("label arrays must be 1-D and equal length")
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (y_true, y_pred), 1)
    return m


@dataclass
class Metrics:
    n: int
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float
    confusion: np.ndarray
    loss: float | None = None


def metrics_from_confusion(confusion, loss=None) -> Metrics:
    confusion = np.asarray(confusion, dtype=np.int64)
    n = int(confusion.sum())
    diag = np.diag(confusion).astype(np.float64)
    col = confusion.sum(axis=0).astype(np.float64)
    row = confusion.sum(axis=1).astype(np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, diag / col, 0.0)
        recall = np.where(row > 0, diag / row, 0.0)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / denom, 0.0)
    accuracy = float(diag.sum() / n) if n else 0.0
    return Metrics(n, accuracy, precision, recall, f1, float(f1.mean()),
                   confusion, loss)


def labels_of(records):
    return np.array([r.label for r in records], dtype=np.int64)


def compute_features(model: Model, images, cfg: PreprocConfig,
                     batch: int = 128):
    """Backbone features for decoded images, batched: (n, 1280) float32."""
    chunks = []
    for i in range(0, len(images), batch):
        x = np.stack([preprocess(img, cfg) for img in images[i : i + batch]])
        chunks.append(extract_features(model, x))
    return np.concatenate(chunks) if chunks else np.zeros((0, 1280), np.float32)


class FeatureCache:
    """Memoises deterministic (un-augmented) backbone features.

    Keyed by backbone fingerprint, preprocessing size and stats, and
    record path, so a changed model or resolution never reuses stale
    rows.  Holding a cache is purely an optimisation: results are
    identical with or without one.  Files are assumed not to change on
    disk during the process lifetime.
    """

    def __init__(self):
        self._store = {}
        self.hits = 0
        self.misses = 0

    def features(self, model: Model, records, cfg: PreprocConfig,
                 batch: int = 128):
        key = (backbone_fingerprint(model), cfg.size, tuple(cfg.mean),
               tuple(cfg.std))
        per_path = self._store.setdefault(key, {})
        missing = [r for r in records if str(r.path) not in per_path]
        self.hits += len(records) - len(missing)
        self.misses += len(missing)
        if missing:
            images = [load_rgb8(r.path) for r in missing]
            feats = compute_features(model, images, cfg, batch)
            for r, f in zip(missing, feats):
                per_path[str(r.path)] = f
        return np.stack([per_path[str(r.path)] for r in records])


def _record_features(model, records, cfg, batch, cache):
    if cache is not None:
        return cache.features(model, records, cfg, batch)
    images = [load_rgb8(r.path) for r in records]
    return compute_features(model, images, cfg, batch)


def evaluate_head(feats, labels, w, b, num_classes: int) -> Metrics:
    """Metrics of a classifier (w, b) on precomputed features."""
    logits = feats @ w.T + b
    loss, _ = softmax_xent(logits, labels)
    y_pred = np.argmax(logits, axis=1)  # ties resolve to the lowest index
    m = confusion_matrix(labels, y_pred, num_classes)
    return metrics_from_confusion(m, loss)


@dataclass
class EvalResult:
    metrics: Metrics
    y_true: np.ndarray
    y_pred: np.ndarray
    probs: np.ndarray


def evaluate(model: Model, records, cfg: PreprocConfig,
             batch: int = 128, cache: FeatureCache | None = None) -> EvalResult:
    """Run the full deterministic evaluation path over records."""
    if not records:
        raise ValueError("no records to evaluate")
    feats = _record_features(model, records, cfg, batch, cache)
    labels = labels_of(records)
    logits = classify_features(model, feats)
    loss, _ = softmax_xent(logits, labels)
    probs = softmax(logits)
    y_pred = np.argmax(logits, axis=1)
    m = confusion_matrix(labels, y_pred, model.num_classes)
    return EvalResult(metrics_from_confusion(m, loss), labels, y_pred, probs)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class RunResult:
    seed: int
    head_w: np.ndarray
    head_b: np.ndarray
    curve: list[EpochStats] = field(default_factory=list)

    @property
    def final_val_acc(self) -> float:
        return self.curve[-1].val_acc


def _sgd_epoch(w, b, vw, vb, feats, labels, order, lr, cfg: TrainConfig):
    """One pass of minibatch SGD over ``order``; returns (loss, acc)
    aggregated over the epoch, measured before each update."""
    total_loss = 0.0
    total_correct = 0
    for i in range(0, len(order), cfg.batch_train):
        idx = order[i : i + cfg.batch_train]
        fb, lb = feats[idx], labels[idx]
        logits = fb @ w.T + b
        loss, glogits = softmax_xent(logits, lb)
        total_loss += loss * len(idx)
        total_correct += int((np.argmax(logits, axis=1) == lb).sum())
        gw = (glogits.T @ fb).astype(np.float32)
        gb = glogits.sum(axis=0).astype(np.float32)
        sgd_step(w, gw, vw, lr=lr, momentum=cfg.momentum,
                 nesterov=cfg.nesterov, weight_decay=cfg.weight_decay)
        sgd_step(b, gb, vb, lr=lr, momentum=cfg.momentum,
                 nesterov=cfg.nesterov, weight_decay=cfg.weight_decay)
    n = len(order)
    return total_loss / n, total_correct / n


def train_head(model: Model, train_records, val_records, *,
               train_cfg: TrainConfig = TrainConfig(),
               preproc_cfg: PreprocConfig = PreprocConfig(),
               aug_cfg: AugmentConfig | None = None,
               cache: FeatureCache | None = None,
               progress=None) -> RunResult:
    """Fit a fresh classifier head on frozen backbone features.

    The model itself is never modified; the trained parameters come
    back in the :class:`RunResult`.  Without augmentation the training
    features are deterministic and benefit from the cache; with
    augmentation they are re-extracted every epoch from freshly
    augmented images.
    """
    if not train_records or not val_records:
        raise ValueError("need non-empty training and validation records")
    cfg = train_cfg
    k = model.num_classes
    w, b = init_head(k, cfg.seed)
    vw = np.zeros_like(w)
    vb = np.zeros_like(b)
    train_labels = labels_of(train_records)
    val_labels = labels_of(val_records)

    val_feats = _record_features(model, val_records, preproc_cfg,
                                 cfg.batch_val, cache)
    plain_train_feats = None
    if aug_cfg is None:
        plain_train_feats = _record_features(model, train_records, preproc_cfg,
                                             cfg.batch_train, cache)

    curve = []
    m0_train = evaluate_head(
        plain_train_feats if plain_train_feats is not None else
        _record_features(model, train_records, preproc_cfg, cfg.batch_train,
                         cache),
        train_labels, w, b, k)
    m0_val = evaluate_head(val_feats, val_labels, w, b, k)
    curve.append(EpochStats(0, 0.0, m0_train.loss, m0_train.accuracy,
                            m0_val.loss, m0_val.accuracy))
    if progress:
        progress(curve[-1])

    for epoch in range(1, cfg.epochs + 1):
        lr = lr_at(epoch - 1, cfg)
        if aug_cfg is None:
            feats = plain_train_feats
        else:
            images = []
            for i, rec in enumerate(train_records):
                img = load_rgb8(rec.path)
                images.append(augment(img, rng_for(cfg.seed, epoch, i), aug_cfg))
            feats = compute_features(model, images, preproc_cfg,
                                     cfg.batch_train)
        order = rng_for(cfg.seed, epoch).permutation(len(train_records))
        train_loss, train_acc = _sgd_epoch(w, b, vw, vb, feats, train_labels,
                                           order, lr, cfg)
        mv = evaluate_head(val_feats, val_labels, w, b, k)
        curve.append(EpochStats(epoch, lr, train_loss, train_acc,
                                mv.loss, mv.accuracy))
        if progress:
            progress(curve[-1])

    return RunResult(cfg.seed, w, b, curve)


def run_seed(base_seed: int, run_index: int) -> int:
    """Derived seed for repeated run ``run_index`` of a base seed."""
    return int(np.random.SeedSequence([int(base_seed),
                                       int(run_index)]).generate_state(1)[0])


@dataclass
class RunSummary:
    values: list
    mean: float
    spread: float  # max - min across runs


def summarize(values) -> RunSummary:
    values = [float(v) for v in values]
    if not values:
        raise ValueError("no values to summarise")
    return RunSummary(values, float(np.mean(values)),
                      float(max(values) - min(values)))
