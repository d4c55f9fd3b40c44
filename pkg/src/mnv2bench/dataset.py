"""Food-11 dataset discovery, statistics, and subsetting.

The class list lives in ``data/food11_classes.json``; index positions
are the label ids and match the numeric ids used by the original
distribution's file names.

Two on-disk layouts are recognised, per split directory:

* flat files named ``<classid>_<n>.<ext>`` (the original distribution)
* one subdirectory per class, matched by normalised name (re-uploads
  commonly use ``training/Bread/...``); directory names are compared
  ignoring case, spaces, underscores, hyphens, and slashes, so
  ``Dairy product`` and ``Dairy_Product`` both resolve

Anything that cannot be attributed to a class is skipped and
accounted for with a reason rather than silently dropped.
"""

from __future__ import annotations

import csv
import hashlib
import json
import re
from collections import defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .pipeline import load_rgb8, rng_for

__all__ = [
    "CLASS_NAMES",
    "SPLITS",
    "NUM_CLASSES",
    "ImageRecord",
    "ScanResult",
    "normalize_class_name",
    "scan_dataset",
    "class_counts",
    "split_percentages",
    "write_stats_csv",
    "stratified_subset",
    "find_duplicates",
]


def _load_meta():
    with resources.files("mnv2bench.data").joinpath(
            "food11_classes.json").open("r", encoding="utf-8") as fh:
        return json.load(fh)


_META = _load_meta()
CLASS_NAMES = tuple(_META["classes"])
SPLITS = tuple(_META["splits"])
NUM_CLASSES = len(CLASS_NAMES)

_IMAGE_EXTS = {".jpg", ".jpeg", ".png", ".bmp", ".webp", ".gif"}
_PREFIX_RE = re.compile(r"^(\d+)_")


def normalize_class_name(name: str) -> str:
    """Canonical comparison key for a class or directory name."""
    return re.sub(r"[\s_\-/]+", "", name).lower()


_NAME_TO_LABEL = {normalize_class_name(n): i for i, n in enumerate(CLASS_NAMES)}


@dataclass(frozen=True, order=True)
class ImageRecord:
    split: str
    label: int
    path: Path

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.label]


@dataclass
class ScanResult:
    root: Path
    records: list[ImageRecord] = field(default_factory=list)
    skipped: list[tuple[Path, str]] = field(default_factory=list)

    def by_split(self, split: str):
        return [r for r in self.records if r.split == split]


def _label_for_dir(dirname: str):
    if dirname.isdigit():
        label = int(dirname)
        return label if 0 <= label < NUM_CLASSES else None
    return _NAME_TO_LABEL.get(normalize_class_name(dirname))


def _label_for_file(filename: str):
    m = _PREFIX_RE.match(filename)
    if not m:
        return None
    label = int(m.group(1))
    return label if 0 <= label < NUM_CLASSES else None


def scan_dataset(root, splits=SPLITS, verify: bool = False) -> ScanResult:
    """Walk the dataset rooted at ``root`` and label every image.

    With ``verify=True`` every image is decoded; files that fail to
    decode move to the skipped list instead of raising later.  Records
    are returned in a deterministic order: split (as requested), label,
    then path name.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    missing = [s for s in splits if not (root / s).is_dir()]
    if missing:
        raise FileNotFoundError(
            f"missing split directories under {root}: {', '.join(missing)}")

    result = ScanResult(root)
    for split in splits:
        split_dir = root / split
        class_dirs = sorted(p for p in split_dir.iterdir() if p.is_dir())
        if class_dirs:
            for cdir in class_dirs:
                label = _label_for_dir(cdir.name)
                for path in sorted(cdir.iterdir()):
                    if not path.is_file():
                        continue
                    if label is None:
                        result.skipped.append(
                            (path, f"unknown class directory {cdir.name!r}"))
                    else:
                        _add(result, path, split, label, verify)
            for path in sorted(p for p in split_dir.iterdir() if p.is_file()):
                result.skipped.append((path, "file outside class directory"))
        else:
            for path in sorted(p for p in split_dir.iterdir() if p.is_file()):
                label = _label_for_file(path.name)
                if label is None:
                    result.skipped.append(
                        (path, "no recognisable class prefix"))
                else:
                    _add(result, path, split, label, verify)

    order = {s: i for i, s in enumerate(splits)}
    result.records.sort(key=lambda r: (order[r.split], r.label, r.path.name))
    return result


def _add(result: ScanResult, path: Path, split: str, label: int, verify: bool):
    if path.name.startswith("."):
        result.skipped.append((path, "hidden file"))
        return
    if path.suffix.lower() not in _IMAGE_EXTS:
        result.skipped.append((path, f"unrecognised extension {path.suffix!r}"))
        return
    if verify:
        try:
            load_rgb8(path)
        except Exception as exc:  # decode failures become skips
            result.skipped.append((path, f"decode error: {exc}"))
            return
    result.records.append(ImageRecord(split, label, path))


def class_counts(records):
    """Per-split label histograms: {split: int array of len NUM_CLASSES}."""
    counts = defaultdict(lambda: np.zeros(NUM_CLASSES, dtype=np.int64))
    for r in records:
        counts[r.split][r.label] += 1
    return dict(counts)


def split_percentages(counts):
    """Class shares within each split, in percent."""
    out = {}
    for split, arr in counts.items():
        total = arr.sum()
        out[split] = (arr / total * 100.0) if total else arr.astype(np.float64)
    return out


def write_stats_csv(path, result: ScanResult) -> None:
    """Per-split, per-class counts and shares as CSV."""
    counts = class_counts(result.records)
    pct = split_percentages(counts)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split", "class_index", "class_name", "count",
                         "percent"])
        for split in counts:
            for i, name in enumerate(CLASS_NAMES):
                writer.writerow([split, i, name, int(counts[split][i]),
                                 f"{pct[split][i]:.2f}"])
            writer.writerow([split, "", "total", int(counts[split].sum()),
                             "100.00"])


def stratified_subset(records, fraction: float, seed) -> list:
    """Deterministic per-(split, class) sample of about ``fraction`` of
    the records.

    Every non-empty (split, class) cell keeps at least one record;
    ``fraction=1`` returns everything.  Sampling is without replacement
    with an independent stream per cell, so the subset for a given seed
    does not depend on other cells' sizes.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return list(records)
    cells = defaultdict(list)
    for r in records:
        cells[(r.split, r.label)].append(r)
    split_ids = {s: i for i, s in enumerate(SPLITS)}
    out = []
    for (split, label), rows in cells.items():
        rows.sort()
        k = max(1, int(round(fraction * len(rows))))
        if k >= len(rows):
            out.extend(rows)
            continue
        rng = rng_for(seed, split_ids.get(split, 99), label)
        idx = rng.choice(len(rows), size=k, replace=False)
        out.extend(rows[i] for i in sorted(idx))
    out.sort(key=lambda r: (split_ids.get(r.split, 99), r.label, r.path.name))
    return out


def find_duplicates(records, across_splits_only: bool = True):
    """Group records whose file contents hash identically.

    Returns a list of record groups; with ``across_splits_only`` only
    groups spanning more than one split are reported (the case that
    invalidates a train/test separation).
    """
    by_hash = defaultdict(list)
    for r in records:
        digest = hashlib.sha256(Path(r.path).read_bytes()).hexdigest()
        by_hash[digest].append(r)
    groups = []
    for rows in by_hash.values():
        if len(rows) < 2:
            continue
        if across_splits_only and len({r.split for r in rows}) < 2:
            continue
        groups.append(sorted(rows))
    groups.sort(key=lambda g: g[0].path.name)
    return groups
