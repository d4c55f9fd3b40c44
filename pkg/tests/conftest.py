"""Shared test helpers: synthetic image datasets with learnable classes."""

from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from mnv2bench.dataset import CLASS_NAMES

PARITY_DIR = Path(__file__).parent / "fixtures" / "parity"

# One well-separated base colour per class so even a tiny linear head
# can fit the synthetic data.
_PALETTE = np.array([
    [220, 40, 40], [40, 220, 40], [40, 40, 220], [220, 220, 40],
    [220, 40, 220], [40, 220, 220], [240, 140, 20], [120, 60, 200],
    [20, 120, 80], [160, 160, 160], [90, 40, 10],
], dtype=np.float64)


def class_image(label, rng, size=(48, 48)):
    """Noisy solid-colour image for a class; uint8 (h, w, 3)."""
    h, w = size
    base = _PALETTE[label % len(_PALETTE)]
    img = base + rng.normal(0, 18, (h, w, 3))
    return np.clip(img, 0, 255).astype(np.uint8)


def build_food_tree(root, counts, layout="dirs", seed=0, size=(48, 48),
                    ext=".jpg"):
    """Write a synthetic dataset tree.

    ``counts`` maps split name to a per-class list of image counts.
    ``layout="dirs"`` nests one directory per class; ``layout="flat"``
    writes ``<label>_<k><ext>`` files directly in the split directory.
    Returns the root as a Path.
    """
    rng = np.random.default_rng(seed)
    for split, per_class in counts.items():
        for label, n in enumerate(per_class):
            for k in range(n):
                img = class_image(label, rng, size)
                if layout == "dirs":
                    d = root / split / CLASS_NAMES[label]
                else:
                    d = root / split
                d.mkdir(parents=True, exist_ok=True)
                name = (f"img_{k:03d}{ext}" if layout == "dirs"
                        else f"{label}_{k}{ext}")
                Image.fromarray(img, "RGB").save(d / name)
    return root


@pytest.fixture
def tiny_counts():
    return {
        "training": [3, 2, 4, 2, 2, 3, 2, 2, 2, 3, 2],
        "validation": [1, 1, 2, 1, 1, 1, 1, 1, 1, 2, 1],
        "evaluation": [2, 1, 1, 1, 1, 2, 1, 1, 1, 1, 1],
    }


@pytest.fixture
def tiny_dataset(tmp_path, tiny_counts):
    return build_food_tree(tmp_path / "food", tiny_counts), tiny_counts


# Verdict lines registered by tests/test_acceptance.py, replayed as a
# block at the end of the run so they stay visible without -s.
ACCEPTANCE_REPORT: list = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_REPORT:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_REPORT:
            terminalreporter.write_line(line)
