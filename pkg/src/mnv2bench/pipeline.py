"""Image decoding, geometry, normalisation, and training augmentations.

Images travel through this module as uint8 arrays of shape (h, w, 3) in
RGB channel order.  The resize and normalise steps define the exact
arithmetic other implementations must reproduce, so their expression
order is frozen and documented; all internal math is float64 with a
single round-half-up conversion back to uint8.

Resize (bilinear, half-pixel centres):

* source coordinate: ``src = (dst + 0.5) * (in_size / out_size) - 0.5``,
  clamped below at 0; the second sample index is edge-clamped
* interpolation, in exactly this order::

      (1-fy) * ((1-fx)*a + fx*b) + fy * ((1-fx)*c + fx*d)

  with a = (y0, x0), b = (y0, x1), c = (y1, x0), d = (y1, x1)
* rounding: ``floor(v + 0.5)``, clipped to [0, 255]

Normalise: ``(p / 255 - mean) / std`` per channel in float64, cast to
float32, channels reordered R, G, B -> 0, 1, 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from PIL import Image

__all__ = [
    "IMAGENET_MEAN",
    "IMAGENET_STD",
    "PreprocConfig",
    "AugmentConfig",
    "load_rgb8",
    "resize_bilinear",
    "to_tensor_normalize",
    "preprocess",
    "preprocess_batch",
    "rotate_image",
    "color_jitter",
    "augment",
    "rng_for",
    "channel_stats",
]

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class PreprocConfig:
    """Deterministic evaluation-time preprocessing."""

    size: int = 224
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD


@dataclass(frozen=True)
class AugmentConfig:
    """Training-time augmentation parameters.

    :func:`augment` applies rotation, horizontal flip, colour jitter,
    and random erase in that order.
    """

    rotation_deg: float = 15.0
    flip_prob: float = 0.5
    brightness: tuple = (0.8, 1.2)
    contrast: tuple = (0.8, 1.2)
    saturation: tuple = (0.8, 1.2)
    erase_prob: float = 0.25
    erase_area: tuple = (0.02, 0.10)
    erase_aspect: tuple = (0.3, 3.3)


def _check_rgb8(img, what="image"):
    img = np.asarray(img)
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(
            f"{what} must be uint8 with shape (h, w, 3), got "
            f"{img.dtype} {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{what} must be non-empty")
    return img


def _round_u8(x):
    # Round half away from zero is never needed here; values are >= 0,
    # so floor(v + 0.5) is plain round-half-up.
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def load_rgb8(path):
    """Decode an image file to uint8 RGB (h, w, 3)."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.uint8)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"{path}: decoded to unexpected shape {arr.shape}")
    return arr


def resize_bilinear(img, out_h, out_w=None):
    """Bilinear resize with half-pixel centre alignment.

    See the module docstring for the frozen arithmetic.  A square size
    can be given as a single int.
    """
    img = _check_rgb8(img)
    if out_w is None:
        out_w = out_h
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    h, w = img.shape[:2]
    if (out_h, out_w) == (h, w):
        return img.copy()

    x = img.astype(np.float64)
    yc = np.maximum((np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5,
                    0.0)
    xc = np.maximum((np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5,
                    0.0)
    y0 = np.minimum(yc.astype(np.int64), h - 1)
    x0 = np.minimum(xc.astype(np.int64), w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (yc - y0)[:, None, None]
    fx = (xc - x0)[None, :, None]

    a = x[np.ix_(y0, x0)]
    b = x[np.ix_(y0, x1)]
    c = x[np.ix_(y1, x0)]
    d = x[np.ix_(y1, x1)]
    out = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)
    return _round_u8(out)


def to_tensor_normalize(img, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    """uint8 (h, w, 3) -> normalised float32 (3, h, w)."""
    img = _check_rgb8(img)
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    if mean.shape != (3,) or std.shape != (3,):
        raise ValueError("mean and std must each have three entries")
    if (std <= 0).any():
        raise ValueError("std entries must be positive")
    x = (img.astype(np.float64) / 255.0 - mean) / std
    return np.ascontiguousarray(x.transpose(2, 0, 1)).astype(np.float32)


def preprocess(img, cfg: PreprocConfig = PreprocConfig()):
    """Resize then normalise one image: -> float32 (3, size, size)."""
    return to_tensor_normalize(resize_bilinear(img, cfg.size), cfg.mean, cfg.std)


def preprocess_batch(images, cfg: PreprocConfig = PreprocConfig()):
    """Stack per-image preprocessing into a float32 (n, 3, size, size) batch."""
    if not images:
        raise ValueError("empty batch")
    return np.stack([preprocess(img, cfg) for img in images])


def rotate_image(img, degrees: float):
    """Rotate image content by ``degrees`` via inverse-mapped bilinear
    sampling about the image centre, zero-filled outside.

    The inverse map, with centre (cy, cx) = ((h-1)/2, (w-1)/2)::

        sx = cos*(x - cx) + sin*(y - cy) + cx
        sy = -sin*(x - cx) + cos*(y - cy) + cy

    Positive angles turn the content clockwise on screen; an exact
    multiple of 360 returns the input unchanged.
    """
    img = _check_rgb8(img)
    if degrees % 360.0 == 0.0:
        return img.copy()
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(degrees)
    cos_t, sin_t = np.cos(theta), np.sin(theta)

    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    dx = xs - cx
    dy = ys - cy
    sx = cos_t * dx + sin_t * dy + cx
    sy = -sin_t * dx + cos_t * dy + cy

    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]

    def sample(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        vals = img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)].astype(np.float64)
        return vals * valid[..., None]

    a = sample(y0, x0)
    b = sample(y0, x0 + 1)
    c = sample(y0 + 1, x0)
    d = sample(y0 + 1, x0 + 1)
    out = (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d)
    return _round_u8(out)


def color_jitter(img, brightness: float = 1.0, contrast: float = 1.0,
                 saturation: float = 1.0):
    """Scale brightness, contrast, and saturation, in that order.

    Factors equal to 1.0 are exact no-ops.  Contrast pulls pixels toward
    the image's mean luma; saturation pulls each pixel toward its own
    luma (coefficients 0.299, 0.587, 0.114).  Composed in float64 with
    one final round.
    """
    img = _check_rgb8(img)
    if brightness == 1.0 and contrast == 1.0 and saturation == 1.0:
        return img.copy()
    for name, f in (("brightness", brightness), ("contrast", contrast),
                    ("saturation", saturation)):
        if f < 0:
            raise ValueError(f"{name} factor must be non-negative, got {f}")
    p = img.astype(np.float64)
    if brightness != 1.0:
        p = p * brightness
    if contrast != 1.0:
        mean = (p @ _LUMA).mean()
        p = (p - mean) * contrast + mean
    if saturation != 1.0:
        luma = (p @ _LUMA)[..., None]
        p = (p - luma) * saturation + luma
    return _round_u8(p)


def augment(img, rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()):
    """Apply the training augmentation chain with a fixed draw order.

    Exactly these draws happen, in order: rotation angle, flip uniform,
    brightness, contrast, saturation factors, erase uniform; when the
    erase triggers, four more draws follow (area fraction, aspect,
    y, x).  The draw order is part of the contract: a given generator
    state always yields the same augmented image.
    """
    img = _check_rgb8(img)
    angle = rng.uniform(-cfg.rotation_deg, cfg.rotation_deg)
    out = rotate_image(img, angle) if angle != 0.0 else img.copy()

    if rng.uniform() < cfg.flip_prob:
        out = out[:, ::-1].copy()

    b = rng.uniform(*cfg.brightness)
    c = rng.uniform(*cfg.contrast)
    s = rng.uniform(*cfg.saturation)
    out = color_jitter(out, b, c, s)

    if rng.uniform() < cfg.erase_prob:
        h, w = out.shape[:2]
        area = rng.uniform(*cfg.erase_area) * h * w
        aspect = rng.uniform(*cfg.erase_aspect)
        eh = min(int(round(np.sqrt(area * aspect))), h)
        ew = min(int(round(np.sqrt(area / aspect))), w)
        if eh >= 1 and ew >= 1:
            y0 = int(rng.integers(0, h - eh + 1))
            x0 = int(rng.integers(0, w - ew + 1))
            out[y0 : y0 + eh, x0 : x0 + ew, :] = 0
    return out


def rng_for(seed, *path) -> np.random.Generator:
    """Independent generator for a position in a seed hierarchy.

    ``rng_for(seed, epoch, index)`` yields streams that are stable
    across runs and uncorrelated across positions.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, path)]))


def channel_stats(images):
    """Per-channel mean and std of pixel values scaled to [0, 1].

    Accumulates in float64 across all pixels of all images; population
    std.  Returns two length-3 float arrays (R, G, B).
    """
    total = np.zeros(3)
    total_sq = np.zeros(3)
    count = 0
    for img in images:
        img = _check_rgb8(img)
        x = img.reshape(-1, 3).astype(np.float64) / 255.0
        total += x.sum(axis=0)
        total_sq += (x * x).sum(axis=0)
        count += x.shape[0]
    if count == 0:
        raise ValueError("no images")
    mean = total / count
    var = np.maximum(total_sq / count - mean * mean, 0.0)
    return mean, np.sqrt(var)
