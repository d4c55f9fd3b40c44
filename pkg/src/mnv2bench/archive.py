"""Weight archive container (.mnv2) and model loading.

Binary layout, all integers little-endian:

* magic ``b"MNV2"``
* format version, u32 (currently 1)
* tensor count, u32
* one record per tensor:
  name length u16, UTF-8 name, ndim u8, each dim u32,
  payload offset u64 (relative to the start of the payload region)
* payload region: raw float32 data, little-endian

The canonical writer sorts tensors by name and packs their payloads
contiguously in that order, so a given set of tensors always produces
byte-identical files.  The reader tolerates gaps in the payload region
but rejects overlapping records, out-of-bounds offsets, duplicate
names, and truncated files.

:func:`load_model` turns a full archive into a runtime
:class:`~mnv2bench.model.Model`, folding each batch-norm quadruple into
its convolution.  The tensor name plan is closed-world: a model archive
must contain exactly the planned names (plus the optional ``bn_eps``
scalar, default 1e-5).
"""

from __future__ import annotations

import logging
import struct

import numpy as np

from . import model as model_mod
from .model import FEATURE_DIM, Model, build_mobilenetv2, init_head
from .tensor import fold_batchnorm

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "ArchiveError",
    "write_archive",
    "read_archive",
    "load_model",
]

MAGIC = b"MNV2"
FORMAT_VERSION = 1
_MAX_NDIM = 8

log = logging.getLogger(__name__)


class ArchiveError(ValueError):
    """Malformed or inconsistent weight archive."""


def write_archive(path, tensors) -> None:
    """Write tensors to ``path`` in canonical form.

    Tensors are float32-converted, ordered lexicographically by name,
    and packed contiguously.  Names must be non-empty and unique;
    payloads must be finite.
    """
    if not tensors:
        raise ArchiveError("archive must contain at least one tensor")
    arrays = {}
    for name, arr in tensors.items():
        if not name:
            raise ArchiveError("tensor names must be non-empty")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ArchiveError(f"tensor name too long: {name[:40]}...")
        a = np.asarray(arr, dtype=np.float32)
        if a.ndim < 1 or a.ndim > _MAX_NDIM:
            raise ArchiveError(f"{name}: ndim must be in [1, {_MAX_NDIM}], "
                               f"got {a.ndim}")
        a = np.ascontiguousarray(a)
        if a.size == 0:
            raise ArchiveError(f"{name}: empty tensors are not allowed")
        if not np.isfinite(a).all():
            raise ArchiveError(f"{name}: payload contains non-finite values")
        arrays[name] = a

    header = bytearray()
    header += MAGIC
    header += struct.pack("<II", FORMAT_VERSION, len(arrays))
    offset = 0
    order = sorted(arrays)
    for name in order:
        a = arrays[name]
        encoded = name.encode("utf-8")
        header += struct.pack("<H", len(encoded))
        header += encoded
        header += struct.pack("<B", a.ndim)
        header += struct.pack(f"<{a.ndim}I", *a.shape)
        header += struct.pack("<Q", offset)
        offset += a.nbytes

    with open(path, "wb") as fh:
        fh.write(header)
        for name in order:
            fh.write(arrays[name].tobytes())


def read_archive(path):
    """Parse an archive into ``{name: float32 ndarray}``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)

    def take(n, what):
        nonlocal pos
        if pos + n > len(blob):
            raise ArchiveError(f"truncated archive: {what} at byte {pos}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    pos = 0
    if bytes(take(4, "magic")) != MAGIC:
        raise ArchiveError("bad magic, not a weight archive")
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != FORMAT_VERSION:
        raise ArchiveError(f"unsupported format version {version}")
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    if count == 0:
        raise ArchiveError("archive contains no tensors")

    records = []
    seen = set()
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        try:
            name = bytes(take(name_len, "name")).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ArchiveError(f"tensor name is not valid UTF-8: {exc}") from None
        if not name:
            raise ArchiveError("empty tensor name")
        if name in seen:
            raise ArchiveError(f"duplicate tensor name: {name}")
        seen.add(name)
        (ndim,) = struct.unpack("<B", take(1, f"{name} ndim"))
        if ndim < 1 or ndim > _MAX_NDIM:
            raise ArchiveError(f"{name}: ndim {ndim} out of range")
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"{name} dims"))
        if any(d == 0 for d in shape):
            raise ArchiveError(f"{name}: zero-sized dimension")
        (offset,) = struct.unpack("<Q", take(8, f"{name} offset"))
        records.append((name, shape, offset))

    payload = view[pos:]
    spans = []
    for name, shape, offset in records:
        nbytes = int(np.prod(shape)) * 4
        end = offset + nbytes
        if end > len(payload):
            raise ArchiveError(
                f"{name}: payload [{offset}, {end}) exceeds region size "
                f"{len(payload)}")
        spans.append((offset, end, name))
    spans.sort()
    for (s0, e0, n0), (s1, _e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise ArchiveError(f"payload overlap between {n0} and {n1}")

    out = {}
    for name, shape, offset in records:
        nbytes = int(np.prod(shape)) * 4
        flat = np.frombuffer(payload, dtype="<f4", count=nbytes // 4,
                             offset=offset)
        out[name] = flat.reshape(shape).astype(np.float32, copy=True)
    return out


_BN_PARTS = ("bn_gamma", "bn_beta", "bn_mean", "bn_var")


def load_model(src, num_classes=None, head_seed=0) -> Model:
    """Assemble a runtime model from an archive path or a tensor dict.

    The archive's classifier is adopted when its shape matches
    ``(num_classes, 1280)``; otherwise a fresh head is initialised from
    ``head_seed``.  With ``num_classes=None`` the archive's classifier
    defines the class count.
    """
    tensors = src if isinstance(src, dict) else read_archive(src)

    eps = 1e-5
    extra = set(tensors) - set(model_mod.archive_plan(1))
    if "bn_eps" in tensors:
        eps_t = tensors["bn_eps"]
        if eps_t.shape != (1,):
            raise ArchiveError(f"bn_eps must have shape (1,), got {eps_t.shape}")
        eps = float(eps_t[0])
        if not np.isfinite(eps) or eps < 0:
            raise ArchiveError(f"bn_eps must be finite and non-negative, got {eps}")
        extra.discard("bn_eps")
    if extra:
        raise ArchiveError("unexpected tensors: " + ", ".join(sorted(extra)[:8]))
    missing = set(model_mod.archive_plan(1)) - set(tensors)
    missing -= {"classifier.w", "classifier.b"} & missing  # checked below
    missing = {m for m in missing if not m.startswith("classifier.")}
    if missing:
        raise ArchiveError("missing tensors: " + ", ".join(sorted(missing)[:8]))
    for part in ("classifier.w", "classifier.b"):
        if part not in tensors:
            raise ArchiveError(f"missing tensors: {part}")

    cw = tensors["classifier.w"]
    cb = tensors["classifier.b"]
    if cw.ndim != 2 or cw.shape[1] != FEATURE_DIM:
        raise ArchiveError(
            f"classifier.w must be (k, {FEATURE_DIM}), got {cw.shape}")
    if cb.shape != (cw.shape[0],):
        raise ArchiveError(
            f"classifier.b shape {cb.shape} does not match classifier.w "
            f"{cw.shape}")
    if num_classes is None:
        num_classes = int(cw.shape[0])

    plan = model_mod.archive_plan(num_classes)
    for name, arr in tensors.items():
        if name in ("bn_eps", "classifier.w", "classifier.b"):
            continue
        if arr.shape != plan[name]:
            raise ArchiveError(
                f"{name}: expected shape {plan[name]}, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ArchiveError(f"{name}: non-finite values")

    m = build_mobilenetv2(num_classes)

    def fill(layer):
        base = layer.spec.name
        w, b = fold_batchnorm(
            tensors[f"{base}.w"], None,
            tensors[f"{base}.bn_gamma"], tensors[f"{base}.bn_beta"],
            tensors[f"{base}.bn_mean"], tensors[f"{base}.bn_var"], eps)
        layer.w, layer.b = w, b

    fill(m.stem)
    for block in m.blocks:
        for layer in block.convs:
            fill(layer)
    fill(m.head)

    if cw.shape == (num_classes, FEATURE_DIM):
        if not (np.isfinite(cw).all() and np.isfinite(cb).all()):
            raise ArchiveError("classifier: non-finite values")
        m.classifier_w = cw.astype(np.float32)
        m.classifier_b = cb.astype(np.float32)
    else:
        log.info("classifier shape %s does not match %d classes; "
                 "initialising a fresh head (seed %s)",
                 cw.shape, num_classes, head_seed)
        m.classifier_w, m.classifier_b = init_head(num_classes, head_seed)
    return m
