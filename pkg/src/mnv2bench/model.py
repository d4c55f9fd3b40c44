"""MobileNetV2 topology and forward pass.

The network is held in inference form: every convolution carries weights
with its batch-norm already folded into a per-channel scale and bias
(see :func:`mnv2bench.tensor.fold_batchnorm`).  Archives on disk store
the batch-norm parameters unfolded; :mod:`mnv2bench.archive` performs
the folding at load time.

Structure (width multiplier 1.0):

* stem: 3x3 stride-2 conv, 3 -> 32, ReLU6
* 17 inverted residual blocks following the (t, c, n, s) table below
* head: 1x1 conv, 320 -> 1280, ReLU6
* global average pool, then a linear classifier 1280 -> num_classes

An inverted residual block expands by factor t with a 1x1 conv (ReLU6),
filters with a 3x3 depthwise conv (ReLU6), and projects back down with
a linear 1x1 conv.  The skip connection is applied iff the block has
stride 1 and equal input/output channel counts.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .tensor import conv2d, global_avg_pool, linear, relu6

__all__ = [
    "BLOCK_TABLE",
    "FEATURE_DIM",
    "ConvSpec",
    "Layer",
    "Block",
    "Model",
    "conv_specs",
    "archive_plan",
    "parameter_count",
    "init_head",
    "build_mobilenetv2",
    "forward",
    "extract_features",
    "classify_features",
    "model_to_tensors",
    "backbone_fingerprint",
    "MIN_INPUT_SIZE",
]

# (expansion t, output channels c, repeats n, first stride s)
BLOCK_TABLE = (
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
)

STEM_CHANNELS = 32
FEATURE_DIM = 1280
MIN_INPUT_SIZE = 32


@dataclass(frozen=True)
class ConvSpec:
    """Static shape of one conv + batch-norm unit."""

    name: str
    cin: int
    cout: int
    kernel: int
    stride: int
    groups: int
    relu: bool

    @property
    def weight_shape(self):
        return (self.cout, self.cin // self.groups, self.kernel, self.kernel)


@dataclass
class Layer:
    """A conv unit with folded weights: y = conv(x, w) + b, then ReLU6."""

    spec: ConvSpec
    w: np.ndarray
    b: np.ndarray

    def __call__(self, x):
        out = conv2d(x, self.w, self.b, stride=self.spec.stride,
                     padding=self.spec.kernel // 2, groups=self.spec.groups)
        return relu6(out) if self.spec.relu else out


@dataclass
class Block:
    index: int
    use_residual: bool
    convs: list[Layer] = field(default_factory=list)

    def __call__(self, x):
        out = x
        for layer in self.convs:
            out = layer(out)
        return x + out if self.use_residual else out


@dataclass
class Model:
    num_classes: int
    stem: Layer
    blocks: list[Block]
    head: Layer
    classifier_w: np.ndarray
    classifier_b: np.ndarray


def _block_specs(index: int, cin: int, cout: int, t: int, stride: int):
    """Conv units for one inverted residual block."""
    mid = cin * t
    prefix = f"block{index}"
    specs = []
    if t != 1:
        specs.append(ConvSpec(f"{prefix}.expand", cin, mid, 1, 1, 1, True))
    specs.append(ConvSpec(f"{prefix}.dw", mid, mid, 3, stride, mid, True))
    specs.append(ConvSpec(f"{prefix}.project", mid, cout, 1, 1, 1, False))
    return specs


def conv_specs():
    """All conv units in execution order.

    Returns (stem, blocks, head) where blocks is a list of
    (index, use_residual, [ConvSpec, ...]) triples.
    """
    stem = ConvSpec("stem.conv", 3, STEM_CHANNELS, 3, 2, 1, True)
    blocks = []
    cin = STEM_CHANNELS
    index = 0
    for t, c, n, s in BLOCK_TABLE:
        for rep in range(n):
            stride = s if rep == 0 else 1
            use_res = stride == 1 and cin == c
            blocks.append((index, use_res, _block_specs(index, cin, c, t, stride)))
            cin = c
            index += 1
    head = ConvSpec("head.conv", cin, FEATURE_DIM, 1, 1, 1, True)
    return stem, blocks, head


def _iter_all_specs():
    stem, blocks, head = conv_specs()
    yield stem
    for _, _, specs in blocks:
        yield from specs
    yield head


def archive_plan(num_classes: int):
    """Expected archive tensor names and shapes for a full model.

    Each conv unit contributes five tensors: ``<name>.w`` plus the
    batch-norm quadruple ``bn_gamma/bn_beta/bn_mean/bn_var`` of length
    cout.  The classifier contributes ``classifier.w`` and
    ``classifier.b``.
    """
    plan = {}
    for spec in _iter_all_specs():
        plan[f"{spec.name}.w"] = spec.weight_shape
        for part in ("bn_gamma", "bn_beta", "bn_mean", "bn_var"):
            plan[f"{spec.name}.{part}"] = (spec.cout,)
    plan["classifier.w"] = (num_classes, FEATURE_DIM)
    plan["classifier.b"] = (num_classes,)
    return plan


def parameter_count(num_classes: int) -> int:
    """Trainable parameter count: conv weights, batch-norm scale/shift,
    classifier weights and bias.  Batch-norm running statistics are not
    trainable and are excluded."""
    total = 0
    for spec in _iter_all_specs():
        total += int(np.prod(spec.weight_shape)) + 2 * spec.cout
    total += num_classes * FEATURE_DIM + num_classes
    return total


def init_head(num_classes: int, seed, feature_dim: int = FEATURE_DIM):
    """Fresh classifier parameters: weights uniform in +-1/sqrt(din),
    bias zero.  Deterministic in the seed."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(feature_dim)
    w = rng.uniform(-bound, bound, (num_classes, feature_dim)).astype(np.float32)
    b = np.zeros(num_classes, dtype=np.float32)
    return w, b


def build_mobilenetv2(num_classes: int = 1000, seed=None) -> Model:
    """Construct a model of the full topology.

    With ``seed=None`` all weights are zero (a structural skeleton for
    loading).  With a seed, conv weights get normal init scaled by
    1.15/sqrt(fan_in) and the classifier uses :func:`init_head`, giving
    a deterministic random model for tests and fixtures.  The gain sits
    between unit gain (activations decay to nothing over a stack this
    deep) and He gain (activations pile into the ReLU6 ceiling and wash
    out input differences); 1.15 keeps pooled features O(1) and
    separable.
    """
    rng = np.random.default_rng(seed) if seed is not None else None

    def make_layer(spec: ConvSpec) -> Layer:
        if rng is None:
            w = np.zeros(spec.weight_shape, dtype=np.float32)
        else:
            fan_in = (spec.cin // spec.groups) * spec.kernel * spec.kernel
            w = (rng.standard_normal(spec.weight_shape)
                 * np.float32(1.15 / np.sqrt(fan_in))).astype(np.float32)
        return Layer(spec, w, np.zeros(spec.cout, dtype=np.float32))

    stem_spec, block_plan, head_spec = conv_specs()
    blocks = [Block(i, use_res, [make_layer(s) for s in specs])
              for i, use_res, specs in block_plan]
    if rng is None:
        cw = np.zeros((num_classes, FEATURE_DIM), dtype=np.float32)
        cb = np.zeros(num_classes, dtype=np.float32)
    else:
        cw, cb = init_head(num_classes, rng.integers(2**32))
    return Model(num_classes, make_layer(stem_spec), blocks,
                 make_layer(head_spec), cw, cb)


def _check_input(x):
    x = np.asarray(x, dtype=np.float32)
    if x.ndim != 4 or x.shape[1] != 3:
        raise ValueError(f"expected (n, 3, h, w) input, got shape {x.shape}")
    if x.shape[2] < MIN_INPUT_SIZE or x.shape[3] < MIN_INPUT_SIZE:
        raise ValueError(
            f"input spatial size {x.shape[2]}x{x.shape[3]} is below the "
            f"minimum of {MIN_INPUT_SIZE}")
    return x


def extract_features(model: Model, x) -> np.ndarray:
    """Backbone forward pass: (n, 3, h, w) -> pooled features (n, 1280)."""
    out = model.stem(_check_input(x))
    for block in model.blocks:
        out = block(out)
    out = model.head(out)
    out = global_avg_pool(out)
    return out.reshape(out.shape[0], -1)


def classify_features(model: Model, feats) -> np.ndarray:
    """Apply the classifier to pooled features: (n, 1280) -> logits."""
    return linear(feats, model.classifier_w, model.classifier_b)


def forward(model: Model, x) -> np.ndarray:
    """Full forward pass: (n, 3, h, w) -> logits (n, num_classes)."""
    return classify_features(model, extract_features(model, x))


def model_to_tensors(model: Model):
    """Serialise a runtime model into archive tensors.

    Runtime layers are already folded, so the batch-norm slots are
    written as the identity transform (gamma=1, mean=0, var=1) with the
    folded bias carried in beta and ``bn_eps`` set to zero.  Loading the
    result reproduces the exact same folded weights.
    """
    tensors = {}

    def put(layer: Layer):
        cout = layer.spec.cout
        tensors[f"{layer.spec.name}.w"] = layer.w
        tensors[f"{layer.spec.name}.bn_gamma"] = np.ones(cout, dtype=np.float32)
        tensors[f"{layer.spec.name}.bn_beta"] = layer.b.astype(np.float32)
        tensors[f"{layer.spec.name}.bn_mean"] = np.zeros(cout, dtype=np.float32)
        tensors[f"{layer.spec.name}.bn_var"] = np.ones(cout, dtype=np.float32)

    put(model.stem)
    for block in model.blocks:
        for layer in block.convs:
            put(layer)
    put(model.head)
    tensors["classifier.w"] = model.classifier_w
    tensors["classifier.b"] = model.classifier_b
    tensors["bn_eps"] = np.zeros(1, dtype=np.float32)
    return tensors


def backbone_fingerprint(model: Model) -> str:
    """Content hash of the backbone (stem through head, classifier
    excluded); stable across runs, used to key cached features."""
    h = hashlib.sha256()
    layers = [model.stem] + [l for b in model.blocks for l in b.convs] + [model.head]
    for layer in layers:
        h.update(layer.spec.name.encode())
        h.update(str(layer.w.shape).encode())
        h.update(np.ascontiguousarray(layer.w, dtype=np.float32).tobytes())
        h.update(np.ascontiguousarray(layer.b, dtype=np.float32).tobytes())
    return h.hexdigest()
