"""Miniature U-Net with batch normalisation and bottleneck dropout.

Layer order (also the checkpoint order): for each encoder level ``i`` the
two conv/BN pairs ``enc{i}.conv1``, ``enc{i}.bn1``, ``enc{i}.conv2``,
``enc{i}.bn2``; then the bottleneck ``bott.*`` in the same layout; then each
decoder level from deepest to shallowest, ``dec{i}.up`` followed by two
conv/BN pairs; finally the ``final`` 1x1 convolution. Convolutions that feed
a BN layer carry no bias since BN cancels it.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import BatchSizeError, FormatError, ParameterError, ShapeError
from . import layers as L

BCE_EPS = 1e-7


@dataclass(frozen=True)
class NetConfig:
    input_px: int = 256
    in_channels: int = 3
    depth: int = 3
    base_channels: int = 8
    dropout_p: float = 0.5
    bn_epsilon: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.depth < 1:
            raise ParameterError("depth must be at least 1")
        if self.input_px % (2 ** self.depth):
            raise ParameterError(f"input_px {self.input_px} not divisible by 2**{self.depth}")
        if self.in_channels != 3:
            raise ParameterError("the network takes RGB input (3 channels)")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ParameterError("dropout_p must lie in [0, 1)")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level


class NetParams:
    """Ordered learnable weights plus BN running statistics."""

    def __init__(self, config: NetConfig, weights: dict, stats: dict):
        self.config = config
        self.weights = weights
        self.stats = stats

    @property
    def dtype(self):
        return next(iter(self.weights.values())).dtype

    def copy(self) -> "NetParams":
        return NetParams(self.config, {k: v.copy() for k, v in self.weights.items()},
                         {k: v.copy() for k, v in self.stats.items()})

    def astype(self, dtype) -> "NetParams":
        return NetParams(self.config, {k: v.astype(dtype) for k, v in self.weights.items()},
                         {k: v.astype(dtype) for k, v in self.stats.items()})

    def n_weights(self) -> int:
        return sum(v.size for v in self.weights.values())


def _layer_plan(cfg: NetConfig):
    """Yield (name, kind, shape) for every tensor in canonical order."""
    def conv_bn(prefix, cin, cout):
        yield f"{prefix}.conv1.w", "w", (3, 3, cin, cout)
        yield f"{prefix}.bn1", "bn", (cout,)
        yield f"{prefix}.conv2.w", "w", (3, 3, cout, cout)
        yield f"{prefix}.bn2", "bn", (cout,)

    cin = cfg.in_channels
    for i in range(cfg.depth):
        yield from conv_bn(f"enc{i}", cin, cfg.channels(i))
        cin = cfg.channels(i)
    yield from conv_bn("bott", cin, cfg.channels(cfg.depth))
    for i in reversed(range(cfg.depth)):
        c_hi, c = cfg.channels(i + 1), cfg.channels(i)
        yield f"dec{i}.up.w", "w", (c_hi, 2, 2, c)
        yield f"dec{i}.up.b", "w", (c,)
        yield f"dec{i}.conv1.w", "w", (3, 3, 2 * c, c)
        yield f"dec{i}.bn1", "bn", (c,)
        yield f"dec{i}.conv2.w", "w", (3, 3, c, c)
        yield f"dec{i}.bn2", "bn", (c,)
    yield "final.w", "w", (cfg.channels(0), 1)
    yield "final.b", "w", (1,)


def init_params(cfg: NetConfig, seed: int = 0, dtype=np.float64, zero_final: bool = False) -> NetParams:
    """He-normal kernels, unit BN scale, zero shifts and biases."""
    rng = np.random.default_rng(seed)
    weights, stats = {}, {}
    for name, kind, shape in _layer_plan(cfg):
        if kind == "bn":
            weights[f"{name}.gamma"] = np.ones(shape, dtype=dtype)
            weights[f"{name}.beta"] = np.zeros(shape, dtype=dtype)
            stats[f"{name}.mean"] = np.zeros(shape, dtype=dtype)
            stats[f"{name}.var"] = np.ones(shape, dtype=dtype)
        elif name.endswith(".b"):
            weights[name] = np.zeros(shape, dtype=dtype)
        else:
            if name == "final.w":
                fan_in = shape[0]
            elif ".up." in name:
                fan_in = shape[0]
            else:
                fan_in = shape[0] * shape[1] * shape[2]
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            if zero_final and name == "final.w":
                w = np.zeros(shape)
            weights[name] = w.astype(dtype)
    return NetParams(cfg, weights, stats)


class Cache:
    """Activations recorded by a training-mode forward pass."""

    def __init__(self):
        self.items = {}
        self.stats = {}
        self.probs = None
        self.logits = None


def _to_nhwc(x, cfg: NetConfig, dtype):
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2] != cfg.input_px or x.shape[3] != cfg.input_px:
        raise ShapeError(
            f"expected (B, {cfg.in_channels}, {cfg.input_px}, {cfg.input_px}), got {x.shape}"
        )
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=dtype)


def forward(params: NetParams, x, mode: str = "eval", rng: np.random.Generator | None = None,
            keep: bool | None = None):
    """Per-pixel tumor probabilities for a (B, C, H, W) batch.

    Returns ``(probs, cache)`` where probs has shape (B, 1, H, W). In train
    mode BN uses batch statistics, dropout is active, and ``cache`` holds the
    activations for :func:`backward` and the updated running statistics.
    """
    cfg = params.config
    if mode not in ("train", "eval"):
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    h = _to_nhwc(x, cfg, params.dtype)
    if train and h.shape[0] < 2:
        raise BatchSizeError("training-mode batch normalisation needs a batch of at least 2")
    if train and rng is None:
        rng = np.random.default_rng(0)
    keep = train if keep is None else keep
    W, S = params.weights, params.stats
    cache = Cache()

    def conv_bn_relu(prefix, h):
        for j in (1, 2):
            name = f"{prefix}.conv{j}"
            h, c_conv = L.conv3x3_forward(h, W[f"{name}.w"])
            bn = f"{prefix}.bn{j}"
            h, c_bn, rm, rv = L.batchnorm_forward(
                h, W[f"{bn}.gamma"], W[f"{bn}.beta"], S[f"{bn}.mean"], S[f"{bn}.var"],
                train, cfg.bn_epsilon, cfg.bn_momentum,
            )
            cache.stats[f"{bn}.mean"], cache.stats[f"{bn}.var"] = rm, rv
            h, c_relu = L.relu_forward(h)
            if keep:
                cache.items[name] = c_conv
                cache.items[bn] = c_bn
                cache.items[f"{prefix}.relu{j}"] = c_relu
        return h

    skips = []
    for i in range(cfg.depth):
        h = conv_bn_relu(f"enc{i}", h)
        skips.append(h)
        h, c_pool = L.maxpool2_forward(h)
        if keep:
            cache.items[f"enc{i}.pool"] = c_pool
    h = conv_bn_relu("bott", h)
    if keep:
        cache.items["bott.pre_dropout"] = h
    if train:
        h, c_drop = L.dropout_forward(h, cfg.dropout_p, rng)
        cache.items["bott.dropout"] = c_drop
    for i in reversed(range(cfg.depth)):
        h, c_up = L.upconv2_forward(h, W[f"dec{i}.up.w"], W[f"dec{i}.up.b"])
        if keep:
            cache.items[f"dec{i}.up"] = c_up
        h = np.concatenate([h, skips[i]], axis=-1)
        h = conv_bn_relu(f"dec{i}", h)
    logits, c_final = L.conv1x1_forward(h, W["final.w"], W["final.b"])
    probs = L.sigmoid(logits)
    if keep:
        cache.items["final"] = c_final
    cache.logits = logits
    cache.probs = probs
    return probs.transpose(0, 3, 1, 2), cache


def bce_loss(probs, target) -> float:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(probs, dtype=np.float64), BCE_EPS, 1.0 - BCE_EPS)
    y = np.asarray(target, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"probability shape {p.shape} != target shape {y.shape}")
    return float(-(y * np.log(p) + (1.0 - y) * np.log1p(-p)).mean())


def backward(params: NetParams, cache: Cache, target, scale: float = 1.0) -> dict:
    """Gradients of ``scale * bce_loss`` with respect to every learnable weight."""
    cfg = params.config
    W = params.weights
    y = np.asarray(target)
    if y.ndim == 4:
        y = y.transpose(0, 2, 3, 1)
    y = y.astype(cache.probs.dtype).reshape(cache.probs.shape)
    p = cache.probs
    n = p.size
    # d(mean BCE)/d(logit) = (p - y) / n where the clamp is inactive, else 0.
    active = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    d = np.where(active, (p - y) * (scale / n), 0.0).astype(p.dtype)
    grads = {}

    def conv_bn_relu_back(prefix, d):
        for j in (2, 1):
            name = f"{prefix}.conv{j}"
            bn = f"{prefix}.bn{j}"
            d = L.relu_backward(d, cache.items[f"{prefix}.relu{j}"])
            d, grads[f"{bn}.gamma"], grads[f"{bn}.beta"] = L.batchnorm_backward(d, cache.items[bn])
            d, grads[f"{name}.w"] = L.conv3x3_backward(d, W[f"{name}.w"], cache.items[name])
        return d

    d, grads["final.w"], grads["final.b"] = L.conv1x1_backward(d, W["final.w"], cache.items["final"])
    skip_grads = {}
    for i in range(cfg.depth):
        d = conv_bn_relu_back(f"dec{i}", d)
        c = cfg.channels(i)
        d, skip_grads[i] = d[..., :c], d[..., c:]
        d, grads[f"dec{i}.up.w"], grads[f"dec{i}.up.b"] = L.upconv2_backward(
            d, W[f"dec{i}.up.w"], cache.items[f"dec{i}.up"]
        )
    d = L.dropout_backward(d, cache.items.get("bott.dropout"))
    d = conv_bn_relu_back("bott", d)
    for i in reversed(range(cfg.depth)):
        d = L.maxpool2_backward(d, cache.items[f"enc{i}.pool"])
        d = d + skip_grads[i]
        d = conv_bn_relu_back(f"enc{i}", d)
    return {k: grads[k] for k in W}


# --- checkpoints ----------------------------------------------------------

CHECKPOINT_MAGIC = b"UNET"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIIddd")


def checkpoint_layout(cfg: NetConfig):
    """Tensor names in file order: weights of each layer, BN statistics after its affine terms."""
    names = []
    for name, kind, _ in _layer_plan(cfg):
        if kind == "bn":
            names += [f"{name}.gamma", f"{name}.beta", f"{name}.mean", f"{name}.var"]
        else:
            names.append(name)
    return names


def save_checkpoint(params: NetParams, path) -> None:
    cfg = params.config
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, cfg.input_px, cfg.in_channels,
                              cfg.depth, cfg.base_channels, cfg.dropout_p, cfg.bn_epsilon, cfg.bn_momentum))
        for name in checkpoint_layout(cfg):
            arr = params.weights.get(name)
            if arr is None:
                arr = params.stats[name]
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path, dtype=np.float64) -> NetParams:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise FormatError("checkpoint shorter than its header")
    magic, version, input_px, in_ch, depth, base, drop, eps, mom = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    cfg = NetConfig(input_px, in_ch, depth, base, drop, eps, mom)
    template = init_params(cfg, 0)
    offset = _HEADER.size
    weights, stats = {}, {}
    for name in checkpoint_layout(cfg):
        ref = template.weights.get(name)
        target = weights
        if ref is None:
            ref = template.stats[name]
            target = stats
        nbytes = ref.size * 8
        if offset + nbytes > len(data):
            raise FormatError("checkpoint truncated")
        target[name] = np.frombuffer(data, dtype="<f8", count=ref.size, offset=offset).reshape(ref.shape).astype(dtype)
        offset += nbytes
    if offset != len(data):
        raise FormatError("trailing bytes after checkpoint payload")
    weights = {k: weights[k] for k in template.weights}
    stats = {k: stats[k] for k in template.stats}
    return NetParams(cfg, weights, stats)
