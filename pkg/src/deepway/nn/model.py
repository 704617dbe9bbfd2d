"""The waypoint network: stacked residual reduction modules with attention."""
from __future__ import annotations

import dataclasses
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .kernels import ShapeError

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid network configuration."""


@dataclass(frozen=True)
class ModelConfig:
    input_size: int = 800
    k: int = 8
    n_modules: int = 4
    filters: int = 16
    first_kernel: int = 7
    inner_kernel: int = 5
    last_kernel: int = 3
    attention_ratio: int = 16
    spatial_kernel: int = 7

    def __post_init__(self):
        if self.n_modules < 2:
            raise ConfigError("need at least two reduction modules for the skip connection")
        if self.input_size % (2 ** self.n_modules):
            raise ConfigError(f"input_size {self.input_size} not divisible by 2^{self.n_modules}")
        if self.k != 2 ** (self.n_modules - 1):
            raise ConfigError(f"k={self.k} must equal 2^(n_modules-1)={2 ** (self.n_modules - 1)}")
        for name in ("first_kernel", "inner_kernel", "last_kernel", "spatial_kernel"):
            if getattr(self, name) % 2 == 0:
                raise ConfigError(f"{name} must be odd")

    @property
    def output_size(self) -> int:
        return self.input_size // self.k

    @property
    def hidden_units(self) -> int:
        """Width of the channel-attention bottleneck."""
        ratio = self.attention_ratio
        if self.filters < ratio:
            log.warning("filters=%d below attention ratio %d, using ratio 1", self.filters, ratio)
            ratio = 1
        return self.filters // ratio

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def parameter_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple]":
    """Names and shapes of every trainable array, in a fixed order."""
    f, h = cfg.filters, cfg.hidden_units
    ki, s = cfg.inner_kernel, cfg.spatial_kernel
    shapes = OrderedDict()
    shapes["stem.w"] = (cfg.first_kernel, cfg.first_kernel, 1, f)
    shapes["stem.b"] = (f,)
    for m in range(cfg.n_modules):
        p = f"m{m}."
        shapes[p + "conv.w"] = (ki, ki, f, f)
        shapes[p + "conv.b"] = (f,)
        shapes[p + "ca.w1"] = (f, h)
        shapes[p + "ca.b1"] = (h,)
        shapes[p + "ca.w2"] = (h, f)
        shapes[p + "ca.b2"] = (f,)
        shapes[p + "sa.w"] = (s, s, 2, 1)
        shapes[p + "down.w"] = (ki, ki, f, f)
        shapes[p + "down.b"] = (f,)
    shapes["up.w"] = (ki, ki, f, f)
    shapes["up.b"] = (f,)
    shapes["head.w"] = (cfg.last_kernel, cfg.last_kernel, f, 3)
    shapes["head.b"] = (3,)
    return shapes


def init_parameters(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> "OrderedDict[str, np.ndarray]":
    """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params = OrderedDict()
    for name, shape in parameter_shapes(cfg).items():
        if len(shape) == 1:
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = shape[0] * shape[1] * shape[2] if len(shape) == 4 else shape[0]
        lim = math.sqrt(6.0 / fan_in)
        params[name] = rng.uniform(-lim, lim, shape).astype(dtype)
    return params


def count_parameters(params) -> int:
    return int(sum(np.asarray(p).size for p in params.values()))


def channel_attention(x, w1, b1, w2, b2):
    """Rescale channels by sigmoid(MLP(avg pool) + MLP(max pool)) with a shared MLP."""
    B, _, _, C = x.shape
    avg = ag.mean(x, axis=(1, 2))
    mx = ag.amax(x, axis=(1, 2))

    def mlp(v):
        return ag.add(ag.matmul(ag.relu(ag.add(ag.matmul(v, w1), b1)), w2), b2)

    att = ag.sigmoid(ag.add(mlp(avg), mlp(mx)))
    return ag.mul(x, ag.reshape(att, (B, 1, 1, C)))


def spatial_attention(x, w):
    """Rescale positions by sigmoid(conv(concat(channel mean, channel max)))."""
    desc = ag.concat([ag.mean(x, axis=3, keepdims=True), ag.amax(x, axis=3, keepdims=True)], axis=3)
    return ag.mul(x, ag.sigmoid(ag.conv2d(desc, w)))


def reduction_module(x, P, prefix):
    h = ag.mish(ag.conv2d(x, P[prefix + "conv.w"], P[prefix + "conv.b"]))
    h = channel_attention(h, P[prefix + "ca.w1"], P[prefix + "ca.b1"],
                          P[prefix + "ca.w2"], P[prefix + "ca.b2"])
    h = spatial_attention(h, P[prefix + "sa.w"])
    h = ag.add(h, x)
    return ag.mish(ag.conv2d(h, P[prefix + "down.w"], P[prefix + "down.b"], stride=2))


def forward(cfg: ModelConfig, P: dict, x) -> "ag.Tensor":
    """Network output for a ``(B, H, W)`` or ``(B, H, W, 1)`` input: ``(B, U, U, 3)``.

    ``P`` maps parameter names to Tensors (or arrays, for inference only).
    """
    P = {k: v if isinstance(v, ag.Tensor) else ag.Tensor(v) for k, v in P.items()}
    if not isinstance(x, ag.Tensor):
        x = ag.Tensor(np.asarray(x))
    if x.data.ndim == 3:
        x = ag.Tensor(x.data[..., None], requires_grad=x.requires_grad)
    if x.data.ndim != 4 or x.shape[1:] != (cfg.input_size, cfg.input_size, 1):
        raise ShapeError(f"expected input (B, {cfg.input_size}, {cfg.input_size}, 1), got {x.shape}")
    h = ag.mish(ag.conv2d(x, P["stem.w"], P["stem.b"]))
    outs = []
    for m in range(cfg.n_modules):
        h = reduction_module(h, P, f"m{m}.")
        outs.append(h)
    up = ag.mish(ag.conv_transpose2d(outs[-1], P["up.w"], P["up.b"], stride=2))
    h = ag.add(up, outs[-2])
    return ag.heads(ag.conv2d(h, P["head.w"], P["head.b"]))


class DeepWayNet:
    """Parameters plus configuration; :meth:`predict` runs inference on numpy arrays."""

    def __init__(self, cfg: ModelConfig, params=None, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        if params is None:
            params = init_parameters(cfg, seed, dtype)
        expected = parameter_shapes(cfg)
        if list(params) != list(expected):
            raise ConfigError("parameter names do not match the configuration")
        for name, shape in expected.items():
            if tuple(params[name].shape) != tuple(shape):
                raise ConfigError(f"{name}: shape {params[name].shape}, expected {shape}")
        self.params = OrderedDict((k, np.asarray(v)) for k, v in params.items())

    @property
    def n_parameters(self) -> int:
        return count_parameters(self.params)

    def predict(self, grids, batch_size: int = 8) -> np.ndarray:
        """(B, U, U, 3) predictions for a stack of (H, W) occupancy grids."""
        grids = np.asarray(grids)
        single = grids.ndim == 2
        if single:
            grids = grids[None]
        dtype = next(iter(self.params.values())).dtype
        out = []
        for i in range(0, len(grids), batch_size):
            x = grids[i:i + batch_size].astype(dtype)
            out.append(forward(self.cfg, self.params, x).data)
        res = np.concatenate(out, axis=0) if out else np.zeros((0, self.cfg.output_size,
                                                                 self.cfg.output_size, 3), dtype)
        return res[0] if single else res
