"""Mini-batch training loop.

Each batch is processed one image at a time (the activations of a full batch
at training resolution do not fit comfortably in memory); per-image gradients
are summed in a fixed order and divided by the batch size, which gives exactly
the gradient of the batch-mean loss.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import DeepWayError
from ..datagen import Dataset
from . import autograd as ag
from .model import DeepWayNet, ModelConfig, forward
from .optim import AdamState, adam_step
from .targets import encode_targets
from .weights import save_weights

log = logging.getLogger(__name__)


class TrainingDivergedError(DeepWayError, FloatingPointError):
    """Loss or parameters became non-finite. ``last_good`` holds the previous weights."""

    def __init__(self, msg, last_good: DeepWayNet | None = None, checkpoint: Path | None = None):
        super().__init__(msg)
        self.last_good = last_good
        self.checkpoint = checkpoint


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 16
    learning_rate: float = 3e-4
    lambda_wp: float = 0.7
    lambda_nowp: float = 0.3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    precision: int = 32

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ValueError("learning rate and eps must be positive")
        if self.lambda_wp < 0 or self.lambda_nowp < 0 or self.lambda_wp + self.lambda_nowp <= 0:
            raise ValueError("loss weights must be non-negative with a positive sum")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must be in [0, 1)")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrainResult:
    net: DeepWayNet
    history: list = field(default_factory=list)
    seconds: float = 0.0


def load_arrays(dataset, cfg: ModelConfig, dtype=np.float32):
    """Inputs ``(n, H, W)`` and targets ``(n, U, U, 3)`` from a dataset manifest."""
    ds = dataset if isinstance(dataset, Dataset) else Dataset(dataset)
    xs, ys = [], []
    for i in range(len(ds)):
        truth = ds.truth(i)
        xs.append(truth.grid.astype(dtype))
        ys.append(encode_targets(truth, cfg, dtype))
    if not xs:
        return (np.zeros((0, cfg.input_size, cfg.input_size), dtype),
                np.zeros((0, cfg.output_size, cfg.output_size, 3), dtype))
    return np.stack(xs), np.stack(ys)


def loss_and_grads(net: DeepWayNet, x: np.ndarray, y: np.ndarray, lambda_wp: float,
                   lambda_nowp: float):
    """Loss of a batch (mean over images of the per-image cell sum) and its gradients."""
    n = len(x)
    grads = {k: np.zeros_like(v) for k, v in net.params.items()}
    total = 0.0
    for i in range(n):
        P = {k: ag.Tensor(v, requires_grad=True) for k, v in net.params.items()}
        out = forward(net.cfg, P, x[i:i + 1])
        loss = ag.waypoint_loss(y[i:i + 1], out, lambda_wp, lambda_nowp)
        ag.backward(loss)
        total += float(loss.data)
        for k, t in P.items():
            if t.grad is not None:
                grads[k] += t.grad
    for g in grads.values():
        g /= n
    return total / n, grads


def evaluate_loss(net: DeepWayNet, x, y, lambda_wp=0.7, lambda_nowp=0.3, batch_size=8) -> float:
    total = 0.0
    for i in range(0, len(x), batch_size):
        pred = net.predict(x[i:i + batch_size])
        out = ag.waypoint_loss(y[i:i + batch_size].astype(pred.dtype), ag.Tensor(pred),
                               lambda_wp, lambda_nowp)
        total += float(out.data) * len(pred)
    return total / max(len(x), 1)


def train(data, model_cfg: ModelConfig, cfg: TrainConfig = TrainConfig(), *,
          net: DeepWayNet | None = None, checkpoint_dir=None, on_epoch=None) -> TrainResult:
    """Train a network on ``data`` (a dataset manifest/Dataset, or an ``(x, y)`` pair).

    Returns the trained network and the mean training loss of every epoch.
    With ``checkpoint_dir`` the weights are written after every epoch.
    """
    t0 = time.perf_counter()
    dtype = cfg.dtype
    if isinstance(data, tuple):
        x, y = data
        x, y = np.asarray(x, dtype), np.asarray(y, dtype)
    else:
        x, y = load_arrays(data, model_cfg, dtype)
    if len(x) == 0 and cfg.epochs > 0:
        raise ValueError("cannot train on an empty dataset")
    if net is None:
        net = DeepWayNet(model_cfg, seed=cfg.seed, dtype=dtype)
    elif net.cfg != model_cfg:
        raise ValueError("network configuration differs from model_cfg")
    net.params = {k: np.array(v, dtype=dtype) for k, v in net.params.items()}

    shuffle_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, 1])))
    state = AdamState()
    history = []
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    last_ckpt = None
    for epoch in range(cfg.epochs):
        te = time.perf_counter()
        good = {k: v.copy() for k, v in net.params.items()}
        order = shuffle_rng.permutation(len(x))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, grads = loss_and_grads(net, x[idx], y[idx], cfg.lambda_wp, cfg.lambda_nowp)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch + 1}",
                                            DeepWayNet(model_cfg, good), last_ckpt)
            adam_step(net.params, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
            if not all(np.all(np.isfinite(v)) for v in net.params.values()):
                raise TrainingDivergedError(f"non-finite parameters at epoch {epoch + 1}",
                                            DeepWayNet(model_cfg, good), last_ckpt)
            losses.append(loss * len(idx))
        mean_loss = float(sum(losses) / len(order))
        history.append(mean_loss)
        if ckpt_dir is not None:
            last_ckpt = ckpt_dir / "checkpoint.dway"
            save_weights(net, last_ckpt)
        log.info("epoch %d/%d loss %.5f (%.1fs)", epoch + 1, cfg.epochs, mean_loss,
                 time.perf_counter() - te)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss, net)
    return TrainResult(net=net, history=history, seconds=time.perf_counter() - t0)
