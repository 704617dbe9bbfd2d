"""Numpy waypoint network: autodiff, layers, loss, Adam and training."""
from .autograd import Tensor, backward
from .kernels import ShapeError
from .model import ConfigError, DeepWayNet, ModelConfig, count_parameters, forward, init_parameters
from .optim import AdamState, NonFiniteGradientError, adam_step
from .targets import encode_targets, encode_waypoints, loss_value
from .train import TrainConfig, TrainingDivergedError, TrainResult, train
from .weights import IntegrityError, load_weights, save_weights

__all__ = [
    "Tensor", "backward", "ShapeError", "ConfigError", "DeepWayNet", "ModelConfig",
    "count_parameters", "forward", "init_parameters", "AdamState", "NonFiniteGradientError",
    "adam_step", "encode_targets", "encode_waypoints", "loss_value", "TrainConfig",
    "TrainingDivergedError", "TrainResult", "train", "IntegrityError", "load_weights",
    "save_weights",
]
