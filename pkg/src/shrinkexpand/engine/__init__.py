"""Minimal training engine: kernels, parameters, forward/backward,
synthetic data, and the regularized training loop."""

from .data import Batch, DataSource, GaussianBlobs, ProceduralTextures, TwoSpirals, make_data_source
from .kernels import (
    active_backend,
    available_backends,
    conv2d_backward_input,
    conv2d_backward_weights,
    conv2d_forward,
    set_backend,
)
from .network import NonFiniteActivationError, backward, forward_loss, loss_and_grads
from .params import Gradients, ParamSet, init_params, load_params, save_params
from .train import (
    HISTORY_COLUMNS,
    DivergenceError,
    TrainConfig,
    TrainRecord,
    TrainResult,
    evaluate,
    history_to_csv,
    prox_step,
    train,
)

__all__ = [
    "Batch",
    "DataSource",
    "GaussianBlobs",
    "TwoSpirals",
    "ProceduralTextures",
    "make_data_source",
    "active_backend",
    "available_backends",
    "set_backend",
    "conv2d_forward",
    "conv2d_backward_input",
    "conv2d_backward_weights",
    "NonFiniteActivationError",
    "forward_loss",
    "backward",
    "loss_and_grads",
    "ParamSet",
    "Gradients",
    "init_params",
    "save_params",
    "load_params",
    "TrainConfig",
    "TrainRecord",
    "TrainResult",
    "DivergenceError",
    "prox_step",
    "train",
    "evaluate",
    "history_to_csv",
    "HISTORY_COLUMNS",
]
