"""Minibatch training loop with a proximal step on the gammas.

The optimizer is momentum SGD at a constant learning rate. The
regularizer acts on gammas only, and only through a soft-threshold
(proximal) update after the SGD step: each gamma shrinks toward zero
by learning_rate * lambda * its current regularizer coefficient and
snaps to exactly zero inside that band, so dead channels hold exact
zeros. With lambda = 0 the step is plain momentum SGD.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from ..costmodel import Resource, projected_cost
from ..netgraph import NetworkSpec, check_valid, spatial_shapes
from ..regularizer import DEFAULT_TAU, reg_coefficients, reg_value
from .data import DataSource
from .network import NonFiniteActivationError, forward_loss, loss_and_grads
from .params import Gradients, ParamSet, init_params


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or activations."""

    def __init__(self, step: int, detail: str = ""):
        self.step = step
        message = f"training diverged at step {step}"
        super().__init__(message + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run.

    ``lam`` is the regularizer strength; ``tau`` the alive threshold;
    ``resource`` the targeted cost. ``weight_decay`` is an optional L2
    term on weights (default off; not part of the shrink recipe).
    """

    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    steps: int = 400
    eval_every: int = 50
    lam: float = 0.0
    tau: float = DEFAULT_TAU
    seed: int = 0
    resource: Resource = Resource.FLOPS
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")


@dataclass(frozen=True)
class TrainRecord:
    step: int
    loss: float
    reg_value: float
    projected_cost: int
    accuracy: float


@dataclass
class TrainResult:
    params: ParamSet
    history: list = field(default_factory=list)

    @property
    def final_record(self) -> TrainRecord:
        return self.history[-1]


HISTORY_COLUMNS = ("step", "loss", "reg_value", "projected_flops", "accuracy")


def history_to_csv(history) -> str:
    """History rows in the fixed CSV layout. The projected_flops
    column holds the targeted resource's projected count."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_COLUMNS)
    for rec in history:
        writer.writerow([rec.step, repr(rec.loss), repr(rec.reg_value),
                         rec.projected_cost, repr(rec.accuracy)])
    return buf.getvalue()


def prox_step(params: ParamSet, data_grads: Gradients, reg_coeffs,
              config: TrainConfig, velocity: Gradients) -> None:
    """One optimizer step, in place.

    Momentum SGD on every trainable tensor with the data gradients
    (plus optional weight decay on weights), then the proximal
    soft-threshold on gammas with per-channel threshold
    learning_rate * lam * coefficient.
    """
    lr = config.learning_rate
    for name, lid, param in params.trainable_items():
        grad = getattr(data_grads, name)[lid]
        if name == "weights" and config.weight_decay > 0:
            grad = grad + config.weight_decay * param
        vel = getattr(velocity, name)[lid]
        vel *= config.momentum
        vel += grad
        param -= lr * vel
    if config.lam > 0 and reg_coeffs is not None:
        for lid, gamma in params.gamma.items():
            threshold = (lr * config.lam * reg_coeffs[lid]).astype(gamma.dtype)
            shrunk = np.sign(gamma) * np.maximum(np.abs(gamma) - threshold, 0)
            np.copyto(gamma, shrunk)


def evaluate(net: NetworkSpec, params: ParamSet, data: DataSource) -> float:
    """Fraction of the fixed evaluation batch classified correctly."""
    batch = data.eval_batch()
    if batch.inputs.shape[0] == 0:
        raise ValueError("evaluation set is empty")
    _, logits = forward_loss(net, params, batch, mode="eval")
    return float((logits.argmax(axis=1) == batch.labels).mean())


def _snapshot(net, params, spatial, config, data, step, loss) -> TrainRecord:
    gammas = params.gamma_state()
    value = reg_value(net, gammas, spatial, config.resource, config.tau)
    projected = projected_cost(net, gammas, config.tau, config.resource)
    return TrainRecord(
        step=step,
        loss=float(loss),
        reg_value=value.total,
        projected_cost=projected.total,
        accuracy=evaluate(net, params, data),
    )


def train(net: NetworkSpec, data: DataSource, config: TrainConfig,
          params: ParamSet | None = None) -> TrainResult:
    """Run the minibatch loop; returns final params plus a history of
    (step, loss, reg_value, projected_cost, accuracy) snapshots taken
    every ``eval_every`` steps (and at steps 0 and ``steps``).

    Deterministic for a given (net, data, config): parameter init and
    batch draws are derived from config.seed.
    """
    check_valid(net)
    spatial = spatial_shapes(net)
    root = np.random.SeedSequence(entropy=config.seed, spawn_key=(17,))
    init_seed, batch_seed = root.spawn(2)
    if params is None:
        params = init_params(net, init_seed)
    rng = np.random.default_rng(batch_seed)
    velocity = Gradients.zeros_like(params)

    eval_loss, _ = forward_loss(net, params, data.eval_batch(), mode="eval")
    history = [_snapshot(net, params, spatial, config, data, 0, eval_loss)]

    for step in range(1, config.steps + 1):
        batch = data.train_batch(rng, config.batch_size)
        try:
            loss, _, grads = loss_and_grads(net, params, batch, update_moving=True)
        except NonFiniteActivationError as exc:
            raise DivergenceError(step, str(exc)) from exc
        if not np.isfinite(loss):
            raise DivergenceError(step, f"loss={loss}")
        coeffs = None
        if config.lam > 0:
            coeffs = reg_coefficients(net, params.gamma_state(), spatial,
                                      config.resource, config.tau)
        prox_step(params, grads, coeffs, config, velocity)
        if step % config.eval_every == 0 or step == config.steps:
            history.append(_snapshot(net, params, spatial, config, data, step, loss))
    return TrainResult(params=params, history=history)
