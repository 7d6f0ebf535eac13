"""Parameter containers, initialization, and checkpoint files."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..netgraph import NetworkSpec, check_valid
from ..regularizer import GammaState


@dataclass
class ParamSet:
    """All learnable state for one network.

    weights: per layer, (f, g, in_width, out_width).
    gamma/beta and moving statistics exist for batch-norm layers only
    (every layer except the final one). Moving variance stays positive.
    """

    weights: dict = field(default_factory=dict)
    gamma: dict = field(default_factory=dict)
    beta: dict = field(default_factory=dict)
    moving_mean: dict = field(default_factory=dict)
    moving_var: dict = field(default_factory=dict)

    def copy(self) -> "ParamSet":
        return ParamSet(
            weights={k: v.copy() for k, v in self.weights.items()},
            gamma={k: v.copy() for k, v in self.gamma.items()},
            beta={k: v.copy() for k, v in self.beta.items()},
            moving_mean={k: v.copy() for k, v in self.moving_mean.items()},
            moving_var={k: v.copy() for k, v in self.moving_var.items()},
        )

    def gamma_state(self) -> GammaState:
        return GammaState.from_arrays(self.gamma)

    def num_params(self) -> int:
        return sum(w.size for w in self.weights.values())

    def trainable_items(self):
        """Yields (field, layer id, array) for every trained tensor."""
        for lid, w in self.weights.items():
            yield "weights", lid, w
        for lid, g in self.gamma.items():
            yield "gamma", lid, g
        for lid, b in self.beta.items():
            yield "beta", lid, b


@dataclass
class Gradients:
    weights: dict = field(default_factory=dict)
    gamma: dict = field(default_factory=dict)
    beta: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: ParamSet) -> "Gradients":
        return cls(
            weights={k: np.zeros_like(v) for k, v in params.weights.items()},
            gamma={k: np.zeros_like(v) for k, v in params.gamma.items()},
            beta={k: np.zeros_like(v) for k, v in params.beta.items()},
        )


def init_params(net: NetworkSpec, seed, dtype=np.float32) -> ParamSet:
    """Fan-in-scaled normal weights, gamma 1, beta 0. Deterministic for
    a given seed (int or SeedSequence)."""
    check_valid(net)
    rng = np.random.default_rng(seed)
    params = ParamSet()
    for layer in net.layers:
        f, g = layer.filter
        fan_in = f * g * net.in_width(layer.id)
        scale = np.sqrt(2.0 / fan_in)
        params.weights[layer.id] = (
            rng.standard_normal((f, g, net.in_width(layer.id), layer.out_width)) * scale
        ).astype(dtype)
        if layer.batchnorm:
            params.gamma[layer.id] = np.ones(layer.out_width, dtype=dtype)
            params.beta[layer.id] = np.zeros(layer.out_width, dtype=dtype)
            params.moving_mean[layer.id] = np.zeros(layer.out_width, dtype=dtype)
            params.moving_var[layer.id] = np.ones(layer.out_width, dtype=dtype)
    return params


def save_params(params: ParamSet, path) -> None:
    """Checkpoint as an npz archive; array shapes travel in the file
    headers."""
    arrays = {}
    for name in ("weights", "gamma", "beta", "moving_mean", "moving_var"):
        for lid, arr in getattr(params, name).items():
            arrays[f"{name}/{lid}"] = arr
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path) -> ParamSet:
    params = ParamSet()
    with np.load(path) as archive:
        for key in archive.files:
            name, _, lid = key.partition("/")
            getattr(params, name)[lid] = archive[key]
    return params
