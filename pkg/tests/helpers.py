"""Shared fixtures: hand-built nets, random network generation, and the
toy suites the training-level tests run on."""

from __future__ import annotations

import numpy as np

from shrinkexpand.engine.data import GaussianBlobs, ProceduralTextures
from shrinkexpand.engine.train import TrainConfig
from shrinkexpand.netgraph import INPUT_ID, LayerSpec, NetworkSpec


def conv(lid, width, filt=(3, 3), stride=1, inputs=(INPUT_ID,), combine="single",
         batchnorm=True, kind="conv"):
    return LayerSpec(id=lid, kind=kind, out_width=width, filter=tuple(filt),
                     stride=stride, inputs=tuple(inputs), combine=combine,
                     batchnorm=batchnorm)


def dense(lid, width, inputs, batchnorm=True):
    return conv(lid, width, filt=(1, 1), stride=1, inputs=inputs,
                batchnorm=batchnorm, kind="dense")


def chain_net() -> NetworkSpec:
    """input 32x32x4 -> 3x3 s2 conv(8) -> 1x1 final(2); first layer cost
    is the hand-evaluated 147456-FLOP fixture."""
    return NetworkSpec(
        (
            conv("c1", 8, (3, 3), 2),
            dense("out", 2, ("c1",), batchnorm=False),
        ),
        (32, 32, 4),
    )


def solver_chain() -> NetworkSpec:
    """1x1 chain, 3 input channels -> hidden 4 -> fixed output 2; total
    FLOPs are 10 * hidden width."""
    return NetworkSpec(
        (
            dense("l1", 4, (INPUT_ID,)),
            dense("out", 2, ("l1",), batchnorm=False),
        ),
        (1, 1, 3),
    )


def mlp_net(widths, dim=4, classes=2) -> NetworkSpec:
    layers = []
    prev = INPUT_ID
    for k, width in enumerate(widths, 1):
        layers.append(dense(f"h{k}", width, (prev,)))
        prev = f"h{k}"
    layers.append(dense("out", classes, (prev,), batchnorm=False))
    return NetworkSpec(tuple(layers), (1, 1, dim))


def residual_net(width=8, dim=4, classes=2, interior=6) -> NetworkSpec:
    """stem -> (branch b1 -> b2) -> sum join -> out; b2 is tied to the
    stem, b1 is the branch interior whose death removes the block."""
    return NetworkSpec(
        (
            dense("stem", width, (INPUT_ID,)),
            dense("b1", interior, ("stem",)),
            dense("b2", width, ("b1",)),
            LayerSpec("join", "dense", width, (1, 1), 1, ("stem", "b2"), "sum", True),
            dense("out", classes, ("join",), batchnorm=False),
        ),
        (1, 1, dim),
    )


def conv_residual_net() -> NetworkSpec:
    """Small strided conv net with one residual join, for gradient and
    cost coverage."""
    return NetworkSpec(
        (
            conv("c1", 4, (3, 3), 2),
            conv("b1", 3, (1, 1), 1, ("c1",)),
            conv("b2", 4, (3, 3), 1, ("b1",)),
            LayerSpec("j", "conv", 4, (1, 1), 1, ("c1", "b2"), "sum", True),
            dense("out", 3, ("j",), batchnorm=False),
        ),
        (6, 6, 2),
    )


def random_network(rng: np.random.Generator, max_hidden=5, max_width=8,
                   residual_prob=0.4, max_input=8) -> NetworkSpec:
    """Random valid net: a conv/dense chain with optional residual
    blocks (branch of 1-2 convs summed with its origin)."""
    height = int(rng.integers(1, 9))
    width_sp = int(rng.integers(1, 9))
    channels = int(rng.integers(1, max_input + 1))
    layers = []
    prev = INPUT_ID
    prev_width = channels
    n_hidden = int(rng.integers(1, max_hidden + 1))
    k = 0
    while k < n_hidden:
        lid = f"h{len(layers)}"
        w = int(rng.integers(1, max_width + 1))
        if rng.random() < 0.4:
            filt, stride = (1, 1), 1
            kind = "dense" if rng.random() < 0.5 else "conv"
        else:
            filt = (int(rng.integers(1, 4)), int(rng.integers(1, 4)))
            stride = int(rng.integers(1, 3))
            kind = "conv"
        layers.append(conv(lid, w, filt, stride, (prev,), kind=kind))
        prev, prev_width = lid, w
        k += 1
        if prev != INPUT_ID and rng.random() < residual_prob and k < n_hidden:
            b1 = f"h{len(layers)}"
            inner = int(rng.integers(1, max_width + 1))
            layers.append(conv(b1, inner, (1, 1), 1, (prev,)))
            b2 = f"h{len(layers)}"
            layers.append(conv(b2, prev_width, (int(rng.integers(1, 4)),) * 2, 1, (b1,)))
            j = f"h{len(layers)}"
            layers.append(LayerSpec(j, "conv", int(rng.integers(1, max_width + 1)),
                                    (1, 1), 1, (prev, b2), "sum", True))
            prev, prev_width = j, layers[-1].out_width
            k += 3
    classes = int(rng.integers(2, 6))
    layers.append(dense("out", classes, (prev,), batchnorm=False))
    return NetworkSpec(tuple(layers), (height, width_sp, channels))


def random_group_mask(rng: np.random.Generator, net: NetworkSpec, p_alive=0.6):
    """Random alive mask that keeps residual groups consistent."""
    mask = {}
    for layer in net.hidden_layers():
        mask[layer.id] = rng.random(layer.out_width) < p_alive
    for group in net.residual_groups:
        shared = rng.random(net.layer(group.members[0]).out_width) < p_alive
        for member in group.members:
            mask[member] = shared.copy()
    final = net.final_layer
    mask[final.id] = np.ones(final.out_width, dtype=bool)
    return mask


def random_gammas(rng: np.random.Generator, net: NetworkSpec, low=0.0, high=1.0):
    from shrinkexpand.regularizer import GammaState

    return GammaState.from_arrays({
        l.id: rng.uniform(low, high, size=l.out_width) * rng.choice([-1.0, 1.0], size=l.out_width)
        for l in net.hidden_layers()
    })


# ---------------------------------------------------------------------------
# Toy suites for training-level tests. Constants are pinned here so the
# acceptance tests and the faster smoke tests agree on the setup.

def blob_data(seed=11):
    return GaussianBlobs(num_classes=2, dim=4, spread=0.35, seed=seed, eval_size=512)


def overwide_mlp() -> NetworkSpec:
    return mlp_net([64, 64], dim=4, classes=2)


MLP_SHRINK = TrainConfig(learning_rate=0.05, momentum=0.9, batch_size=32,
                         steps=800, eval_every=100)
MLP_RETRAIN = TrainConfig(learning_rate=0.05, momentum=0.9, batch_size=32,
                          steps=600, eval_every=200)
MLP_LAMBDA = 6e-4


def texture_data(seed=3):
    return ProceduralTextures(num_classes=4, size=16, channels=1, seed=seed,
                              eval_size=512)


def deep_conv_net() -> NetworkSpec:
    """Uniformly growing conv stack: FLOPs concentrate early, params
    late. First half of the prunable depth: c1-c3."""
    return NetworkSpec(
        (
            conv("c1", 16, (3, 3), 1),
            conv("c2", 16, (3, 3), 2, ("c1",)),
            conv("c3", 24, (3, 3), 1, ("c2",)),
            conv("c4", 24, (3, 3), 2, ("c3",)),
            conv("c5", 32, (3, 3), 1, ("c4",)),
            conv("c6", 32, (3, 3), 2, ("c5",)),
            dense("out", 4, ("c6",), batchnorm=False),
        ),
        (16, 16, 1),
    )


def bottleneck_conv_net() -> NetworkSpec:
    """Deliberately unbalanced: a 4-wide choke between 24-wide layers."""
    return NetworkSpec(
        (
            conv("c1", 24, (3, 3), 1),
            conv("c2", 4, (3, 3), 2, ("c1",)),
            conv("c3", 24, (3, 3), 1, ("c2",)),
            conv("c4", 24, (3, 3), 2, ("c3",)),
            dense("out", 4, ("c4",), batchnorm=False),
        ),
        (16, 16, 1),
    )


CONV_SHRINK = TrainConfig(learning_rate=0.02, momentum=0.9, batch_size=32,
                          steps=500, eval_every=100)
CONV_RETRAIN = TrainConfig(learning_rate=0.02, momentum=0.9, batch_size=32,
                           steps=500, eval_every=250)
