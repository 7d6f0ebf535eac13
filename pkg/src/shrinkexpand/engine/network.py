"""Forward and backward passes for small conv/dense networks.

Every layer convolves (same padding, ceil-division output dims). All
layers except the final one then apply batch normalization followed by
ReLU; the final layer's output is spatially averaged into logits. Sum
joins add source activations channelwise before the filter. Training
mode normalizes with batch statistics (biased variance); eval mode
uses the moving averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..netgraph import INPUT_ID, NetworkSpec
from .kernels import conv2d_backward_input, conv2d_backward_weights, conv2d_forward
from .params import Gradients, ParamSet

BN_EPS = 1e-5
BN_DECAY = 0.99


class NonFiniteActivationError(FloatingPointError):
    """A layer produced inf or nan activations."""

    def __init__(self, layer_id: str):
        self.layer_id = layer_id
        super().__init__(f"non-finite activations in layer {layer_id!r}")


@dataclass
class _LayerCache:
    xin: np.ndarray
    xhat: np.ndarray | None
    inv_std: np.ndarray | None
    relu_mask: np.ndarray | None


def _gather_input(net, layer, activations, x):
    if layer.inputs == (INPUT_ID,):
        return x
    xin = activations[layer.inputs[0]]
    for src in layer.inputs[1:]:
        xin = xin + activations[src]
    return xin


def _forward(net: NetworkSpec, params: ParamSet, x: np.ndarray, mode: str,
             want_cache: bool, update_moving: bool):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if x.shape[1:] != tuple(net.input_shape):
        raise ValueError(f"batch shape {x.shape[1:]} does not match input_shape {net.input_shape}")
    final_id = net.final_layer.id
    activations: dict = {}
    caches: dict = {}
    for layer in net.layers:
        xin = _gather_input(net, layer, activations, x)
        z = conv2d_forward(xin, params.weights[layer.id], layer.stride)
        if layer.batchnorm:
            if mode == "train":
                mu = z.mean(axis=(0, 1, 2))
                var = z.var(axis=(0, 1, 2))
                if update_moving:
                    params.moving_mean[layer.id] *= BN_DECAY
                    params.moving_mean[layer.id] += (1 - BN_DECAY) * mu
                    params.moving_var[layer.id] *= BN_DECAY
                    params.moving_var[layer.id] += (1 - BN_DECAY) * var
            else:
                mu = params.moving_mean[layer.id]
                var = params.moving_var[layer.id]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (z - mu) * inv_std
            h = params.gamma[layer.id] * xhat + params.beta[layer.id]
            act = np.maximum(h, 0)
            relu_mask = h > 0
        else:
            act = z
            xhat = inv_std = relu_mask = None
        if not np.all(np.isfinite(act)):
            raise NonFiniteActivationError(layer.id)
        activations[layer.id] = act
        if want_cache:
            caches[layer.id] = _LayerCache(xin, xhat, inv_std, relu_mask)
    logits = activations[final_id].mean(axis=(1, 2))
    return logits, activations, caches


def _cross_entropy(logits: np.ndarray, labels: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    n = logits.shape[0]
    loss = -log_probs[np.arange(n), labels].mean()
    probs = np.exp(log_probs)
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return float(loss), dlogits


def forward_loss(net: NetworkSpec, params: ParamSet, batch, mode: str = "train"):
    """Softmax cross-entropy loss and logits. Training mode normalizes
    with batch statistics and updates the moving averages in place."""
    logits, _, _ = _forward(net, params, batch.inputs, mode,
                            want_cache=False, update_moving=(mode == "train"))
    loss, _ = _cross_entropy(logits, batch.labels)
    return loss, logits


def loss_and_grads(net: NetworkSpec, params: ParamSet, batch, update_moving: bool = True):
    """One train-mode forward/backward pass; returns (loss, logits,
    Gradients of the data loss)."""
    x = batch.inputs
    logits, activations, caches = _forward(net, params, x, "train",
                                           want_cache=True, update_moving=update_moving)
    loss, dlogits = _cross_entropy(logits, batch.labels)
    final = net.final_layer

    grads = Gradients()
    dact = {lid: None for lid in activations}
    y, z = activations[final.id].shape[1], activations[final.id].shape[2]
    dact[final.id] = np.broadcast_to(
        dlogits[:, None, None, :] / (y * z), activations[final.id].shape
    ).astype(x.dtype)

    for layer in reversed(net.layers):
        da = dact[layer.id]
        if da is None:
            da = np.zeros_like(activations[layer.id])
        cache = caches[layer.id]
        if layer.batchnorm:
            dh = da * cache.relu_mask
            grads.gamma[layer.id] = (dh * cache.xhat).sum(axis=(0, 1, 2))
            grads.beta[layer.id] = dh.sum(axis=(0, 1, 2))
            dxhat = dh * params.gamma[layer.id]
            dz = cache.inv_std * (
                dxhat
                - dxhat.mean(axis=(0, 1, 2))
                - cache.xhat * (dxhat * cache.xhat).mean(axis=(0, 1, 2))
            )
        else:
            dz = da
        grads.weights[layer.id] = conv2d_backward_weights(
            cache.xin, dz, layer.stride, layer.filter
        )
        if layer.inputs != (INPUT_ID,):
            dxin = conv2d_backward_input(
                dz, params.weights[layer.id], layer.stride, cache.xin.shape[1:3]
            )
            for src in layer.inputs:
                if dact[src] is None:
                    dact[src] = dxin.copy()
                else:
                    dact[src] += dxin
    return loss, logits, grads


def backward(net: NetworkSpec, params: ParamSet, batch) -> Gradients:
    """Gradients of the train-mode data loss for every trainable
    parameter. Does not touch the moving averages."""
    _, _, grads = loss_and_grads(net, params, batch, update_moving=False)
    return grads
