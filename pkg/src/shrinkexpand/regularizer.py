"""Resource-weighted sparsifying regularizer on batch-norm scales.

Each prunable channel carries a batch-norm scale gamma; driving a
gamma to zero deactivates the channel. The regularizer relaxes the
alive-indicator cost bilinearly: for a layer with coefficient ``C``,

    C * (sum of input magnitudes) * (count of alive outputs)
  + C * (count of alive inputs)   * (sum of output magnitudes)

summed over layers. Magnitudes are |gamma|, except that channels tied
by residual sums report their group's max magnitude (an L-infinity
group norm), so tied channels live and die together. Alive indicators
are refreshed from the same threshold ``tau`` used for cost
projection.

Two gamma-free edge terms exist: layers fed by the network input use
constant-1 input magnitudes, and the final layer uses constant-1
output magnitudes (its outputs are never prunable). With those
constants included, setting every gamma to an indicator value in
{0, 1} makes the regularizer equal exactly twice the alive-projected
network cost; excluding them (``include_constant_terms=False``) makes
the value positively homogeneous in the gammas.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .costmodel import AliveMask, Resource
from .netgraph import INPUT_ID, NetworkSpec

DEFAULT_TAU = 0.01


class GammaMismatchError(ValueError):
    """Gamma vectors do not line up with the network's layers."""


@dataclass
class GammaState:
    """Per-channel batch-norm scale values for every prunable layer.

    ``values`` maps each non-final layer id to a float vector of
    length out_width. The final layer carries no regularized gammas.
    Residual-group bindings are derived from the network, not stored.
    """

    values: dict = field(default_factory=dict)

    @classmethod
    def ones(cls, net: NetworkSpec) -> "GammaState":
        return cls({l.id: np.ones(l.out_width) for l in net.hidden_layers()})

    @classmethod
    def zeros(cls, net: NetworkSpec) -> "GammaState":
        return cls({l.id: np.zeros(l.out_width) for l in net.hidden_layers()})

    @classmethod
    def from_arrays(cls, mapping) -> "GammaState":
        return cls({lid: np.asarray(v, dtype=np.float64).copy() for lid, v in mapping.items()})

    def copy(self) -> "GammaState":
        return GammaState({lid: v.copy() for lid, v in self.values.items()})

    def check_against(self, net: NetworkSpec) -> None:
        hidden = {l.id: l.out_width for l in net.hidden_layers()}
        missing = set(hidden) - set(self.values)
        if missing:
            raise GammaMismatchError(f"gammas missing for layers: {sorted(missing)}")
        extra = set(self.values) - set(hidden)
        if extra:
            raise GammaMismatchError(f"gammas for unknown or final layers: {sorted(extra)}")
        for lid, width in hidden.items():
            vec = np.asarray(self.values[lid])
            if vec.shape != (width,):
                raise GammaMismatchError(
                    f"gammas for {lid!r} have shape {vec.shape}, expected ({width},)"
                )


def effective_gamma(gammas: GammaState, net: NetworkSpec) -> dict:
    """Per-channel magnitudes: |gamma|, with residual-group members
    replaced by the elementwise max magnitude across the group."""
    gammas.check_against(net)
    eff = {lid: np.abs(np.asarray(vec, dtype=np.float64)) for lid, vec in gammas.values.items()}
    for group in net.residual_groups:
        group_max = np.maximum.reduce([eff[m] for m in group.members])
        for member in group.members:
            eff[member] = group_max
    return eff


def alive_mask(gammas: GammaState, net: NetworkSpec, tau: float = DEFAULT_TAU) -> AliveMask:
    """Channels with effective magnitude strictly above ``tau`` are
    alive; group members share one status; final-layer channels are
    always alive."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    eff = effective_gamma(gammas, net)
    mask = {lid: vec > tau for lid, vec in eff.items()}
    final = net.final_layer
    mask[final.id] = np.ones(final.out_width, dtype=bool)
    return mask


@dataclass(frozen=True)
class RegValue:
    total: float
    per_layer: dict
    includes_constant_terms: bool


def _input_side(net: NetworkSpec, layer, eff, mask):
    """(sum of input magnitudes, count of alive inputs, is_constant)."""
    if layer.inputs == (INPUT_ID,):
        channels = net.input_shape[2]
        return float(channels), channels, True
    src = layer.inputs[0]
    return float(eff[src].sum()), int(np.count_nonzero(mask[src])), False


def reg_value(
    net: NetworkSpec,
    gammas: GammaState,
    spatial,
    resource: Resource,
    tau: float = DEFAULT_TAU,
    include_constant_terms: bool = True,
) -> RegValue:
    """Evaluate the regularizer, per layer and in total."""
    eff = effective_gamma(gammas, net)
    mask = alive_mask(gammas, net, tau)
    final_id = net.final_layer.id

    per_layer = {}
    for layer in net.layers:
        coeff = resource.coefficient(layer, spatial[layer.id])
        g_in, alive_in, in_const = _input_side(net, layer, eff, mask)
        if layer.id == final_id:
            g_out, alive_out, out_const = float(layer.out_width), layer.out_width, True
        else:
            g_out = float(eff[layer.id].sum())
            alive_out = int(np.count_nonzero(mask[layer.id]))
            out_const = False
        first = coeff * g_in * alive_out
        second = coeff * alive_in * g_out
        if not include_constant_terms:
            if in_const:
                first = 0.0
            if out_const:
                second = 0.0
        per_layer[layer.id] = first + second
    return RegValue(
        total=float(sum(per_layer.values())),
        per_layer=per_layer,
        includes_constant_terms=include_constant_terms,
    )


def _slot_key(net: NetworkSpec, layer_id: str):
    group = net.group_of(layer_id)
    return group.members if group is not None else layer_id


def reg_coefficients(
    net: NetworkSpec,
    gammas: GammaState,
    spatial,
    resource: Resource,
    tau: float = DEFAULT_TAU,
) -> dict:
    """Nonnegative multiplier of each gamma in the regularizer, with
    alive indicators frozen at their current values.

    A channel slot's total coefficient collects the owning layers'
    input-alive terms plus every consumer's output-alive term. For a
    residual group the whole coefficient is assigned to the member
    holding the max magnitude at that index (ties broken by the
    lexicographically smallest layer id); the other members get zero.
    """
    gammas.check_against(net)
    eff_mask = alive_mask(gammas, net, tau)
    raw_abs = {lid: np.abs(np.asarray(vec, dtype=np.float64)) for lid, vec in gammas.values.items()}
    final_id = net.final_layer.id

    slot_scalars: dict = {}
    for layer in net.layers:
        coeff = resource.coefficient(layer, spatial[layer.id])
        if layer.id != final_id:
            alive_in = _alive_in_count(net, layer, eff_mask)
            key = _slot_key(net, layer.id)
            slot_scalars[key] = slot_scalars.get(key, 0.0) + coeff * alive_in
        if layer.inputs != (INPUT_ID,):
            alive_out = (
                layer.out_width
                if layer.id == final_id
                else int(np.count_nonzero(eff_mask[layer.id]))
            )
            key = _slot_key(net, layer.inputs[0])
            slot_scalars[key] = slot_scalars.get(key, 0.0) + coeff * alive_out

    coeffs = {lid: np.zeros(len(vec)) for lid, vec in gammas.values.items()}
    grouped = set()
    for group in net.residual_groups:
        grouped.update(group.members)
        scalar = slot_scalars.get(group.members, 0.0)
        members = sorted(group.members)
        stacked = np.stack([raw_abs[m] for m in members])
        winners = np.argmax(stacked, axis=0)  # ties -> smallest id (first row)
        for rank, member in enumerate(members):
            coeffs[member][winners == rank] = scalar
    for layer in net.hidden_layers():
        if layer.id not in grouped:
            coeffs[layer.id][:] = slot_scalars.get(layer.id, 0.0)
    return coeffs


def _alive_in_count(net: NetworkSpec, layer, mask) -> int:
    if layer.inputs == (INPUT_ID,):
        return net.input_shape[2]
    return int(np.count_nonzero(mask[layer.inputs[0]]))


def reg_subgradient(
    net: NetworkSpec,
    gammas: GammaState,
    spatial,
    resource: Resource,
    tau: float = DEFAULT_TAU,
) -> dict:
    """Subgradient of the regularizer with respect to each raw gamma,
    holding alive indicators fixed. sign(0) is 0, so exact zeros feel
    no pull."""
    coeffs = reg_coefficients(net, gammas, spatial, resource, tau)
    return {
        lid: coeffs[lid] * np.sign(np.asarray(gammas.values[lid], dtype=np.float64))
        for lid in coeffs
    }


# ---------------------------------------------------------------------------
# Gamma snapshot files (text-based, round-trip stable).

def gammas_to_json(gammas: GammaState) -> str:
    doc = {"gammas": {lid: [float(v) for v in vec] for lid, vec in gammas.values.items()}}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def gammas_from_json(text: str) -> GammaState:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GammaMismatchError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict) or "gammas" not in doc or not isinstance(doc["gammas"], dict):
        raise GammaMismatchError("snapshot must be an object with a 'gammas' mapping")
    values = {}
    for lid, vec in doc["gammas"].items():
        if not isinstance(vec, list) or not all(isinstance(v, (int, float)) for v in vec):
            raise GammaMismatchError(f"gammas for {lid!r} must be a list of numbers")
        values[lid] = np.asarray(vec, dtype=np.float64)
    return GammaState(values)


def save_gammas(gammas: GammaState, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(gammas_to_json(gammas))


def load_gammas(path) -> GammaState:
    with open(path, "r", encoding="utf-8") as fh:
        return gammas_from_json(fh.read())
