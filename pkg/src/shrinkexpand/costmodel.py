"""Resource accounting: FLOPs / parameter counts and the exact width
multiplier solver.

A layer's cost is bilinear in its input and output widths,
``C * I * O``, with a per-layer coefficient ``C`` that depends on the
targeted resource: ``2*y*z*f*g`` for FLOPs (one multiply-add counts as
two operations) and ``f*g`` for model size. Bias and batch-norm
parameters are small linear terms and are deliberately left out of
both counts. All counts are exact integers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .netgraph import (
    INPUT_ID,
    NetworkSpec,
    SpatialShape,
    check_valid,
    spatial_shapes,
)


class Resource(enum.Enum):
    FLOPS = "flops"
    MODEL_SIZE = "model_size"

    def coefficient(self, layer, shape: SpatialShape) -> int:
        f, g = layer.filter
        if self is Resource.FLOPS:
            return 2 * shape.out_h * shape.out_w * f * g
        return f * g


class MaskMismatchError(ValueError):
    """Alive mask does not fit the network (missing layers, wrong
    lengths, or a residual group with inconsistent member masks)."""


class InfeasibleBudgetError(ValueError):
    """No width assignment with every layer at width >= 1 fits the
    budget. ``min_achievable_cost`` is the cost at the smallest
    multiplier keeping all widths positive; ``degenerate`` marks
    budgets below even the final layer's minimal cost."""

    def __init__(self, message: str, min_achievable_cost: int, degenerate: bool = False):
        super().__init__(message)
        self.min_achievable_cost = min_achievable_cost
        self.degenerate = degenerate


@dataclass(frozen=True)
class CostReport:
    per_layer: dict
    total: int
    resource: Resource
    mode: str  # "full" | "alive_projected"

    def as_table(self) -> str:
        """Two-column text table (layer id, count) plus a total row."""
        width = max([len(lid) for lid in self.per_layer] + [len("total")])
        lines = [f"{lid:<{width}}  {count}" for lid, count in self.per_layer.items()]
        lines.append(f"{'total':<{width}}  {self.total}")
        return "\n".join(lines) + "\n"


# An AliveMask is a dict: layer id -> boolean vector over output
# channels. Residual-group members must carry identical vectors; the
# final layer's entry is optional and, when present, must be all-true.
AliveMask = dict


def full_alive_mask(net: NetworkSpec) -> AliveMask:
    return {l.id: np.ones(l.out_width, dtype=bool) for l in net.layers}


def layer_cost(net: NetworkSpec, layer_id: str, spatial, resource: Resource) -> int:
    """Cost of one layer: coefficient times input width times output
    width. Bias cost is omitted."""
    layer = net.layer(layer_id)
    return resource.coefficient(layer, spatial[layer_id]) * net.in_width(layer_id) * layer.out_width


def _check_mask(net: NetworkSpec, mask: AliveMask) -> None:
    final_id = net.final_layer.id
    for layer in net.layers:
        if layer.id == final_id and layer.id not in mask:
            continue
        if layer.id not in mask:
            raise MaskMismatchError(f"mask missing layer {layer.id!r}")
        vec = np.asarray(mask[layer.id], dtype=bool)
        if vec.shape != (layer.out_width,):
            raise MaskMismatchError(
                f"mask for {layer.id!r} has shape {vec.shape}, expected ({layer.out_width},)"
            )
    if final_id in mask and not np.all(np.asarray(mask[final_id], dtype=bool)):
        raise MaskMismatchError("final-layer outputs are always alive")
    for group in net.residual_groups:
        vecs = [np.asarray(mask[m], dtype=bool) for m in group.members]
        if any(not np.array_equal(vecs[0], v) for v in vecs[1:]):
            raise MaskMismatchError(
                f"residual group {group.members} has inconsistent member masks"
            )


def network_cost(net: NetworkSpec, mask: AliveMask | None, resource: Resource) -> CostReport:
    """Total cost over all layers, optionally discounting dead channels.

    With a mask, a layer's effective output width is its alive-channel
    count and its effective input width is the alive count of its
    source's outputs (a sum join's sources share one group mask, so any
    member gives the count). Channels of the network input are always
    alive.
    """
    check_valid(net)
    spatial = spatial_shapes(net)
    final_id = net.final_layer.id
    if mask is not None:
        _check_mask(net, mask)

    def alive_out(layer_id: str) -> int:
        layer = net.layer(layer_id)
        if mask is None or layer_id == final_id:
            return layer.out_width
        return int(np.count_nonzero(np.asarray(mask[layer_id], dtype=bool)))

    per_layer = {}
    total = 0
    for layer in net.layers:
        if layer.inputs == (INPUT_ID,):
            alive_in = net.input_shape[2]
        else:
            alive_in = alive_out(layer.inputs[0])
        cost = resource.coefficient(layer, spatial[layer.id]) * alive_in * alive_out(layer.id)
        per_layer[layer.id] = cost
        total += cost
    return CostReport(
        per_layer=per_layer,
        total=total,
        resource=resource,
        mode="full" if mask is None else "alive_projected",
    )


def projected_cost(net: NetworkSpec, gammas, tau: float | None = None, resource: Resource = Resource.FLOPS) -> CostReport:
    """Cost assuming every channel whose effective gamma magnitude is
    at or below ``tau`` (default 0.01) is removed."""
    from .regularizer import DEFAULT_TAU, alive_mask

    if tau is None:
        tau = DEFAULT_TAU
    return network_cost(net, alive_mask(gammas, net, tau), resource)


def _cost_of_widths(structure, widths: dict) -> int:
    total = 0
    for lid, coeff, src in structure:
        in_width = src if isinstance(src, int) else widths[src]
        total += coeff * in_width * widths[lid]
    return total


def _build_structure(net: NetworkSpec, resource: Resource):
    """Per-layer (id, coefficient, input source) rows, where the input
    source is either a constant channel count (network input) or the
    id of the layer whose width feeds it."""
    spatial = spatial_shapes(net)
    rows = []
    for layer in net.layers:
        src = net.input_shape[2] if layer.inputs == (INPUT_ID,) else layer.inputs[0]
        rows.append((layer.id, resource.coefficient(layer, spatial[layer.id]), src))
    return rows


def max_width_multiplier(net: NetworkSpec, budget: int, resource: Resource) -> tuple[float, dict]:
    """Largest uniform multiplier whose floored widths fit the budget.

    Scales every non-final width to ``floor(omega * width)``; the final
    layer is never rescaled. The cost as a function of omega is a
    nondecreasing step function whose jumps lie on rationals k/width,
    so the maximum is found exactly with integer arithmetic: a binary
    search over the common-denominator grid of all jump points, no
    floating-point scan. Returns the smallest omega achieving the
    optimal widths together with the width map.

    Raises InfeasibleBudgetError when even the smallest multiplier that
    keeps every width at 1 or more exceeds the budget.
    """
    if budget <= 0:
        raise ValueError(f"budget must be positive, got {budget}")
    check_valid(net)
    structure = _build_structure(net, resource)
    final = net.final_layer
    hidden = net.hidden_layers()

    fixed = {final.id: final.out_width}
    if not hidden:
        total = _cost_of_widths(structure, fixed)
        if total > budget:
            raise InfeasibleBudgetError(
                f"final layer alone costs {total}, over budget {budget}",
                min_achievable_cost=total,
                degenerate=True,
            )
        return 1.0, {}

    seed = {l.id: l.out_width for l in hidden}
    denom = math.lcm(*sorted({w for w in seed.values()}))

    def widths_at(numer: int) -> dict:
        scaled = {lid: (numer * w) // denom for lid, w in seed.items()}
        scaled.update(fixed)
        return scaled

    def cost_at(numer: int) -> int:
        return _cost_of_widths(structure, widths_at(numer))

    # Smallest grid point with every width >= 1.
    lo = max(denom // w for w in seed.values())
    min_cost = cost_at(lo)
    if min_cost > budget:
        spatial = spatial_shapes(net)
        min_widths = widths_at(lo)
        final_in = (
            net.input_shape[2]
            if final.inputs == (INPUT_ID,)
            else min_widths[final.inputs[0]]
        )
        final_min = resource.coefficient(final, spatial[final.id]) * final_in * final.out_width
        degenerate = budget < final_min
        raise InfeasibleBudgetError(
            f"minimum achievable cost {min_cost} exceeds budget {budget}",
            min_achievable_cost=min_cost,
            degenerate=degenerate,
        )

    hi = lo
    while cost_at(hi) <= budget:
        hi *= 2
    # Invariant: cost_at(lo) <= budget < cost_at(hi).
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if cost_at(mid) <= budget:
            lo = mid
        else:
            hi = mid

    best = widths_at(lo)
    new_widths = {lid: best[lid] for lid in seed}
    # Smallest omega achieving these floors: max over layers of w'/w.
    num, den = max(
        ((new_widths[lid], seed[lid]) for lid in seed),
        key=lambda frac: (frac[0] * denom) // frac[1],
    )
    omega = num / den
    return omega, new_widths
