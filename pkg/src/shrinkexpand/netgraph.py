"""Network structure: layers, widths, connectivity, and width rewrites.

A network is a DAG of conv/dense layers. Layer inputs either come from
the network input (the reserved id ``"input"``) or from other layers.
A layer with ``combine="sum"`` adds its source activations channelwise
before applying its own filter; the sources of such a join are tied
together channel-by-channel and form a residual group.

``NetworkSpec`` values are immutable; every operation here is a pure
function returning new values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

INPUT_ID = "input"

CONV = "conv"
DENSE = "dense"
SINGLE = "single"
SUM = "sum"

_KINDS = (CONV, DENSE)
_COMBINES = (SINGLE, SUM)


class NetworkError(Exception):
    """Base class for structural errors."""


class InvalidNetworkError(NetworkError):
    """Raised when an operation requires a valid network and gets one
    with invariant violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class WidthAssignmentError(NetworkError):
    """Raised for width maps that cannot be applied (bad coverage,
    residual-group inequality, negative widths)."""


class DisconnectedNetworkError(NetworkError):
    """Raised when a width rewrite would cut the final layer off from
    the network input."""


class ArchitectureParseError(NetworkError):
    """Raised for malformed architecture documents. Carries position
    context (line/column or field path) in the message."""


@dataclass(frozen=True)
class LayerSpec:
    """One conv or dense layer.

    ``dense`` is the 1x1-filter special case of ``conv`` and must have
    filter (1, 1). ``inputs`` lists source layer ids, or ``("input",)``
    for layers fed by the network input. ``combine="sum"`` means the
    source activations are added channelwise; all sources then need
    equal widths and equal spatial dims.
    """

    id: str
    kind: str
    out_width: int
    filter: tuple[int, int]
    stride: int
    inputs: tuple[str, ...]
    combine: str = SINGLE
    batchnorm: bool = True


@dataclass(frozen=True)
class ResidualGroup:
    """Layers whose j-th output channels are summed at some join and
    are therefore pruned jointly."""

    members: tuple[str, ...]


@dataclass(frozen=True)
class SpatialShape:
    in_h: int
    in_w: int
    out_h: int
    out_w: int


@dataclass(frozen=True)
class NetworkSpec:
    """A network: ordered layers plus the input shape (h, w, channels).

    The layer order must be topological (every source precedes its
    consumers); ``validate`` checks this along with the remaining
    invariants. Residual groups are derived from sum joins, not stored.
    """

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))

    def layer(self, layer_id: str) -> LayerSpec:
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise KeyError(layer_id)

    def layer_ids(self) -> list[str]:
        return [layer.id for layer in self.layers]

    def consumers(self, layer_id: str) -> list[LayerSpec]:
        return [l for l in self.layers if layer_id in l.inputs]

    @property
    def final_layer(self) -> LayerSpec:
        sinks = self.sink_layers()
        if len(sinks) != 1:
            raise InvalidNetworkError(
                [f"expected exactly one final layer, found {len(sinks)}"]
            )
        return sinks[0]

    def sink_layers(self) -> list[LayerSpec]:
        consumed = {src for layer in self.layers for src in layer.inputs}
        return [l for l in self.layers if l.id not in consumed]

    def hidden_layers(self) -> list[LayerSpec]:
        """All layers except the final one (the prunable set)."""
        final_id = self.final_layer.id
        return [l for l in self.layers if l.id != final_id]

    def in_width(self, layer_id: str) -> int:
        """Input channel count: the network input's channels, or the
        (shared) out_width of the layer's sources."""
        layer = self.layer(layer_id)
        if layer.inputs == (INPUT_ID,):
            return self.input_shape[2]
        return self.layer(layer.inputs[0]).out_width

    @property
    def residual_groups(self) -> tuple[ResidualGroup, ...]:
        """Groups of layers tied channelwise by sum joins.

        Source sets of sum joins are merged transitively (a join over a
        join's sources ties everything together). Singleton sets are
        not groups.
        """
        parent: dict[str, str] = {}

        def find(x: str) -> str:
            while parent.setdefault(x, x) != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        def union(a: str, b: str) -> None:
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb

        for layer in self.layers:
            if layer.combine == SUM and len(layer.inputs) > 1:
                first = layer.inputs[0]
                for other in layer.inputs[1:]:
                    union(first, other)

        clusters: dict[str, list[str]] = {}
        for layer in self.layers:
            if layer.id in parent:
                clusters.setdefault(find(layer.id), []).append(layer.id)
        groups = [
            ResidualGroup(tuple(sorted(members)))
            for members in clusters.values()
            if len(members) > 1
        ]
        groups.sort(key=lambda g: g.members)
        return tuple(groups)

    def group_of(self, layer_id: str) -> ResidualGroup | None:
        for group in self.residual_groups:
            if layer_id in group.members:
                return group
        return None


SpatialMap = dict  # layer id -> SpatialShape


def validate(net: NetworkSpec) -> list[str]:
    """Return every invariant violation, each naming the layer at
    fault. An empty list means the network is well-formed."""
    violations: list[str] = []
    ids = [l.id for l in net.layers]
    seen: set[str] = set()
    for lid in ids:
        if lid == INPUT_ID:
            violations.append(f"layer id {INPUT_ID!r} is reserved")
        elif lid in seen:
            violations.append(f"duplicate layer id {lid!r}")
        seen.add(lid)
    if not net.layers:
        violations.append("network has no layers")
        return violations
    if len(net.input_shape) != 3 or any(d < 1 for d in net.input_shape):
        violations.append(f"input_shape must be 3 positive dims, got {net.input_shape}")

    known = set(ids)
    for layer in net.layers:
        if layer.kind not in _KINDS:
            violations.append(f"{layer.id}: unknown kind {layer.kind!r}")
        if layer.combine not in _COMBINES:
            violations.append(f"{layer.id}: unknown combine {layer.combine!r}")
        if layer.out_width < 1:
            violations.append(
                f"{layer.id}: out_width must be >= 1 (zero-width layers are removed by rewrites)"
            )
        f, g = layer.filter
        if f < 1 or g < 1:
            violations.append(f"{layer.id}: filter dims must be >= 1, got {layer.filter}")
        if layer.kind == DENSE and (f, g) != (1, 1):
            violations.append(f"{layer.id}: dense layers must have 1x1 filter, got {layer.filter}")
        if layer.stride < 1:
            violations.append(f"{layer.id}: stride must be >= 1, got {layer.stride}")
        if not layer.inputs:
            violations.append(f"{layer.id}: no inputs")
        if layer.combine == SINGLE and len(layer.inputs) != 1:
            violations.append(f"{layer.id}: combine 'single' requires exactly one input")
        if INPUT_ID in layer.inputs and len(layer.inputs) > 1:
            violations.append(f"{layer.id}: the network input cannot be part of a sum join")
        for src in layer.inputs:
            if src != INPUT_ID and src not in known:
                violations.append(f"{layer.id}: unknown source {src!r}")
        if len(set(layer.inputs)) != len(layer.inputs):
            violations.append(f"{layer.id}: repeated source")

    # Acyclicity, independent of list order.
    adjacency = {l.id: [s for s in l.inputs if s != INPUT_ID and s in known] for l in net.layers}
    state: dict[str, int] = {}

    def cyclic(node: str) -> bool:
        state[node] = 1
        for src in adjacency[node]:
            mark = state.get(src, 0)
            if mark == 1 or (mark == 0 and cyclic(src)):
                return True
        state[node] = 2
        return False

    cycle_found = any(state.get(lid, 0) == 0 and cyclic(lid) for lid in adjacency)
    if cycle_found:
        violations.append("graph not acyclic")
        return violations

    # Ordering: sources precede their consumers.
    position = {lid: i for i, lid in enumerate(ids)}
    for layer in net.layers:
        for src in layer.inputs:
            if src != INPUT_ID and src in position and position[src] >= position[layer.id]:
                violations.append(f"{layer.id}: source {src!r} does not precede it")

    sinks = net.sink_layers()
    if len(sinks) != 1:
        violations.append(
            "expected exactly one final layer, found "
            + (", ".join(l.id for l in sinks) if sinks else "none")
        )
        return violations
    final = sinks[0]

    for layer in net.layers:
        if layer.id == final.id:
            if layer.batchnorm:
                violations.append(f"{layer.id}: final layer must not carry batchnorm")
        elif not layer.batchnorm:
            violations.append(f"{layer.id}: prunable layers require batchnorm")

    # Width agreement across sum-join sources.
    for layer in net.layers:
        if len(layer.inputs) > 1:
            widths = {net.layer(src).out_width for src in layer.inputs}
            if len(widths) > 1:
                violations.append(
                    f"{layer.id}: sum join sources have unequal widths {sorted(widths)}"
                )

    if violations:
        return violations

    # Spatial agreement across sum-join sources (needs propagation).
    spatial = spatial_shapes(net, _checked=False)
    for layer in net.layers:
        if len(layer.inputs) > 1:
            dims = {(spatial[src].out_h, spatial[src].out_w) for src in layer.inputs}
            if len(dims) > 1:
                violations.append(
                    f"{layer.id}: sum join sources have unequal spatial dims {sorted(dims)}"
                )

    # Every layer must reach the final layer; dangling layers are dead weight.
    reaches: set[str] = {final.id}
    for layer in reversed(net.layers):
        if layer.id in reaches:
            reaches.update(s for s in layer.inputs if s != INPUT_ID)
    for layer in net.layers:
        if layer.id not in reaches:
            violations.append(f"{layer.id}: does not feed the final layer")

    return violations


def check_valid(net: NetworkSpec) -> None:
    violations = validate(net)
    if violations:
        raise InvalidNetworkError(violations)


def _ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def spatial_shapes(net: NetworkSpec, _checked: bool = True) -> SpatialMap:
    """Propagate spatial dims from the input through every layer.

    Same-padding convention: out = ceil(in / stride) in each dim.
    """
    if _checked:
        check_valid(net)
    h0, w0 = net.input_shape[0], net.input_shape[1]
    shapes: SpatialMap = {}
    for layer in net.layers:
        if layer.inputs == (INPUT_ID,):
            in_h, in_w = h0, w0
        else:
            src = shapes[layer.inputs[0]]
            in_h, in_w = src.out_h, src.out_w
        shapes[layer.id] = SpatialShape(
            in_h, in_w, _ceil_div(in_h, layer.stride), _ceil_div(in_w, layer.stride)
        )
    return shapes


def induced_width_map(net: NetworkSpec) -> dict[str, int]:
    """The width map a net assigns to itself (non-final layers only)."""
    return {l.id: l.out_width for l in net.hidden_layers()}


def apply_widths(net: NetworkSpec, new_widths: dict[str, int]) -> NetworkSpec:
    """Rewrite the network with new output widths.

    Zero-width layers are deleted. The rewrite then cascades: layers
    left with no sources disappear, as do layers that no longer feed
    the final layer, so a dead conv inside a residual branch takes the
    whole branch with it and the join passes its remaining inputs
    through. Surviving residual-group members must be assigned one
    common width; a member may instead be assigned 0 (removal). The
    final layer keeps its width and must stay connected.
    """
    check_valid(net)
    final = net.final_layer
    hidden_ids = {l.id for l in net.hidden_layers()}

    unknown = set(new_widths) - hidden_ids
    if unknown:
        raise WidthAssignmentError(
            f"widths assigned to non-rescalable layers: {sorted(unknown)}"
        )
    missing = hidden_ids - set(new_widths)
    if missing:
        raise WidthAssignmentError(f"widths missing for layers: {sorted(missing)}")
    for lid, width in new_widths.items():
        if not isinstance(width, int) or width < 0:
            raise WidthAssignmentError(f"{lid}: width must be a non-negative int, got {width!r}")

    for group in net.residual_groups:
        surviving = {new_widths[m] for m in group.members if m in new_widths and new_widths[m] > 0}
        if len(surviving) > 1:
            raise WidthAssignmentError(
                f"residual group {group.members} assigned unequal widths {sorted(surviving)}"
            )

    alive = {l.id for l in net.layers if l.id == final.id or new_widths[l.id] > 0}

    # Cascade: drop layers with no surviving source, then layers that no
    # longer feed the final layer.
    changed = True
    while changed:
        changed = False
        for layer in net.layers:
            if layer.id not in alive or layer.id == final.id:
                continue
            sources = [s for s in layer.inputs if s == INPUT_ID or s in alive]
            if not sources:
                alive.discard(layer.id)
                changed = True
        feeds_final: set[str] = {final.id}
        for layer in reversed(net.layers):
            if layer.id in feeds_final:
                feeds_final.update(s for s in layer.inputs if s != INPUT_ID and s in alive)
        for lid in list(alive):
            if lid not in feeds_final:
                alive.discard(lid)
                changed = True

    final_sources = [s for s in final.inputs if s == INPUT_ID or s in alive]
    if not final_sources:
        raise DisconnectedNetworkError(
            "width assignment disconnects the final layer from the input"
        )

    rebuilt: list[LayerSpec] = []
    for layer in net.layers:
        if layer.id not in alive:
            continue
        sources = tuple(s for s in layer.inputs if s == INPUT_ID or s in alive)
        combine = layer.combine if len(sources) > 1 else SINGLE
        width = final.out_width if layer.id == final.id else new_widths[layer.id]
        rebuilt.append(
            replace(layer, out_width=width, inputs=sources, combine=combine)
        )

    result = NetworkSpec(tuple(rebuilt), net.input_shape)
    check_valid(result)
    return result


# ---------------------------------------------------------------------------
# Architecture documents. Field names are fixed; see docs/formats.md.

def serialize(net: NetworkSpec) -> str:
    """Render the network as an architecture document (JSON text).

    The residual_groups section is derived data included for readers;
    ``parse`` recomputes it and rejects documents where it disagrees
    with the layer graph.
    """
    doc = {
        "input_shape": list(net.input_shape),
        "layers": [
            {
                "id": l.id,
                "kind": l.kind,
                "out_width": l.out_width,
                "filter": list(l.filter),
                "stride": l.stride,
                "inputs": list(l.inputs),
                "combine": l.combine,
                "batchnorm": l.batchnorm,
            }
            for l in net.layers
        ],
        "residual_groups": [list(g.members) for g in net.residual_groups],
    }
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def _require(mapping, field, kind, where):
    if field not in mapping:
        raise ArchitectureParseError(f"{where}: missing field {field!r}")
    value = mapping[field]
    if kind is int and isinstance(value, bool):
        raise ArchitectureParseError(f"{where}: field {field!r} must be an integer")
    if not isinstance(value, kind):
        raise ArchitectureParseError(
            f"{where}: field {field!r} must be {kind.__name__}, got {type(value).__name__}"
        )
    return value


def parse(text: str) -> NetworkSpec:
    """Parse an architecture document; inverse of ``serialize``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ArchitectureParseError(
            f"line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise ArchitectureParseError("document root must be an object")

    shape = _require(doc, "input_shape", list, "document")
    if len(shape) != 3 or not all(isinstance(d, int) and not isinstance(d, bool) for d in shape):
        raise ArchitectureParseError("document: input_shape must be three integers")

    raw_layers = _require(doc, "layers", list, "document")
    layers = []
    for index, entry in enumerate(raw_layers):
        where = f"layers[{index}]"
        if not isinstance(entry, dict):
            raise ArchitectureParseError(f"{where}: layer entry must be an object")
        lid = _require(entry, "id", str, where)
        where = f"layers[{index}] ({lid})"
        kind = _require(entry, "kind", str, where)
        if kind not in _KINDS:
            raise ArchitectureParseError(f"{where}: unknown layer kind {kind!r}")
        filt = _require(entry, "filter", list, where)
        if len(filt) != 2 or not all(isinstance(d, int) and not isinstance(d, bool) for d in filt):
            raise ArchitectureParseError(f"{where}: filter must be two integers")
        inputs = _require(entry, "inputs", list, where)
        if not all(isinstance(s, str) for s in inputs):
            raise ArchitectureParseError(f"{where}: inputs must be layer ids")
        combine = entry.get("combine", SINGLE)
        if combine not in _COMBINES:
            raise ArchitectureParseError(f"{where}: unknown combine {combine!r}")
        layers.append(
            LayerSpec(
                id=lid,
                kind=kind,
                out_width=_require(entry, "out_width", int, where),
                filter=(filt[0], filt[1]),
                stride=_require(entry, "stride", int, where),
                inputs=tuple(inputs),
                combine=combine,
                batchnorm=_require(entry, "batchnorm", bool, where),
            )
        )

    net = NetworkSpec(tuple(layers), (shape[0], shape[1], shape[2]))
    violations = validate(net)
    if violations:
        raise ArchitectureParseError("document describes an invalid network: " + "; ".join(violations))

    if "residual_groups" in doc:
        declared = sorted(tuple(sorted(g)) for g in doc["residual_groups"])
        derived = sorted(g.members for g in net.residual_groups)
        if declared != derived:
            raise ArchitectureParseError(
                f"document: residual_groups {declared} disagree with the layer graph {derived}"
            )
    return net


def load_architecture(path) -> NetworkSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse(fh.read())


def save_architecture(net: NetworkSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(net))
