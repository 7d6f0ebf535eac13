"""Width optimization for feed-forward networks under a resource
budget: shrink with a resource-weighted sparsifying regularizer on
batch-norm scales, extract the surviving widths, and expand them with
the largest feasible uniform width multiplier."""

from .costmodel import (
    CostReport,
    InfeasibleBudgetError,
    MaskMismatchError,
    Resource,
    full_alive_mask,
    layer_cost,
    max_width_multiplier,
    network_cost,
    projected_cost,
)
from .netgraph import (
    INPUT_ID,
    ArchitectureParseError,
    DisconnectedNetworkError,
    InvalidNetworkError,
    LayerSpec,
    NetworkSpec,
    ResidualGroup,
    WidthAssignmentError,
    apply_widths,
    induced_width_map,
    load_architecture,
    parse,
    save_architecture,
    serialize,
    spatial_shapes,
    validate,
)
from .regularizer import (
    DEFAULT_TAU,
    GammaMismatchError,
    GammaState,
    RegValue,
    alive_mask,
    effective_gamma,
    load_gammas,
    reg_coefficients,
    reg_subgradient,
    reg_value,
    save_gammas,
)

__version__ = "0.1.0"

from .pipeline import (  # noqa: E402
    AllChannelsDeadError,
    CandidateRecord,
    IterationRecord,
    PipelineAborted,
    PipelineConfig,
    PipelineHistory,
    ShrinkResult,
    expand,
    gamma_gap_ratio,
    history_from_json,
    history_to_json,
    lambda_probe,
    optimize,
    shrink,
)
