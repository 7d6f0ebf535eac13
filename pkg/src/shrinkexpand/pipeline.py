"""The shrink-expand loop.

One iteration: train with the resource-weighted regularizer, read the
surviving width of every layer off the alive masks, rewrite the
network to those widths (removing dead layers and branches), then grow
everything back uniformly with the largest width multiplier that fits
the budget, and finally retrain the new structure from scratch without
the regularizer to measure it. Iterating reallocates width between
layers while the budget holds exactly.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .costmodel import (
    InfeasibleBudgetError,
    Resource,
    max_width_multiplier,
    network_cost,
)
from .engine.data import DataSource
from .engine.train import DivergenceError, TrainConfig, TrainRecord, train
from .netgraph import (
    DisconnectedNetworkError,
    NetworkSpec,
    apply_widths,
    check_valid,
    parse,
    serialize,
)
from .regularizer import DEFAULT_TAU, GammaState, alive_mask, effective_gamma


class AllChannelsDeadError(RuntimeError):
    """Shrinking killed every channel; the regularizer strength is far
    too large."""


class PipelineAborted(RuntimeError):
    """No candidate of an iteration survived. Carries the partial
    history and chains the last underlying error."""

    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class PipelineConfig:
    """Configuration of the full loop.

    ``lam`` may be a single strength or a sweep; with a sweep, every
    value is shrunk and retrained independently each iteration and the
    best retrain accuracy under budget wins (ties: lower cost).
    """

    budget: int
    resource: Resource
    lam: tuple
    iterations: int
    shrink: TrainConfig
    retrain: TrainConfig
    tau: float = DEFAULT_TAU
    seed: int = 0

    def __post_init__(self):
        lams = self.lam if isinstance(self.lam, (tuple, list)) else (self.lam,)
        object.__setattr__(self, "lam", tuple(float(l) for l in lams))
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if not self.lam:
            raise ValueError("at least one lambda is required")


@dataclass
class ShrinkResult:
    widths: dict            # layer id -> alive channel count (0 = removed)
    gammas: GammaState
    gamma_gap: float        # smallest alive / largest dead effective magnitude
    history: list           # TrainRecords from the regularized run


def gamma_gap_ratio(net: NetworkSpec, gammas: GammaState, tau: float) -> float:
    """min(alive effective magnitudes) / max(dead ones); inf when
    nothing is dead or every dead gamma is exactly zero."""
    eff = effective_gamma(gammas, net)
    mask = alive_mask(gammas, net, tau)
    alive_vals = [eff[l.id][mask[l.id]] for l in net.hidden_layers()]
    dead_vals = [eff[l.id][~mask[l.id]] for l in net.hidden_layers()]
    alive_flat = np.concatenate(alive_vals) if alive_vals else np.array([])
    dead_flat = np.concatenate(dead_vals) if dead_vals else np.array([])
    if alive_flat.size == 0:
        return 0.0
    if dead_flat.size == 0 or dead_flat.max() == 0.0:
        return float("inf")
    return float(alive_flat.min() / dead_flat.max())


def shrink(net: NetworkSpec, data: DataSource, lam: float, config: TrainConfig) -> ShrinkResult:
    """Regularized training followed by width extraction.

    Widths are the per-layer alive-channel counts at the configured
    threshold; residual-group members share masks and therefore widths.
    """
    if lam <= 0:
        raise ValueError("shrink requires lam > 0")
    config = replace(config, lam=lam)
    result = train(net, data, config)
    gammas = result.params.gamma_state()
    mask = alive_mask(gammas, net, config.tau)
    widths = {l.id: int(np.count_nonzero(mask[l.id])) for l in net.hidden_layers()}
    if widths and all(w == 0 for w in widths.values()):
        raise AllChannelsDeadError(
            f"lam={lam} zeroed every channel; the strength is too large"
        )
    return ShrinkResult(
        widths=widths,
        gammas=gammas,
        gamma_gap=gamma_gap_ratio(net, gammas, config.tau),
        history=result.history,
    )


def expand(net: NetworkSpec, widths: dict, budget: int, resource: Resource):
    """Apply extracted widths (removing dead layers), then scale the
    survivors with the largest feasible multiplier. Removed layers stay
    removed. Returns (expanded net, omega)."""
    pruned = apply_widths(net, widths)
    omega, scaled = max_width_multiplier(pruned, budget, resource)
    expanded = apply_widths(pruned, scaled) if scaled else pruned
    return expanded, omega


def lambda_probe(
    net: NetworkSpec,
    data: DataSource,
    lam: float,
    config: TrainConfig,
    probe_steps: int,
    collapse_fraction: float = 0.05,
    min_drop_fraction: float = 0.02,
) -> str:
    """Truncated shrink to classify a regularizer strength.

    too_large: the projected cost collapses below ``collapse_fraction``
    of the seed cost (or training diverges). too_small: it drops by
    less than ``min_drop_fraction`` of the seed cost. Otherwise usable.
    """
    probe_cfg = replace(config, lam=float(lam), steps=probe_steps,
                        eval_every=max(1, probe_steps))
    seed_cost = network_cost(net, None, config.resource).total
    try:
        result = train(net, data, probe_cfg)
    except DivergenceError:
        return "too_large"
    projected = result.history[-1].projected_cost
    if projected < collapse_fraction * seed_cost:
        return "too_large"
    if seed_cost - projected < min_drop_fraction * seed_cost:
        return "too_small"
    return "usable"


@dataclass
class CandidateRecord:
    lam: float
    error: str | None = None
    extracted_widths: dict | None = None
    omega: float | None = None
    gamma_gap: float | None = None
    shrunk_cost: int | None = None
    expanded_cost: int | None = None
    retrain_accuracy: float | None = None
    expanded_net: NetworkSpec | None = None
    shrink_history: list = field(default_factory=list)
    selected: bool = False


@dataclass
class IterationRecord:
    index: int
    seed_widths: dict
    candidates: list
    selected_lam: float | None = None

    @property
    def selected(self) -> CandidateRecord | None:
        for cand in self.candidates:
            if cand.selected:
                return cand
        return None


@dataclass
class PipelineHistory:
    resource: Resource
    budget: int
    seed: int
    iterations: list = field(default_factory=list)
    converged_early: bool = False
    aborted: str | None = None

    @property
    def final_net(self) -> NetworkSpec:
        return self.iterations[-1].selected.expanded_net


def _derived_seed(*parts) -> int:
    ss = np.random.SeedSequence(entropy=list(parts))
    return int(ss.generate_state(1, np.uint64)[0])


def _run_candidate(net, data, lam, shrink_cfg, retrain_cfg, budget, resource):
    record = CandidateRecord(lam=lam)
    try:
        shrunk = shrink(net, data, lam, shrink_cfg)
        record.extracted_widths = shrunk.widths
        record.gamma_gap = shrunk.gamma_gap
        record.shrink_history = shrunk.history
        expanded, omega = expand(net, shrunk.widths, budget, resource)
        record.omega = omega
        record.shrunk_cost = network_cost(
            apply_widths(net, shrunk.widths), None, resource
        ).total
        record.expanded_cost = network_cost(expanded, None, resource).total
        retrained = train(expanded, data, retrain_cfg)
        record.retrain_accuracy = retrained.history[-1].accuracy
        record.expanded_net = expanded
    except (DivergenceError, AllChannelsDeadError, InfeasibleBudgetError,
            DisconnectedNetworkError) as exc:
        record.error = f"{type(exc).__name__}: {exc}"
    return record


def optimize(net: NetworkSpec, data: DataSource, config: PipelineConfig,
             workers: int = 1) -> PipelineHistory:
    """Run the full loop for the configured number of iterations.

    Every iteration shrinks the current seed at each lambda, expands to
    the budget, and retrains from a fresh initialization without the
    regularizer. Stops early when the selected widths repeat. Raises
    PipelineAborted (with partial history attached) when no lambda
    survives an iteration.
    """
    check_valid(net)
    history = PipelineHistory(resource=config.resource, budget=config.budget,
                              seed=config.seed)
    current = net
    previous_widths = None
    for iteration in range(config.iterations):
        jobs = []
        for k, lam in enumerate(config.lam):
            shrink_cfg = replace(
                config.shrink, lam=lam, tau=config.tau, resource=config.resource,
                seed=_derived_seed(config.seed, config.shrink.seed, iteration, k, 0),
            )
            retrain_cfg = replace(
                config.retrain, lam=0.0, tau=config.tau, resource=config.resource,
                seed=_derived_seed(config.seed, config.retrain.seed, iteration, k, 1),
            )
            jobs.append((current, data, lam, shrink_cfg, retrain_cfg,
                         config.budget, config.resource))
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                candidates = list(pool.map(_run_candidate_star, jobs))
        else:
            candidates = [_run_candidate(*job) for job in jobs]

        record = IterationRecord(
            index=iteration,
            seed_widths={l.id: l.out_width for l in current.layers},
            candidates=candidates,
        )
        usable = [c for c in candidates if c.error is None]
        if not usable:
            history.iterations.append(record)
            history.aborted = "; ".join(c.error for c in candidates)
            raise PipelineAborted(
                f"iteration {iteration}: every lambda failed ({history.aborted})",
                history,
            )
        best = max(
            usable,
            key=lambda c: (c.retrain_accuracy, -c.expanded_cost, -c.lam),
        )
        best.selected = True
        record.selected_lam = best.lam
        history.iterations.append(record)

        new_widths = {l.id: l.out_width for l in best.expanded_net.layers}
        if previous_widths is not None and new_widths == previous_widths:
            history.converged_early = True
            break
        previous_widths = new_widths
        current = best.expanded_net
    return history


def _run_candidate_star(job):
    return _run_candidate(*job)


# ---------------------------------------------------------------------------
# History (de)serialization: a structured text report consumed by the
# CLI report command. Numbers round-trip exactly.

def _record_to_dict(rec: TrainRecord) -> dict:
    return {"step": rec.step, "loss": rec.loss, "reg_value": rec.reg_value,
            "projected_cost": rec.projected_cost, "accuracy": rec.accuracy}


def _record_from_dict(d: dict) -> TrainRecord:
    return TrainRecord(step=d["step"], loss=d["loss"], reg_value=d["reg_value"],
                       projected_cost=d["projected_cost"], accuracy=d["accuracy"])


def history_to_json(history: PipelineHistory) -> str:
    doc = {
        "resource": history.resource.value,
        "budget": history.budget,
        "seed": history.seed,
        "converged_early": history.converged_early,
        "aborted": history.aborted,
        "iterations": [
            {
                "index": it.index,
                "seed_widths": it.seed_widths,
                "selected_lam": it.selected_lam,
                "candidates": [
                    {
                        "lam": c.lam,
                        "error": c.error,
                        "extracted_widths": c.extracted_widths,
                        "omega": c.omega,
                        "gamma_gap": c.gamma_gap,
                        "shrunk_cost": c.shrunk_cost,
                        "expanded_cost": c.expanded_cost,
                        "retrain_accuracy": c.retrain_accuracy,
                        "selected": c.selected,
                        "expanded_arch": (
                            json.loads(serialize(c.expanded_net))
                            if c.expanded_net is not None else None
                        ),
                        "shrink_history": [_record_to_dict(r) for r in c.shrink_history],
                    }
                    for c in it.candidates
                ],
            }
            for it in history.iterations
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def history_from_json(text: str) -> PipelineHistory:
    doc = json.loads(text)
    history = PipelineHistory(
        resource=Resource(doc["resource"]),
        budget=doc["budget"],
        seed=doc["seed"],
        converged_early=doc.get("converged_early", False),
        aborted=doc.get("aborted"),
    )
    for it_doc in doc.get("iterations", []):
        record = IterationRecord(
            index=it_doc["index"],
            seed_widths=it_doc["seed_widths"],
            candidates=[],
            selected_lam=it_doc.get("selected_lam"),
        )
        for c_doc in it_doc.get("candidates", []):
            arch = c_doc.get("expanded_arch")
            record.candidates.append(CandidateRecord(
                lam=c_doc["lam"],
                error=c_doc.get("error"),
                extracted_widths=c_doc.get("extracted_widths"),
                omega=c_doc.get("omega"),
                gamma_gap=c_doc.get("gamma_gap"),
                shrunk_cost=c_doc.get("shrunk_cost"),
                expanded_cost=c_doc.get("expanded_cost"),
                retrain_accuracy=c_doc.get("retrain_accuracy"),
                expanded_net=parse(json.dumps(arch)) if arch is not None else None,
                shrink_history=[_record_from_dict(r) for r in c_doc.get("shrink_history", [])],
                selected=c_doc.get("selected", False),
            ))
        history.iterations.append(record)
    return history
