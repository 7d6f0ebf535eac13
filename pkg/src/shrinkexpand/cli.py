"""Command-line interface.

Subcommands: cost, probe, run, expand, report, shrink-analyze. Exit
codes: 0 ok, 1 input/parse error, 2 dimension/config error,
3 infeasible budget, 4 divergence or collapse. Commands never modify
their inputs; commands that write artifacts also write a manifest
recording input and output checksums, and rerunning with identical
inputs reproduces the artifacts byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone

from . import __version__
from .costmodel import (
    InfeasibleBudgetError,
    MaskMismatchError,
    Resource,
    network_cost,
    projected_cost,
)
from .engine import kernels
from .engine.data import make_data_source
from .engine.train import DivergenceError, TrainConfig
from .netgraph import (
    ArchitectureParseError,
    DisconnectedNetworkError,
    InvalidNetworkError,
    NetworkSpec,
    WidthAssignmentError,
    load_architecture,
    save_architecture,
    serialize,
)
from .pipeline import (
    AllChannelsDeadError,
    PipelineAborted,
    PipelineConfig,
    PipelineHistory,
    expand as expand_net,
    gamma_gap_ratio,
    history_from_json,
    history_to_json,
    lambda_probe,
    optimize,
)
from .regularizer import DEFAULT_TAU, GammaMismatchError, alive_mask, load_gammas

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_DIVERGED = 4


class ConfigError(ValueError):
    """Config file is readable JSON but semantically unusable."""


class InputError(ValueError):
    """Unreadable or unparseable input."""


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _read_json(path, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read {what} {path!r}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(
            f"{what} {path!r}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict):
        raise InputError(f"{what} {path!r}: root must be an object")
    return doc


def _load_arch(path) -> NetworkSpec:
    try:
        return load_architecture(path)
    except OSError as exc:
        raise InputError(f"cannot read architecture {path!r}: {exc}") from exc


def _resource_from(value: str) -> Resource:
    try:
        return Resource(value)
    except ValueError as exc:
        raise ConfigError(
            f"unknown resource {value!r}; use 'flops' or 'model_size'"
        ) from exc


def _train_config(doc: dict, where: str, defaults: dict) -> TrainConfig:
    if not isinstance(doc, dict):
        raise InputError(f"config section {where!r} must be an object")
    known = {"learning_rate", "momentum", "batch_size", "steps", "eval_every",
             "weight_decay", "seed"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"config section {where!r}: unknown keys {sorted(unknown)}")
    merged = {**defaults, **doc}
    try:
        return TrainConfig(**merged)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section {where!r}: {exc}") from exc


def load_run_config(path):
    """Parse a run config file into (PipelineConfig, data source,
    probe_steps)."""
    doc = _read_json(path, "config")
    for field in ("resource", "budget", "data", "shrink"):
        if field not in doc:
            raise InputError(f"config {path!r}: missing field {field!r}")
    resource = _resource_from(doc["resource"])
    budget = doc["budget"]
    if not isinstance(budget, int) or budget <= 0:
        raise ConfigError(f"config {path!r}: budget must be a positive integer")
    lam = doc.get("lambda", 0.0)
    seed = doc.get("seed", 0)
    tau = doc.get("tau", DEFAULT_TAU)
    iterations = doc.get("iterations", 1)
    shrink_cfg = _train_config(doc["shrink"], "shrink", {})
    retrain_cfg = _train_config(doc.get("retrain", doc["shrink"]), "retrain", {})
    try:
        config = PipelineConfig(
            budget=budget, resource=resource, lam=lam, iterations=iterations,
            shrink=shrink_cfg, retrain=retrain_cfg, tau=tau, seed=seed,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config {path!r}: {exc}") from exc
    try:
        data = make_data_source(doc["data"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config {path!r}: data: {exc}") from exc
    probe_steps = doc.get("probe_steps", max(1, shrink_cfg.steps // 10))
    if not isinstance(probe_steps, int) or probe_steps < 1:
        raise ConfigError(f"config {path!r}: probe_steps must be a positive integer")
    return config, data, probe_steps


def _write_manifest(outdir, command, args, input_paths, outputs, started, seed=None):
    manifest = {
        "command": command,
        "argv": list(args),
        "package_version": __version__,
        "kernel_backend": kernels.active_backend(),
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in input_paths},
        "outputs": {name: _sha256(os.path.join(outdir, name)) for name in sorted(outputs)},
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# cost


def cmd_cost(args) -> int:
    net = _load_arch(args.arch)
    resource = _resource_from(args.resource)
    full = network_cost(net, None, resource)
    out = [f"resource: {resource.value}", "full:", full.as_table().rstrip("\n")]
    if args.gammas:
        try:
            gammas = load_gammas(args.gammas)
        except OSError as exc:
            raise InputError(f"cannot read gammas {args.gammas!r}: {exc}") from exc
        projected = projected_cost(net, gammas, args.tau, resource)
        out.append(f"projected (tau={args.tau:g}):")
        out.append(projected.as_table().rstrip("\n"))
    print("\n".join(out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# probe


def _parse_lambdas(tokens) -> list[float]:
    values = []
    for token in tokens:
        try:
            values.append(float(token))
        except ValueError as exc:
            raise InputError(f"malformed lambda token {token!r}") from exc
        if values[-1] < 0:
            raise InputError(f"lambda must be >= 0, got {token!r}")
    return values


def _probe_one(job):
    net, data, lam, cfg, steps = job
    if lam == 0.0:
        return "too_small"
    return lambda_probe(net, data, lam, cfg, steps)


def cmd_probe(args) -> int:
    net = _load_arch(args.arch)
    config, data, probe_steps = load_run_config(args.config)
    if args.probe_steps is not None:
        probe_steps = args.probe_steps
    lams = _parse_lambdas(args.lambdas)
    cfg = replace(config.shrink, resource=config.resource, tau=config.tau,
                  seed=config.seed)
    jobs = [(net, data, lam, cfg, probe_steps) for lam in lams]
    if args.parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_probe_one, jobs))
    else:
        results = [_probe_one(job) for job in jobs]
    width = max(len(f"{lam:g}") for lam in lams)
    print(f"{'lambda':<{max(width, 6)}}  classification")
    for lam, verdict in zip(lams, results):
        print(f"{lam:<{max(width, 6)}g}  {verdict}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run


def _format_widths(widths: dict) -> str:
    return " ".join(f"{lid}={w}" for lid, w in widths.items())


def _run_report(history: PipelineHistory) -> str:
    lines = [
        "shrink-expand run",
        f"resource: {history.resource.value}",
        f"budget: {history.budget}",
        f"seed: {history.seed}",
        f"iterations: {len(history.iterations)}"
        + (" (converged early)" if history.converged_early else ""),
        "",
        "iteration  lambda      omega      cost          accuracy",
    ]
    for it in history.iterations:
        chosen = it.selected
        if chosen is None:
            lines.append(f"{it.index + 1:<10} aborted: {history.aborted}")
            continue
        lines.append(
            f"{it.index + 1:<10} {chosen.lam:<11.6g} {chosen.omega:<10.6g} "
            f"{chosen.expanded_cost:<13} {chosen.retrain_accuracy:.4f}"
        )
    lines.append("")
    for it in history.iterations:
        lines.append(f"iteration {it.index + 1}")
        lines.append(f"  seed widths: {_format_widths(it.seed_widths)}")
        for cand in it.candidates:
            tag = " [selected]" if cand.selected else ""
            if cand.error is not None:
                lines.append(f"  lambda {cand.lam:g}{tag}: failed ({cand.error})")
                continue
            lines.append(
                f"  lambda {cand.lam:g}{tag}: extracted {_format_widths(cand.extracted_widths)}"
            )
            lines.append(
                f"    omega={cand.omega:.6g} shrunk_cost={cand.shrunk_cost} "
                f"expanded_cost={cand.expanded_cost} gamma_gap={cand.gamma_gap:.4g} "
                f"retrain_accuracy={cand.retrain_accuracy:.4f}"
            )
        chosen = it.selected
        if chosen is not None:
            final_widths = {l.id: l.out_width for l in chosen.expanded_net.layers}
            lines.append(f"  expanded widths: {_format_widths(final_widths)}")
    if history.iterations and history.iterations[-1].selected is not None:
        last = history.iterations[-1].selected
        lines.append("")
        lines.append(f"final cost: {last.expanded_cost} (budget {history.budget})")
        lines.append(f"final accuracy: {last.retrain_accuracy:.4f}")
    return "\n".join(lines) + "\n"


def _curves_csv(history: PipelineHistory) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("iteration", "lambda", "step", "loss", "reg_value",
                     "projected_flops", "accuracy"))
    for it in history.iterations:
        for cand in it.candidates:
            for rec in cand.shrink_history:
                writer.writerow((it.index + 1, repr(cand.lam), rec.step,
                                 repr(rec.loss), repr(rec.reg_value),
                                 rec.projected_cost, repr(rec.accuracy)))
    return buf.getvalue()


def _write_run_artifacts(outdir, history: PipelineHistory) -> list[str]:
    names = []

    def emit(name, text):
        with open(os.path.join(outdir, name), "w", encoding="utf-8") as fh:
            fh.write(text)
        names.append(name)

    emit("report.txt", _run_report(history))
    emit("history.json", history_to_json(history))
    emit("curves.csv", _curves_csv(history))
    for it in history.iterations:
        chosen = it.selected
        if chosen is not None:
            emit(f"iter_{it.index + 1}.arch", serialize(chosen.expanded_net))
    return names


def cmd_run(args) -> int:
    started = datetime.now(timezone.utc).isoformat()
    net = _load_arch(args.arch)
    config, data, _ = load_run_config(args.config)
    os.makedirs(args.outdir, exist_ok=True)
    code = EXIT_OK
    try:
        history = optimize(net, data, config, workers=args.parallel)
    except PipelineAborted as exc:
        history = exc.history
        code = _abort_exit_code(history)
        print(f"error: {exc}", file=sys.stderr)
    names = _write_run_artifacts(args.outdir, history)
    _write_manifest(args.outdir, "run", sys.argv[1:], [args.arch, args.config],
                    names, started, seed=config.seed)
    if code == EXIT_OK:
        last = history.iterations[-1].selected
        print(f"wrote {len(names)} artifacts to {args.outdir}")
        print(f"final cost {last.expanded_cost} <= budget {history.budget}; "
              f"accuracy {last.retrain_accuracy:.4f}")
    return code


def _abort_exit_code(history: PipelineHistory) -> int:
    message = history.aborted or ""
    if "InfeasibleBudgetError" in message and "DivergenceError" not in message \
            and "AllChannelsDeadError" not in message:
        return EXIT_INFEASIBLE
    return EXIT_DIVERGED


# ---------------------------------------------------------------------------
# expand


def cmd_expand(args) -> int:
    net = _load_arch(args.arch)
    doc = _read_json(args.widths, "widths")
    widths = {}
    for lid, value in doc.items():
        if not isinstance(value, int) or isinstance(value, bool) or value < 0:
            raise ConfigError(f"widths {args.widths!r}: {lid!r} must map to a "
                              f"non-negative integer, got {value!r}")
        widths[lid] = value
    resource = _resource_from(args.resource)
    expanded, omega = expand_net(net, widths, args.budget, resource)
    save_architecture(expanded, args.output)
    total = network_cost(expanded, None, resource).total
    print(f"omega: {omega:.6g}")
    print(f"cost: {total} (budget {args.budget})")
    print(f"wrote {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report


def _tradeoff_rows(history: PipelineHistory):
    rows = []
    for it in history.iterations:
        for cand in it.candidates:
            if cand.error is None:
                rows.append((it.index + 1, cand.lam, cand.omega,
                             cand.expanded_cost, cand.retrain_accuracy))
    rows.sort(key=lambda r: (r[3], r[0], r[1]))
    return rows


def cmd_report(args) -> int:
    try:
        with open(args.history, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read history {args.history!r}: {exc}") from exc
    try:
        history = history_from_json(text)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed history {args.history!r}: {exc}") from exc
    if not history.iterations:
        raise InputError(f"history {args.history!r} is empty")

    started = datetime.now(timezone.utc).isoformat()
    os.makedirs(args.outdir, exist_ok=True)
    names = []

    def emit_csv(name, header, rows):
        with open(os.path.join(args.outdir, name), "w", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        names.append(name)

    rows = _tradeoff_rows(history)
    emit_csv("tradeoff_lambda.csv", ("cost", "accuracy", "lambda", "iteration"),
             [(cost, repr(acc), repr(lam), idx) for idx, lam, _, cost, acc in rows])
    emit_csv("tradeoff_omega.csv", ("cost", "accuracy", "omega", "iteration"),
             [(cost, repr(acc), repr(om), idx) for idx, _, om, cost, acc in rows])

    for it in history.iterations:
        chosen = it.selected
        extracted = chosen.extracted_widths if chosen else {}
        expanded = (
            {l.id: l.out_width for l in chosen.expanded_net.layers} if chosen else {}
        )
        table = [
            (lid, seed_w, extracted.get(lid, ""), expanded.get(lid, 0))
            for lid, seed_w in it.seed_widths.items()
        ]
        emit_csv(f"widths_iter_{it.index + 1}.csv",
                 ("layer", "seed_width", "extracted_width", "expanded_width"),
                 table)

    _write_manifest(args.outdir, "report", sys.argv[1:], [args.history],
                    names, started, seed=history.seed)
    print(f"wrote {len(names)} tables to {args.outdir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# shrink-analyze


def cmd_shrink_analyze(args) -> int:
    net = _load_arch(args.arch)
    try:
        gammas = load_gammas(args.gammas)
    except OSError as exc:
        raise InputError(f"cannot read gammas {args.gammas!r}: {exc}") from exc
    resource = _resource_from(args.resource)
    mask = alive_mask(gammas, net, args.tau)
    print(f"tau: {args.tau:g}")
    print("alive widths:")
    for layer in net.hidden_layers():
        alive = int(mask[layer.id].sum())
        print(f"  {layer.id}  {alive}/{layer.out_width}")
    gap = gamma_gap_ratio(net, gammas, args.tau)
    print(f"gamma gap ratio: {gap:.6g}")
    full = network_cost(net, None, resource)
    projected = projected_cost(net, gammas, args.tau, resource)
    print(f"full {resource.value}: {full.total}")
    print(f"projected {resource.value}: {projected.total}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shrinkexpand",
        description="Optimize layer widths under a FLOP or parameter budget.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cost", help="per-layer and total resource counts")
    p.add_argument("arch")
    p.add_argument("--resource", default="flops")
    p.add_argument("--gammas", default=None,
                   help="gamma snapshot; also prints the alive-projected cost")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("probe", help="classify regularizer strengths on a short run")
    p.add_argument("arch")
    p.add_argument("config")
    p.add_argument("--lambda", dest="lambdas", nargs="+", required=True,
                   metavar="LAMBDA")
    p.add_argument("--probe-steps", type=int, default=None)
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("run", help="full shrink-expand loop")
    p.add_argument("arch")
    p.add_argument("config")
    p.add_argument("--outdir", required=True)
    p.add_argument("--parallel", type=int, default=1,
                   help="parallel workers for the lambda sweep")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("expand", help="apply widths, then the largest feasible multiplier")
    p.add_argument("arch")
    p.add_argument("widths", help="JSON file mapping layer id to width")
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--resource", default="flops")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("report", help="plot-ready CSVs from a run history")
    p.add_argument("history")
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("shrink-analyze", help="alive widths and projected cost of a gamma snapshot")
    p.add_argument("arch")
    p.add_argument("gammas")
    p.add_argument("--tau", type=float, default=DEFAULT_TAU)
    p.add_argument("--resource", default="flops")
    p.set_defaults(func=cmd_shrink_analyze)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, ArchitectureParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, InvalidNetworkError, WidthAssignmentError,
            DisconnectedNetworkError, GammaMismatchError, MaskMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleBudgetError as exc:
        print(f"error: infeasible budget: {exc} "
              f"(minimal achievable cost {exc.min_achievable_cost})", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (DivergenceError, AllChannelsDeadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
