"""
menuconnect Commands
Command registry, dispatch with exit codes, and the argument parser behind main.py
"""

import argparse
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from artifacts.artifact_store import ArtifactStore, read_menu, read_path, resolve
from artifacts.schemas import (
    ConnectSummaryDocument,
    GapDocument,
    PathReportDocument,
    ReducibilityDocument,
    RevenueDocument,
    TrainSummaryDocument,
)
from cli.run_config import Command, RunConfig
from mechanism_engine import connectivity, evaluation, training
from mechanism_engine.distributions import (
    analytic_revenue_1d,
    effective_density_bound,
    landscape_grid,
    landscape_local_maxima,
)
from mechanism_engine.errors import AuditFailure, MenuConnectError
from mechanism_engine.menu_core import MechanismKind, MenuPath, straight_line, validate
from mechanism_engine.rochet_mechanism import SoftmaxConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAILED_CHECK = 2

AUDIT_COLUMNS = ("t", "rev_estimate", "stderr", "min_per_sample_slack")
HISTORY_COLUMNS = ("step", "softmax_objective", "argmax_revenue_estimate")
LANDSCAPE_COLUMNS = ("x", "p", "revenue")


@dataclass
class RunContext:
    config: RunConfig
    seed: int
    store: ArtifactStore
    base_dir: Optional[Path] = None

    def input_path(self, index: int) -> Path:
        return resolve(self.base_dir, self.config.inputs[index])


def _unit_grid(step: float) -> np.ndarray:
    count = int(round(1.0 / step))
    return np.round(np.arange(count + 1) * step, 12)


def _check_menus(*menus) -> None:
    for menu in menus:
        problems = validate(menu)
        if problems:
            first = problems[0]
            raise MenuConnectError(
                f"invalid input menu: option {first.option_index} violates {first.constraint} ({first.detail})"
            )


def run_train(ctx: RunContext) -> int:
    section = ctx.config.train
    cfg = section.train_config(ctx.seed)
    result = training.train(cfg, section.kind, ctx.config.distribution, section.num_buyers, section.num_items)
    ctx.store.write_menu("menu.json", result.menu)
    ctx.store.write_csv("history.csv", training.history_rows(result), HISTORY_COLUMNS)

    shape = evaluation.MenuShape.of(result.menu)
    bound = evaluation.smoothing_bound(shape, cfg.Y, effective_density_bound(ctx.config.distribution, section.num_items))
    summary = TrainSummaryDocument(
        kind=section.kind,
        steps=cfg.steps,
        final_softmax_objective=result.history[-1].softmax_objective if result.history else None,
        final_argmax_revenue=result.final_revenue,
        smoothing_bound=bound,
    )
    ctx.store.write_json("train_summary.json", summary)
    print(f"🎯 Trained {section.kind.value} menu with K={cfg.K}; smoothing bound at Y={cfg.Y:g} is {bound:.4f}")
    return EXIT_OK


def run_connect(ctx: RunContext) -> int:
    section = ctx.config.connect
    menu_a, menu_b = read_menu(ctx.input_path(0)), read_menu(ctx.input_path(1))
    _check_menus(menu_a, menu_b)
    threshold = None
    if section.mode == "large":
        threshold = connectivity.large_menu_threshold(menu_a.kind, section.epsilon, menu_a.num_items, menu_a.num_buyers)
        path = connectivity.connect_large(menu_a, menu_b, section.epsilon, enforce_threshold=section.enforce_threshold)
    else:
        keep_a, keep_b = (connectivity.ReductionSet.of(indices) for indices in section.reduction_sets)
        if section.mode == "zero":
            path = connectivity.connect_zero_reducible(menu_a, keep_a, menu_b, keep_b)
        else:
            path = connectivity.connect_epsilon_reducible(menu_a, keep_a, menu_b, keep_b)

    ctx.store.write_path("path.json", path)
    summary = ConnectSummaryDocument(
        mode=section.mode,
        kind=path.kind,
        num_pieces=path.num_pieces,
        menu_size=path.start.size,
        reduction_sets=[list(map(int, s)) for s in section.reduction_sets or []],
        threshold=threshold,
    )
    ctx.store.write_json("connect_summary.json", summary)
    print(f"🔗 Built a {path.num_pieces}-piece path over {path.start.size} options")
    return EXIT_OK


def _load_audit_path(ctx: RunContext) -> MenuPath:
    if len(ctx.config.inputs) == 2:
        menu_a, menu_b = read_menu(ctx.input_path(0)), read_menu(ctx.input_path(1))
        return straight_line(menu_a, menu_b)
    return read_path(ctx.input_path(0))


def run_audit(ctx: RunContext) -> int:
    section = ctx.config.audit
    path = _load_audit_path(ctx)
    report = evaluation.path_audit(
        path, ctx.config.distribution, section.samples, section.grid_points, section.epsilon, ctx.seed, section.method
    )
    ctx.store.write_csv("audit.csv", report.rows(), AUDIT_COLUMNS)
    ctx.store.write_json(
        "audit_report.json",
        PathReportDocument(
            passed=report.passed,
            method=report.method,
            epsilon=report.epsilon,
            samples=report.samples,
            floor=report.floor,
            worst_t=report.worst_t,
            min_estimate=float(report.estimates.min()),
            min_per_sample_slack=report.min_per_sample_slack,
            num_pieces=path.num_pieces,
        ),
    )
    if report.passed:
        print(f"✅ Audit PASS: min revenue {report.estimates.min():.6f} >= floor {report.floor:.6f}")
        return EXIT_OK
    raise AuditFailure(
        f"audit FAIL: revenue {report.estimates.min():.6f} at t={report.worst_t:.3f} is below floor {report.floor:.6f}"
    )


def run_reduce(ctx: RunContext) -> int:
    section = ctx.config.reduce
    menu = read_menu(ctx.input_path(0))
    _check_menus(menu)
    report = evaluation.estimate_reducibility(menu, ctx.config.distribution, section.samples, section.epsilon, ctx.seed)
    ctx.store.write_reduction_set("reduction_set.json", report.selected)
    ctx.store.write_menu("reduced_menu.json", connectivity.reduce_menu(menu, report.selected))
    ctx.store.write_json(
        "reducibility.json",
        ReducibilityDocument(
            selected=list(report.selected.indices),
            epsilon_hat=report.epsilon_hat,
            samples=report.samples,
            cap=report.cap,
            target=report.target,
            reached_target=report.reached_target,
            history=report.history,
            event_frequency=report.event_frequency,
        ),
    )
    print(f"✂️  Selected {len(report.selected)} of {menu.size} options, epsilon_hat={report.epsilon_hat:.5f}")
    return EXIT_OK


def run_discretize(ctx: RunContext) -> int:
    menu = read_menu(ctx.input_path(0))
    _check_menus(menu)
    fine = connectivity.discretize(menu, ctx.config.discretize.epsilon)
    ctx.store.write_menu("discretized_menu.json", fine)
    ctx.store.write_reduction_set("reduction_set.json", connectivity.reduction_set_of_discretized(fine))
    print(f"📐 Discretized {menu.size} options onto {connectivity.distinct_allocations(fine)} distinct allocations")
    return EXIT_OK


def run_eval(ctx: RunContext) -> int:
    section = ctx.config.eval
    menu = read_menu(ctx.input_path(0))
    _check_menus(menu)
    smoothing = SoftmaxConfig(Y=section.smoothing_Y) if section.smoothing_Y is not None else None
    estimate = evaluation.mc_revenue(menu, ctx.config.distribution, section.samples, ctx.seed, smoothing)
    analytic = None
    if menu.kind is MechanismKind.ROCHET and menu.num_items == 1 and smoothing is None \
            and ctx.config.distribution.kind != "product_of":
        analytic = analytic_revenue_1d(menu, ctx.config.distribution)
    ctx.store.write_json(
        "revenue.json",
        RevenueDocument(
            estimate=estimate.estimate,
            stderr=estimate.stderr,
            samples=estimate.samples,
            smoothing_Y=section.smoothing_Y,
            analytic=analytic,
        ),
    )
    print(f"💰 Revenue {estimate.estimate:.6f} ± {estimate.stderr:.2g}")
    return EXIT_OK


def run_gap(ctx: RunContext) -> int:
    section = ctx.config.gap
    if ctx.config.inputs:
        menu = read_menu(ctx.input_path(0))
        _check_menus(menu)
        shape = evaluation.MenuShape.of(menu)
    else:
        menu = None
        shape = evaluation.MenuShape(section.kind, section.K, section.n, section.m)
    report = evaluation.softmax_gap_report(
        shape,
        section.Y,
        density_bound=section.density_bound,
        menu=menu,
        spec=ctx.config.distribution,
        samples=section.samples,
        seed=ctx.seed,
    )
    ctx.store.write_json(
        "gap_report.json",
        GapDocument(
            kind=shape.kind,
            K=shape.num_regular,
            n=shape.num_items,
            m=shape.num_buyers,
            Y=report.Y,
            density_bound=report.density_bound,
            bound=report.bound,
            empirical=report.empirical,
            stderr=report.stderr,
            argmax_revenue=report.argmax_revenue,
            softmax_revenue=report.softmax_revenue,
            within_bound=report.within_bound,
        ),
    )
    if not report.within_bound:
        raise AuditFailure(f"gap check FAIL: empirical gap {report.empirical:.6f} exceeds bound {report.bound:.6f}")
    print(f"📏 Smoothing bound {report.bound:.6f}" + (
        f", empirical gap {report.empirical:.6f}" if report.empirical is not None else ""))
    return EXIT_OK


def run_landscape(ctx: RunContext) -> int:
    section = ctx.config.landscape
    xs, ps = _unit_grid(section.x_step), _unit_grid(section.p_step)
    grid = landscape_grid(ctx.config.distribution, xs, ps)
    rows = [{"x": float(x), "p": float(p), "revenue": float(grid[i, j])}
            for i, x in enumerate(xs) for j, p in enumerate(ps)]
    ctx.store.write_csv("landscape.csv", rows, LANDSCAPE_COLUMNS)
    peaks = [float(ps[j]) for j in landscape_local_maxima(grid[-1])]
    ctx.store.write_json("landscape_maxima.json", {"x": float(xs[-1]), "local_maxima_p": peaks})
    print(f"🗺️  Landscape over {len(xs)} x {len(ps)} points; x={xs[-1]:g} row has maxima at p={peaks}")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunContext], int]] = {
    "train": run_train,
    "connect": run_connect,
    "audit": run_audit,
    "reduce": run_reduce,
    "discretize": run_discretize,
    "eval": run_eval,
    "gap": run_gap,
    "landscape": run_landscape,
}


def dispatch(command: Command, config: RunConfig, out_dir, base_dir: Optional[Path] = None) -> int:
    """
    Run one command and write its artifacts plus manifest.json under out_dir

    Exit status: 0 on success, 2 when an audit or gap check fails, 1 for any
    other menuconnect error.
    """
    if config.command is not None and config.command != command:
        print(f"❌ Config is for '{config.command}' but '{command}' was requested")
        return EXIT_ERROR
    problems = config.requirements(command)
    if problems:
        for problem in problems:
            print(f"❌ {problem}")
        return EXIT_ERROR

    store = ArtifactStore(out_dir)
    ctx = RunContext(config=config, seed=int(config.seed), store=store, base_dir=base_dir)
    try:
        status = COMMANDS[command](ctx)
    except AuditFailure as exc:
        print(f"❌ {exc}")
        status = EXIT_FAILED_CHECK
    except (MenuConnectError, ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"❌ {command} failed: {exc}")
        return EXIT_ERROR

    manifest_config = config.model_copy(update={"command": command})
    store.write_manifest(command, ctx.seed, manifest_config.model_dump(mode="json", exclude={"output"}))
    print(f"📁 Artifacts written to {store.out_dir}")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="menuconnect", description="Menu-based auctions and low-loss paths between them")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="run config JSON")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--out", default=None, help="output directory (default: config 'output' or ./out)")
    parser.add_argument("--verbose", action="store_true")
    return parser


def load_config(path: Path) -> RunConfig:
    """Parse the config file; json and pydantic errors propagate"""
    payload = json.loads(path.read_text(encoding="utf-8"))
    return RunConfig.model_validate(payload)


def describe_validation_error(exc: ValidationError) -> List[str]:
    return [f"{'.'.join(str(part) for part in error['loc']) or '<root>'}: {error['msg']}" for error in exc.errors()]


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    config_path = Path(args.config)
    print(f"🚀 menuconnect {args.command} ({config_path})")
    try:
        config = load_config(config_path)
    except OSError as exc:
        print(f"❌ Cannot read config: {exc}")
        return EXIT_ERROR
    except json.JSONDecodeError as exc:
        print(f"❌ Malformed config JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}")
        return EXIT_ERROR
    except ValidationError as exc:
        for line in describe_validation_error(exc):
            print(f"❌ Invalid config field {line}")
        return EXIT_ERROR

    if args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    out_dir = Path(args.out or config.output or "out")
    return dispatch(args.command, config, out_dir, base_dir=config_path.parent)
