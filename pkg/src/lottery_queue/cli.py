"""Command-line entry point: ``solve``, ``benchmark``, ``sweep`` and ``simulate``.

Every command reads one YAML config, writes CSV tables plus a
``manifest.json`` into a run directory and exits with 0 on success, 2 on a
config error, 3 when the solver did not converge (results are still written
and flagged) and 4 on any other failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import records
from .benchmarks import dynamic_pricing_optimum, static_pricing_optimum
from .config import ConfigError, ExperimentConfig, MarketBlock, load_config, sweep_params
from .equilibrium import solve_equilibrium
from .ga import GaOptions, run_ga
from .lower import SolverOptions
from .model import CapacityVector, MarketParams
from .objectives import CertificateError, extend_policy
from .simulator import EVENT_LOG_HEADER, SimPolicy, compare, simulate

EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED, EXIT_INTERNAL = 0, 2, 3, 4
OUTPUT_ROOT_ENV = "LOTTERY_QUEUE_OUTPUT_ROOT"

log = logging.getLogger("lottery_queue.cli")


def _run_dir(args, cfg: ExperimentConfig, command: str) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        root = cfg.output_dir or os.environ.get(OUTPUT_ROOT_ENV) or "runs"
        path = Path(root) / f"{command}-{cfg.objective}-seed{cfg.seed}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _manifest(command: str, cfg: ExperimentConfig, started: float, files, **extra) -> dict:
    data = {
        "command": command,
        "config": cfg.model_dump(mode="json"),
        "market": dataclasses.asdict(cfg.params()),
        "seed": cfg.seed,
        "versions": records.versions(),
        "started_at": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "wall_time_seconds": time.time() - started,
        "files": sorted(Path(f).name for f in files),
    }
    data.update(extra)
    return data


def _lottery_row(params: MarketParams, kind: str, ga_options: GaOptions,
                 solver_options: SolverOptions):
    result = run_ga(params, kind, ga_options, solver_options)
    eq = result.best.equilibrium
    x = eq.throughputs()
    W = [float(w @ (eq.steady.probabilities[:len(w)] * lam)) for w, lam in
         zip(eq.waiting.expected, params.arrival_rates)]
    avg_wait = float(sum(W) / x.sum())
    return result, avg_wait


def cmd_solve(cfg: ExperimentConfig, run_dir: Path) -> int:
    started = time.time()
    params = cfg.params()
    result = run_ga(params, cfg.objective, cfg.ga_options(), cfg.solver_options())
    best = result.best
    files = records.write_solution(run_dir, best, cfg.objective)
    try:
        ext = extend_policy(params, best.lottery, best.equilibrium.capacities, best.prices)
        certificate = {"holds": ext.holds, "utility_holds": ext.utility_holds}
    except CertificateError as exc:
        certificate = {"holds": False, "error": str(exc)}
    status = "ok" if best.converged else "not_converged"
    records.write_manifest(run_dir / records.MANIFEST, _manifest(
        "solve", cfg, started, files, status=status, partial=not best.converged,
        capacities=list(result.capacities), objective=best.objective_value,
        ga={"generations": result.generations, "evaluations": result.evaluations,
            "history": list(result.history), "init_bounds": list(result.init_bounds)},
        over_capacity_certificate=certificate))
    print(f"capacities={records.join_ints(result.capacities)} objective={best.objective_value:.6f} "
          f"prices={';'.join(f'{p:.6f}' for p in best.prices.prices)} status={status}")
    return EXIT_OK if best.converged else EXIT_NOT_CONVERGED


def _benchmark_rows(params: MarketParams, kind: str, ga_options, solver_options, scope: str):
    lottery, avg_wait = _lottery_row(params, kind, ga_options, solver_options)
    dyn = dynamic_pricing_optimum(params, kind)
    sta = static_pricing_optimum(params, kind, price_scope=scope)
    base = lottery.fitness
    rows = [("lottery", kind, records.join_ints(lottery.capacities),
             ";".join(records.fmt(p) for p in lottery.best.prices.prices), avg_wait, base, 0.0)]
    for res in (dyn, sta):
        prices = "" if res.scheme == "dynamic" else ";".join(
            records.fmt(float(p[0])) if len(p) else "" for p in res.prices)
        rows.append((res.scheme, kind, records.join_ints(res.capacities), prices, res.average_wait,
                     res.objective, res.objective / base - 1.0 if base else float("nan")))
    return rows, lottery.best.converged


def cmd_benchmark(cfg: ExperimentConfig, run_dir: Path) -> int:
    started = time.time()
    rows, converged = _benchmark_rows(cfg.params(), cfg.objective, cfg.ga_options(),
                                      cfg.solver_options(), cfg.benchmark.static_price_scope)
    path = records.write_table(run_dir / "benchmark.csv", records.BENCHMARK_HEADER, rows)
    records.write_manifest(run_dir / records.MANIFEST, _manifest(
        "benchmark", cfg, started, [path], status="ok" if converged else "not_converged",
        partial=not converged))
    for row in rows:
        print(f"scheme={row[0]} capacities={row[2]} objective={row[5]:.6f}")
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def _sweep_point(task):
    params, kind, ga_options, solver_options, scope, parameter, value = task
    point = params if parameter == "none" else sweep_params(params, parameter, value)
    rows, converged = _benchmark_rows(point, kind, ga_options, solver_options, scope)
    return [(parameter, value, r[0], kind, r[2], r[4], r[5]) for r in rows], converged


def cmd_sweep(cfg: ExperimentConfig, run_dir: Path, workers: int) -> int:
    started = time.time()
    params = cfg.params()
    if cfg.sweep is None:
        points = [("none", float("nan"))]  # empty sweep block: one run at the given market
    else:
        points = [(cfg.sweep.parameter, v) for v in cfg.sweep.values()]
    tasks = [(params, cfg.objective, cfg.ga_options(), cfg.solver_options(),
              cfg.benchmark.static_price_scope, p, v) for p, v in points]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sweep_point, tasks))
    else:
        results = [_sweep_point(t) for t in tasks]
    rows = [row for point_rows, _ in results for row in point_rows]
    converged = all(c for _, c in results)
    path = records.write_table(run_dir / "sweep.csv", records.SWEEP_HEADER, rows)
    records.write_manifest(run_dir / records.MANIFEST, _manifest(
        "sweep", cfg, started, [path], status="ok" if converged else "not_converged",
        partial=not converged, workers=workers))
    print(f"points={len(tasks)} rows={len(rows)} file={path}")
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_simulate(cfg: ExperimentConfig, run_dir: Path, policy_dir: Optional[str]) -> int:
    started = time.time()
    policy_dir = policy_dir or cfg.simulator.policy_run_dir
    params = cfg.params()
    if policy_dir:
        solved = records.read_solution(Path(policy_dir))
        market = solved.manifest.get("config", {}).get("market")
        if market:
            params = MarketBlock.model_validate(market).to_params()
        prices = tuple(np.full(c, p) for c, p in zip(solved.capacities, solved.prices.prices))
        policy = SimPolicy(solved.capacities, solved.lottery, prices)
    elif cfg.simulator.fifo_capacities:
        policy = SimPolicy.fifo(CapacityVector(tuple(cfg.simulator.fifo_capacities)))
    else:
        raise ConfigError("simulate needs simulator.policy_run_dir, --run or simulator.fifo_capacities")
    log_path = run_dir / "events.csv" if cfg.simulator.event_log else None
    stats = simulate(params, policy, cfg.sim_config(log_path))
    eq = solve_equilibrium(params, policy.capacities, policy.lottery)
    report = compare(stats, eq, cfg.simulator.confidence, cfg.simulator.min_samples,
                     cfg.simulator.family_wise)
    files = [records.write_table(run_dir / "agreement.csv", records.AGREEMENT_HEADER, [
        (r.quantity, r.group, r.length, r.analytic, r.empirical, r.se, r.lower, r.upper,
         r.samples, r.covered) for r in report.rows])]
    files.append(records.write_table(run_dir / "sim_summary.csv", ("metric", "value"), [
        ("events", stats.events), ("measured_hours", stats.measured_hours),
        ("arrivals", stats.arrivals), ("joined", stats.joined), ("balked", stats.balked),
        ("matched", stats.matched), ("in_queue_end", stats.in_queue_end),
        ("lost_passengers", stats.lost_passengers),
        ("profit_rate", stats.profit_rate), ("profit_rate_se", stats.profit_se),
        ("welfare_rate", stats.welfare_rate), ("welfare_rate_se", stats.welfare_se),
        ("states_checked", len(report.checked)), ("all_covered", report.all_covered)]))
    if log_path:
        files.append(log_path)
    records.write_manifest(run_dir / records.MANIFEST, _manifest(
        "simulate", cfg, started, files, status="ok", policy_run_dir=policy_dir,
        critical_value=report.critical_value, event_log_header=list(EVENT_LOG_HEADER)))
    print(f"states_checked={len(report.checked)} all_covered={report.all_covered} "
          f"events={stats.events}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lottery-queue", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "benchmark", "sweep", "simulate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", help="run directory (default: <output root>/<command>-<objective>-seed<seed>)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, help="parallel workers for sweeps")
        p.add_argument("--objective", choices=("profit", "welfare"))
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        if name == "simulate":
            p.add_argument("--run", help="run directory of a previous solve")
    return parser


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        changes["seed"] = args.seed
    if args.objective is not None:
        changes["objective"] = args.objective
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("workers must be >= 1")
        changes["workers"] = args.workers
    if not changes:
        return cfg
    data = cfg.model_dump()
    data.update(changes)
    return ExperimentConfig.model_validate(data)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        run_dir = _run_dir(args, cfg, args.command)
        if args.command == "solve":
            return cmd_solve(cfg, run_dir)
        if args.command == "benchmark":
            return cmd_benchmark(cfg, run_dir)
        if args.command == "sweep":
            return cmd_sweep(cfg, run_dir, cfg.workers)
        return cmd_simulate(cfg, run_dir, args.run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - mapped to the documented exit code
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
