"""Result files: CSV tables with fixed headers, a JSON manifest, and readers.

Floats are written with ``repr`` so a file read back reproduces the values
exactly, and so identical runs produce byte-identical tables.
"""
from __future__ import annotations

import csv
import json
import platform
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import CapacityVector, LotteryPolicy, PricePolicy

SUMMARY_HEADER = ("group", "capacity", "price", "max_tolerable_wait_hours", "throughput_per_hour",
                  "objective_kind", "objective_per_hour", "converged", "certified")
WAITS_HEADER = ("group", "length", "expected_wait_hours")
STEADY_HEADER = ("length", "probability")
SWEEP_HEADER = ("parameter", "value", "scheme", "objective_kind", "capacities",
                "average_wait_hours", "objective_per_hour")
BENCHMARK_HEADER = ("scheme", "objective_kind", "capacities", "prices", "average_wait_hours",
                    "objective_per_hour", "relative_to_lottery")
AGREEMENT_HEADER = ("quantity", "group", "length", "analytic", "empirical", "standard_error",
                    "ci_lower", "ci_upper", "samples", "covered")
MANIFEST = "manifest.json"


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return str(x)


def join_ints(values: Iterable[int]) -> str:
    return ";".join(str(int(v)) for v in values)


def split_ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(";")) if text else ()


def write_table(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row width {len(row)} does not match header {header}")
            writer.writerow([fmt(v) for v in row])
    return path


def read_table(path: Path, header: Optional[Sequence[str]] = None) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if header is not None and tuple(reader.fieldnames or ()) != tuple(header):
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return list(reader)


def lottery_header(n_hat: int) -> tuple[str, ...]:
    return ("length",) + tuple(f"position_{l}" for l in range(1, n_hat + 1))


def write_lottery(path: Path, rows: Sequence[np.ndarray]) -> Path:
    """One group's lottery as a (length x position) matrix; impossible cells are blank."""
    n_hat = len(rows)
    return write_table(path, lottery_header(n_hat),
                       ([n] + [float(v) for v in row] + [None] * (n_hat - n - 1)
                        for n, row in enumerate(rows)))


def read_lottery(path: Path) -> tuple[np.ndarray, ...]:
    records = read_table(path)
    out = []
    for n, rec in enumerate(records):
        if int(rec["length"]) != n:
            raise ValueError(f"{path}: lengths out of order")
        out.append(np.array([float(rec[f"position_{l}"]) for l in range(1, n + 2)]))
    return tuple(out)


def write_manifest(path: Path, data: dict) -> Path:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_manifest(run_dir: Path) -> dict:
    with open(Path(run_dir) / MANIFEST) as fh:
        return json.load(fh)


def versions() -> dict:
    import numpy
    import scipy

    from . import __version__
    return {"lottery_queue": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


@dataclass(frozen=True)
class SolvedRun:
    capacities: CapacityVector
    lottery: LotteryPolicy
    prices: PricePolicy
    objective_kind: str
    objective: float
    waits: tuple[np.ndarray, ...]
    probabilities: np.ndarray
    manifest: dict


def write_solution(run_dir: Path, result, kind: str) -> list[Path]:
    """Summary, per-group lottery matrices, expected-wait table and steady state."""
    run_dir = Path(run_dir)
    eq = result.equilibrium
    caps = eq.capacities
    throughput = eq.throughputs()
    paths = [write_table(run_dir / "summary.csv", SUMMARY_HEADER, [
        (m, caps[m], result.prices.prices[m], result.xi[m], float(throughput[m]), kind,
         result.objective_value, result.converged, result.certified)
        for m in range(len(caps))])]
    for m, rows in enumerate(result.lottery.rows):
        paths.append(write_lottery(run_dir / f"lottery_group{m}.csv", rows))
    paths.append(write_table(run_dir / "waits.csv", WAITS_HEADER, [
        (m, n, float(w)) for m, W in enumerate(eq.waiting.expected) for n, w in enumerate(W)]))
    paths.append(write_table(run_dir / "steady_state.csv", STEADY_HEADER,
                             [(n, float(p)) for n, p in enumerate(eq.steady.probabilities)]))
    return paths


def read_solution(run_dir: Path) -> SolvedRun:
    run_dir = Path(run_dir)
    summary = read_table(run_dir / "summary.csv", SUMMARY_HEADER)
    summary.sort(key=lambda r: int(r["group"]))
    caps = CapacityVector(tuple(int(r["capacity"]) for r in summary))
    lottery = LotteryPolicy(tuple(read_lottery(run_dir / f"lottery_group{m}.csv")
                                  for m in range(len(caps))))
    lottery.check(caps)
    prices = PricePolicy(tuple(float(r["price"]) for r in summary),
                         tuple(float(r["max_tolerable_wait_hours"]) for r in summary))
    waits = [np.zeros(c) for c in caps]
    for rec in read_table(run_dir / "waits.csv", WAITS_HEADER):
        waits[int(rec["group"])][int(rec["length"])] = float(rec["expected_wait_hours"])
    steady = read_table(run_dir / "steady_state.csv", STEADY_HEADER)
    probs = np.array([float(r["probability"]) for r in steady])
    return SolvedRun(caps, lottery, prices, summary[0]["objective_kind"],
                     float(summary[0]["objective_per_hour"]), tuple(waits), probs,
                     read_manifest(run_dir) if (run_dir / MANIFEST).exists() else {})
