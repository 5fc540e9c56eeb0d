"""Upper level: genetic search over integer capacity vectors.

Fitness of a chromosome is the lower-level optimum at those capacities.
Lower-level results are cached by capacity vector, since the GA revisits
chromosomes constantly and the lower solver is deterministic.
"""
from __future__ import annotations

import itertools
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .lower import LowerLevelResult, SolverOptions, solve_lower
from .model import CapacityVector, MarketParams
from .objectives import Kind, capacity_upper_bound

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GaOptions:
    population: int = 30
    max_generations: int = 200
    elite: int = 2
    tournament: int = 3
    mutation_prob: float = 0.2
    stall_limit: int = 10
    seed: int = 0
    grid_step: int = 5
    polish: bool = True
    workers: int = 1

    def __post_init__(self):
        if not self.population > self.elite >= 1:
            raise ValueError("need population > elite >= 1")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must lie in [0, 1]")
        if self.stall_limit < 1 or self.max_generations < 1:
            raise ValueError("stall_limit and max_generations must be >= 1")
        if self.tournament < 1 or self.grid_step < 1 or self.workers < 1:
            raise ValueError("tournament, grid_step and workers must be >= 1")


@dataclass(frozen=True)
class GaResult:
    capacities: CapacityVector
    best: LowerLevelResult
    history: tuple[float, ...]
    evaluations: int
    generations: int
    init_bounds: tuple[int, ...]

    @property
    def fitness(self) -> float:
        return self.best.objective_value


class FitnessCache:
    """Lower-level results keyed by capacity tuple; safe for concurrent use."""

    def __init__(self, params: MarketParams, kind: Kind,
                 solver_options: Optional[SolverOptions] = None):
        self.params, self.kind = params, kind
        self.solver_options = solver_options or SolverOptions()
        self._results: dict[tuple[int, ...], Optional[LowerLevelResult]] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._results)

    def result(self, caps: Sequence[int]) -> Optional[LowerLevelResult]:
        key = tuple(int(c) for c in caps)
        with self._lock:
            if key in self._results:
                return self._results[key]
        try:
            res = solve_lower(self.params, CapacityVector(key), self.kind, self.solver_options)
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            log.warning("lower level failed at %s: %s", key, exc)
            res = None
        with self._lock:
            self._results.setdefault(key, res)
            return self._results[key]

    def fitness(self, caps: Sequence[int]) -> float:
        res = self.result(caps)
        return -math.inf if res is None else res.objective_value


def upper_bounds(params: MarketParams, kind: Kind) -> tuple[int, ...]:
    """Per-group gene ceilings; a degenerate group is pinned at 1."""
    return tuple(max(1, capacity_upper_bound(params, m, kind)) for m in range(params.group_count))


def grid_initialize(params: MarketParams, kind: Kind, step: int = 5,
                    fitness: Optional[Callable[[Sequence[int]], float]] = None) -> tuple[int, ...]:
    """Coarse per-group ascent giving the initial search box ``[1, N_m^h]``.

    Groups are raised one at a time in steps of ``step``, holding the others
    at their best grid value so far.  The returned point for a group is the
    first grid value where the objective went down (so it brackets the
    optimum), or the capacity bound if that comes first.
    """
    if fitness is None:
        fitness = FitnessCache(params, kind).fitness
    bounds = upper_bounds(params, kind)
    current = [1] * params.group_count
    value = fitness(current)
    out = []
    for m, bound in enumerate(bounds):
        while True:
            nxt = min(current[m] + step, bound)
            if nxt == current[m]:
                out.append(nxt)
                break
            trial = list(current)
            trial[m] = nxt
            trial_value = fitness(trial)
            if trial_value < value or trial_value == -math.inf:
                out.append(nxt)
                break
            current, value = trial, trial_value
    return tuple(out)


def _initial_population(init: Sequence[int], size: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
    corners = list(itertools.product(*[sorted({1, h}) for h in init]))
    mid = tuple((1 + h) // 2 for h in init)
    pop = []
    for c in corners + [mid]:
        if c not in pop:
            pop.append(tuple(int(v) for v in c))
    pop = pop[:size]
    while len(pop) < size:
        pop.append(tuple(int(rng.integers(1, h + 1)) for h in init))
    return pop


def _tournament(pop, fit, k, rng):
    idx = rng.choice(len(pop), size=min(k, len(pop)), replace=False)
    best = max(idx, key=lambda i: (fit[i], -i))
    return pop[best]


def _polish(start: tuple[int, ...], cache: FitnessCache, bounds: Sequence[int]) -> tuple[int, ...]:
    """Steepest ascent over unit moves of one gene until no neighbour improves."""
    best, best_f = start, cache.fitness(start)
    while True:
        moves = []
        for m in range(len(best)):
            for d in (-1, 1):
                v = best[m] + d
                if 1 <= v <= bounds[m]:
                    moves.append(best[:m] + (v,) + best[m + 1:])
        scored = [(cache.fitness(c), c) for c in moves]
        top_f, top = max(scored, key=lambda t: t[0]) if scored else (-math.inf, None)
        if top is None or not top_f > best_f:
            return best
        best, best_f = top, top_f


def run_ga(params: MarketParams, kind: Kind = "profit", options: Optional[GaOptions] = None,
           solver_options: Optional[SolverOptions] = None,
           cache: Optional[FitnessCache] = None,
           callback: Optional[Callable[[int, list, list], None]] = None) -> GaResult:
    """Genetic search for the capacity vector with the best lower-level objective.

    Tournament selection, uniform crossover, +-1 mutation clamped to
    ``[1, capacity_upper_bound]`` and elitism; stops after ``stall_limit``
    generations without improvement.  With ``polish`` the GA winner is
    finished by a unit-step hill climb, which matters on the very flat
    ridges these objectives have.  ``callback(generation, population,
    fitness)`` is called once per generation.
    """
    options = options or GaOptions()
    cache = cache or FitnessCache(params, kind, solver_options)
    rng = np.random.default_rng(options.seed)
    bounds = upper_bounds(params, kind)
    init = grid_initialize(params, kind, options.grid_step, cache.fitness)
    pop = _initial_population(init, options.population, rng)
    executor = ThreadPoolExecutor(options.workers) if options.workers > 1 else None

    def evaluate(chromosomes):
        if executor is None:
            return [cache.fitness(c) for c in chromosomes]
        return list(executor.map(cache.fitness, chromosomes))

    history = []
    best, best_f = None, -math.inf
    stall = 0
    generation = 0
    try:
        for generation in range(1, options.max_generations + 1):
            fit = evaluate(pop)
            if callback is not None:
                callback(generation, list(pop), list(fit))
            order = sorted(range(len(pop)), key=lambda i: (-fit[i], i))
            if fit[order[0]] > best_f:
                best, best_f = pop[order[0]], fit[order[0]]
                stall = 0
            else:
                stall += 1
            history.append(best_f)
            log.info("ga generation=%d best=%.10f capacities=%s evaluations=%d",
                     generation, best_f, ",".join(map(str, best or ())), len(cache))
            if stall >= options.stall_limit:
                break
            nxt = [pop[i] for i in order[:options.elite]]
            while len(nxt) < options.population:
                a = _tournament(pop, fit, options.tournament, rng)
                b = _tournament(pop, fit, options.tournament, rng)
                pick = rng.random(len(a)) < 0.5
                child = []
                for m in range(len(a)):
                    gene = a[m] if pick[m] else b[m]
                    if rng.random() < options.mutation_prob:
                        gene += int(rng.integers(-1, 2))
                    child.append(min(max(1, gene), bounds[m]))
                nxt.append(tuple(child))
            pop = nxt
    finally:
        if executor is not None:
            executor.shutdown()

    if options.polish and best is not None:
        polished = _polish(best, cache, bounds)
        if cache.fitness(polished) > best_f:
            best, best_f = polished, cache.fitness(polished)
            history.append(best_f)
            log.info("ga polish best=%.10f capacities=%s evaluations=%d",
                     best_f, ",".join(map(str, best)), len(cache))
    result = cache.result(best) if best is not None else None
    if result is None:
        raise RuntimeError("no chromosome produced a feasible lower-level solution")
    return GaResult(CapacityVector(best), result, tuple(history), len(cache), generation, init)


def exhaustive_search(params: MarketParams, kind: Kind = "profit",
                      box: Optional[Sequence[int]] = None,
                      solver_options: Optional[SolverOptions] = None,
                      cache: Optional[FitnessCache] = None) -> tuple[CapacityVector, float]:
    """Brute-force the best capacity vector over ``[1, box_m]`` (default: the bounds)."""
    cache = cache or FitnessCache(params, kind, solver_options)
    box = tuple(box) if box is not None else upper_bounds(params, kind)
    best, best_f = None, -math.inf
    for caps in itertools.product(*[range(1, b + 1) for b in box]):
        f = cache.fitness(caps)
        if f > best_f:
            best, best_f = caps, f
    if best is None:
        raise RuntimeError("no feasible capacity vector in the box")
    return CapacityVector(best), best_f
