"""Lottery-based entry-position control for a terminal virtual queue."""
from .benchmarks import BenchmarkResult, dynamic_pricing_optimum, static_pricing_optimum
from .equilibrium import (EquilibriumSolution, SteadyState, WaitingTimes, solve_equilibrium,
                          solve_waiting_times, steady_state)
from .ga import GaOptions, GaResult, exhaustive_search, grid_initialize, run_ga
from .lower import LowerLevelResult, SolverOptions, evaluate_candidate, solve_lower
from .model import (TABLE1, TABLE2, CapacityVector, LotteryPolicy, MarketParams, PricePolicy,
                    fifo_lottery, lifo_lottery, random_lottery, uniform_lottery)
from .objectives import (ObjectiveReport, capacity_upper_bound, extend_policy, price_from_wait,
                         profit_rate, wait_from_price, welfare_rate)
from .simulator import SimConfig, SimPolicy, SimStats, compare, simulate

__version__ = "0.1.0"

__all__ = [
    "BenchmarkResult", "CapacityVector", "EquilibriumSolution", "GaOptions", "GaResult",
    "LotteryPolicy", "LowerLevelResult", "MarketParams", "ObjectiveReport", "PricePolicy",
    "SimConfig", "SimPolicy", "SimStats", "SolverOptions", "SteadyState", "TABLE1", "TABLE2",
    "WaitingTimes", "capacity_upper_bound", "compare", "dynamic_pricing_optimum",
    "evaluate_candidate", "exhaustive_search", "extend_policy", "fifo_lottery", "grid_initialize",
    "lifo_lottery", "price_from_wait", "profit_rate", "random_lottery", "run_ga", "simulate",
    "solve_equilibrium", "solve_lower", "solve_waiting_times", "static_pricing_optimum",
    "steady_state", "uniform_lottery", "wait_from_price", "welfare_rate",
]
