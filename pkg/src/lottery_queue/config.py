"""Experiment configuration: a YAML file validated by a strict schema.

Key names carry their units so that, for instance, the trip duration can
only be given in hours.  Unknown keys anywhere are an error.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .ga import GaOptions
from .lower import SolverOptions
from .model import TABLE1, TABLE2, MarketParams
from .simulator import SimConfig

PRESETS = {"table1": TABLE1, "table2": TABLE2}

# market keys that a sweep may vary, mapped to MarketParams fields
SCALAR_KEYS = {
    "passenger_rate_per_hour": "passenger_rate",
    "driver_opportunity_rate_per_hour": "driver_opportunity_rate",
    "platform_opportunity_rate_per_hour": "platform_opportunity_rate",
    "trip_duration_hours": "trip_duration",
    "commission_cap": "commission_cap",
}
RATIO_KEY = "demand_supply_ratio"


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MarketBlock(_Strict):
    preset: Optional[Literal["table1", "table2"]] = None
    arrival_rates_per_hour: Optional[list[float]] = None
    passenger_rate_per_hour: Optional[float] = None
    rewards: Optional[list[float]] = None
    driver_opportunity_rate_per_hour: Optional[float] = None
    platform_opportunity_rate_per_hour: Optional[float] = None
    trip_duration_hours: Optional[float] = None
    commission_cap: Optional[float] = None
    charge_platform_trip_cost: Optional[bool] = None

    def to_params(self) -> MarketParams:
        base = PRESETS[self.preset] if self.preset else None
        values = {
            "arrival_rates": self.arrival_rates_per_hour,
            "passenger_rate": self.passenger_rate_per_hour,
            "rewards": self.rewards,
            "driver_opportunity_rate": self.driver_opportunity_rate_per_hour,
            "platform_opportunity_rate": self.platform_opportunity_rate_per_hour,
            "trip_duration": self.trip_duration_hours,
            "commission_cap": self.commission_cap,
            "charge_platform_trip_cost": self.charge_platform_trip_cost,
        }
        given = {k: v for k, v in values.items() if v is not None}
        if base is not None:
            return base.with_(**given)
        missing = [k for k in ("arrival_rates", "passenger_rate", "rewards", "driver_opportunity_rate",
                               "platform_opportunity_rate", "trip_duration") if k not in given]
        if missing:
            raise ValueError(f"market block misses {', '.join(missing)} (or give a preset)")
        return MarketParams(**given)


class GaBlock(_Strict):
    population: int = 30
    max_generations: int = 200
    elite: int = 2
    tournament: int = 3
    mutation_prob: float = 0.2
    stall_limit: int = 10
    grid_step: int = 5
    polish: bool = True


class SolverBlock(_Strict):
    tol_obj: float = 1e-8
    max_iter: int = 5000
    step_min: float = 1e-9
    trust_radius: float = 0.2
    starts: Optional[list[Literal["equalize", "fifo", "lifo", "uniform", "random"]]] = None
    weighting: Literal["steady_state", "unweighted"] = "steady_state"


class SimulatorBlock(_Strict):
    events: int = Field(1_000_000, gt=0)
    warmup_fraction: float = Field(0.1, ge=0.0, le=0.5)
    batches: int = Field(30, ge=2)
    confidence: float = Field(0.95, gt=0.0, lt=1.0)
    min_samples: int = Field(100, ge=1)
    family_wise: bool = True
    event_log: bool = False
    policy_run_dir: Optional[str] = None
    fifo_capacities: Optional[list[int]] = None


class SweepBlock(_Strict):
    parameter: str
    start: float
    stop: float
    steps: int = Field(ge=1)

    @model_validator(mode="after")
    def _known(self):
        if self.parameter not in SCALAR_KEYS and self.parameter != RATIO_KEY:
            raise ValueError(f"cannot sweep {self.parameter!r}; choose one of "
                             f"{sorted([*SCALAR_KEYS, RATIO_KEY])}")
        return self

    def values(self) -> list[float]:
        return [float(v) for v in np.linspace(self.start, self.stop, self.steps)]


class BenchmarkBlock(_Strict):
    static_price_scope: Literal["group", "uniform"] = "group"


class ExperimentConfig(_Strict):
    market: MarketBlock
    objective: Literal["profit", "welfare"] = "profit"
    seed: int = Field(0, ge=0, lt=2 ** 64)
    ga: GaBlock = GaBlock()
    solver: SolverBlock = SolverBlock()
    simulator: SimulatorBlock = SimulatorBlock()
    sweep: Optional[SweepBlock] = None
    benchmark: BenchmarkBlock = BenchmarkBlock()
    output_dir: Optional[str] = None
    workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _market_ok(self):
        self.market.to_params()
        return self

    def params(self) -> MarketParams:
        return self.market.to_params()

    def ga_options(self) -> GaOptions:
        return GaOptions(seed=self.seed, workers=1, **self.ga.model_dump())

    def solver_options(self) -> SolverOptions:
        data = self.solver.model_dump()
        data["starts"] = tuple(data["starts"]) if data["starts"] else None
        return SolverOptions(seed=self.seed, **data)

    def sim_config(self, event_log: Optional[Union[str, Path]] = None) -> SimConfig:
        s = self.simulator
        return SimConfig(events=s.events, warmup=s.warmup_fraction, seed=self.seed,
                         batches=s.batches, event_log=event_log)


def sweep_params(params: MarketParams, parameter: str, value: float) -> MarketParams:
    """``params`` with one swept scalar replaced."""
    if parameter == RATIO_KEY:
        return params.with_(passenger_rate=value * float(np.sum(params.lam)))
    return params.with_(**{SCALAR_KEYS[parameter]: value})


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    return parse_config(data)
