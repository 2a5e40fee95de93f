"""Bundled example data and synthetic daily profiles.

The shipped system transcribes an 11-diesel island fleet; demand, RES
series, cost curves and relay settings are synthetic stand-ins shaped to
the published qualitative figures (valley around 20 MW, evening peak
around 40 MW, roughly a tenth of energy from wind and solar).
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .learn import TobitModel, load_tobit_json
from .system_model import (InitialStatus, ScenarioSpec, SystemSpec,
                           load_scenario, load_system)

# normalized island day: overnight valley, midday shoulder, evening peak
_DAY_SHAPE = np.array([
    0.30, 0.26, 0.23, 0.21, 0.20, 0.22, 0.30, 0.42, 0.55, 0.62, 0.66, 0.68,
    0.70, 0.66, 0.60, 0.58, 0.62, 0.72, 0.85, 0.95, 1.00, 0.92, 0.70, 0.45,
])


def _data_path(name: str) -> Path:
    return Path(str(resources.files("islanduc").joinpath("data").joinpath(name)))


def example_system_path() -> Path:
    return _data_path("system.json")


def example_scenario_path() -> Path:
    return _data_path("scenario.csv")


def example_initial_status_path() -> Path:
    return _data_path("initial_status.csv")


def example_tobit_path() -> Path:
    return _data_path("tobit.json")


def load_example_system() -> SystemSpec:
    return load_system(example_system_path())


def load_example_scenario(spec: SystemSpec | None = None) -> ScenarioSpec:
    spec = spec or load_example_system()
    return load_scenario(example_scenario_path(), spec,
                         initial_status_path=example_initial_status_path())


def load_example_tobit() -> TobitModel:
    return load_tobit_json(example_tobit_path())


def make_daily_scenario(seed: int, spec: SystemSpec,
                        peak_mw: float = 40.0, valley_mw: float = 20.0,
                        res_fraction: float = 0.10, horizon: int = 24,
                        step_hours: float = 1.0) -> ScenarioSpec:
    """Deterministic synthetic day: shaped demand plus wind/solar series
    normalized to ``res_fraction`` of daily energy."""
    rng = np.random.default_rng(seed)
    shape = _DAY_SHAPE
    if horizon != len(shape):
        grid = np.linspace(0, len(shape) - 1, horizon)
        shape = np.interp(grid, np.arange(len(shape)), shape)
    lo, hi = shape.min(), shape.max()
    demand = valley_mw + (peak_mw - valley_mw) * (shape - lo) / (hi - lo)
    demand = demand * (1.0 + rng.uniform(-0.03, 0.03, horizon))
    hours = np.arange(horizon) * step_hours
    solar = np.exp(-((hours - 13.0) / 3.2) ** 2)
    wind = 0.6 + 0.4 * np.abs(np.sin(hours / 7.0 + rng.uniform(0, np.pi)))
    wind = wind * rng.uniform(0.7, 1.3)
    # split the RES energy budget 45/55 between solar and wind shapes
    res_energy = res_fraction * float(demand.sum())
    solar_mw = solar / solar.sum() * 0.45 * res_energy
    wind_mw = wind / wind.sum() * 0.55 * res_energy
    return ScenarioSpec(
        horizon=horizon, step_hours=step_hours,
        demand=tuple(round(float(d), 3) for d in demand),
        wind=tuple(round(float(w), 3) for w in wind_mw),
        solar=tuple(round(float(s), 3) for s in solar_mw),
        initial_status=_typical_initial_status(spec))


def _typical_initial_status(spec: SystemSpec) -> tuple[InitialStatus, ...]:
    """Overnight fleet: the large baseload unit plus one mid unit online."""
    status = []
    for g in spec.generators:
        if g.id in ("g11", "g7"):
            status.append(InitialStatus(online=True,
                                        hours_in_state=max(g.min_up_time, 24),
                                        p0_mw=g.p_min))
        else:
            status.append(InitialStatus(online=False,
                                        hours_in_state=max(g.min_down_time, 24),
                                        p0_mw=0.0))
    return tuple(status)


def make_study_scenarios(n_days: int, seed: int, spec: SystemSpec,
                         horizon: int = 24) -> list[ScenarioSpec]:
    """Seasonal spread of synthetic days: peaks cycle through four
    seasonal levels, one deterministic seed per day."""
    seasonal_peak = [40.0, 36.0, 43.0, 38.0]  # winter/spring/summer/autumn
    days = []
    for d in range(n_days):
        peak = seasonal_peak[(d * 4) // max(n_days, 1) % 4]
        days.append(make_daily_scenario(seed + d, spec, peak_mw=peak,
                                        valley_mw=peak * 0.5, horizon=horizon))
    return days
