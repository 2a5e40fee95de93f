"""Domain types, unit conventions and input-file handling.

Conventions used everywhere in this package:

* power in MW, machine ratings in MVA, frequency in Hz, RoCoF in Hz/s,
  time constants in s;
* aggregated rotating inertia in MW*s, i.e. ``sum(H_i * M_base_i)`` over
  the online units;
* governor gains are per-unit on the machine base, load damping is
  per-unit on the connected-demand base.

All types are frozen dataclasses: construct once, share freely.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence


class ValidationError(ValueError):
    """A field of an input structure violates its invariant."""

    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


class ParseError(ValueError):
    """An input file could not be parsed at all."""


def _require(cond: bool, field_name: str, message: str) -> None:
    if not cond:
        raise ValidationError(field_name, message)


# ---------------------------------------------------------------------------
# generating units and the system


@dataclass(frozen=True)
class GeneratorSpec:
    """Static parameters of one conventional generating unit.

    ``cost_curve`` is a convex piecewise-linear cost: an ordered tuple of
    ``(breakpoint_mw, slope_eur_per_mwh)`` pairs.  Segment ``k`` applies
    between the previous breakpoint (0 for the first) and
    ``breakpoint_mw[k]``; the last breakpoint must reach ``p_max``.
    """

    id: str
    p_max: float
    p_min: float
    m_base: float
    inertia_h: float
    governor_gain_k: float
    governor_time_t: float
    ramp_up: float
    ramp_down: float
    min_up_time: int
    min_down_time: int
    cost_curve: tuple[tuple[float, float], ...]
    startup_cost: float
    outage_rate: float

    def __post_init__(self):
        pre = f"generators[{self.id}]"
        _require(self.p_min > 0, f"{pre}.p_min", "must be > 0")
        _require(self.p_min <= self.p_max, f"{pre}.p_min", "must be <= p_max")
        _require(self.m_base > 0, f"{pre}.m_base", "must be > 0")
        _require(self.inertia_h > 0, f"{pre}.inertia_h", "must be > 0")
        _require(self.governor_time_t > 0, f"{pre}.governor_time_t", "must be > 0")
        _require(self.governor_gain_k >= 0, f"{pre}.governor_gain_k", "must be >= 0")
        _require(self.ramp_up > 0, f"{pre}.ramp_up", "must be > 0")
        _require(self.ramp_down > 0, f"{pre}.ramp_down", "must be > 0")
        _require(self.min_up_time >= 1, f"{pre}.min_up_time", "must be >= 1")
        _require(self.min_down_time >= 1, f"{pre}.min_down_time", "must be >= 1")
        _require(self.startup_cost >= 0, f"{pre}.startup_cost", "must be >= 0")
        _require(self.outage_rate >= 0, f"{pre}.outage_rate", "must be >= 0")
        _require(len(self.cost_curve) >= 1, f"{pre}.cost_curve", "needs >= 1 segment")
        prev_bp = 0.0
        prev_slope = -float("inf")
        for k, (bp, slope) in enumerate(self.cost_curve):
            _require(bp > prev_bp, f"{pre}.cost_curve[{k}]",
                     "breakpoints must be strictly increasing")
            _require(slope >= prev_slope, f"{pre}.cost_curve[{k}]",
                     "slopes must be non-decreasing (convex curve)")
            _require(slope >= 0, f"{pre}.cost_curve[{k}]", "slope must be >= 0")
            prev_bp, prev_slope = bp, slope
        _require(prev_bp >= self.p_max - 1e-9, f"{pre}.cost_curve",
                 "last breakpoint must reach p_max")

    @property
    def inertia_mws(self) -> float:
        """Kinetic contribution H * M_base in MW*s."""
        return self.inertia_h * self.m_base

    def dispatch_cost(self, p_mw: float) -> float:
        """EUR/h of running this unit at ``p_mw`` (0 when off)."""
        if p_mw <= 0.0:
            return 0.0
        cost = 0.0
        prev_bp = 0.0
        for bp, slope in self.cost_curve:
            seg = min(p_mw, bp) - prev_bp
            if seg > 0:
                cost += slope * seg
            prev_bp = bp
            if p_mw <= bp:
                break
        return cost


@dataclass(frozen=True)
class SystemSpec:
    """The island system: its units plus frequency-security settings."""

    generators: tuple[GeneratorSpec, ...]
    nominal_freq_f0: float = 50.0
    s_base: float = 100.0
    load_damping_d: float = 1.0
    rocof_crit: float = 2.5
    freq_floor_hard: float = 47.0
    freq_floor_soft: float = 48.0
    soft_floor_max_duration: float = 2.0
    ufls_post_outage_cost: float = 100000.0

    def __post_init__(self):
        _require(len(self.generators) >= 1, "generators", "must not be empty")
        ids = [g.id for g in self.generators]
        _require(len(set(ids)) == len(ids), "generators", "unit ids must be unique")
        _require(self.nominal_freq_f0 > 0, "f0_hz", "must be > 0")
        _require(self.s_base > 0, "s_base_mva", "must be > 0")
        _require(self.load_damping_d >= 0, "d_pu", "must be >= 0")
        _require(self.rocof_crit > 0, "rocof_crit_hzps", "must be > 0")
        _require(self.freq_floor_hard < self.freq_floor_soft,
                 "freq_floor_hard_hz", "must be below the soft floor")
        _require(self.freq_floor_soft < self.nominal_freq_f0,
                 "freq_floor_soft_hz", "must be below nominal frequency")
        _require(self.soft_floor_max_duration >= 0, "soft_floor_max_s", "must be >= 0")
        _require(self.ufls_post_outage_cost >= 0,
                 "ufls_post_outage_cost_eur_per_mw", "must be >= 0")

    @property
    def n_units(self) -> int:
        return len(self.generators)

    def unit_index(self, unit_id: str) -> int:
        for k, g in enumerate(self.generators):
            if g.id == unit_id:
                return k
        raise KeyError(f"unknown unit id {unit_id!r}")


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class InitialStatus:
    """Pre-horizon state of one unit."""

    online: bool
    hours_in_state: int
    p0_mw: float

    def __post_init__(self):
        _require(self.hours_in_state >= 0, "hours_in_state", "must be >= 0")
        _require(self.p0_mw >= 0, "p0_mw", "must be >= 0")
        if not self.online:
            _require(self.p0_mw == 0, "p0_mw", "must be 0 for an offline unit")


def default_initial_status(spec: SystemSpec) -> tuple[InitialStatus, ...]:
    """All units off, long enough that min-down times never bind at t=1."""
    return tuple(
        InitialStatus(online=False, hours_in_state=max(g.min_down_time, 100), p0_mw=0.0)
        for g in spec.generators
    )


@dataclass(frozen=True)
class ScenarioSpec:
    """Demand/RES series and initial unit states for one horizon."""

    horizon: int
    step_hours: float
    demand: tuple[float, ...]
    wind: tuple[float, ...]
    solar: tuple[float, ...]
    initial_status: tuple[InitialStatus, ...]

    def __post_init__(self):
        _require(self.horizon >= 1, "horizon", "must be >= 1")
        _require(self.step_hours > 0, "step_hours", "must be > 0")
        for name, series in (("demand", self.demand), ("wind", self.wind),
                             ("solar", self.solar)):
            _require(len(series) == self.horizon, name,
                     f"length {len(series)} != horizon {self.horizon}")
        _require(all(d > 0 for d in self.demand), "demand", "must be > 0 each step")
        _require(all(w >= 0 for w in self.wind), "wind", "must be >= 0")
        _require(all(s >= 0 for s in self.solar), "solar", "must be >= 0")

    def net_demand(self, t: int) -> float:
        """Demand minus renewable infeed at step ``t``."""
        return self.demand[t] - self.wind[t] - self.solar[t]


# ---------------------------------------------------------------------------
# operating point


@dataclass(frozen=True)
class OperatingPoint:
    """A commitment + dispatch snapshot of every unit at one time step."""

    committed: tuple[bool, ...]
    dispatch: tuple[float, ...]
    system_inertia_mws: float

    @classmethod
    def from_dispatch(cls, spec: SystemSpec, dispatch: Sequence[float],
                      tol: float = 1e-9) -> "OperatingPoint":
        if len(dispatch) != spec.n_units:
            raise ValidationError("dispatch", "length must equal number of units")
        committed = tuple(p > tol for p in dispatch)
        for g, on, p in zip(spec.generators, committed, dispatch):
            if on and not (g.p_min - 1e-6 <= p <= g.p_max + 1e-6):
                raise ValidationError(
                    f"dispatch[{g.id}]", f"{p} outside [{g.p_min}, {g.p_max}]")
        inertia = sum(g.inertia_mws for g, on in zip(spec.generators, committed) if on)
        return cls(committed=committed, dispatch=tuple(float(p) for p in dispatch),
                   system_inertia_mws=inertia)

    @property
    def total_dispatch_mw(self) -> float:
        return sum(self.dispatch)

    def online_indices(self) -> list[int]:
        return [i for i, on in enumerate(self.committed) if on]


# ---------------------------------------------------------------------------
# operations


def system_inertia(op: OperatingPoint, spec: SystemSpec,
                   excluded: str | None = None) -> float:
    """Aggregate inertia sum(H_i * M_base_i) in MW*s over online units.

    ``excluded`` drops one unit from the sum, the usual post-outage view.
    """
    skip = spec.unit_index(excluded) if excluded is not None else -1
    total = 0.0
    for i, (g, on) in enumerate(zip(spec.generators, op.committed)):
        if on and i != skip:
            total += g.inertia_mws
    return total


def initial_rocof(disturbance_mw: float, remaining_inertia_mws: float,
                  f0: float) -> float:
    """Magnitude of the frequency slope right after losing ``disturbance_mw``.

    Equals ``p * f0 / (2 * sum(H_i * M_i))`` in Hz/s, with the sum taken
    over the units still connected.
    """
    if disturbance_mw < 0:
        raise ValidationError("disturbance_mw", "must be >= 0")
    if disturbance_mw == 0:
        return 0.0
    if remaining_inertia_mws <= 0:
        raise ValidationError("remaining_inertia_mws",
                              "must be > 0 (no rotating inertia left)")
    return disturbance_mw * f0 / (2.0 * remaining_inertia_mws)


# ---------------------------------------------------------------------------
# file ingestion / export


_GEN_KEYS = {
    "id": str,
    "p_max_mw": float,
    "p_min_mw": float,
    "m_base_mva": float,
    "inertia_h_s": float,
    "governor_gain_k_pu": float,
    "governor_time_t_s": float,
    "ramp_up_mw": float,
    "ramp_down_mw": float,
    "min_up_time_steps": int,
    "min_down_time_steps": int,
    "startup_cost_eur": float,
    "outage_rate_per_year": float,
}


def _generator_from_json(obj: Mapping, idx: int) -> GeneratorSpec:
    where = f"generators[{idx}]"
    if not isinstance(obj, Mapping):
        raise ValidationError(where, "must be an object")
    kwargs = {}
    for key, typ in _GEN_KEYS.items():
        if key not in obj:
            raise ValidationError(f"{where}.{key}", "missing")
        try:
            kwargs[key] = typ(obj[key])
        except (TypeError, ValueError):
            raise ValidationError(f"{where}.{key}", f"not a valid {typ.__name__}")
    curve_raw = obj.get("cost_curve")
    if not isinstance(curve_raw, list) or not curve_raw:
        raise ValidationError(f"{where}.cost_curve",
                              "must be a non-empty list of [mw, eur_per_mwh] pairs")
    try:
        curve = tuple((float(bp), float(sl)) for bp, sl in curve_raw)
    except (TypeError, ValueError):
        raise ValidationError(f"{where}.cost_curve", "malformed segment")
    return GeneratorSpec(
        id=kwargs["id"],
        p_max=kwargs["p_max_mw"],
        p_min=kwargs["p_min_mw"],
        m_base=kwargs["m_base_mva"],
        inertia_h=kwargs["inertia_h_s"],
        governor_gain_k=kwargs["governor_gain_k_pu"],
        governor_time_t=kwargs["governor_time_t_s"],
        ramp_up=kwargs["ramp_up_mw"],
        ramp_down=kwargs["ramp_down_mw"],
        min_up_time=kwargs["min_up_time_steps"],
        min_down_time=kwargs["min_down_time_steps"],
        cost_curve=curve,
        startup_cost=kwargs["startup_cost_eur"],
        outage_rate=kwargs["outage_rate_per_year"],
    )


def load_system(path: str | Path) -> SystemSpec:
    """Read and validate a ``system.json`` file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{path}: top level must be an object")
    gens_raw = raw.get("generators")
    if not isinstance(gens_raw, list) or not gens_raw:
        raise ValidationError("generators", "must be a non-empty list")
    gens = tuple(_generator_from_json(g, i) for i, g in enumerate(gens_raw))
    kwargs = dict(generators=gens)
    for key, attr in (("f0_hz", "nominal_freq_f0"),
                      ("s_base_mva", "s_base"),
                      ("d_pu", "load_damping_d"),
                      ("rocof_crit_hzps", "rocof_crit"),
                      ("freq_floor_hard_hz", "freq_floor_hard"),
                      ("freq_floor_soft_hz", "freq_floor_soft"),
                      ("soft_floor_max_s", "soft_floor_max_duration"),
                      ("ufls_post_outage_cost_eur_per_mw", "ufls_post_outage_cost")):
        if key in raw:
            try:
                kwargs[attr] = float(raw[key])
            except (TypeError, ValueError):
                raise ValidationError(key, "not a number")
    return SystemSpec(**kwargs)


def system_to_json(spec: SystemSpec) -> dict:
    return {
        "f0_hz": spec.nominal_freq_f0,
        "s_base_mva": spec.s_base,
        "d_pu": spec.load_damping_d,
        "rocof_crit_hzps": spec.rocof_crit,
        "freq_floor_hard_hz": spec.freq_floor_hard,
        "freq_floor_soft_hz": spec.freq_floor_soft,
        "soft_floor_max_s": spec.soft_floor_max_duration,
        "ufls_post_outage_cost_eur_per_mw": spec.ufls_post_outage_cost,
        "generators": [
            {
                "id": g.id,
                "p_max_mw": g.p_max,
                "p_min_mw": g.p_min,
                "m_base_mva": g.m_base,
                "inertia_h_s": g.inertia_h,
                "governor_gain_k_pu": g.governor_gain_k,
                "governor_time_t_s": g.governor_time_t,
                "ramp_up_mw": g.ramp_up,
                "ramp_down_mw": g.ramp_down,
                "min_up_time_steps": g.min_up_time,
                "min_down_time_steps": g.min_down_time,
                "cost_curve": [[bp, sl] for bp, sl in g.cost_curve],
                "startup_cost_eur": g.startup_cost,
                "outage_rate_per_year": g.outage_rate,
            }
            for g in spec.generators
        ],
    }


def save_system(spec: SystemSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(system_to_json(spec), indent=2, sort_keys=True) + "\n")


def load_scenario(path: str | Path, spec: SystemSpec,
                  step_hours: float = 1.0,
                  initial_status_path: str | Path | None = None) -> ScenarioSpec:
    """Read ``scenario.csv`` (+ optional ``initial_status.csv``)."""
    path = Path(path)
    demand, wind, solar = [], [], []
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    expected = ["step", "demand_mw", "wind_mw", "solar_mw"]
    if header != expected:
        raise ParseError(f"{path}: header must be {','.join(expected)}")
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            demand.append(float(row[1]))
            wind.append(float(row[2]))
            solar.append(float(row[3]))
        except (IndexError, ValueError):
            raise ParseError(f"{path}:{lineno}: malformed row {row!r}")
    status = (load_initial_status(initial_status_path, spec)
              if initial_status_path is not None else default_initial_status(spec))
    return ScenarioSpec(horizon=len(demand), step_hours=step_hours,
                        demand=tuple(demand), wind=tuple(wind), solar=tuple(solar),
                        initial_status=status)


def load_initial_status(path: str | Path, spec: SystemSpec) -> tuple[InitialStatus, ...]:
    """Read ``initial_status.csv``; units absent from the file default to off."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or [c.strip() for c in rows[0]] != ["unit", "online", "hours_in_state", "p0_mw"]:
        raise ParseError(f"{path}: header must be unit,online,hours_in_state,p0_mw")
    by_unit: dict[str, InitialStatus] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            unit, online, hours, p0 = row[0].strip(), row[1].strip(), int(row[2]), float(row[3])
        except (IndexError, ValueError):
            raise ParseError(f"{path}:{lineno}: malformed row {row!r}")
        if online not in ("0", "1"):
            raise ParseError(f"{path}:{lineno}: online must be 0 or 1")
        spec.unit_index(unit)  # raises KeyError for unknown ids
        by_unit[unit] = InitialStatus(online=online == "1", hours_in_state=hours, p0_mw=p0)
    defaults = default_initial_status(spec)
    return tuple(by_unit.get(g.id, d) for g, d in zip(spec.generators, defaults))


def save_scenario(scenario: ScenarioSpec, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "demand_mw", "wind_mw", "solar_mw"])
        for t in range(scenario.horizon):
            writer.writerow([t + 1, f"{scenario.demand[t]:.4f}",
                             f"{scenario.wind[t]:.4f}", f"{scenario.solar[t]:.4f}"])
