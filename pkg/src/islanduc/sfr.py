"""System-frequency-response simulation and the optimal-shedding oracle.

Two complementary models of the post-outage island frequency:

* a closed-form solution of the aggregated swing + single first-order
  governor system (fast, no headroom limits), and
* a numerical COI simulation with one governor lag per remaining unit,
  each clipped at its spinning headroom (the reference model).

On top of the numerical model, :func:`optimal_ufls` computes the minimal
single load block that, shed when frequency first reaches the soft floor,
keeps the trace above the hard floor and limits the time spent below the
soft floor.  That quantity labels the learning dataset and verifies
committed schedules.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .system_model import (OperatingPoint, SystemSpec, ValidationError,
                           initial_rocof, system_inertia)

DEFAULT_DURATION_S = 60.0
DEFAULT_DT_S = 0.01
UFLS_TOL_MW = 0.01
UFLS_MAX_ITER = 60


class NonOscillatoryError(ValueError):
    """The closed form only covers the underdamped regime (zeta < 1)."""


class NoOnlineUnitsError(ValueError):
    """No generating unit remains online after the outage."""


class CollapseError(RuntimeError):
    """Even shedding the entire remaining demand cannot meet the criteria."""


# ---------------------------------------------------------------------------
# traces


@dataclass(frozen=True, eq=False)
class FrequencyTrace:
    """COI frequency deviation samples from one contingency simulation."""

    dt: float
    time_s: np.ndarray
    deviation_hz: np.ndarray
    f0_hz: float
    initial_rocof_hzps: float

    def __post_init__(self):
        if len(self.time_s) != len(self.deviation_hz) or len(self.time_s) == 0:
            raise ValidationError("samples", "time and deviation lengths differ")
        if self.time_s[0] != 0.0 or self.deviation_hz[0] != 0.0:
            raise ValidationError("samples", "trace must start at t=0 with deviation 0")

    @property
    def samples(self) -> list[tuple[float, float]]:
        return list(zip(self.time_s.tolist(), self.deviation_hz.tolist()))

    @cached_property
    def nadir_hz(self) -> float:
        return self.f0_hz + float(np.min(self.deviation_hz))

    @cached_property
    def nadir_time_s(self) -> float:
        return float(self.time_s[int(np.argmin(self.deviation_hz))])

    @property
    def min_hz(self) -> float:
        return self.nadir_hz

    def time_below(self, threshold_hz: float) -> float:
        """Cumulative seconds with frequency strictly below ``threshold_hz``."""
        freq = self.f0_hz + self.deviation_hz
        return float(np.count_nonzero(freq < threshold_hz)) * self.dt


def meets_frequency_criteria(trace: FrequencyTrace, spec: SystemSpec) -> bool:
    """Hard floor never touched, soft floor undershot at most the allowed time."""
    if trace.min_hz < spec.freq_floor_hard:
        return False
    return trace.time_below(spec.freq_floor_soft) <= spec.soft_floor_max_duration + 1e-12


def trace_summary(trace: FrequencyTrace, spec: SystemSpec) -> dict:
    return {
        "nadir_hz": trace.nadir_hz,
        "nadir_time_s": trace.nadir_time_s,
        "initial_rocof_hzps": trace.initial_rocof_hzps,
        "time_below_48_s": trace.time_below(spec.freq_floor_soft),
        "min_hz": trace.min_hz,
    }


def write_trace_csv(trace: FrequencyTrace, path: str | Path) -> None:
    freq = trace.f0_hz + trace.deviation_hz
    lines = ["time_s,freq_hz"]
    lines += [f"{t:.4f},{f:.6f}" for t, f in zip(trace.time_s, freq)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_trace_summary(trace: FrequencyTrace, spec: SystemSpec,
                        path: str | Path) -> None:
    Path(path).write_text(json.dumps(trace_summary(trace, spec), indent=2,
                                     sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# aggregated equivalent model


@dataclass(frozen=True)
class EquivalentModel:
    """Single-machine aggregate of the remaining online units.

    ``h_eq`` and ``d`` are per-unit on ``s_base_mva``; ``k_eq`` is the
    capacity-weighted mean governor gain on the remaining machine base
    (``m_rem_mva``), so the system-base gain is ``k_eq * m_rem_mva /
    s_base_mva``.  Disturbances passed to the closed form are per-unit on
    ``s_base_mva``.
    """

    h_eq: float
    k_eq: float
    t_eq: float
    d: float
    m_rem_mva: float
    s_base_mva: float
    f0_hz: float = 50.0

    def __post_init__(self):
        for name in ("h_eq", "k_eq", "t_eq", "m_rem_mva", "s_base_mva", "f0_hz"):
            if getattr(self, name) <= 0:
                raise ValidationError(name, "must be > 0")
        if self.d < 0:
            raise ValidationError("d", "must be >= 0")

    @property
    def k_sys(self) -> float:
        """Aggregate governor gain converted to the system base."""
        return self.k_eq * self.m_rem_mva / self.s_base_mva

    @cached_property
    def omega_n(self) -> float:
        return math.sqrt((self.d + self.k_sys) / (2.0 * self.h_eq * self.t_eq))

    @cached_property
    def zeta(self) -> float:
        return (2.0 * self.h_eq + self.d * self.t_eq) / (
            2.0 * math.sqrt(2.0 * self.h_eq * self.t_eq * (self.d + self.k_sys)))

    def _require_oscillatory(self) -> None:
        if not (0.0 < self.zeta < 1.0):
            raise NonOscillatoryError(
                f"zeta={self.zeta:.4f} outside (0, 1); use the numerical model")

    @cached_property
    def omega_r(self) -> float:
        self._require_oscillatory()
        return self.omega_n * math.sqrt(1.0 - self.zeta ** 2)

    @cached_property
    def a(self) -> float:
        self._require_oscillatory()
        wn, z, t = self.omega_n, self.zeta, self.t_eq
        return math.sqrt((1.0 - 2.0 * z * wn * t + (t * wn) ** 2) / (1.0 - z ** 2))

    @cached_property
    def phi(self) -> float:
        self._require_oscillatory()
        c = (self.t_eq * self.omega_n ** 2 - self.zeta * self.omega_n) / self.omega_r
        return math.atan2(-1.0, c)


def build_equivalent(op: OperatingPoint, spec: SystemSpec,
                     excluded: str) -> EquivalentModel:
    """Aggregate the units that stay online after losing ``excluded``."""
    skip = spec.unit_index(excluded)
    remaining = [i for i in op.online_indices() if i != skip]
    if not remaining:
        raise NoOnlineUnitsError("no unit remains online besides the outage")
    gens = [spec.generators[i] for i in remaining]
    m_rem = sum(g.m_base for g in gens)
    h_eq = sum(g.inertia_mws for g in gens) / spec.s_base
    k_eq = sum(g.governor_gain_k * g.m_base for g in gens) / m_rem
    t_eq = sum(g.governor_time_t * g.m_base for g in gens) / m_rem
    d = spec.load_damping_d * op.total_dispatch_mw / spec.s_base
    return EquivalentModel(h_eq=h_eq, k_eq=k_eq, t_eq=t_eq, d=d,
                           m_rem_mva=m_rem, s_base_mva=spec.s_base,
                           f0_hz=spec.nominal_freq_f0)


def simulate_closed_form(model: EquivalentModel, p_loss_pu: float,
                         duration_s: float, dt: float) -> FrequencyTrace:
    """Analytical step response of the aggregated swing + governor system.

    Deviation (Hz) sampled on a fixed grid:
    ``-p/(D+K) * (1 + a * exp(-zeta*omega_n*t) * sin(omega_r*t + phi)) * f0``.
    """
    if duration_s <= 0 or dt <= 0:
        raise ValidationError("duration_s/dt", "must be > 0")
    model._require_oscillatory()
    t = np.arange(0.0, duration_s + dt / 2, dt)
    if p_loss_pu == 0.0:
        dev = np.zeros_like(t)
    else:
        ss = -p_loss_pu / (model.d + model.k_sys)
        envelope = model.a * np.exp(-model.zeta * model.omega_n * t)
        dev = ss * (1.0 + envelope * np.sin(model.omega_r * t + model.phi)) * model.f0_hz
        dev[0] = 0.0  # exact start; the formula is 0 there up to rounding
    rocof = p_loss_pu * model.f0_hz / (2.0 * model.h_eq)
    return FrequencyTrace(dt=dt, time_s=t, deviation_hz=dev,
                          f0_hz=model.f0_hz, initial_rocof_hzps=abs(rocof))


def nadir_time(model: EquivalentModel) -> float:
    """First stationary point of the closed-form response.

    ``t = atan(omega_r*T / (zeta*omega_n*T - 1)) / omega_r`` taken on the
    branch that lands in (0, pi/omega_r); atan2 handles the sign change at
    ``zeta*omega_n*T = 1`` without blowup.
    """
    model._require_oscillatory()
    wr, wn, z, t_g = model.omega_r, model.omega_n, model.zeta, model.t_eq
    angle = math.atan2(wr * t_g, z * wn * t_g - 1.0)
    return angle / wr


# ---------------------------------------------------------------------------
# multi-machine numerical model


def _gather_remaining(op: OperatingPoint, spec: SystemSpec, outage: str):
    skip = spec.unit_index(outage)
    if not op.committed[skip]:
        raise ValidationError("outage", f"unit {outage!r} is not online in this point")
    remaining = [i for i in op.online_indices() if i != skip]
    if not remaining:
        raise NoOnlineUnitsError("no unit remains online besides the outage")
    gens = [spec.generators[i] for i in remaining]
    k_mw = np.array([g.governor_gain_k * g.m_base for g in gens])
    t_g = np.array([g.governor_time_t for g in gens])
    headroom = np.array([g.p_max - op.dispatch[i] for g, i in zip(gens, remaining)])
    headroom = np.maximum(headroom, 0.0)
    two_msys = 2.0 * sum(g.inertia_mws for g in gens)
    p_loss = op.dispatch[skip]
    demand0 = op.total_dispatch_mw
    return k_mw, t_g, headroom, two_msys, p_loss, demand0


def _shed_schedule(shed_events: Sequence[tuple[float, float]], n_steps: int,
                   dt: float) -> np.ndarray:
    cum = np.zeros(n_steps)
    for t_event, mw in shed_events:
        if mw < 0:
            raise ValidationError("shed_events", "shed amounts must be >= 0")
        start = max(0, int(round(t_event / dt)))
        if start < n_steps:
            cum[start:] += mw
    return cum


def simulate_multimachine(op: OperatingPoint, spec: SystemSpec, outage: str,
                          shed_events: Sequence[tuple[float, float]] = (),
                          duration_s: float = DEFAULT_DURATION_S,
                          dt: float = DEFAULT_DT_S) -> FrequencyTrace:
    """Fixed-step RK4 COI simulation of the outage of ``outage``.

    Each remaining unit contributes a first-order governor response
    clipped at its headroom; ``shed_events`` are (time s, MW) step
    reductions of net load, snapped to the integration grid.
    """
    if dt > 0.02:
        raise ValidationError("dt", "must be <= 0.02 s for the fixed-step model")
    if duration_s <= 0:
        raise ValidationError("duration_s", "must be > 0")
    k_mw, t_g, headroom, two_msys, p_loss, demand0 = _gather_remaining(op, spec, outage)
    n_steps = int(round(duration_s / dt))
    shed_cum = _shed_schedule(shed_events, n_steps, dt)
    dev = _kernels.integrate_fixed_shed(
        n_steps, dt, spec.nominal_freq_f0, two_msys, p_loss, demand0,
        spec.load_damping_d, k_mw, t_g, headroom, shed_cum)
    time = np.arange(n_steps + 1) * dt
    rocof = initial_rocof(p_loss, two_msys / 2.0, spec.nominal_freq_f0)
    return FrequencyTrace(dt=dt, time_s=time, deviation_hz=dev,
                          f0_hz=spec.nominal_freq_f0, initial_rocof_hzps=rocof)


# ---------------------------------------------------------------------------
# the optimal-shedding oracle


def _criteria_ok(dev: np.ndarray, dt: float, spec: SystemSpec) -> bool:
    freq_min = spec.nominal_freq_f0 + float(np.min(dev))
    if freq_min < spec.freq_floor_hard:
        return False
    below = np.count_nonzero(spec.nominal_freq_f0 + dev < spec.freq_floor_soft)
    return below * dt <= spec.soft_floor_max_duration + 1e-12


def optimal_ufls_detail(op: OperatingPoint, spec: SystemSpec, outage: str,
                        duration_s: float = DEFAULT_DURATION_S,
                        dt: float = DEFAULT_DT_S,
                        tol_mw: float = UFLS_TOL_MW,
                        max_iter: int = UFLS_MAX_ITER
                        ) -> tuple[float, FrequencyTrace]:
    """Like :func:`optimal_ufls` but also returns the unshed trace."""
    k_mw, t_g, headroom, two_msys, p_loss, demand0 = _gather_remaining(op, spec, outage)
    f0 = spec.nominal_freq_f0
    n_steps = int(round(duration_s / dt))

    def run(shed_cum: np.ndarray) -> np.ndarray:
        return _kernels.integrate_fixed_shed(
            n_steps, dt, f0, two_msys, p_loss, demand0,
            spec.load_damping_d, k_mw, t_g, headroom, shed_cum)

    no_shed = np.zeros(n_steps)
    dev0 = run(no_shed)
    time = np.arange(n_steps + 1) * dt
    rocof = initial_rocof(p_loss, two_msys / 2.0, f0)
    unshed = FrequencyTrace(dt=dt, time_s=time, deviation_hz=dev0,
                            f0_hz=f0, initial_rocof_hzps=rocof)
    if _criteria_ok(dev0, dt, spec):
        return 0.0, unshed

    below_soft = np.nonzero(f0 + dev0 < spec.freq_floor_soft)[0]
    cross_step = int(below_soft[0])

    def ok(shed_mw: float) -> bool:
        cum = np.zeros(n_steps)
        cum[cross_step:] = shed_mw
        return _criteria_ok(run(cum), dt, spec)

    hi = demand0
    if not ok(hi):
        raise CollapseError(
            f"outage of {outage!r}: criteria unmet even shedding all {demand0:.2f} MW")
    lo = 0.0
    for _ in range(max_iter):
        if hi - lo <= tol_mw:
            break
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi, unshed


def optimal_ufls(op: OperatingPoint, spec: SystemSpec, outage: str,
                 duration_s: float = DEFAULT_DURATION_S,
                 dt: float = DEFAULT_DT_S,
                 tol_mw: float = UFLS_TOL_MW,
                 max_iter: int = UFLS_MAX_ITER) -> float:
    """Minimal single block (MW), shed at the first soft-floor crossing,
    that keeps the trace above the hard floor and within the allowed time
    below the soft floor.  0 when the unshed trace already complies.

    Found by bisection on [0, connected demand] to ``tol_mw``; raises
    :class:`CollapseError` when even the full demand is not enough.
    """
    shed, _ = optimal_ufls_detail(op, spec, outage, duration_s, dt, tol_mw, max_iter)
    return shed


# ---------------------------------------------------------------------------
# conventional step-wise relay scheme


@dataclass(frozen=True)
class UflsSchemeStep:
    """One relay stage: trip ``block`` after ``delay_s`` below ``threshold_hz``.

    Exactly one of ``block_mw`` (fixed MW) or ``block_fraction`` (share of
    the currently connected demand) must be given.
    """

    threshold_hz: float
    delay_s: float
    block_mw: float | None = None
    block_fraction: float | None = None

    def __post_init__(self):
        if self.delay_s < 0:
            raise ValidationError("delay_s", "must be >= 0")
        if (self.block_mw is None) == (self.block_fraction is None):
            raise ValidationError("block", "give exactly one of block_mw/block_fraction")
        if self.block_mw is not None and self.block_mw <= 0:
            raise ValidationError("block_mw", "must be > 0")
        if self.block_fraction is not None and not 0 < self.block_fraction <= 1:
            raise ValidationError("block_fraction", "must be in (0, 1]")


def validate_scheme(scheme: Sequence[UflsSchemeStep]) -> tuple[UflsSchemeStep, ...]:
    steps = tuple(scheme)
    if not steps:
        raise ValidationError("scheme", "must have at least one step")
    for prev, cur in zip(steps, steps[1:]):
        if cur.threshold_hz >= prev.threshold_hz:
            raise ValidationError("scheme", "thresholds must be strictly decreasing")
    return steps


def simulate_with_relays(op: OperatingPoint, spec: SystemSpec, outage: str,
                         scheme: Sequence[UflsSchemeStep],
                         duration_s: float = DEFAULT_DURATION_S,
                         dt: float = DEFAULT_DT_S) -> tuple[FrequencyTrace, float]:
    """Outage simulation with the step-wise relay scheme deciding the sheds.

    Returns the trace and the total MW tripped by the relays.
    """
    steps = validate_scheme(scheme)
    if dt > 0.02:
        raise ValidationError("dt", "must be <= 0.02 s for the fixed-step model")
    k_mw, t_g, headroom, two_msys, p_loss, demand0 = _gather_remaining(op, spec, outage)
    n_steps = int(round(duration_s / dt))
    thresholds = np.array([s.threshold_hz for s in steps])
    delays = np.array([s.delay_s for s in steps])
    block_mw = np.array([s.block_mw if s.block_mw is not None else -1.0 for s in steps])
    block_frac = np.array([s.block_fraction if s.block_fraction is not None else 0.0
                           for s in steps])
    dev, shed = _kernels.integrate_relay(
        n_steps, dt, spec.nominal_freq_f0, two_msys, p_loss, demand0,
        spec.load_damping_d, k_mw, t_g, headroom,
        thresholds, delays, block_mw, block_frac)
    time = np.arange(n_steps + 1) * dt
    rocof = initial_rocof(p_loss, two_msys / 2.0, spec.nominal_freq_f0)
    trace = FrequencyTrace(dt=dt, time_s=time, deviation_hz=dev,
                           f0_hz=spec.nominal_freq_f0, initial_rocof_hzps=rocof)
    return trace, float(shed)
