"""Post-solve dynamic verification and the experiment drivers.

Every solved schedule can be replayed against the reference frequency
model: for each step and each credible outage, the simulated minimal
shed is compared with what the scheduler assumed, conventional relay
schemes are rehearsed, and whole studies (cost sweeps, multi-day runs)
are orchestrated here.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .learn import TobitModel
from .milp import (ModelConfig, ScheduleSolution, SolverError,
                   StructuralInfeasibleError, build_corrective_fcuc,
                   build_standard_uc, solve)
from .sfr import (CollapseError, FrequencyTrace, UflsSchemeStep,
                  meets_frequency_criteria, optimal_ufls_detail,
                  simulate_with_relays)
from .system_model import (OperatingPoint, ScenarioSpec, SystemSpec,
                           initial_rocof)

log = logging.getLogger(__name__)

# illustrative island relay plan: six 10%-of-demand blocks, 100 ms delay
DEFAULT_CONVENTIONAL_SCHEME = tuple(
    UflsSchemeStep(threshold_hz=th, delay_s=0.1, block_fraction=0.10)
    for th in (49.0, 48.8, 48.6, 48.4, 48.2, 48.0))


@dataclass(frozen=True)
class PairResult:
    """Dynamic outcome of one (step, outage) contingency."""

    step: int
    outage: str
    rocof_hzps: float
    ufls_est_mw: float
    ufls_sim_mw: float
    nadir_hz: float
    time_below_48_s: float
    min_hz: float
    criteria_met: bool

    @property
    def miss(self) -> bool:
        """True when the schedule assumed more shedding than needed covers."""
        return self.ufls_est_mw > self.ufls_sim_mw + 1e-9


@dataclass(frozen=True)
class VerificationReport:
    mode: str  # "optimal-oracle" | "conventional-scheme"
    rows: tuple[PairResult, ...]

    @property
    def n_pairs(self) -> int:
        return len(self.rows)

    @property
    def total_estimated_mw(self) -> float:
        return sum(r.ufls_est_mw for r in self.rows)

    @property
    def total_simulated_mw(self) -> float:
        return sum(r.ufls_sim_mw for r in self.rows if math.isfinite(r.ufls_sim_mw))

    @property
    def n_misses(self) -> int:
        return sum(1 for r in self.rows if r.miss)

    @property
    def n_below_soft(self) -> int:
        return sum(1 for r in self.rows if r.min_hz < 48.0)

    @property
    def n_below_hard(self) -> int:
        return sum(1 for r in self.rows if r.min_hz < 47.0)


def operating_point_at(solution: ScheduleSolution, spec: SystemSpec,
                       t: int) -> OperatingPoint:
    """Operating point of a solved schedule at step ``t`` (solver noise
    washed into the unit limits)."""
    committed = tuple(solution.u[i][t] == 1 for i in range(spec.n_units))
    dispatch = []
    for i, g in enumerate(spec.generators):
        if committed[i]:
            dispatch.append(min(max(solution.p[i][t], g.p_min), g.p_max))
        else:
            dispatch.append(0.0)
    inertia = sum(g.inertia_mws for g, on in zip(spec.generators, committed) if on)
    return OperatingPoint(committed=committed, dispatch=tuple(dispatch),
                          system_inertia_mws=inertia)


def _credible_outages(op: OperatingPoint, spec: SystemSpec) -> list[int]:
    online = op.online_indices()
    return online if len(online) >= 2 else []


def verify_schedule(solution: ScheduleSolution, spec: SystemSpec,
                    scenario: ScenarioSpec, tobit: TobitModel | None = None,
                    duration_s: float = 60.0, dt: float = 0.01
                    ) -> VerificationReport:
    """Compare the schedule's shed assumptions against the simulation oracle.

    For every step and online outage the reference model recomputes the
    minimal shed; the schedule's estimate (0 for case I schedules, which
    carry none) sits next to it.  Trace statistics describe the unshed
    post-outage response.
    """
    rows = []
    has_estimates = solution.case != "I"
    for t in range(solution.horizon):
        op = operating_point_at(solution, spec, t)
        for li in _credible_outages(op, spec):
            uid = spec.generators[li].id
            est = solution.ufls[li][t] if has_estimates else 0.0
            rocof = initial_rocof(
                op.dispatch[li],
                sum(spec.generators[j].inertia_mws for j in op.online_indices()
                    if j != li),
                spec.nominal_freq_f0)
            try:
                sim, trace = optimal_ufls_detail(op, spec, uid,
                                                 duration_s=duration_s, dt=dt)
            except CollapseError:
                rows.append(PairResult(step=t + 1, outage=uid,
                                       rocof_hzps=rocof, ufls_est_mw=est,
                                       ufls_sim_mw=float("inf"),
                                       nadir_hz=float("nan"),
                                       time_below_48_s=float("nan"),
                                       min_hz=float("nan"), criteria_met=False))
                continue
            rows.append(PairResult(
                step=t + 1, outage=uid, rocof_hzps=rocof, ufls_est_mw=est,
                ufls_sim_mw=sim, nadir_hz=trace.nadir_hz,
                time_below_48_s=trace.time_below(spec.freq_floor_soft),
                min_hz=trace.min_hz,
                criteria_met=meets_frequency_criteria(trace, spec)))
    report = VerificationReport(mode="optimal-oracle", rows=tuple(rows))
    if report.n_misses:
        log.warning("%d of %d pairs assume more shedding than the simulated "
                    "minimum", report.n_misses, report.n_pairs)
    return report


def simulate_conventional_scheme(solution: ScheduleSolution, spec: SystemSpec,
                                 scenario: ScenarioSpec,
                                 scheme: Sequence[UflsSchemeStep]
                                 = DEFAULT_CONVENTIONAL_SCHEME,
                                 duration_s: float = 60.0, dt: float = 0.01,
                                 trace_sink=None) -> VerificationReport:
    """Replay every outage with step-wise relays doing the shedding.

    ``ufls_sim_mw`` holds the relay-tripped total.  ``trace_sink``, when
    given, receives ``(step, outage_id, trace)`` for every pair.
    """
    rows = []
    has_estimates = solution.case != "I"
    for t in range(solution.horizon):
        op = operating_point_at(solution, spec, t)
        for li in _credible_outages(op, spec):
            uid = spec.generators[li].id
            est = solution.ufls[li][t] if has_estimates else 0.0
            trace, shed = simulate_with_relays(op, spec, uid, scheme,
                                               duration_s=duration_s, dt=dt)
            if trace_sink is not None:
                trace_sink(t + 1, uid, trace)
            rows.append(PairResult(
                step=t + 1, outage=uid, rocof_hzps=trace.initial_rocof_hzps,
                ufls_est_mw=est, ufls_sim_mw=shed, nadir_hz=trace.nadir_hz,
                time_below_48_s=trace.time_below(spec.freq_floor_soft),
                min_hz=trace.min_hz,
                criteria_met=meets_frequency_criteria(trace, spec)))
    return VerificationReport(mode="conventional-scheme", rows=tuple(rows))


# ---------------------------------------------------------------------------
# experiment drivers


@dataclass(frozen=True)
class SweepResult:
    """Operation cost / shedding trade-off along the penalty grid."""

    rows: tuple[tuple[float, float, float, float], ...]
    # (c_o_eur_per_mw, operation_cost_eur, ufls_cost_eur, estimated_ufls_mw)

    def collapse_plateaus(self) -> "SweepResult":
        """Drop consecutive entries with identical outcomes (plot data)."""
        kept = []
        for row in self.rows:
            if kept and abs(kept[-1][1] - row[1]) < 1e-6 \
                    and abs(kept[-1][3] - row[3]) < 1e-6:
                continue
            kept.append(row)
        return SweepResult(rows=tuple(kept))


def sweep_ufls_cost(spec: SystemSpec, scenario: ScenarioSpec,
                    tobit: TobitModel, costs: Sequence[float],
                    base_config: ModelConfig | None = None) -> SweepResult:
    """One corrective solve per post-outage cost, ascending."""
    if not costs or any(c < 0 for c in costs):
        raise ValueError("costs must be non-empty and non-negative")
    base = base_config or ModelConfig()
    rows = []
    for c_o in sorted(costs):
        cfg = replace(base, case="III", ufls_post_outage_cost_eur_per_mw=c_o)
        try:
            handle = build_corrective_fcuc(spec, scenario, tobit, cfg)
            sol = solve(handle, cfg)
        except (SolverError, StructuralInfeasibleError) as exc:
            log.warning("sweep point c_o=%.0f failed: %s", c_o, exc)
            continue
        if sol.solver_status == "infeasible":
            log.warning("sweep point c_o=%.0f infeasible", c_o)
            continue
        rows.append((c_o, sol.operation_cost_eur, sol.ufls_cost_eur,
                     sol.estimated_ufls_total_mw))
    return SweepResult(rows=tuple(rows))


def coarse_cost_grid(n_points: int = 21, top: float = 1_000_000.0) -> list[float]:
    return [top * k / (n_points - 1) for k in range(n_points)]


def fine_cost_grid(top: float = 1_000_000.0, step: float = 10_000.0) -> list[float]:
    n = int(round(top / step))
    return [step * k for k in range(n + 1)]


@dataclass(frozen=True)
class StudyRow:
    day: int
    case: str
    status: str
    operation_cost_eur: float
    ufls_cost_eur: float
    estimated_ufls_mw: float


@dataclass(frozen=True)
class StudyResult:
    rows: tuple[StudyRow, ...]
    ordering_ok: tuple[bool, ...]  # per day: case II <= III <= I within gap


def multiday_study(spec: SystemSpec, scenarios: Sequence[ScenarioSpec],
                   configs: Sequence[ModelConfig], tobit: TobitModel
                   ) -> StudyResult:
    """Solve each scenario under each config; per-day failures are
    recorded and the study continues."""
    if not scenarios:
        raise ValueError("need at least one scenario")
    rows: list[StudyRow] = []
    ordering = []
    for day, scenario in enumerate(scenarios, start=1):
        by_case: dict[str, StudyRow] = {}
        gap = max(c.mip_gap_target for c in configs)
        for cfg in configs:
            try:
                if cfg.case == "I":
                    handle = build_standard_uc(spec, scenario)
                else:
                    handle = build_corrective_fcuc(spec, scenario, tobit, cfg)
                sol = solve(handle, cfg)
                row = StudyRow(day=day, case=cfg.case,
                               status=sol.solver_status,
                               operation_cost_eur=sol.operation_cost_eur,
                               ufls_cost_eur=sol.ufls_cost_eur,
                               estimated_ufls_mw=sol.estimated_ufls_total_mw)
            except (SolverError, StructuralInfeasibleError) as exc:
                log.warning("day %d case %s failed: %s", day, cfg.case, exc)
                row = StudyRow(day=day, case=cfg.case, status="error",
                               operation_cost_eur=float("nan"),
                               ufls_cost_eur=float("nan"),
                               estimated_ufls_mw=float("nan"))
            rows.append(row)
            by_case[cfg.case] = row
        ok = True
        if all(c in by_case and by_case[c].status in ("optimal", "feasible-gap")
               for c in ("I", "II", "III")):
            c1 = by_case["I"].operation_cost_eur
            c2 = by_case["II"].operation_cost_eur
            c3 = by_case["III"].operation_cost_eur
            tol = 2.0 * gap * max(c1, 1.0)
            ok = (c2 <= c3 + tol) and (c3 <= c1 + tol)
        ordering.append(ok)
    return StudyResult(rows=tuple(rows), ordering_ok=tuple(ordering))


# ---------------------------------------------------------------------------
# artifacts


def write_verify_csv(report: VerificationReport, path: str | Path,
                     meta: dict | None = None) -> None:
    lines = [f"# mode={report.mode}"]
    for key, val in sorted((meta or {}).items()):
        lines.append(f"# {key}={val}")
    lines.append("step,outage,rocof_hzps,ufls_est_mw,ufls_sim_mw,nadir_hz,"
                 "t_below48_s,ok")
    for r in report.rows:
        lines.append(f"{r.step},{r.outage},{r.rocof_hzps!r},{r.ufls_est_mw!r},"
                     f"{r.ufls_sim_mw!r},{r.nadir_hz!r},{r.time_below_48_s!r},"
                     f"{int(r.criteria_met)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_verify_csv(path: str | Path) -> VerificationReport:
    mode = "optimal-oracle"
    rows = []
    with Path(path).open(newline="") as fh:
        for raw in csv.reader(fh):
            if not raw:
                continue
            if raw[0].startswith("#"):
                if raw[0].startswith("# mode="):
                    mode = raw[0].split("=", 1)[1]
                continue
            if raw[0] == "step":
                continue
            min_hz = float(raw[5])  # nadir of the simulated trace
            rows.append(PairResult(step=int(raw[0]), outage=raw[1],
                                   rocof_hzps=float(raw[2]),
                                   ufls_est_mw=float(raw[3]),
                                   ufls_sim_mw=float(raw[4]),
                                   nadir_hz=float(raw[5]),
                                   time_below_48_s=float(raw[6]),
                                   min_hz=min_hz,
                                   criteria_met=raw[7] == "1"))
    return VerificationReport(mode=mode, rows=tuple(rows))


def write_sweep_csv(result: SweepResult, path: str | Path,
                    meta: dict | None = None) -> None:
    lines = []
    for key, val in sorted((meta or {}).items()):
        lines.append(f"# {key}={val}")
    lines.append("c_o_eur_per_mw,opcost_eur,uflscost_eur,ufls_mw")
    for c_o, op, ufc, mw in result.rows:
        lines.append(f"{c_o!r},{op!r},{ufc!r},{mw!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_study_csv(result: StudyResult, path: str | Path,
                    meta: dict | None = None) -> None:
    lines = []
    for key, val in sorted((meta or {}).items()):
        lines.append(f"# {key}={val}")
    lines.append("day,case,status,opcost_eur,uflscost_eur,ufls_mw")
    for r in result.rows:
        lines.append(f"{r.day},{r.case},{r.status},{r.operation_cost_eur!r},"
                     f"{r.ufls_cost_eur!r},{r.estimated_ufls_mw!r}")
    Path(path).write_text("\n".join(lines) + "\n")
