"""Unit-commitment formulations: the standard reserve-constrained model
(case I) and the corrective variant that relaxes reserve by the learned
shedding estimate (cases II/III).

Index convention: ``i`` runs over units, ``t`` over steps, ``l`` over
outage candidates (every unit, when the system has at least two).  All
constraint rows are stated in MW / Hz / Hz/s; aggregated inertia enters
as H*M_base in MW*s.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..learn import TobitModel
from ..system_model import (GeneratorSpec, ScenarioSpec, SystemSpec,
                            ValidationError)
from .backend import LinearModel, RawSolution, SolverError, get_backend

HOURS_PER_YEAR = 8760.0


class StructuralInfeasibleError(ValueError):
    """Input data that no commitment can serve, caught before solving."""


@dataclass(frozen=True)
class ModelConfig:
    """Knobs of the corrective formulation and the solve."""

    case: str = "III"
    ufls_post_outage_cost_eur_per_mw: float | None = None  # None: system value
    big_m1: float | None = None  # None: rocof_crit
    big_m2: float | None = None  # None: headroom over the training labels
    mip_gap_target: float = 1e-3
    time_limit_s: float = 600.0
    solver: str = "highs"

    def __post_init__(self):
        if self.case not in ("I", "II", "III"):
            raise ValidationError("case", "must be I, II or III")
        if self.big_m1 is not None and self.big_m1 <= 0:
            raise ValidationError("big_m1", "must be > 0")
        if self.big_m2 is not None and self.big_m2 <= 0:
            raise ValidationError("big_m2", "must be > 0")
        if self.mip_gap_target < 0:
            raise ValidationError("mip_gap_target", "must be >= 0")


def prob_outage(gen: GeneratorSpec, scenario: ScenarioSpec) -> float:
    """Per-step outage probability from the annual forced-outage rate."""
    return gen.outage_rate * scenario.step_hours / HOURS_PER_YEAR


def resolve_big_m(spec: SystemSpec, tobit: TobitModel,
                  config: ModelConfig) -> tuple[float, float]:
    """Big-M pair for the RoCoF and shedding linearizations.

    M1 defaults to the RoCoF limit (no feasible schedule produces more).
    M2 defaults to 1.2x the largest training label, widened if needed so
    the indicator rows stay deactivatable over the whole RoCoF range:
    the z=1 branch needs M2 >= b*(M1 - a), the z=0 branch at RoCoF 0
    needs M2 >= b*a.
    """
    m1 = config.big_m1 if config.big_m1 is not None else spec.rocof_crit
    needed = tobit.slope_b * max(m1 - tobit.threshold_a, 0.0)
    slack0 = tobit.slope_b * max(tobit.threshold_a, 0.0)
    if config.big_m2 is not None:
        m2 = config.big_m2
    else:
        m2 = max(1.2 * tobit.max_label_mw, 1.001 * needed, 1.001 * slack0, 1.0)
    return m1, m2


# ---------------------------------------------------------------------------
# model handle


@dataclass
class UcModel:
    """A built model plus the index maps needed to read a solution back."""

    model: LinearModel
    spec: SystemSpec
    scenario: ScenarioSpec
    case: str
    candidates: list[int]
    iu: dict = field(default_factory=dict)
    iv: dict = field(default_factory=dict)
    iw: dict = field(default_factory=dict)
    ip: dict = field(default_factory=dict)
    ir: dict = field(default_factory=dict)
    irocof: dict = field(default_factory=dict)
    iufls: dict = field(default_factory=dict)
    iz: dict = field(default_factory=dict)
    iy: dict = field(default_factory=dict)
    c_op: np.ndarray | None = None
    c_ufls: np.ndarray | None = None
    tobit: TobitModel | None = None
    big_m1: float = 0.0
    big_m2: float = 0.0


def _check_structure(spec: SystemSpec, scenario: ScenarioSpec) -> None:
    total_pmax = sum(g.p_max for g in spec.generators)
    min_pmin = min(g.p_min for g in spec.generators)
    for t in range(scenario.horizon):
        net = scenario.net_demand(t)
        if net > total_pmax + 1e-9:
            raise StructuralInfeasibleError(
                f"step {t + 1}: net demand {net:.2f} MW above total capacity "
                f"{total_pmax:.2f} MW")
        if net < -1e-9:
            raise StructuralInfeasibleError(
                f"step {t + 1}: renewables exceed demand by {-net:.2f} MW "
                "and no curtailment is modeled")
        if 1e-9 < net < min_pmin - 1e-9:
            raise StructuralInfeasibleError(
                f"step {t + 1}: net demand {net:.2f} MW below the smallest "
                f"minimum output {min_pmin:.2f} MW")


def _cost_segments(g: GeneratorSpec) -> list[tuple[float, float]]:
    """(length, slope) of the cost segments above p_min."""
    segs = []
    prev = 0.0
    for bp, slope in g.cost_curve:
        lo = max(prev, g.p_min)
        hi = min(bp, g.p_max)
        if hi > lo + 1e-12:
            segs.append((hi - lo, slope))
        prev = bp
    return segs


def _build_common(spec: SystemSpec, scenario: ScenarioSpec,
                  name: str) -> UcModel:
    """Variables and the constraints shared by every case."""
    _check_structure(spec, scenario)
    m = LinearModel(name)
    T = scenario.horizon
    gens = spec.generators
    n = len(gens)
    handle = UcModel(model=m, spec=spec, scenario=scenario, case="I",
                     candidates=list(range(n)) if n >= 2 else [])
    dt_h = scenario.step_hours

    for t in range(T):
        for i, g in enumerate(gens):
            handle.iu[i, t] = m.add_var(
                f"u_{g.id}_t{t + 1}", binary=True,
                obj=g.dispatch_cost(g.p_min) * dt_h)
            handle.iv[i, t] = m.add_var(f"v_{g.id}_t{t + 1}", 0.0, 1.0,
                                        obj=g.startup_cost)
            handle.iw[i, t] = m.add_var(f"w_{g.id}_t{t + 1}", 0.0, 1.0)
            handle.ip[i, t] = m.add_var(f"p_{g.id}_t{t + 1}", 0.0, g.p_max)
            handle.ir[i, t] = m.add_var(f"r_{g.id}_t{t + 1}", 0.0, g.p_max)

    iseg: dict = {}
    for t in range(T):
        for i, g in enumerate(gens):
            for s, (length, slope) in enumerate(_cost_segments(g)):
                iseg[i, t, s] = m.add_var(
                    f"pc_{g.id}_t{t + 1}_s{s + 1}", 0.0, length,
                    obj=slope * dt_h)

    status0 = scenario.initial_status
    for t in range(T):
        for i, g in enumerate(gens):
            u0 = 1.0 if status0[i].online else 0.0
            # commitment logic u_t - u_{t-1} = v_t - w_t
            coefs = [(handle.iu[i, t], 1.0), (handle.iv[i, t], -1.0),
                     (handle.iw[i, t], 1.0)]
            rhs = 0.0
            if t == 0:
                rhs = u0
            else:
                coefs.append((handle.iu[i, t - 1], -1.0))
            m.add_row(f"logic_{g.id}_t{t + 1}", coefs, rhs, rhs)
            m.add_row(f"startstop_{g.id}_t{t + 1}",
                      [(handle.iv[i, t], 1.0), (handle.iw[i, t], 1.0)],
                      -math.inf, 1.0)
            # min up/down rolling windows (truncated at the horizon start)
            up_lo = max(0, t - g.min_up_time + 1)
            m.add_row(f"minup_{g.id}_t{t + 1}",
                      [(handle.iv[i, s], 1.0) for s in range(up_lo, t + 1)]
                      + [(handle.iu[i, t], -1.0)], -math.inf, 0.0)
            dn_lo = max(0, t - g.min_down_time + 1)
            m.add_row(f"mindown_{g.id}_t{t + 1}",
                      [(handle.iw[i, s], 1.0) for s in range(dn_lo, t + 1)]
                      + [(handle.iu[i, t], 1.0)], -math.inf, 1.0)
            # output window and reserve headroom
            m.add_row(f"pmin_{g.id}_t{t + 1}",
                      [(handle.ip[i, t], 1.0), (handle.iu[i, t], -g.p_min)],
                      0.0, math.inf)
            m.add_row(f"pmax_{g.id}_t{t + 1}",
                      [(handle.ip[i, t], 1.0), (handle.ir[i, t], 1.0),
                       (handle.iu[i, t], -g.p_max)], -math.inf, 0.0)
            # ramps against the previous step (initial output before t=1)
            ram = [(handle.ip[i, t], 1.0)]
            rhs_up, rhs_dn = g.ramp_up, g.ramp_down
            if t == 0:
                rhs_up += status0[i].p0_mw
                rhs_dn -= status0[i].p0_mw
            else:
                ram.append((handle.ip[i, t - 1], -1.0))
            m.add_row(f"rampup_{g.id}_t{t + 1}", ram, -math.inf, rhs_up)
            m.add_row(f"rampdn_{g.id}_t{t + 1}",
                      [(j, -c) for j, c in ram], -math.inf, rhs_dn)
            # piecewise-linear cost linking
            link = [(handle.ip[i, t], 1.0), (handle.iu[i, t], -g.p_min)]
            link += [(iseg[i, t, s], -1.0)
                     for s in range(len(_cost_segments(g)))]
            m.add_row(f"pwl_{g.id}_t{t + 1}", link, 0.0, 0.0)
        # power balance with fixed renewable infeed
        m.add_row(f"balance_t{t + 1}",
                  [(handle.ip[i, t], 1.0) for i in range(n)],
                  scenario.net_demand(t), scenario.net_demand(t))

    # pre-horizon minimum up/down carry-over
    for i, g in enumerate(gens):
        st = status0[i]
        if st.online:
            for t in range(min(T, g.min_up_time - st.hours_in_state)):
                m.var_lb[handle.iu[i, t]] = 1.0
        else:
            for t in range(min(T, g.min_down_time - st.hours_in_state)):
                m.var_ub[handle.iu[i, t]] = 0.0

    # RoCoF adequacy: post-outage inertia covers the lost dispatch
    f0 = spec.nominal_freq_f0
    for t in range(T):
        for li in handle.candidates:
            g = gens[li]
            coefs = [(handle.iu[i, t], gens[i].inertia_mws)
                     for i in range(n) if i != li]
            coefs.append((handle.ip[li, t], -f0 / (2.0 * spec.rocof_crit)))
            m.add_row(f"rocofcap_{g.id}_t{t + 1}", coefs, 0.0, math.inf)
    return handle


def _finalize_costs(handle: UcModel,
                    ufls_cost_coef: dict | None = None) -> None:
    nv = handle.model.n_vars
    c_all = np.array(handle.model.obj)
    c_ufls = np.zeros(nv)
    if ufls_cost_coef:
        for idx, coef in ufls_cost_coef.items():
            c_ufls[idx] = coef
            handle.model.add_to_obj(idx, coef)
    handle.c_op = c_all
    handle.c_ufls = c_ufls


def build_standard_uc(spec: SystemSpec, scenario: ScenarioSpec) -> UcModel:
    """Case I: static reserve covers every credible outage in full."""
    handle = _build_common(spec, scenario, "standard_uc")
    m = handle.model
    for t in range(scenario.horizon):
        for li in handle.candidates:
            g = spec.generators[li]
            coefs = [(handle.ir[i, t], 1.0)
                     for i in range(spec.n_units) if i != li]
            coefs.append((handle.ip[li, t], -1.0))
            m.add_row(f"reserve_{g.id}_t{t + 1}", coefs, 0.0, math.inf)
    _finalize_costs(handle)
    return handle


def build_corrective_fcuc(spec: SystemSpec, scenario: ScenarioSpec,
                          tobit: TobitModel, config: ModelConfig) -> UcModel:
    """Cases II/III: reserve relaxed by the estimated optimal shed.

    Adds a per-(outage, step) RoCoF variable tied to commitment through
    the big-M product linearization, binds the shed estimate to it with
    the indicator rows of the censored-regression line, and (case III)
    prices estimated shedding at the risk-weighted post-outage cost.
    """
    if tobit.slope_b <= 0:
        raise ValidationError("tobit.slope_b", "must be > 0")
    handle = _build_common(spec, scenario, f"corrective_fcuc_{config.case}")
    handle.case = config.case
    handle.tobit = tobit
    m = handle.model
    gens = spec.generators
    n = spec.n_units
    T = scenario.horizon
    f0 = spec.nominal_freq_f0
    m1, m2 = resolve_big_m(spec, tobit, config)
    handle.big_m1, handle.big_m2 = m1, m2
    a_th, b_sl = tobit.threshold_a, tobit.slope_b

    for t in range(T):
        for li in handle.candidates:
            g = gens[li]
            tag = f"{g.id}_t{t + 1}"
            handle.irocof[li, t] = m.add_var(f"rocof_{tag}", 0.0, m1)
            handle.iufls[li, t] = m.add_var(f"ufls_{tag}", 0.0, m2)
            handle.iz[li, t] = m.add_var(f"z_{tag}", binary=True)
            for i in range(n):
                if i != li:
                    handle.iy[i, li, t] = m.add_var(
                        f"y_{gens[i].id}_{tag}", 0.0, m1)

    for t in range(T):
        for li in handle.candidates:
            g = gens[li]
            tag = f"{g.id}_t{t + 1}"
            ro = handle.irocof[li, t]
            uf = handle.iufls[li, t]
            z = handle.iz[li, t]
            # lost dispatch = 2 * sum_i y_i * H_i * M_i / f0  (y = rocof*u)
            coefs = [(handle.iy[i, li, t], 2.0 * gens[i].inertia_mws / f0)
                     for i in range(n) if i != li]
            coefs.append((handle.ip[li, t], -1.0))
            m.add_row(f"rocofdef_{tag}", coefs, 0.0, 0.0)
            for i in range(n):
                if i == li:
                    continue
                y = handle.iy[i, li, t]
                uu = handle.iu[i, t]
                yid = f"{gens[i].id}_{tag}"
                m.add_row(f"ylin1_{yid}", [(y, 1.0), (uu, -m1)],
                          -math.inf, 0.0)
                m.add_row(f"ylin2_{yid}", [(y, 1.0), (ro, -1.0)],
                          -math.inf, 0.0)
                m.add_row(f"ylin3_{yid}", [(y, 1.0), (ro, -1.0), (uu, -m1)],
                          -m1, math.inf)
            # indicator rows binding the shed estimate to the fitted line
            m.add_row(f"tob1_{tag}", [(ro, 1.0), (z, -m2 / b_sl)],
                      -math.inf, a_th)
            m.add_row(f"tob2_{tag}", [(uf, 1.0), (z, -m2)], -math.inf, 0.0)
            m.add_row(f"tob3_{tag}", [(uf, 1.0), (ro, -b_sl), (z, m2)],
                      -math.inf, m2 - b_sl * a_th)
            m.add_row(f"tob4_{tag}", [(uf, 1.0), (ro, -b_sl), (z, -m2)],
                      -b_sl * a_th - m2, math.inf)
            # reserve relaxed by the estimated shed
            coefs = [(handle.ir[i, t], 1.0) for i in range(n) if i != li]
            coefs += [(handle.ip[li, t], -1.0), (uf, 1.0)]
            m.add_row(f"reserve_{tag}", coefs, 0.0, math.inf)

    if config.case == "II":
        c_o = 0.0
    else:
        c_o = (config.ufls_post_outage_cost_eur_per_mw
               if config.ufls_post_outage_cost_eur_per_mw is not None
               else spec.ufls_post_outage_cost)
    ufls_coefs = {}
    for (li, t), idx in handle.iufls.items():
        ufls_coefs[idx] = c_o * prob_outage(gens[li], scenario)
    _finalize_costs(handle, ufls_coefs)
    return handle


# ---------------------------------------------------------------------------
# solve and extraction


@dataclass(frozen=True)
class ScheduleSolution:
    """Solved horizon: commitment, dispatch, reserve, shed estimates, costs."""

    case: str
    unit_ids: tuple[str, ...]
    horizon: int
    solver_status: str
    mip_gap: float
    u: tuple[tuple[int, ...], ...]
    p: tuple[tuple[float, ...], ...]
    r: tuple[tuple[float, ...], ...]
    rocof: tuple[tuple[float, ...], ...]  # per (unit, t); 0 for non-candidates
    ufls: tuple[tuple[float, ...], ...]
    z: tuple[tuple[int, ...], ...]
    operation_cost_eur: float
    ufls_cost_eur: float
    estimated_ufls_total_mw: float
    objective_eur: float

    @property
    def total_cost_eur(self) -> float:
        return self.operation_cost_eur + self.ufls_cost_eur


def solve(handle: UcModel, config: ModelConfig) -> ScheduleSolution:
    """Run the configured backend and read the schedule back."""
    backend = get_backend(config.solver)
    raw: RawSolution = backend(handle.model, mip_gap=config.mip_gap_target,
                               time_limit_s=config.time_limit_s)
    if raw.x is not None:
        viol = handle.model.max_violation(raw.x)
        if viol > 1e-5:
            raise SolverError(f"backend returned an infeasible point "
                              f"(violation {viol:.2e})")
    spec, scenario = handle.spec, handle.scenario
    n, T = spec.n_units, scenario.horizon
    ids = tuple(g.id for g in spec.generators)
    if raw.status == "infeasible":
        empty_f = tuple(tuple(0.0 for _ in range(T)) for _ in range(n))
        empty_i = tuple(tuple(0 for _ in range(T)) for _ in range(n))
        return ScheduleSolution(case=handle.case, unit_ids=ids, horizon=T,
                                solver_status="infeasible", mip_gap=0.0,
                                u=empty_i, p=empty_f, r=empty_f, rocof=empty_f,
                                ufls=empty_f, z=empty_i,
                                operation_cost_eur=0.0, ufls_cost_eur=0.0,
                                estimated_ufls_total_mw=0.0, objective_eur=0.0)
    x = raw.x

    def grid_f(index: dict) -> tuple[tuple[float, ...], ...]:
        return tuple(tuple(float(x[index[i, t]]) if (i, t) in index else 0.0
                           for t in range(T)) for i in range(n))

    def grid_i(index: dict) -> tuple[tuple[int, ...], ...]:
        return tuple(tuple(int(round(x[index[i, t]])) if (i, t) in index else 0
                           for t in range(T)) for i in range(n))

    op_cost = float(handle.c_op @ x)
    ufls_cost = float(handle.c_ufls @ x)
    est_total = float(sum(x[idx] for idx in handle.iufls.values()))
    return ScheduleSolution(
        case=handle.case, unit_ids=ids, horizon=T,
        solver_status=raw.status, mip_gap=raw.mip_gap,
        u=grid_i(handle.iu), p=grid_f(handle.ip), r=grid_f(handle.ir),
        rocof=grid_f(handle.irocof), ufls=grid_f(handle.iufls),
        z=grid_i(handle.iz),
        operation_cost_eur=op_cost, ufls_cost_eur=ufls_cost,
        estimated_ufls_total_mw=est_total,
        objective_eur=float(raw.objective))


def verify_physical_invariants(handle: UcModel, solution: ScheduleSolution,
                               tol: float = 1e-6) -> list[str]:
    """Direct substitution checks on a solved schedule.

    Returns a list of human-readable violations (empty when clean):
    power balance, reserve adequacy, RoCoF cap, and the exactness of the
    indicator rows (z=0 -> no shed and RoCoF at most the threshold;
    z=1 -> shed equals the fitted line).
    """
    spec, scenario = handle.spec, handle.scenario
    n, T = spec.n_units, scenario.horizon
    gens = spec.generators
    f0 = spec.nominal_freq_f0
    problems = []
    for t in range(T):
        total_p = sum(solution.p[i][t] for i in range(n))
        if abs(total_p - scenario.net_demand(t)) > tol:
            problems.append(f"balance at t{t + 1}: {total_p} vs "
                            f"{scenario.net_demand(t)}")
        for li in handle.candidates:
            if solution.u[li][t] == 0:
                continue
            p_l = solution.p[li][t]
            reserve = sum(solution.r[i][t] for i in range(n) if i != li)
            inertia = sum(gens[i].inertia_mws for i in range(n)
                          if i != li and solution.u[i][t] == 1)
            relax = solution.ufls[li][t] if handle.case != "I" else 0.0
            if reserve + relax < p_l - tol:
                problems.append(f"reserve for {gens[li].id} at t{t + 1}")
            if inertia > 0:
                rocof_direct = p_l * f0 / (2.0 * inertia)
                if rocof_direct > spec.rocof_crit + 1e-6:
                    problems.append(f"rocof cap for {gens[li].id} at t{t + 1}: "
                                    f"{rocof_direct:.4f}")
                if handle.case != "I":
                    ro = solution.rocof[li][t]
                    if abs(ro - rocof_direct) > 1e-4:
                        problems.append(
                            f"rocof var mismatch {gens[li].id} t{t + 1}: "
                            f"{ro:.6f} vs {rocof_direct:.6f}")
            if handle.case != "I" and handle.tobit is not None:
                ro = solution.rocof[li][t]
                uf = solution.ufls[li][t]
                if solution.z[li][t] == 0:
                    if uf > tol or ro > handle.tobit.threshold_a + 1e-6:
                        problems.append(f"z=0 exactness {gens[li].id} t{t + 1}")
                else:
                    want = handle.tobit.slope_b * (ro - handle.tobit.threshold_a)
                    if abs(uf - want) > 1e-6 * max(1.0, abs(want)):
                        problems.append(f"z=1 exactness {gens[li].id} t{t + 1}")
    return problems


# ---------------------------------------------------------------------------
# schedule artifact


def write_schedule_json(solution: ScheduleSolution, path: str | Path,
                        meta: dict | None = None) -> None:
    payload = {
        "case": solution.case,
        "unit_ids": list(solution.unit_ids),
        "horizon": solution.horizon,
        "solver_status": solution.solver_status,
        "mip_gap": solution.mip_gap,
        "u": [list(row) for row in solution.u],
        "p": [list(row) for row in solution.p],
        "r": [list(row) for row in solution.r],
        "rocof": [list(row) for row in solution.rocof],
        "ufls": [list(row) for row in solution.ufls],
        "z": [list(row) for row in solution.z],
        "operation_cost_eur": solution.operation_cost_eur,
        "ufls_cost_eur": solution.ufls_cost_eur,
        "estimated_ufls_total_mw": solution.estimated_ufls_total_mw,
        "objective_eur": solution.objective_eur,
    }
    if meta:
        payload["meta"] = meta
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_schedule_json(path: str | Path) -> ScheduleSolution:
    raw = json.loads(Path(path).read_text())
    return ScheduleSolution(
        case=raw["case"], unit_ids=tuple(raw["unit_ids"]),
        horizon=int(raw["horizon"]), solver_status=raw["solver_status"],
        mip_gap=float(raw["mip_gap"]),
        u=tuple(tuple(int(v) for v in row) for row in raw["u"]),
        p=tuple(tuple(float(v) for v in row) for row in raw["p"]),
        r=tuple(tuple(float(v) for v in row) for row in raw["r"]),
        rocof=tuple(tuple(float(v) for v in row) for row in raw["rocof"]),
        ufls=tuple(tuple(float(v) for v in row) for row in raw["ufls"]),
        z=tuple(tuple(int(v) for v in row) for row in raw["z"]),
        operation_cost_eur=float(raw["operation_cost_eur"]),
        ufls_cost_eur=float(raw["ufls_cost_eur"]),
        estimated_ufls_total_mw=float(raw["estimated_ufls_total_mw"]),
        objective_eur=float(raw["objective_eur"]))
