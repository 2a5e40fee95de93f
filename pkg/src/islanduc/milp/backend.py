"""Solver-independent model container and the solver backends.

A :class:`LinearModel` is a plain minimize-c'x container with two-sided
rows ``row_lb <= A x <= row_ub``, variable bounds and binary flags.
Backends consume it through one ``solve`` call:

* ``highs`` — the HiGHS MILP engine bound in-process through scipy;
* ``builtin`` — the bundled branch-and-bound over LP relaxations, meant
  for small instances and the test suite;
* ``external`` — a user-supplied solver binary (CBC-compatible command
  line) driven through an LP file, selected with the
  ``ISLANDUC_SOLVER_BIN`` environment variable.
"""

from __future__ import annotations

import math
import os
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, milp

EXTERNAL_SOLVER_ENV = "ISLANDUC_SOLVER_BIN"


class SolverError(RuntimeError):
    """The backend could not produce a usable answer."""


@dataclass
class RawSolution:
    """Backend-level result: variable values plus status bookkeeping."""

    status: str  # "optimal" | "feasible-gap" | "infeasible"
    x: np.ndarray | None
    objective: float | None
    mip_gap: float
    bound: float | None = None


class LinearModel:
    """Minimize ``c @ x`` subject to two-sided linear rows and bounds."""

    def __init__(self, name: str = "model"):
        self.name = name
        self.var_names: list[str] = []
        self.var_lb: list[float] = []
        self.var_ub: list[float] = []
        self.var_binary: list[bool] = []
        self.obj: list[float] = []
        self.row_names: list[str] = []
        self.row_coefs: list[list[tuple[int, float]]] = []
        self.row_lb: list[float] = []
        self.row_ub: list[float] = []

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_rows(self) -> int:
        return len(self.row_names)

    @property
    def n_binaries(self) -> int:
        return sum(self.var_binary)

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf,
                binary: bool = False, obj: float = 0.0) -> int:
        if binary:
            lb, ub = max(lb, 0.0), min(ub, 1.0)
        if lb > ub:
            raise ValueError(f"variable {name}: lb {lb} > ub {ub}")
        self.var_names.append(name)
        self.var_lb.append(lb)
        self.var_ub.append(ub)
        self.var_binary.append(binary)
        self.obj.append(obj)
        return len(self.var_names) - 1

    def add_to_obj(self, idx: int, coef: float) -> None:
        self.obj[idx] += coef

    def add_row(self, name: str, coefs: list[tuple[int, float]],
                lb: float = -math.inf, ub: float = math.inf) -> int:
        if lb > ub:
            raise ValueError(f"row {name}: lb {lb} > ub {ub}")
        self.row_names.append(name)
        self.row_coefs.append(list(coefs))
        self.row_lb.append(lb)
        self.row_ub.append(ub)
        return len(self.row_names) - 1

    def constraint_matrix(self) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for r, coefs in enumerate(self.row_coefs):
            acc: dict[int, float] = {}
            for j, v in coefs:
                acc[j] = acc.get(j, 0.0) + v
            for j, v in acc.items():
                rows.append(r)
                cols.append(j)
                vals.append(v)
        return sp.csr_matrix((vals, (rows, cols)),
                             shape=(self.n_rows, self.n_vars))

    def row_activity(self, x: np.ndarray) -> np.ndarray:
        return self.constraint_matrix() @ x

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint/bound violation of ``x`` (0 when feasible)."""
        act = self.row_activity(x)
        lo = np.array(self.row_lb)
        hi = np.array(self.row_ub)
        viol = np.maximum(lo - act, act - hi)
        vb = np.maximum(np.array(self.var_lb) - x, x - np.array(self.var_ub))
        return float(max(viol.max(initial=0.0), vb.max(initial=0.0), 0.0))


# ---------------------------------------------------------------------------
# HiGHS through scipy


def solve_highs(model: LinearModel, mip_gap: float = 1e-4,
                time_limit_s: float | None = None) -> RawSolution:
    a = model.constraint_matrix()
    constraints = LinearConstraint(a, np.array(model.row_lb), np.array(model.row_ub))
    integrality = np.array([1 if b else 0 for b in model.var_binary])
    bounds = Bounds(np.array(model.var_lb), np.array(model.var_ub))
    options = {"mip_rel_gap": mip_gap, "presolve": True}
    if time_limit_s is not None:
        options["time_limit"] = float(time_limit_s)
    res = milp(c=np.array(model.obj), constraints=constraints,
               integrality=integrality, bounds=bounds, options=options)
    if res.status == 2:
        return RawSolution(status="infeasible", x=None, objective=None, mip_gap=0.0)
    if res.status == 3:
        raise SolverError("model is unbounded")
    if res.x is None:
        raise SolverError(f"no incumbent found: {res.message}")
    gap = float(res.mip_gap) if res.mip_gap is not None else 0.0
    status = "optimal" if res.status == 0 else "feasible-gap"
    bound = float(res.mip_dual_bound) if res.mip_dual_bound is not None else None
    return RawSolution(status=status, x=np.asarray(res.x), objective=float(res.fun),
                       mip_gap=gap, bound=bound)


# ---------------------------------------------------------------------------
# external binary (CBC-style command line) through an LP file


def _format_coef(value: float) -> str:
    return f"{value:.12g}"


def _terms(coefs: list[tuple[int, float]], names: list[str]) -> str:
    acc: dict[int, float] = {}
    for j, v in coefs:
        acc[j] = acc.get(j, 0.0) + v
    parts = []
    for j in sorted(acc):
        v = acc[j]
        if v == 0.0:
            continue
        sign = "-" if v < 0 else "+"
        parts.append(f"{sign} {_format_coef(abs(v))} {names[j]}")
    if not parts:
        return "0 " + names[0]
    out = " ".join(parts)
    return out[2:] if out.startswith("+ ") else out


def write_lp(model: LinearModel, path: str | Path) -> None:
    """Emit the model as an LP-format file with creation-order rows/columns."""
    lines = [f"\\ {model.name}", "Minimize"]
    obj_terms = [(j, c) for j, c in enumerate(model.obj) if c != 0.0]
    lines.append(" obj: " + _terms(obj_terms, model.var_names))
    lines.append("Subject To")
    for name, coefs, lb, ub in zip(model.row_names, model.row_coefs,
                                   model.row_lb, model.row_ub):
        expr = _terms(coefs, model.var_names)
        if lb == ub:
            lines.append(f" {name}: {expr} = {_format_coef(lb)}")
            continue
        if ub != math.inf:
            lines.append(f" {name}_u: {expr} <= {_format_coef(ub)}")
        if lb != -math.inf:
            lines.append(f" {name}_l: {expr} >= {_format_coef(lb)}")
    lines.append("Bounds")
    for name, lb, ub, binary in zip(model.var_names, model.var_lb,
                                    model.var_ub, model.var_binary):
        if binary:
            continue
        if lb == -math.inf and ub == math.inf:
            lines.append(f" {name} free")
        elif ub == math.inf:
            lines.append(f" {_format_coef(lb)} <= {name}")
        else:
            lines.append(f" {_format_coef(lb)} <= {name} <= {_format_coef(ub)}")
    binaries = [n for n, b in zip(model.var_names, model.var_binary) if b]
    if binaries:
        lines.append("Binaries")
        for name in binaries:
            lines.append(f" {name}")
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")


def parse_cbc_solution(text: str, model: LinearModel) -> RawSolution:
    """Parse a CBC ``solution`` file into a RawSolution."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise SolverError("empty solution file")
    header = lines[0].lower()
    if "infeasible" in header:
        return RawSolution(status="infeasible", x=None, objective=None, mip_gap=0.0)
    name_to_idx = {n: j for j, n in enumerate(model.var_names)}
    x = np.zeros(model.n_vars)
    for ln in lines[1:]:
        parts = ln.split()
        if len(parts) < 3:
            continue
        name = parts[1]
        if name in name_to_idx:
            x[name_to_idx[name]] = float(parts[2])
    objective = float(np.array(model.obj) @ x)
    status = "optimal" if "optimal" in header else "feasible-gap"
    return RawSolution(status=status, x=x, objective=objective, mip_gap=0.0)


def solve_external(model: LinearModel, mip_gap: float = 1e-4,
                   time_limit_s: float | None = None,
                   binary_path: str | None = None) -> RawSolution:
    binary = binary_path or os.environ.get(EXTERNAL_SOLVER_ENV)
    if not binary:
        raise SolverError(
            f"external solver requested but {EXTERNAL_SOLVER_ENV} is not set")
    with tempfile.TemporaryDirectory(prefix="islanduc_") as tmp:
        lp_path = Path(tmp) / "model.lp"
        sol_path = Path(tmp) / "model.sol"
        write_lp(model, lp_path)
        cmd = [binary, str(lp_path)]
        if time_limit_s is not None:
            cmd += ["seconds", str(time_limit_s)]
        cmd += ["ratioGap", str(mip_gap), "solve",
                "printingOptions", "all", "solution", str(sol_path)]
        try:
            subprocess.run(cmd, check=True, capture_output=True, text=True)
        except (OSError, subprocess.CalledProcessError) as exc:
            raise SolverError(f"external solver failed: {exc}") from exc
        if not sol_path.exists():
            raise SolverError("external solver produced no solution file")
        return parse_cbc_solution(sol_path.read_text(), model)


def get_backend(name: str):
    """Resolve a backend name to its solve callable."""
    from .branch_and_bound import solve_branch_and_bound

    backends = {
        "highs": solve_highs,
        "builtin": solve_branch_and_bound,
        "external": solve_external,
    }
    if name not in backends:
        raise SolverError(f"unknown solver backend {name!r}; "
                          f"choose from {sorted(backends)}")
    return backends[name]
