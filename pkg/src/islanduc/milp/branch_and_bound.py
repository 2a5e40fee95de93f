"""Bundled branch-and-bound MILP solver over LP relaxations.

Best-first search on binary variables; each node's relaxation is solved
with the HiGHS LP simplex through scipy.  Intended for instances up to a
few dozen binaries (toy systems, the test suite, brute-force
cross-checks) -- production-size cases belong to a full MILP engine.
Deterministic: ties break on node creation order, branching picks the
most fractional binary with the lowest index.
"""

from __future__ import annotations

import heapq
import math
import time

import numpy as np
from scipy.optimize import linprog

from .backend import LinearModel, RawSolution, SolverError

INT_TOL = 1e-6


def _split_rows(model: LinearModel):
    """Rewrite two-sided rows as A_ub x <= b_ub and A_eq x == b_eq."""
    a = model.constraint_matrix().tocsr()
    ub_rows, ub_rhs, eq_rows, eq_rhs = [], [], [], []
    for r in range(model.n_rows):
        row = a.getrow(r)
        lb, ub = model.row_lb[r], model.row_ub[r]
        if lb == ub:
            eq_rows.append(row)
            eq_rhs.append(lb)
            continue
        if ub != math.inf:
            ub_rows.append(row)
            ub_rhs.append(ub)
        if lb != -math.inf:
            ub_rows.append(-row)
            ub_rhs.append(-lb)
    import scipy.sparse as sp

    a_ub = sp.vstack(ub_rows).tocsr() if ub_rows else None
    a_eq = sp.vstack(eq_rows).tocsr() if eq_rows else None
    return a_ub, (np.array(ub_rhs) if ub_rows else None), \
        a_eq, (np.array(eq_rhs) if eq_rows else None)


def solve_branch_and_bound(model: LinearModel, mip_gap: float = 1e-6,
                           time_limit_s: float | None = None,
                           node_limit: int = 200_000) -> RawSolution:
    c = np.array(model.obj)
    a_ub, b_ub, a_eq, b_eq = _split_rows(model)
    base_lb = np.array(model.var_lb)
    base_ub = np.array(model.var_ub)
    binaries = [j for j, b in enumerate(model.var_binary) if b]

    def lp_solve(fixings: tuple[tuple[int, float], ...]):
        lb, ub = base_lb.copy(), base_ub.copy()
        for j, val in fixings:
            lb[j] = ub[j] = val
        res = linprog(c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                      bounds=np.column_stack([lb, ub]), method="highs")
        if res.status == 2:
            return None
        if res.status != 0:
            raise SolverError(f"LP relaxation failed: {res.message}")
        return float(res.fun), np.asarray(res.x)

    start = time.monotonic()
    incumbent_x = None
    incumbent_obj = math.inf
    counter = 0
    # heap entries: (parent LP bound, tie-break counter, fixings)
    heap: list[tuple[float, int, tuple[tuple[int, float], ...]]] = []
    heapq.heappush(heap, (-math.inf, counter, ()))
    best_bound = -math.inf

    def gap_of(obj: float, bound: float) -> float:
        if not math.isfinite(obj):
            return math.inf
        return max(0.0, obj - bound) / max(1.0, abs(obj))

    root_infeasible = True
    while heap:
        bound_key, _, fixings = heapq.heappop(heap)
        best_bound = bound_key
        if incumbent_x is not None and gap_of(incumbent_obj, bound_key) <= mip_gap:
            # everything left is within the target gap of the incumbent
            break
        if time_limit_s is not None and time.monotonic() - start > time_limit_s:
            if incumbent_x is None:
                raise SolverError("time limit reached with no incumbent")
            return RawSolution(status="feasible-gap", x=incumbent_x,
                               objective=incumbent_obj,
                               mip_gap=gap_of(incumbent_obj, bound_key),
                               bound=bound_key)
        counter += 1
        if counter > node_limit:
            if incumbent_x is None:
                raise SolverError("node limit reached with no incumbent")
            return RawSolution(status="feasible-gap", x=incumbent_x,
                               objective=incumbent_obj,
                               mip_gap=gap_of(incumbent_obj, bound_key),
                               bound=bound_key)
        sol = lp_solve(fixings)
        if sol is None:
            continue
        root_infeasible = False
        obj, x = sol
        if obj >= incumbent_obj - 1e-12:
            continue
        frac = [(abs(x[j] - round(x[j])), j) for j in binaries
                if abs(x[j] - round(x[j])) > INT_TOL]
        if not frac:
            incumbent_obj = obj
            incumbent_x = x
            continue
        # branch on the most fractional binary, lowest index on ties
        _, jstar = max(frac, key=lambda t: (t[0], -t[1]))
        for val in (0.0, 1.0):
            counter += 1
            heapq.heappush(heap, (obj, counter, fixings + ((jstar, val),)))

    if incumbent_x is None:
        if root_infeasible:
            return RawSolution(status="infeasible", x=None, objective=None,
                               mip_gap=0.0)
        raise SolverError("search exhausted without an incumbent")
    final_bound = best_bound if heap else incumbent_obj
    return RawSolution(status="optimal", x=incumbent_x, objective=incumbent_obj,
                       mip_gap=gap_of(incumbent_obj, final_bound),
                       bound=final_bound)
