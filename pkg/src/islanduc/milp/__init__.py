"""Mixed-integer linear programming: model container, solver backends,
and the unit-commitment formulations."""

from .backend import (LinearModel, RawSolution, SolverError, get_backend,
                      write_lp)
from .uc import (ModelConfig, ScheduleSolution, StructuralInfeasibleError,
                 UcModel, build_corrective_fcuc, build_standard_uc,
                 load_schedule_json, prob_outage, resolve_big_m, solve,
                 verify_physical_invariants, write_schedule_json)

__all__ = [
    "LinearModel", "RawSolution", "SolverError", "get_backend", "write_lp",
    "ModelConfig", "ScheduleSolution", "StructuralInfeasibleError", "UcModel",
    "build_corrective_fcuc", "build_standard_uc", "load_schedule_json",
    "prob_outage", "resolve_big_m", "solve", "verify_physical_invariants",
    "write_schedule_json",
]
