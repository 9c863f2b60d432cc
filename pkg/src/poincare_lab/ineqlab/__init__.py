"""Inequality checks, counterexample tables and refinement studies."""

from .checks import (THEOREMS, CheckReport, ConstraintError, check, converge_study,
                     growth_constant, optimize_center)
from .counterexample import FAMILIES, CounterexampleTable, run_counterexample

__all__ = ["THEOREMS", "CheckReport", "ConstraintError", "check", "converge_study",
           "growth_constant", "optimize_center", "FAMILIES", "CounterexampleTable",
           "run_counterexample"]
