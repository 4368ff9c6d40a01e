"""Exact parametric solutions of the coupled eikonal system ``u.u = 0, v.v = 0, u.v = 1``."""
from .exprdsl import Expression, Jet2, ParseError, eval_jet, fd_check, parse
from .family2d import Family2D, evaluate2
from .family3d import (
    ConstraintVariant,
    EvalResult,
    Family3D,
    ParamPoint,
    PVariant,
    RVariant,
    evaluate,
)
from .numkernel import SolverConfig, minkowski_dot
from .residuals import GradientMethod, ResidualReport
from .verify import closure_audit, fiber_derive_closure, intermediate_ycheck, residuals_at

__all__ = [
    "ConstraintVariant",
    "EvalResult",
    "Expression",
    "Family2D",
    "Family3D",
    "GradientMethod",
    "Jet2",
    "PVariant",
    "ParamPoint",
    "ParseError",
    "RVariant",
    "ResidualReport",
    "SolverConfig",
    "closure_audit",
    "eval_jet",
    "evaluate",
    "evaluate2",
    "fd_check",
    "fiber_derive_closure",
    "intermediate_ycheck",
    "minkowski_dot",
    "parse",
    "residuals_at",
]
