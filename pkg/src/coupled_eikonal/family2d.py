"""Rank-1 parametric solutions of the coupled eikonal system in 2+1 dimensions.

With ``c = sqrt(1 - z^2)`` the scalar parameter ``z(x)`` is a root of

    x0 - x1 z + x2 c + (g/g') (x1 + x2 z / c - k') - h = 0

and the fields are

    u = (x1 + x2 z / c - k') / g'
    v = g x2 / c + p u + r,   p = (-g'^2 + (g - z g')^2) / 2,
                              r' = -k'' (z g + (1 - z^2) g')

The residuals vanish only when ``h' = -k'``; ``h`` therefore defaults to
``-k``.  An independent ``h`` is accepted (it is what the implicit equation
allows syntactically) and simply fails the residual check.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exprdsl import Expression, ExpressionError, parse
from .numkernel import (
    BrentConfig,
    BracketError,
    SolveOutcome,
    brent1,
    default_fd_step,
    gradient_from_stencil,
    integrate_segments,
    scan_brackets,
    stencil,
)
from .residuals import GradientMethod, ResidualReport

VARIABLES = ("z",)
EDGE = 1e-6
SCAN_NODES = 400


class Family2DError(ValueError):
    pass


class Param2DomainError(ValueError):
    pass


def _neg(expr: Expression) -> Expression:
    return parse(f"-({expr.render()})", VARIABLES)


@dataclass(frozen=True)
class Family2D:
    g: Expression
    k: Expression
    h: Expression
    r_base: float = 0.0
    gp_min: float = 0.25

    def __post_init__(self):
        for name in ("g", "k", "h"):
            if tuple(getattr(self, name).variables) != VARIABLES:
                raise Family2DError(f"{name} must be an expression in z")
        nodes = np.linspace(-0.9, 0.9, 41)
        try:
            gp = np.broadcast_to(self.g.jet((nodes,)).grad[0], nodes.shape)
            self.k.jet((nodes,))
            self.h.jet((nodes,))
        except ExpressionError as exc:
            raise Family2DError(f"generating functions not evaluable on [-0.9, 0.9]: {exc}") from exc
        worst = float(np.min(np.abs(gp)))
        if worst < self.gp_min:
            raise Family2DError(f"|g'| drops to {worst:.3g} < gp_min={self.gp_min} on [-0.9, 0.9]")

    @classmethod
    def from_text(cls, g: str, k: str, h: Optional[str] = None, **kwargs) -> "Family2D":
        """Build from text; ``h`` defaults to ``-k``."""
        ge, ke = parse(g, VARIABLES), parse(k, VARIABLES)
        he = _neg(ke) if h is None else parse(h, VARIABLES)
        return cls(ge, ke, he, **kwargs)

    def describe(self) -> dict:
        return {"g": self.g.render(), "k": self.k.render(), "h": self.h.render(), "r_base": self.r_base}


def _root1m(z):
    q = 1.0 - np.asarray(z, dtype=float) ** 2
    return np.sqrt(np.where(q > 0, q, np.nan))


def _check_z(z):
    if np.any(np.abs(z) >= 1):
        raise Param2DomainError(f"z={z} is outside (-1, 1)")


def _derivs(expr: Expression, z, strict=True):
    J = expr.jet((z,), strict=strict)
    shape = np.shape(z)
    return (
        np.broadcast_to(J.value, shape),
        np.broadcast_to(J.grad[0], shape),
        np.broadcast_to(J.h(0, 0), shape),
    )


def _implicit(family: Family2D, X, z, strict=True):
    c = _root1m(z)
    g, gp, _ = _derivs(family.g, z, strict)
    _, kp, _ = _derivs(family.k, z, strict)
    h, _, _ = _derivs(family.h, z, strict)
    x0, x1, x2 = X[..., 0], X[..., 1], X[..., 2]
    return x0 - x1 * z + x2 * c + (g / gp) * (x1 + x2 * z / c - kp) - h


def implicit2(family: Family2D, x, z: float) -> float:
    _check_z(z)
    return float(_implicit(family, np.asarray(x, dtype=float), np.float64(z)))


def _u(family: Family2D, X, z):
    c = _root1m(z)
    _, gp, _ = _derivs(family.g, z)
    _, kp, _ = _derivs(family.k, z)
    return (X[..., 1] + X[..., 2] * z / c - kp) / gp


def u2_of(family: Family2D, x, z: float) -> float:
    _check_z(z)
    _, gp, _ = _derivs(family.g, np.float64(z))
    if gp == 0:
        raise Family2DError("g' vanishes")
    return float(_u(family, np.asarray(x, dtype=float), np.float64(z)))


def _p(family: Family2D, z):
    g, gp, _ = _derivs(family.g, z)
    return 0.5 * (-gp * gp + (g - z * gp) ** 2)


def _r_prime(family: Family2D, t):
    g, gp, _ = _derivs(family.g, t)
    _, _, kpp = _derivs(family.k, t)
    return -kpp * (t * g + (1 - t * t) * gp)


def _r(family: Family2D, z, tol=1e-10):
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if family.k.is_constant():
        return np.full(z.shape, float(family.r_base))
    return family.r_base + integrate_segments(lambda t: _r_prime(family, t), z, tol)


def closure2(family: Family2D, z: float) -> tuple[float, float]:
    _check_z(z)
    return float(_p(family, np.float64(z))), float(_r(family, z)[0])


def _v(family: Family2D, X, z, u):
    c = _root1m(z)
    g, _, _ = _derivs(family.g, z)
    r = _r(family, z).reshape(np.shape(z))
    return g * X[..., 2] / c + _p(family, z) * u + r


def v2_of(family: Family2D, x, z: float, u: float) -> float:
    _check_z(z)
    return float(_v(family, np.asarray(x, dtype=float), np.float64(z), u))


@dataclass
class EvalResult2:
    x: np.ndarray
    z: float
    u: float
    v: float
    grad_u: np.ndarray
    grad_v: np.ndarray
    residuals: ResidualReport
    solver: SolveOutcome

    @property
    def converged(self) -> bool:
        return self.solver.converged


def find_roots(family: Family2D, x, n: int = SCAN_NODES, config: BrentConfig = BrentConfig()) -> list[SolveOutcome]:
    """Every root of the implicit equation in ``(-1 + EDGE, 1 - EDGE)``."""
    X = np.asarray(x, dtype=float)

    def f(z):
        with np.errstate(all="ignore"):
            return _implicit(family, X, np.asarray(z, dtype=float), strict=False)

    out = []
    for bracket in scan_brackets(f, (-1 + EDGE, 1 - EDGE), n):
        oc = brent1(lambda z: float(f(z)), bracket, config)
        if oc.converged:
            out.append(oc)
    return out


def _resolve_near(family: Family2D, X, z0: float, config: BrentConfig) -> float:
    """Root near `z0` for a slightly moved point (FD stencil re-solve)."""

    def f(z):
        with np.errstate(all="ignore"):
            return float(_implicit(family, X, np.float64(z), strict=False))

    for delta in (1e-4, 1e-3, 1e-2):
        lo, hi = max(z0 - delta, -1 + EDGE), min(z0 + delta, 1 - EDGE)
        try:
            oc = brent1(f, (lo, hi), config)
        except BracketError:
            continue
        if oc.converged:
            return float(oc.root[0])
    return float("nan")


def evaluate2(
    family: Family2D,
    x,
    config: BrentConfig = BrentConfig(),
    fd_step=None,
    n: int = SCAN_NODES,
    fd_order: int = 4,
) -> list[EvalResult2]:
    """All branches at `x`, sorted by z, with FD gradients in (x0, x1, x2).

    Fourth-order central differences are the default: near folds of z(x) the
    O(h^2) error of the plain central difference reaches 1e-6 at h=1e-5.
    """
    X = np.asarray(x, dtype=float)
    if X.shape != (3,):
        raise ValueError("x must be a 3-vector (x0, x1, x2)")
    h = default_fd_step(X) if fd_step is None else np.broadcast_to(np.asarray(fd_step, dtype=float), (3,))
    X_st = stencil(X, h, fd_order)
    results = []
    for oc in find_roots(family, X, n, config):
        z = float(oc.root[0])
        u = float(_u(family, X, np.float64(z)))
        v = float(_v(family, X, np.float64(z), u))
        Z_st = np.array([_resolve_near(family, xs, z, config) for xs in X_st])
        flag = bool(np.all(np.isfinite(Z_st)))
        if flag:
            U_st = _u(family, X_st, Z_st)
            V_st = _v(family, X_st, Z_st, U_st)
            grad_u = gradient_from_stencil(U_st, h, fd_order)
            grad_v = gradient_from_stencil(V_st, h, fd_order)
        else:
            grad_u = grad_v = np.full(3, np.nan)
        report = ResidualReport.from_gradients(grad_u, grad_v, GradientMethod.FD_BOTH, h, flag, fd_order)
        results.append(EvalResult2(X, z, u, v, grad_u, grad_v, report, oc))
    return results
