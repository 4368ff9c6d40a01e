"""Rank-2 parametric solutions of the coupled eikonal system in 3+1 dimensions.

A family is generated by two functions ``g(z1, z2)`` and ``k(z1, z2)`` on the
open unit disk.  With ``s = +-sqrt(1 - z1^2 - z2^2)`` the fields are

    u = (x1 z1 + x2 z2 - x3 s - x0 + sigma k) / g
    v = g x3 / s + p u + r

where ``(z1, z2)`` is selected at each spacetime point by two envelope
constraints.  The two printed forms of the solution differ in the sign of the
``x3`` terms of the constraints and in the sign of ``k``; each is available
as a :class:`ConstraintVariant` and taken as a whole:

* ``paper_y_display`` (default): ``sigma = -1`` and
  ``x_i + x3 z_i / s - g_i u - k_i = 0``.  These are exactly the stationarity
  conditions of ``x.z - x3 s - x0 - k - u g`` in ``z``.
* ``paper_x_display``: ``sigma = +1`` and ``x_i - x3 z_i / s - g_i u - k_i = 0``.

The closure functions ``p`` and ``r`` come in several variants
(:class:`PVariant`, :class:`RVariant`) that the audit in
:mod:`coupled_eikonal.verify` arbitrates by residuals.  ``r`` is the line
integral of its gradient field from ``(0, 0)`` along ``(0,0) -> (z1,0) ->
(z1,z2)``; when that field has nonzero curl the result depends on the path,
which :func:`mixed_partial_defect` measures.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .exprdsl import Expression, ExpressionError, parse
from .numkernel import (
    SolveOutcome,
    SolverConfig,
    default_fd_step,
    gradient_from_stencil,
    integrate_segments,
    newton2_batch,
    solve_all_2d_many,
    stencil,
)
from .residuals import GradientMethod, ResidualReport

VARIABLES = ("z1", "z2")
X3_MIN = 1e-6


class FamilyError(ValueError):
    """Invalid generating functions (e.g. |g| too small)."""


class ParamDomainError(ValueError):
    """Parameter point on or outside the unit circle."""


class PreconditionError(ValueError):
    """Spacetime point rejected before solving (e.g. x3 ~ 0)."""


class ConstraintVariant(str, Enum):
    PAPER_Y = "paper_y_display"
    PAPER_X = "paper_x_display"


class PVariant(str, Enum):
    PRINTED = "P_printed"
    NOCROSS = "P_nocross"


class RVariant(str, Enum):
    PRINTED = "R_printed"
    SYM = "R_sym"
    DIAG = "R_diag"
    ENVELOPE = "R_envelope"


@dataclass(frozen=True)
class ParamPoint:
    z1: float
    z2: float
    s: float

    @classmethod
    def make(cls, z1: float, z2: float, branch: int = 1) -> "ParamPoint":
        return cls(float(z1), float(z2), s_of(z1, z2, branch))

    @property
    def z(self) -> np.ndarray:
        return np.array([self.z1, self.z2])

    @property
    def branch(self) -> int:
        return 1 if self.s > 0 else -1


def s_of(z1: float, z2: float, branch: int = 1) -> float:
    q = 1.0 - z1 * z1 - z2 * z2
    if not q > 0:
        raise ParamDomainError(f"z=({z1}, {z2}) is not inside the open unit disk")
    return float(np.copysign(np.sqrt(q), branch))


def _s_array(z1, z2, branch) -> np.ndarray:
    q = 1.0 - z1 * z1 - z2 * z2
    return branch * np.sqrt(np.where(q > 0, q, np.nan))


def in_disk(Z: np.ndarray) -> np.ndarray:
    return np.sum(Z * Z, axis=-1) < 1.0


# --------------------------------------------------------------------------
# the family


@dataclass(frozen=True)
class Family3D:
    """Generating pair ``(g, k)`` plus variant selection.

    Construction checks ``|g| >= g_min`` on a 21x21 grid restricted to
    ``z1^2 + z2^2 <= 0.9`` and that both functions have finite second
    derivatives there.
    """

    g: Expression
    k: Expression
    constraint_variant: ConstraintVariant = ConstraintVariant.PAPER_Y
    p_variant: PVariant = PVariant.PRINTED
    r_variant: RVariant = RVariant.PRINTED
    s_branch: int = 1
    r_base: float = 0.0
    g_min: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "constraint_variant", ConstraintVariant(self.constraint_variant))
        object.__setattr__(self, "p_variant", PVariant(self.p_variant))
        object.__setattr__(self, "r_variant", RVariant(self.r_variant))
        for name, expr in (("g", self.g), ("k", self.k)):
            if tuple(expr.variables) != VARIABLES:
                raise FamilyError(f"{name} must be declared over variables {VARIABLES}")
        if self.s_branch not in (1, -1):
            raise FamilyError("s_branch must be +1 or -1")
        self._validate()

    def _validate(self):
        axis = np.linspace(-np.sqrt(0.9), np.sqrt(0.9), 21)
        Z1, Z2 = np.meshgrid(axis, axis, indexing="ij")
        keep = Z1**2 + Z2**2 <= 0.9 + 1e-12
        z1, z2 = Z1[keep], Z2[keep]
        try:
            G = self.g.jet((z1, z2))
            K = self.k.jet((z1, z2))
        except ExpressionError as exc:
            raise FamilyError(f"generating functions not evaluable on the disk: {exc}") from exc
        gmin = float(np.min(np.abs(np.broadcast_to(G.value, z1.shape))))
        if gmin < self.g_min:
            raise FamilyError(f"|g| drops to {gmin:.3g} < g_min={self.g_min} on the sampled disk")
        del K

    @classmethod
    def from_text(cls, g: str, k: str, **kwargs) -> "Family3D":
        return cls(parse(g, VARIABLES), parse(k, VARIABLES), **kwargs)

    def with_variants(self, constraint=None, p=None, r=None) -> "Family3D":
        return replace(
            self,
            constraint_variant=constraint or self.constraint_variant,
            p_variant=p or self.p_variant,
            r_variant=r or self.r_variant,
        )

    @property
    def k_sign(self) -> int:
        """Sign of k in u."""
        return -1 if self.constraint_variant is ConstraintVariant.PAPER_Y else 1

    @property
    def x3_sign(self) -> int:
        """Sign of the ``x3 z_i / s`` term in the constraints."""
        return 1 if self.constraint_variant is ConstraintVariant.PAPER_Y else -1

    @property
    def variants(self) -> tuple[str, str, str]:
        return self.constraint_variant.value, self.p_variant.value, self.r_variant.value

    def describe(self) -> dict:
        return {"g": self.g.render(), "k": self.k.render(), "s_branch": self.s_branch, "r_base": self.r_base}


@dataclass
class _Jets:
    g: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    g11: np.ndarray
    g12: np.ndarray
    g22: np.ndarray
    k: np.ndarray
    k1: np.ndarray
    k2: np.ndarray
    k11: np.ndarray
    k12: np.ndarray
    k22: np.ndarray


def _jets(family: Family3D, z1, z2, strict: bool = True) -> _Jets:
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    G = family.g.jet((z1, z2), strict=strict)
    K = family.k.jet((z1, z2), strict=strict)
    shape = np.broadcast(z1, z2).shape
    b = lambda a: np.broadcast_to(np.asarray(a, dtype=float), shape)  # noqa: E731
    return _Jets(
        b(G.value), b(G.grad[0]), b(G.grad[1]), b(G.h(0, 0)), b(G.h(0, 1)), b(G.h(1, 1)),
        b(K.value), b(K.grad[0]), b(K.grad[1]), b(K.h(0, 0)), b(K.h(0, 1)), b(K.h(1, 1)),
    )


# --------------------------------------------------------------------------
# fields on a fixed parameter point


def _u(family: Family3D, X: np.ndarray, z1, z2, s, J: _Jets):
    x0, x1, x2, x3 = (X[..., i] for i in range(4))
    return (x1 * z1 + x2 * z2 - x3 * s - x0 + family.k_sign * J.k) / J.g


def _check_g(J: _Jets):
    if np.any(J.g == 0):
        raise FamilyError("g vanishes at the parameter point")


def u_of(family: Family3D, x, z: ParamPoint) -> float:
    """u at spacetime point `x` for parameters `z` (no envelope solve)."""
    J = _jets(family, z.z1, z.z2)
    _check_g(J)
    return float(_u(family, np.asarray(x, dtype=float), z.z1, z.z2, z.s, J))


def _constraints(family: Family3D, X, z1, z2, s, J: _Jets, u=None):
    if u is None:
        u = _u(family, X, z1, z2, s, J)
    x1, x2, x3 = X[..., 1], X[..., 2], X[..., 3]
    tau = family.x3_sign
    F1 = x1 + tau * x3 * z1 / s - J.g1 * u - J.k1
    F2 = x2 + tau * x3 * z2 / s - J.g2 * u - J.k2
    return F1, F2


def envelope_constraints(family: Family3D, x, z: ParamPoint) -> np.ndarray:
    """The two envelope constraints with u eliminated."""
    J = _jets(family, z.z1, z.z2)
    _check_g(J)
    F1, F2 = _constraints(family, np.asarray(x, dtype=float), z.z1, z.z2, z.s, J)
    return np.array([float(F1), float(F2)])


def constraint_system(family: Family3D, branch: int):
    """Vectorised ``(Z, X) -> (F, dF/dz)`` for Newton, u eliminated in closed form."""
    tau, sigma = family.x3_sign, family.k_sign

    def fun(Z: np.ndarray, X: np.ndarray):
        z1, z2 = Z[:, 0], Z[:, 1]
        s = _s_array(z1, z2, branch)
        J = _jets(family, z1, z2, strict=False)
        x0, x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
        with np.errstate(all="ignore"):
            u = (x1 * z1 + x2 * z2 - x3 * s - x0 + sigma * J.k) / J.g
            F1, F2 = _constraints(family, X, z1, z2, s, J, u)
            # du/dz at fixed x
            uz1 = (x1 + x3 * z1 / s + sigma * J.k1 - u * J.g1) / J.g
            uz2 = (x2 + x3 * z2 / s + sigma * J.k2 - u * J.g2) / J.g
            s3 = s**3
            b11 = 1 / s + z1 * z1 / s3
            b12 = z1 * z2 / s3
            b22 = 1 / s + z2 * z2 / s3
            jac = np.empty(Z.shape + (2,))
            jac[:, 0, 0] = tau * x3 * b11 - J.g11 * u - J.g1 * uz1 - J.k11
            jac[:, 0, 1] = tau * x3 * b12 - J.g12 * u - J.g1 * uz2 - J.k12
            jac[:, 1, 0] = tau * x3 * b12 - J.g12 * u - J.g2 * uz1 - J.k12
            jac[:, 1, 1] = tau * x3 * b22 - J.g22 * u - J.g2 * uz2 - J.k22
        return np.stack([F1, F2], axis=-1), jac

    return fun


def _dF_dx(family: Family3D, z1, z2, s, J: _Jets) -> np.ndarray:
    """Partial derivatives of the constraints in x at fixed z, shape (2, 4)."""
    du = np.array([-1.0, z1, z2, -s]) / J.g
    tau = family.x3_sign
    out = np.zeros((2, 4))
    out[0, 1] = 1.0
    out[1, 2] = 1.0
    out[0, 3] += tau * z1 / s
    out[1, 3] += tau * z2 / s
    out[0] -= J.g1 * du
    out[1] -= J.g2 * du
    return out


def analytic_grad_u(family: Family3D, z: ParamPoint) -> np.ndarray:
    """``(-1, z1, z2, -s) / g``: the gradient of u anywhere on the fiber of z.

    Valid when the constraints are the stationarity conditions of u in z,
    which holds for ``paper_y_display``.
    """
    J = _jets(family, z.z1, z.z2)
    _check_g(J)
    return np.array([-1.0, z.z1, z.z2, -z.s]) / float(J.g)


# --------------------------------------------------------------------------
# closure functions


def _p(variant: PVariant, z1, z2, J: _Jets):
    t = J.g - z1 * J.g1 - z2 * J.g2
    grad2 = J.g1**2 + J.g2**2
    if variant is PVariant.PRINTED:
        grad2 = grad2 - J.g1 * J.g2
    return 0.5 * (-grad2 + t * t)


def closure_p(family: Family3D, z: ParamPoint, variant: Optional[PVariant] = None) -> float:
    variant = PVariant(variant or family.p_variant)
    return float(_p(variant, z.z1, z.z2, _jets(family, z.z1, z.z2)))


def r_gradient_field(family: Family3D, z1, z2, variant: Optional[RVariant] = None, J: Optional[_Jets] = None):
    """The variant's ``(r_z1, r_z2)`` at (arrays of) parameter points."""
    variant = RVariant(variant or family.r_variant)
    if J is None:
        J = _jets(family, z1, z2)
    s2 = 1.0 - z1 * z1 - z2 * z2
    e1 = z1 * J.g + s2 * J.g1
    e2 = z2 * J.g + s2 * J.g2
    if variant is RVariant.PRINTED:
        return -J.k11 * e1, -J.k12 * e2
    if variant is RVariant.DIAG:
        return -J.k11 * e1, -J.k22 * e2
    if variant is RVariant.SYM:
        return -(J.k11 * e1 + J.k12 * e2), -(J.k12 * e1 + J.k22 * e2)
    # envelope closure: d = g z + (I - z z^T) grad g
    d1 = z1 * J.g + (1 - z1 * z1) * J.g1 - z1 * z2 * J.g2
    d2 = z2 * J.g + (1 - z2 * z2) * J.g2 - z1 * z2 * J.g1
    return -(J.k11 * d1 + J.k12 * d2), -(J.k12 * d1 + J.k22 * d2)


def closure_r_values(
    family: Family3D, z1, z2, variant: Optional[RVariant] = None, tol: float = 1e-10
) -> np.ndarray:
    """r at (arrays of) parameter points by two-segment path quadrature."""
    variant = RVariant(variant or family.r_variant)
    z1, z2 = (np.atleast_1d(np.asarray(a, dtype=float)) for a in np.broadcast_arrays(z1, z2))
    if np.any(z1 * z1 + z2 * z2 >= 1.0):
        raise ParamDomainError("closure path leaves the open unit disk")
    if family.k.is_constant():
        return np.full(z1.shape, float(family.r_base))

    def leg1(t):
        return r_gradient_field(family, t, np.zeros_like(t), variant)[0]

    def leg2(t):
        return r_gradient_field(family, np.broadcast_to(z1[:, None], t.shape), t, variant)[1]

    return family.r_base + integrate_segments(leg1, z1, tol) + integrate_segments(leg2, z2, tol)


def closure_r(family: Family3D, z: ParamPoint, variant: Optional[RVariant] = None) -> float:
    return float(closure_r_values(family, z.z1, z.z2, variant)[0])


def mixed_partial_defect(
    family: Family3D, variant: Optional[RVariant] = None, n: int = 5, radius: float = 0.6, h: float = 1e-5
) -> float:
    """Max of ``|d(r_z1)/dz2 - d(r_z2)/dz1|`` on an n x n grid (central differences).

    Zero (to FD accuracy) exactly when the r-gradient field is integrable, so
    that r does not depend on the quadrature path.
    """
    axis = np.linspace(-radius, radius, n)
    Z1, Z2 = (a.ravel() for a in np.meshgrid(axis, axis, indexing="ij"))
    r1_up = r_gradient_field(family, Z1, Z2 + h, variant)[0]
    r1_dn = r_gradient_field(family, Z1, Z2 - h, variant)[0]
    r2_up = r_gradient_field(family, Z1 + h, Z2, variant)[1]
    r2_dn = r_gradient_field(family, Z1 - h, Z2, variant)[1]
    curl = (np.asarray(r1_up) - r1_dn) / (2 * h) - (np.asarray(r2_up) - r2_dn) / (2 * h)
    return float(np.max(np.abs(curl)))


def _v(family: Family3D, X, z1, z2, s, u, J: _Jets, p_variant=None, r_variant=None):
    p = _p(PVariant(p_variant or family.p_variant), z1, z2, J)
    r = closure_r_values(family, z1, z2, r_variant)
    return J.g * X[..., 3] / s + p * u + r.reshape(np.shape(z1))


def v_of(family: Family3D, x, z: ParamPoint, u: float) -> float:
    J = _jets(family, z.z1, z.z2)
    if z.s == 0:
        raise ParamDomainError("s vanishes")
    X = np.asarray(x, dtype=float)
    return float(_v(family, X, z.z1, z.z2, z.s, u, J))


def fiber_points(family: Family3D, z: ParamPoint, x3, u) -> np.ndarray:
    """Spacetime points whose envelope parameter is `z`, given free (x3, u)."""
    x3, u = np.broadcast_arrays(np.asarray(x3, dtype=float), np.asarray(u, dtype=float))
    J = _jets(family, z.z1, z.z2)
    tau = family.x3_sign
    x1 = -tau * x3 * z.z1 / z.s + J.g1 * u + J.k1
    x2 = -tau * x3 * z.z2 / z.s + J.g2 * u + J.k2
    x0 = x1 * z.z1 + x2 * z.z2 - x3 * z.s + family.k_sign * J.k - u * J.g
    return np.stack([x0, x1, x2, x3], axis=-1)


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvalResult:
    x: np.ndarray
    z: ParamPoint
    u: float
    v: float
    grad_u: np.ndarray  # analytic
    grad_v: np.ndarray  # finite differences
    residuals: ResidualReport
    solver: SolveOutcome
    grad_u_fd: Optional[np.ndarray] = None
    variants: tuple = ()
    branch_flag: bool = True

    @property
    def converged(self) -> bool:
        return self.solver.converged


@dataclass
class BranchSolution:
    """Envelope solution at one point plus the re-solved FD stencil around it.

    Shared by :func:`evaluate` and the audit, which evaluates several closure
    variants on the same stencil.
    """

    family: Family3D
    x: np.ndarray
    branch: int
    outcome: SolveOutcome
    z: ParamPoint
    u: float
    h: np.ndarray
    X_st: np.ndarray
    Z_st: np.ndarray
    S_st: np.ndarray
    U_st: np.ndarray
    stencil_ok: bool
    fd_order: int = 4
    stencil_outcomes: list = field(default_factory=list, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def grad_u_fd(self) -> np.ndarray:
        return gradient_from_stencil(self.U_st, self.h, self.fd_order)

    def v_center(self, p_variant=None, r_variant=None) -> float:
        J = _jets(self.family, self.z.z1, self.z.z2)
        return float(_v(self.family, self.x, self.z.z1, self.z.z2, self.z.s, self.u, J, p_variant, r_variant))

    def v_stencil(self, p_variant=None, r_variant=None) -> np.ndarray:
        fam = self.family
        if "jets" not in self._cache:
            self._cache["jets"] = _jets(fam, self.Z_st[:, 0], self.Z_st[:, 1])
        J = self._cache["jets"]
        rv = RVariant(r_variant or fam.r_variant)
        if rv not in self._cache:
            self._cache[rv] = closure_r_values(fam, self.Z_st[:, 0], self.Z_st[:, 1], rv)
        p = _p(PVariant(p_variant or fam.p_variant), self.Z_st[:, 0], self.Z_st[:, 1], J)
        return J.g * self.X_st[:, 3] / self.S_st + p * self.U_st + self._cache[rv]

    def grad_v_fd(self, p_variant=None, r_variant=None) -> np.ndarray:
        return gradient_from_stencil(self.v_stencil(p_variant, r_variant), self.h, self.fd_order)

    def residuals(self, p_variant=None, r_variant=None, method=GradientMethod.FD_BOTH) -> ResidualReport:
        grad_v = self.grad_v_fd(p_variant, r_variant)
        if GradientMethod(method) is GradientMethod.FD_BOTH:
            grad_u = self.grad_u_fd
        else:
            grad_u = analytic_grad_u(self.family, self.z)
        return ResidualReport.from_gradients(grad_u, grad_v, method, self.h, self.stencil_ok, self.fd_order)


def _branches(family: Family3D, x3: float, branches) -> list[int]:
    first = family.s_branch if x3 > 0 else -family.s_branch
    if branches == "auto":
        return [first]
    if branches == "both":
        return [first, -first]
    b = int(branches)
    if b not in (1, -1):
        raise ValueError("branches must be 'auto', 'both', +1 or -1")
    return [b]


def check_point(x, x3_min: float = X3_MIN) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (4,) or not np.all(np.isfinite(x)):
        raise PreconditionError("x must be a finite 4-vector (x0, x1, x2, x3)")
    if abs(x[3]) <= x3_min:
        raise PreconditionError(f"|x3| = {abs(x[3]):.3g} <= {x3_min}: fiber geometry degenerates")
    return x


def solve_branches(
    family: Family3D,
    x,
    config: SolverConfig = SolverConfig(),
    fd_step=None,
    branches="auto",
    x3_min: float = X3_MIN,
    fd_order: int = 4,
) -> list[BranchSolution]:
    """All converged envelope roots at `x` with their re-solved FD stencils.

    Each stencil point is seeded with the first-order prediction
    ``z* + dz/dx (x' - x)``; a re-solved root further than ten dedupe
    distances from it marks a branch jump and clears ``stencil_ok``.
    """
    return solve_branches_many(family, [x], config, fd_step, branches, x3_min, fd_order)[0]


def solve_branches_many(
    family: Family3D,
    points,
    config: SolverConfig = SolverConfig(),
    fd_step=None,
    branches="auto",
    x3_min: float = X3_MIN,
    fd_order: int = 4,
) -> list[list[BranchSolution]]:
    """:func:`solve_branches` for many points, batched into few Newton calls."""
    X = np.array([check_point(x, x3_min) for x in points]).reshape(-1, 4)
    out: list[list[BranchSolution]] = [[] for _ in range(len(X))]
    if fd_step is None:
        H = np.array([default_fd_step(x) for x in X]).reshape(-1, 4)
    else:
        H = np.broadcast_to(np.asarray(fd_step, dtype=float), X.shape)
    wanted = [_branches(family, x[3], branches) for x in X]
    for pass_no in range(2):
        for branch in (1, -1):
            rows = [i for i, w in enumerate(wanted) if len(w) > pass_no and w[pass_no] == branch]
            if rows:
                _solve_rows(family, X, H, rows, branch, config, fd_order, out)
    return out


def _solve_rows(family, X, H, rows, branch, config, fd_order, out):
    fun = constraint_system(family, branch)
    roots = solve_all_2d_many(fun, X[rows], in_disk, config)
    found = [(i, oc) for i, ocs in zip(rows, roots) for oc in ocs]
    if not found:
        return
    preds, stencils = [], []
    for i, oc in found:
        x, h = X[i], H[i]
        X_st = stencil(x, h, fd_order)
        z1, z2 = oc.root
        s = float(_s_array(z1, z2, branch))
        J = _jets(family, z1, z2)
        # first-order prediction of the stencil roots
        _, jac = fun(oc.root[None, :], x[None, :])
        dz_dx = -np.linalg.solve(jac[0], _dF_dx(family, z1, z2, s, J))
        preds.append(oc.root[None, :] + (X_st - x) @ dz_dx.T)
        stencils.append(X_st)
    m = len(stencils[0])
    Z_pred = np.concatenate(preds)
    X_all = np.concatenate(stencils)
    st = newton2_batch(fun, Z_pred, config, in_disk, X_all)
    Z_all = np.array([o.root for o in st])
    S_all = _s_array(Z_all[:, 0], Z_all[:, 1], branch)
    J_all = _jets(family, Z_all[:, 0], Z_all[:, 1], strict=False)
    with np.errstate(all="ignore"):
        U_all = _u(family, X_all, Z_all[:, 0], Z_all[:, 1], S_all, J_all)
    for n, (i, oc) in enumerate(found):
        sl = slice(n * m, (n + 1) * m)
        st_n = st[sl]
        jump = np.max(np.linalg.norm(Z_all[sl] - Z_pred[sl], axis=1)) > 10 * config.dedupe_distance
        ok = all(o.converged for o in st_n) and not jump and bool(np.all(np.isfinite(U_all[sl])))
        z = ParamPoint(float(oc.root[0]), float(oc.root[1]), float(_s_array(oc.root[0], oc.root[1], branch)))
        J = _jets(family, z.z1, z.z2)
        u = float(_u(family, X[i], z.z1, z.z2, z.s, J))
        out[i].append(
            BranchSolution(family, X[i], branch, oc, z, u, H[i], X_all[sl], Z_all[sl], S_all[sl], U_all[sl], ok,
                           fd_order, st_n)
        )


def prefill_closures(solutions: Sequence[BranchSolution], r_variants=tuple(RVariant)) -> None:
    """Compute stencil jets and r values for many solutions in one batch each."""
    sols = [b for b in solutions if "jets" not in b._cache]
    if not sols:
        return
    fam = sols[0].family
    Z = np.concatenate([b.Z_st for b in sols])
    J = _jets(fam, Z[:, 0], Z[:, 1])
    m = len(sols[0].Z_st)
    rvals = {RVariant(rv): closure_r_values(fam, Z[:, 0], Z[:, 1], rv) for rv in r_variants}
    for n, b in enumerate(sols):
        sl = slice(n * m, (n + 1) * m)
        b._cache["jets"] = _Jets(*(getattr(J, f)[sl] for f in _Jets.__dataclass_fields__))
        for rv, vals in rvals.items():
            b._cache[rv] = vals[sl]


def evaluate(
    family: Family3D,
    x,
    config: SolverConfig = SolverConfig(),
    fd_step=None,
    branches="auto",
    method=GradientMethod.FD_BOTH,
    x3_min: float = X3_MIN,
    fd_order: int = 4,
) -> list[EvalResult]:
    """Evaluate u and v at `x` on every converged branch.

    Returns an empty list when no branch converges.  Results are sorted by
    ``|u.u|``.  Raises :class:`PreconditionError` for ``|x3| <= x3_min``.
    """
    results = []
    for b in solve_branches(family, x, config, fd_step, branches, x3_min, fd_order):
        grad_v = b.grad_v_fd()
        results.append(
            EvalResult(
                x=b.x,
                z=b.z,
                u=b.u,
                v=b.v_center(),
                grad_u=analytic_grad_u(family, b.z),
                grad_v=grad_v,
                residuals=b.residuals(method=method),
                solver=b.outcome,
                grad_u_fd=b.grad_u_fd,
                variants=family.variants,
                branch_flag=b.stencil_ok,
            )
        )
    results.sort(key=lambda r: (abs(r.residuals.res_uu), r.z.z1, r.z.z2))
    return results


def u_field(family: Family3D, config: SolverConfig = SolverConfig(), branch: Optional[int] = None):
    """Point-evaluable u (first branch), for generic residual checks."""

    def f(x):
        res = evaluate(family, x, config, branches="auto" if branch is None else branch)
        return res[0].u if res else np.nan

    return f
