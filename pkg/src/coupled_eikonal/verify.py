"""Residual verification, the hodograph-image check and the closure audit.

Residuals are the arbiter throughout: a formula variant is kept when the
fields it produces satisfy ``u.u = 0, v.v = 0, u.v = 1`` numerically.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from .family3d import (
    ConstraintVariant,
    Family3D,
    ParamPoint,
    PVariant,
    RVariant,
    _jets,
    _p,
    _s_array,
    check_point,
    closure_p,
    closure_r_values,
    constraint_system,
    fiber_points,
    in_disk,
    mixed_partial_defect,
    r_gradient_field,
    prefill_closures,
    solve_branches,
    solve_branches_many,
)
from .numkernel import (
    _rcond2,
    SolverConfig,
    StencilError,
    default_fd_step,
    fd_gradient4,
    gradient_from_stencil,
    minkowski_dot,
    newton2_batch,
    solve_all_2d,
    stencil,
)
from .residuals import GradientMethod, ResidualReport

AUDIT_TOL = 1e-6
DEFAULT_SAMPLES = 40

# --------------------------------------------------------------------------
# residuals of arbitrary fields


def residuals_at(
    u_field: Callable,
    v_field: Callable,
    x,
    h=None,
    grad_u=None,
) -> ResidualReport:
    """Minkowski residuals of two point-evaluable fields at `x`.

    Gradients are central differences, except that an analytic ``grad_u``
    (a 4-vector, or a ``gradient`` attribute on `u_field`) replaces the FD
    gradient of u.  A stencil with a non-finite value yields a report with
    NaN residuals and ``branch_flag=False``.
    """
    x = np.asarray(x, dtype=float)
    step = default_fd_step(x) if h is None else np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    if grad_u is None and hasattr(u_field, "gradient"):
        grad_u = u_field.gradient(x)
    method = GradientMethod.FD_BOTH if grad_u is None else GradientMethod.ANALYTIC_U_FD_V
    try:
        gu = fd_gradient4(u_field, x, step) if grad_u is None else np.asarray(grad_u, dtype=float)
        gv = fd_gradient4(v_field, x, step)
    except StencilError:
        nan = np.full(x.shape, np.nan)
        return ResidualReport.from_gradients(nan, nan, method, step, False)
    return ResidualReport.from_gradients(gu, gv, method, step, True)


def plane_wave_pair():
    """The rank-0 pair ``u = x0 + x1, v = (x0 - x1)/2``."""
    return (lambda x: x[0] + x[1]), (lambda x: 0.5 * (x[0] - x[1]))


def branch_fields(family: Family3D, x, config: SolverConfig = SolverConfig(), index: int = 0):
    """u and v of one branch at `x` as point-evaluable fields.

    Nearby points are solved by Newton seeded from the branch's z, so FD
    stencils stay on that branch.  Points where Newton fails evaluate to NaN.
    """
    sols = solve_branches(family, x, config)
    if not sols:
        raise ValueError("no converged branch at the given point")
    if not -len(sols) <= index < len(sols):
        raise ValueError(f"branch index {index} out of range: {len(sols)} branch(es) at the given point")
    b = sols[index]
    fun = constraint_system(family, b.branch)

    def solve(y):
        y = np.asarray(y, dtype=float)
        oc = newton2_batch(fun, b.z.z[None, :], config, in_disk, y[None, :])[0]
        if not oc.converged:
            return None
        return ParamPoint(float(oc.root[0]), float(oc.root[1]), float(_s_array(oc.root[0], oc.root[1], b.branch)))

    from .family3d import u_of, v_of

    def u(y):
        z = solve(y)
        return np.nan if z is None else u_of(family, y, z)

    def v(y):
        z = solve(y)
        return np.nan if z is None else v_of(family, y, z, u_of(family, y, z))

    return u, v


# --------------------------------------------------------------------------
# hodograph image system


@dataclass(frozen=True)
class YCheck:
    """Residuals of the image system in hodograph variables ``y = (y0, y1, y2, y3)``.

    ``eik4``: ``|grad w|^2 - 1``; ``eik4a``: ``|grad v|^2 - 2 v_y0``;
    ``eik4b``: ``grad v . grad w - w_y0`` (spatial Euclidean sums).
    ``eik4a_single`` is ``|grad v|^2 - v_y0``, the same relation without the
    factor 2, which does not hold even for the simplest family.
    """

    eik4: float
    eik4a: float
    eik4b: float
    eik4a_single: float
    eik4_analytic: float
    z: Optional[ParamPoint]
    flagged: bool

    def as_array(self) -> np.ndarray:
        return np.array([self.eik4, self.eik4a, self.eik4b])

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.as_array())))


def _y_system(family: Family3D, branch: int):
    """Constraints ``y_i + y3 z_i / s - g_i y0 - k_i`` with y0 given."""

    def fun(Z, Y):
        z1, z2 = Z[:, 0], Z[:, 1]
        s = _s_array(z1, z2, branch)
        J = _jets(family, z1, z2, strict=False)
        y0, y1, y2, y3 = Y[:, 0], Y[:, 1], Y[:, 2], Y[:, 3]
        with np.errstate(all="ignore"):
            F = np.stack([y1 + y3 * z1 / s - J.g1 * y0 - J.k1, y2 + y3 * z2 / s - J.g2 * y0 - J.k2], axis=-1)
            s3 = s**3
            jac = np.empty(Z.shape + (2,))
            jac[:, 0, 0] = y3 * (1 / s + z1 * z1 / s3) - J.g11 * y0 - J.k11
            jac[:, 0, 1] = y3 * z1 * z2 / s3 - J.g12 * y0 - J.k12
            jac[:, 1, 0] = y3 * z1 * z2 / s3 - J.g12 * y0 - J.k12
            jac[:, 1, 1] = y3 * (1 / s + z2 * z2 / s3) - J.g22 * y0 - J.k22
        return F, jac

    return fun


def intermediate_ycheck(
    family: Family3D,
    y,
    config: SolverConfig = SolverConfig(),
    h=None,
    fd_order: int = 4,
    s_shift: float = 0.0,
) -> YCheck:
    """Check the image system at `y` on the first converged root.

    ``w = y1 z1 + y2 z2 - y3 s - g y0 - k`` and ``v = g y3 / s + p y0 + r``
    with z re-solved at every stencil point.  `s_shift` perturbs s inside w
    only, which is useful to confirm the check detects a broken field.
    """
    y = check_point(y)
    branch = family.s_branch if y[3] > 0 else -family.s_branch
    fun = _y_system(family, branch)
    roots = solve_all_2d(fun, in_disk, config, params=y)
    if not roots:
        nan = float("nan")
        return YCheck(nan, nan, nan, nan, nan, None, True)
    root = roots[0].root
    z = ParamPoint(float(root[0]), float(root[1]), float(_s_array(root[0], root[1], branch)))
    step = default_fd_step(y) if h is None else np.broadcast_to(np.asarray(h, dtype=float), (4,))
    Y_st = stencil(y, step, fd_order)
    st = newton2_batch(fun, np.repeat(root[None, :], len(Y_st), axis=0), config, in_disk, Y_st)
    Z_st = np.array([o.root for o in st])
    flagged = not all(o.converged for o in st) or np.max(np.linalg.norm(Z_st - root, axis=1)) > 1e-2
    z1, z2 = Z_st[:, 0], Z_st[:, 1]
    s = _s_array(z1, z2, branch)
    J = _jets(family, z1, z2)
    y0, y1, y2, y3 = (Y_st[:, i] for i in range(4))
    w = y1 * z1 + y2 * z2 - y3 * (s + s_shift) - J.g * y0 - J.k
    r = closure_r_values(family, z1, z2)
    v = J.g * y3 / s + _p(family.p_variant, z1, z2, J) * y0 + r
    gw = gradient_from_stencil(w, step, fd_order)
    gv = gradient_from_stencil(v, step, fd_order)
    ww = float(gw[1:] @ gw[1:])
    vv = float(gv[1:] @ gv[1:])
    vw = float(gv[1:] @ gw[1:])
    return YCheck(
        eik4=ww - 1.0,
        eik4a=float(vv - 2.0 * gv[0]),
        eik4b=float(vw - gw[0]),
        eik4a_single=float(vv - gv[0]),
        eik4_analytic=z.z1**2 + z.z2**2 + z.s**2 - 1.0,
        z=z,
        flagged=bool(flagged),
    )


# --------------------------------------------------------------------------
# closure audit


@dataclass
class VariantAggregate:
    constraint: str
    p: str
    r: str
    max_res_uu: float = float("nan")
    max_res_vv: float = float("nan")
    max_res_uv: float = float("nan")
    mixed_defect: float = float("nan")
    points: int = 0

    @property
    def metric(self) -> float:
        vals = (self.max_res_uu, self.max_res_vv, self.max_res_uv)
        if self.points == 0 or any(math.isnan(v) for v in vals):
            return math.inf
        return max(vals)

    def passes(self, tol: float = AUDIT_TOL) -> bool:
        return self.metric <= tol

    def key(self) -> tuple[str, str, str]:
        return self.constraint, self.p, self.r

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


@dataclass
class AuditReport:
    family: dict
    variants: list[VariantAggregate]
    selected: VariantAggregate
    seed: int
    samples: int
    sample_count: dict
    tolerance: float = AUDIT_TOL
    sample_points: list = field(default_factory=list, repr=False)
    sample_z: list = field(default_factory=list, repr=False)

    @property
    def passed(self) -> bool:
        return self.selected.passes(self.tolerance)

    def lookup(self, constraint, p, r) -> VariantAggregate:
        key = (ConstraintVariant(constraint).value, PVariant(p).value, RVariant(r).value)
        for v in self.variants:
            if v.key() == key:
                return v
        raise KeyError(key)

    def selected_family(self, family: Family3D) -> Family3D:
        return family.with_variants(self.selected.constraint, self.selected.p, self.selected.r)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "variants": [v.to_dict() for v in self.variants],
            "selected": self.selected.to_dict(),
            "passed": self.passed,
            "tolerance": self.tolerance,
            "seed": self.seed,
            "samples": self.samples,
            "sample_count": self.sample_count,
        }

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


class AuditError(RuntimeError):
    pass


def _as_family(family_spec) -> Family3D:
    if isinstance(family_spec, Family3D):
        return family_spec
    g, k = family_spec
    return Family3D.from_text(g, k)


def sample_box(rng: np.random.Generator) -> np.ndarray:
    """One point of the audit box ``[-1,1]^3 x [0.2,1.2]`` for ``(x0, x1, x2, x3)``."""
    return np.concatenate([rng.uniform(-1.0, 1.0, 3), rng.uniform(0.2, 1.2, 1)])


def closure_audit(
    family_spec,
    samples: int = DEFAULT_SAMPLES,
    config: SolverConfig = SolverConfig(),
    seed: int = 0,
    tol: float = AUDIT_TOL,
    constraints: Sequence = tuple(ConstraintVariant),
    p_variants: Sequence = tuple(PVariant),
    r_variants: Sequence = tuple(RVariant),
    max_draws: Optional[int] = None,
) -> AuditReport:
    """Residual aggregates for every (constraint, p, r) combination.

    For each constraint variant, points are drawn from the audit box with a
    generator seeded by `seed` until `samples` points carry a converged
    branch whose FD stencil stayed on that branch (at most `max_draws`
    draws, default ``20 * samples``).  Every branch at an accepted point
    contributes.  The selected combination minimises the largest of the
    three residual aggregates; ties go to the earlier entry, and the
    printed closure forms come first.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    family = _as_family(family_spec)
    max_draws = 20 * samples if max_draws is None else max_draws
    defects = {RVariant(r): mixed_partial_defect(family, r) for r in r_variants}
    aggregates: dict = {}
    counts: dict = {}
    sample_points: list = []
    sample_z: list = []
    for cv in constraints:
        cv = ConstraintVariant(cv)
        fam = family.with_variants(constraint=cv)
        rng = np.random.default_rng(seed)
        acc = {(pv, rv): np.zeros(3) for pv in map(PVariant, p_variants) for rv in map(RVariant, r_variants)}
        got = draws = 0
        while got < samples and draws < max_draws:
            chunk = min(max(2 * (samples - got), 4), max_draws - draws)
            X = np.array([sample_box(rng) for _ in range(chunk)])
            draws += chunk
            accepted = []
            for x, sols in zip(X, solve_branches_many(fam, X, config)):
                sols = [b for b in sols if b.stencil_ok]
                if sols and got < samples:
                    got += 1
                    accepted.append((x, sols))
            prefill_closures([b for _, sols in accepted for b in sols], r_variants)
            for x, sols in accepted:
                if cv is ConstraintVariant.PAPER_Y:
                    sample_points.append(x.tolist())
                    sample_z.append([sols[0].z.z1, sols[0].z.z2, sols[0].z.s])
                for b in sols:
                    gu = b.grad_u_fd
                    uu = abs(minkowski_dot(gu, gu))
                    for (pv, rv), a in acc.items():
                        gv = b.grad_v_fd(pv, rv)
                        a[0] = max(a[0], uu)
                        a[1] = max(a[1], abs(minkowski_dot(gv, gv)))
                        a[2] = max(a[2], abs(minkowski_dot(gu, gv) - 1.0))
        counts[cv.value] = got
        for (pv, rv), a in acc.items():
            aggregates[(cv, pv, rv)] = VariantAggregate(
                cv.value, pv.value, rv.value, *(map(float, a) if got else [math.nan] * 3), defects[rv], got
            )
    variants = list(aggregates.values())
    if all(v.points == 0 for v in variants):
        raise AuditError(f"no converged sample for any variant after {max_draws} draws per constraint form")
    selected = variants[0]
    for v in variants[1:]:
        if v.metric < selected.metric:
            selected = v
    return AuditReport(
        family.describe(), variants, selected, int(seed), int(samples), counts, tol, sample_points, sample_z
    )


# --------------------------------------------------------------------------
# closure values fitted on a fiber


@dataclass(frozen=True)
class FiberClosure:
    """Closure values at one parameter point fitted from fiber samples.

    ``p, p_z1, p_z2, r_z1, r_z2`` are the values that make ``v.v`` vanish at
    the sampled fiber points; `fit_residual` is the largest remaining
    ``|v.v|`` or ``|u.v - 1|`` over them and `conditioning` the condition
    number of the fit Jacobian on the identified components.  A derivative
    the fiber cannot determine (for instance ``p_z2`` and ``r_z2`` on a fiber
    lying in a symmetry plane of the family) is NaN.
    """

    p: float
    p_z1: float
    p_z2: float
    r_z1: float
    r_z2: float
    conditioning: float
    fit_residual: float
    z_star: ParamPoint

    @property
    def theta(self) -> np.ndarray:
        """The five values with undetermined ones replaced by 0."""
        t = np.array([self.p, self.p_z1, self.p_z2, self.r_z1, self.r_z2])
        return np.where(np.isnan(t), 0.0, t)


class FiberSamplingError(ValueError):
    pass


def fiber_basis_gradients(
    family: Family3D,
    z_star: ParamPoint,
    X: np.ndarray,
    config: SolverConfig = SolverConfig(),
    fd_order: int = 4,
):
    """FD gradients of the fields whose combination forms v near `z_star`.

    With ``dz = z(x) - z_star`` the local model is
    ``v = g x3 / s + (p + p_z . dz) u + r_z . dz``.  Returns ``a`` (gradient of
    ``g x3 / s``, shape (n, 4)) and ``M`` (shape (n, 4, 5), gradients of
    ``u, dz1 u, dz2 u, dz1, dz2``), with z re-solved at every stencil point
    by Newton seeded from `z_star`.  Rows whose stencil failed are NaN.
    """
    fun = constraint_system(family, z_star.branch)
    X = np.asarray(X, dtype=float).reshape(-1, 4)
    H = np.array([default_fd_step(x) for x in X])
    X_st = np.concatenate([stencil(x, h, fd_order) for x, h in zip(X, H)])
    m = len(X_st) // len(X)
    st = newton2_batch(fun, np.repeat(z_star.z[None, :], len(X_st), axis=0), config, in_disk, X_st)
    ok = np.array([o.converged for o in st]).reshape(len(X), m).all(axis=1)
    Z = np.array([o.root for o in st])
    s = _s_array(Z[:, 0], Z[:, 1], z_star.branch)
    J = _jets(family, Z[:, 0], Z[:, 1], strict=False)
    x0, x1, x2, x3 = (X_st[:, c] for c in range(4))
    with np.errstate(all="ignore"):
        u = (x1 * Z[:, 0] + x2 * Z[:, 1] - x3 * s - x0 + family.k_sign * J.k) / J.g
        dz1, dz2 = Z[:, 0] - z_star.z1, Z[:, 1] - z_star.z2
        fields = np.stack([J.g * x3 / s, u, dz1 * u, dz2 * u, dz1, dz2], axis=-1)  # (n*m, 6)
    a = np.empty((len(X), 4))
    M = np.empty((len(X), 4, 5))
    for i in range(len(X)):
        grads = np.stack(
            [gradient_from_stencil(fields[i * m : (i + 1) * m, c], H[i], fd_order) for c in range(6)], axis=-1
        )
        if not ok[i] or not np.all(np.isfinite(grads)):
            a[i], M[i] = np.nan, np.nan
            continue
        a[i], M[i] = grads[:, 0], grads[:, 1:]
    return a, M


def sample_fiber(family, z_star, n, rng, x3_range, u_range, min_rcond) -> np.ndarray:
    """`n` well-conditioned spacetime points on the fiber of `z_star`."""
    fun = constraint_system(family, z_star.branch)
    kept = []
    for _ in range(20):
        x3 = rng.uniform(*x3_range, 4 * n) * z_star.branch
        u = rng.uniform(*u_range, 4 * n)
        X = fiber_points(family, z_star, x3, u)
        _, jac = fun(np.repeat(z_star.z[None, :], len(X), axis=0), X)
        kept.extend(X[_rcond2(jac) >= min_rcond])
        if len(kept) >= n:
            return np.array(kept[:n])
    raise FiberSamplingError(f"fewer than {n} fiber points with reciprocal condition >= {min_rcond}")


_ETA = np.diag([1.0, -1.0, -1.0, -1.0])
UNIDENTIFIED = 1e-12  # relative singular value below which a fit direction is undetermined


def _fit_equations(a: np.ndarray, M: np.ndarray):
    grad_u = M[:, :, 0]

    def resid(theta):
        gv = a + M @ theta
        vv = np.einsum("ni,ij,nj->n", gv, _ETA, gv)
        uv = np.einsum("ni,ij,nj->n", grad_u, _ETA, gv) - 1.0
        return np.concatenate([vv, uv])

    def jac(theta):
        gv = a + M @ theta
        dvv = 2.0 * np.einsum("ni,ij,njk->nk", gv, _ETA, M)
        duv = np.einsum("ni,ij,njk->nk", grad_u, _ETA, M)
        return np.concatenate([dvv, duv])

    return resid, jac


def fiber_derive_closure(
    family_spec,
    z_star: ParamPoint,
    n_points: int = 12,
    seed: int = 0,
    config: SolverConfig = SolverConfig(),
    x3_range=(0.2, 1.2),
    u_range=(-1.0, 1.0),
    starts: int = 6,
    min_rcond: float = 0.05,
) -> FiberClosure:
    """Fit the closure values at `z_star` from `n_points` points on its fiber.

    The fiber is parametrised by ``(x3, u)`` drawn uniformly from the given
    ranges (x3 takes the sign of s).  Points where the constraint Jacobian
    has reciprocal condition below `min_rcond` are skipped: near a caustic
    of the envelope the FD gradients lose several digits.  The nonlinear least-squares problem
    ``v.v = 0, u.v = 1`` in the five unknowns is solved from several
    starting points and the best fit kept.
    """
    if n_points < 5:
        raise ValueError("n_points must be >= 5")
    family = _as_family(family_spec)
    rng = np.random.default_rng(seed)
    X = sample_fiber(family, z_star, n_points, rng, x3_range, u_range, min_rcond)
    a, M = fiber_basis_gradients(family, z_star, X, config)
    keep = np.all(np.isfinite(a), axis=1)
    if keep.sum() < 5:
        raise FiberSamplingError("fewer than 5 usable fiber points; widen the ranges or add points")
    resid, jac = _fit_equations(a[keep], M[keep])
    best = None
    for i in range(starts):
        theta0 = np.zeros(5) if i == 0 else rng.normal(0.0, 1.0, 5)
        sol = least_squares(resid, theta0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if best is None or sol.cost < best.cost:
            best = sol
    _, sv, Vt = np.linalg.svd(jac(best.x))
    null = Vt[sv <= UNIDENTIFIED * sv[0]]
    # weight of each unknown in the directions the data cannot see
    blind = np.linalg.norm(null, axis=0) if len(null) else np.zeros(5)
    if blind[0] > 1e-6:
        raise FiberSamplingError(
            f"fit is rank deficient in p (singular values {sv[0]:.3g} to {sv[-1]:.3g}); "
            "use more or better-spread points"
        )
    seen = sv[sv > UNIDENTIFIED * sv[0]]
    theta = np.where(blind > 1e-6, np.nan, best.x)
    return FiberClosure(
        *map(float, theta), float(seen[0] / seen[-1]), float(np.max(np.abs(resid(best.x)))), z_star
    )


def local_closure_residuals(
    family_spec,
    closure: FiberClosure,
    n_points: int = 8,
    seed: int = 1,
    config: SolverConfig = SolverConfig(),
    x3_range=(0.2, 1.2),
    u_range=(-1.0, 1.0),
    min_rcond: float = 0.05,
) -> list[ResidualReport]:
    """Residuals at fresh fiber points of v built from a fitted closure.

    Gradients are FD with z re-solved per stencil point; v is the local
    model ``g x3 / s + (p + p_z . dz) u + r_z . dz``.
    """
    family = _as_family(family_spec)
    z_star = closure.z_star
    X = sample_fiber(family, z_star, n_points, np.random.default_rng(seed), x3_range, u_range, min_rcond)
    a, M = fiber_basis_gradients(family, z_star, X, config)
    out = []
    for ai, Mi, x in zip(a, M, X):
        ok = bool(np.all(np.isfinite(ai)))
        gu = Mi[:, 0]
        gv = ai + Mi @ closure.theta
        out.append(ResidualReport.from_gradients(gu, gv, GradientMethod.FD_BOTH, default_fd_step(x), ok, 4))
    return out


def closed_form_closure(family: Family3D, z: ParamPoint, p_variant=None, r_variant=None) -> tuple[float, float, float]:
    """``(p, r_z1, r_z2)`` of the given variants, for comparison with a fit."""
    r1, r2 = r_gradient_field(family, np.float64(z.z1), np.float64(z.z2), r_variant)
    return closure_p(family, z, p_variant), float(r1), float(r2)
