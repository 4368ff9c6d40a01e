"""Root finding, differentiation and quadrature primitives.

Newton's method works on batches: a system is a callable mapping an array of
points with shape ``(..., 2)`` to ``(F, J)`` with shapes ``(..., 2)`` and
``(..., 2, 2)``.  Each lane of a batch is damped, projected and terminated
independently, so a batch of one behaves exactly like a scalar solve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

System2 = Callable[[np.ndarray], "tuple[np.ndarray, np.ndarray]"]
Domain2 = Callable[[np.ndarray], np.ndarray]

# Minkowski signature (+, -, -, ...).  Tests flip METRIC_SIGN to inject faults.
METRIC_SIGN = 1.0


@dataclass(frozen=True)
class SolverConfig:
    tol_residual: float = 1e-12
    tol_step: float = 1e-15
    max_iterations: int = 50
    damping: float = 0.5
    max_backtracks: int = 20
    seed_grid_radius: float = 0.9
    seed_grid_count: int = 7
    dedupe_distance: float = 1e-6
    rcond_min: float = 1e-12
    domain_margin: float = 1e-9

    def __post_init__(self):
        if not self.tol_residual > 0:
            raise ValueError("tol_residual must be > 0")
        if not self.tol_step > 0:
            raise ValueError("tol_step must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")
        if not 0 < self.seed_grid_radius < 1:
            raise ValueError("seed_grid_radius must lie in (0, 1)")
        if self.seed_grid_count < 1:
            raise ValueError("seed_grid_count must be >= 1")
        if not self.dedupe_distance > 0:
            raise ValueError("dedupe_distance must be > 0")

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass
class SolveOutcome:
    root: np.ndarray
    converged: bool
    iterations: int
    final_residual_norm: float
    seed: np.ndarray
    reason: str = ""


# --------------------------------------------------------------------------
# Newton


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v * v, axis=-1))


def _rcond2(J: np.ndarray) -> np.ndarray:
    """Reciprocal 2-norm condition number of stacked 2x2 matrices."""
    a, b, c, d = J[..., 0, 0], J[..., 0, 1], J[..., 1, 0], J[..., 1, 1]
    fro2 = a * a + b * b + c * c + d * d
    det = np.abs(a * d - b * c)
    disc = np.sqrt(np.maximum(fro2 * fro2 - 4 * det * det, 0.0))
    smax2 = 0.5 * (fro2 + disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        smin = det / np.sqrt(smax2)
        rc = smin / np.sqrt(smax2)
    return np.where(np.isfinite(rc), rc, 0.0)


def _solve2(J: np.ndarray, F: np.ndarray) -> np.ndarray:
    a, b, c, d = J[..., 0, 0], J[..., 0, 1], J[..., 1, 0], J[..., 1, 1]
    det = a * d - b * c
    with np.errstate(divide="ignore", invalid="ignore"):
        x = (d * F[..., 0] - b * F[..., 1]) / det
        y = (a * F[..., 1] - c * F[..., 0]) / det
    return np.stack([x, y], axis=-1)


def _evaluate(fun: System2, z: np.ndarray, params=None):
    F, J = fun(z) if params is None else fun(z, params)
    F = np.array(F, dtype=float).reshape(z.shape)
    J = np.array(J, dtype=float).reshape(z.shape + (2,))
    return F, J


def _always(z: np.ndarray) -> np.ndarray:
    return np.ones(z.shape[:-1], dtype=bool)


def _boundary_fraction(domain: Domain2, z: np.ndarray, step: np.ndarray) -> np.ndarray:
    """Largest t in [0, 1] with z + t*step inside the domain (bisection)."""
    lo = np.zeros(z.shape[0])
    hi = np.ones(z.shape[0])
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        inside = domain(z + mid[:, None] * step)
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return lo


STALL_RATIO = 0.9


def newton2_batch(
    fun: System2,
    seeds: np.ndarray,
    config: SolverConfig = SolverConfig(),
    domain: Optional[Domain2] = None,
    params: Optional[np.ndarray] = None,
) -> list[SolveOutcome]:
    """Damped Newton with backtracking on ``|F|`` for a batch of seeds.

    With `params` (one row per seed), `fun` is called as ``fun(z, params)``
    on matching rows, so each lane can solve a different system.

    A lane stops when ``|F| <= tol_residual`` (converged), when the step
    falls below ``tol_step``, when the iteration budget is spent, when the
    Jacobian is numerically singular, or when it is pushed against the
    domain boundary twice in a row without reducing ``|F|`` by at least
    ``1 - STALL_RATIO``.  Trial points leaving the domain are
    pulled back along the step to the boundary minus ``domain_margin``.
    """
    domain = domain or _always
    z = np.array(seeds, dtype=float).reshape(-1, 2)
    m = z.shape[0]
    seeds = z.copy()
    if params is not None:
        params = np.asarray(params, dtype=float).reshape(m, -1)
    sub = (lambda rows: None) if params is None else (lambda rows: params[rows])  # noqa: E731
    F, J = _evaluate(fun, z, sub(slice(None)))
    fnorm = _norm(F)
    active = np.isfinite(fnorm) & domain(z)
    reason = np.where(active, "", "seed outside domain or not evaluable").astype(object)
    converged = active & (fnorm <= config.tol_residual)
    reason[converged] = "residual"
    active &= ~converged
    iters = np.zeros(m, dtype=int)
    stuck = np.zeros(m, dtype=int)

    for _ in range(config.max_iterations):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        Ja, Fa, za = J[idx], F[idx], z[idx]
        singular = _rcond2(Ja) < config.rcond_min
        if singular.any():
            bad = idx[singular]
            reason[bad] = "singular jacobian"
            active[bad] = False
            keep = ~singular
            idx, Ja, Fa, za = idx[keep], Ja[keep], Fa[keep], za[keep]
            if idx.size == 0:
                break
        step = -_solve2(Ja, Fa)
        iters[idx] += 1
        f0 = fnorm[idx]

        trial = za + step
        inside = domain(trial)
        projected = ~inside
        if projected.any():
            t = _boundary_fraction(domain, za[projected], step[projected])
            slen = _norm(step[projected])
            with np.errstate(divide="ignore", invalid="ignore"):
                t = np.maximum(t - config.domain_margin / slen, 0.0)
            step[projected] *= t[:, None]
            trial = za + step

        lam = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        Ft = np.full_like(Fa, np.nan)
        Jt = np.full_like(Ja, np.nan)
        ft = np.full(idx.size, np.inf)
        pending = np.ones(idx.size, dtype=bool)
        for _bt in range(config.max_backtracks + 1):
            p = np.flatnonzero(pending)
            zt = za[p] + lam[p, None] * step[p]
            ok_dom = domain(zt)
            Fp, Jp = _evaluate(fun, zt, sub(idx[p]))
            fp = _norm(Fp)
            good = ok_dom & np.isfinite(fp) & (fp < f0[p])
            Ft[p], Jt[p], ft[p] = Fp, Jp, np.where(ok_dom, fp, np.inf)
            acc = p[good]
            accepted[acc] = True
            pending[acc] = False
            if not pending.any():
                break
            lam[pending] *= config.damping

        # failed line searches end the lane
        failed = ~accepted
        if failed.any():
            bad = idx[failed]
            reason[bad] = "line search failed"
            active[bad] = False
        a = np.flatnonzero(accepted)
        ia = idx[a]
        znew = za[a] + lam[a, None] * step[a]
        dz = _norm(znew - za[a])
        z[ia], F[ia], J[ia], fnorm[ia] = znew, Ft[a], Jt[a], ft[a]
        # pinned at the boundary without real progress
        stalled = projected[a] & (ft[a] > STALL_RATIO * f0[a])
        stuck[ia] = np.where(stalled, stuck[ia] + 1, 0)

        done = fnorm[ia] <= config.tol_residual
        converged[ia[done]] = True
        reason[ia[done]] = "residual"
        active[ia[done]] = False

        small = ~done & (dz <= config.tol_step)
        reason[ia[small]] = "step below tol_step"
        active[ia[small]] = False

        trapped = ~done & ~small & (stuck[ia] >= 2)
        reason[ia[trapped]] = "domain exit"
        active[ia[trapped]] = False

    reason[active] = "max iterations"
    return [
        SolveOutcome(z[i].copy(), bool(converged[i]), int(iters[i]), float(fnorm[i]), seeds[i], str(reason[i]))
        for i in range(m)
    ]


def newton2(
    fun: System2,
    seed,
    config: SolverConfig = SolverConfig(),
    domain: Optional[Domain2] = None,
) -> SolveOutcome:
    """Solve a 2x2 nonlinear system from one seed."""
    return newton2_batch(fun, np.asarray(seed, dtype=float)[None, :], config, domain)[0]


def seed_grid(config: SolverConfig, domain: Optional[Domain2] = None) -> np.ndarray:
    """Uniform grid of ``seed_grid_count**2`` seeds over the disk of radius
    ``seed_grid_radius``, keeping those inside `domain`."""
    n = config.seed_grid_count
    r = config.seed_grid_radius
    axis = r * (2.0 * np.arange(n) / (n - 1) - 1.0) if n > 1 else np.zeros(1)
    Z = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    Z = Z[np.sum(Z * Z, axis=-1) <= r * r + 1e-15]
    if domain is not None:
        Z = Z[domain(Z)]
    return Z


def dedupe(outcomes: list[SolveOutcome], distance: float) -> list[SolveOutcome]:
    """Merge converged roots closer than `distance`, keeping the best residual."""
    ordered = sorted(
        (o for o in outcomes if o.converged),
        key=lambda o: (o.final_residual_norm, tuple(o.root), tuple(o.seed)),
    )
    kept: list[SolveOutcome] = []
    for o in ordered:
        if all(np.linalg.norm(o.root - k.root) >= distance for k in kept):
            kept.append(o)
    return kept


def solve_all_2d(
    fun: System2,
    domain: Optional[Domain2] = None,
    config: SolverConfig = SolverConfig(),
    seeds: Optional[np.ndarray] = None,
    params: Optional[np.ndarray] = None,
) -> list[SolveOutcome]:
    """Multistart Newton from a seed grid; distinct converged roots sorted by residual.

    `params`, if given, is one parameter row shared by every seed (see
    :func:`newton2_batch`).
    """
    if params is not None:
        return solve_all_2d_many(fun, np.asarray(params, dtype=float).reshape(1, -1), domain, config, seeds)[0]
    if seeds is None:
        seeds = seed_grid(config, domain)
    if len(seeds) == 0:
        return []
    return dedupe(newton2_batch(fun, seeds, config, domain), config.dedupe_distance)


def solve_all_2d_many(
    fun: System2,
    params: np.ndarray,
    domain: Optional[Domain2] = None,
    config: SolverConfig = SolverConfig(),
    seeds: Optional[np.ndarray] = None,
) -> list[list[SolveOutcome]]:
    """:func:`solve_all_2d` for many parameter rows in one Newton batch."""
    params = np.asarray(params, dtype=float)
    if seeds is None:
        seeds = seed_grid(config, domain)
    k = len(seeds)
    if k == 0 or len(params) == 0:
        return [[] for _ in range(len(params))]
    outs = newton2_batch(fun, np.tile(seeds, (len(params), 1)), config, domain, np.repeat(params, k, axis=0))
    return [dedupe(outs[i * k : (i + 1) * k], config.dedupe_distance) for i in range(len(params))]


# --------------------------------------------------------------------------
# scalar roots


@dataclass(frozen=True)
class BrentConfig:
    tol_residual: float = 1e-14
    tol_step: float = 1e-15
    max_iterations: int = 200


class BracketError(ValueError):
    pass


def brent1(
    f: Callable[[float], float],
    bracket: tuple[float, float],
    config: BrentConfig = BrentConfig(),
    trace: Optional[list] = None,
) -> SolveOutcome:
    """Brent-Dekker root finder on a sign-changing bracket.

    Every iterate stays inside the current bracket ``[b, c]`` whose width
    never increases.  If `trace` is a list, the bracket ``(lo, hi)`` is
    appended to it at every iteration.
    """
    a, b = float(bracket[0]), float(bracket[1])
    fa, fb = f(a), f(b)
    if not (np.isfinite(fa) and np.isfinite(fb)) or fa * fb > 0:
        raise BracketError(f"no sign change on [{a}, {b}]: f(a)={fa}, f(b)={fb}")
    seed = np.array([a, b])
    if fa == 0:
        return SolveOutcome(np.array([a]), True, 0, 0.0, seed, "exact")
    if fb == 0:
        return SolveOutcome(np.array([b]), True, 0, 0.0, seed, "exact")
    c, fc = a, fa
    d = e = b - a
    for it in range(1, config.max_iterations + 1):
        if fb * fc > 0:
            c, fc = a, fa
            d = e = b - a
        if abs(fc) < abs(fb):
            a, b, c = b, c, b
            fa, fb, fc = fb, fc, fb
        tol = 2 * np.finfo(float).eps * abs(b) + 0.5 * config.tol_step
        m = 0.5 * (c - b)
        if trace is not None:
            trace.append((min(b, c), max(b, c)))
        if abs(fb) <= config.tol_residual or abs(m) <= tol or fb == 0:
            return SolveOutcome(np.array([b]), True, it - 1, float(abs(fb)), seed,
                                "residual" if abs(fb) <= config.tol_residual else "bracket width")
        if abs(e) >= tol and abs(fa) > abs(fb):
            s = fb / fa
            if a == c:
                p, q = 2 * m * s, 1 - s
            else:
                q, r = fa / fc, fb / fc
                p = s * (2 * m * q * (q - r) - (b - a) * (r - 1))
                q = (q - 1) * (r - 1) * (s - 1)
            if p > 0:
                q = -q
            else:
                p = -p
            if 2 * p < min(3 * m * q - abs(tol * q), abs(e * q)):
                e, d = d, p / q
            else:
                d = e = m
        else:
            d = e = m
        a, fa = b, fb
        b += d if abs(d) > tol else math.copysign(tol, m)
        fb = f(b)
    return SolveOutcome(np.array([b]), bool(abs(fb) <= config.tol_residual), config.max_iterations,
                        float(abs(fb)), seed, "max iterations")


def scan_brackets(f: Callable, interval: tuple[float, float], n: int) -> list[tuple[float, float]]:
    """Sign-change brackets of `f` on ``n + 1`` uniform nodes.

    `f` may be vectorised (it is called once on the node array) or scalar.
    Nodes where `f` is not finite are skipped.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    nodes = np.linspace(interval[0], interval[1], n + 1)
    try:
        vals = np.asarray(f(nodes), dtype=float)
        if vals.shape != nodes.shape:
            raise TypeError
    except (TypeError, ValueError):
        vals = np.array([f(t) for t in nodes], dtype=float)
    out = []
    for i in range(n):
        fa, fb = vals[i], vals[i + 1]
        if np.isfinite(fa) and np.isfinite(fb) and fa * fb < 0:
            out.append((float(nodes[i]), float(nodes[i + 1])))
        elif fa == 0 and i > 0 and vals[i - 1] * fb < 0:
            # root exactly on a node: bracket it with its neighbours
            out.append((float(nodes[i - 1]), float(nodes[i + 1])))
    return out


# --------------------------------------------------------------------------
# differentiation and geometry


class StencilError(ValueError):
    pass


def default_fd_step(x) -> np.ndarray:
    return 1e-5 * (1.0 + np.abs(np.asarray(x, dtype=float)))


def fd_gradient(f: Callable[[np.ndarray], float], x, h=None) -> np.ndarray:
    """Central-difference gradient; `h` is a scalar or per-component array."""
    x = np.asarray(x, dtype=float)
    n = x.size
    h = default_fd_step(x) if h is None else np.broadcast_to(np.asarray(h, dtype=float), (n,))
    grad = np.empty(n)
    for mu in range(n):
        e = np.zeros(n)
        e[mu] = h[mu]
        fp, fm = f(x + e), f(x - e)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise StencilError(f"non-finite stencil value in component {mu}")
        grad[mu] = (fp - fm) / (2 * h[mu])
    return grad


def fd_gradient4(f: Callable[[np.ndarray], float], x, h=None) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (4,):
        raise ValueError("fd_gradient4 expects a 4-vector")
    return fd_gradient(f, x, h)


def stencil(x, h, order: int = 2) -> np.ndarray:
    """Central-difference stencil points around `x`.

    Order 2 gives ``x + h e_mu, x - h e_mu`` ordered (+0, -0, +1, -1, ...).
    Order 4 appends the same pattern at ``2h``.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    h = np.broadcast_to(np.asarray(h, dtype=float), (n,))
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    reach = (1.0,) if order == 2 else (1.0, 2.0)
    pts = np.repeat(x[None, :], 2 * n * len(reach), axis=0)
    for j, m in enumerate(reach):
        for mu in range(n):
            pts[2 * n * j + 2 * mu, mu] += m * h[mu]
            pts[2 * n * j + 2 * mu + 1, mu] -= m * h[mu]
    return pts


def gradient_from_stencil(values: np.ndarray, h, order: int = 2) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    n = values.size // (2 if order == 2 else 4)
    h = np.broadcast_to(np.asarray(h, dtype=float), (n,))
    d1 = (values[0 : 2 * n : 2] - values[1 : 2 * n : 2]) / (2 * h)
    if order == 2:
        return d1
    d2 = (values[2 * n :: 2] - values[2 * n + 1 :: 2]) / (4 * h)
    return (4 * d1 - d2) / 3


def minkowski_dot(a, b) -> float:
    """``a0 b0 - a1 b1 - ...`` in any dimension, signature (+, -, -, ...)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return METRIC_SIGN * (a[..., 0] * b[..., 0] - np.sum(a[..., 1:] * b[..., 1:], axis=-1))


# --------------------------------------------------------------------------
# quadrature

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


class QuadratureError(RuntimeError):
    pass


def integrate_segments(
    f: Callable[[np.ndarray], np.ndarray],
    lengths: np.ndarray,
    tol: float = 1e-10,
    order: int = 10,
    max_panels: int = 256,
) -> np.ndarray:
    """Integrate ``f`` over ``[0, L_i]`` for a batch of lengths.

    `f` receives a parameter array of shape ``(batch, nodes)`` holding points
    ``t`` along each segment and returns integrand values of the same shape.
    Composite Gauss-Legendre rules of order `order` and ``2*order`` are
    compared; the panel count doubles until every lane agrees within `tol`.
    """
    lengths = np.asarray(lengths, dtype=float)
    panels = 1
    while True:
        lo_rule = _composite(f, lengths, panels, order)
        hi_rule = _composite(f, lengths, panels, 2 * order)
        err = np.abs(hi_rule - lo_rule)
        if np.all(err <= tol):
            return hi_rule
        if not np.all(np.isfinite(err)):
            raise QuadratureError("non-finite integrand")
        panels *= 2
        if panels > max_panels:
            raise QuadratureError(f"quadrature did not reach tolerance {tol} (error {np.max(err):.3g})")


def _composite(f, lengths: np.ndarray, panels: int, order: int) -> np.ndarray:
    x, w = gauss_legendre(order)
    edges = np.arange(panels)[:, None]  # (panels, 1)
    u = (edges + 0.5 * (x[None, :] + 1.0)) / panels  # fraction along segment
    t = lengths[:, None] * u.reshape(1, -1)  # (batch, panels*order)
    vals = np.asarray(f(t), dtype=float)
    weights = np.tile(w, panels) * 0.5 / panels
    return lengths * (vals @ weights)
