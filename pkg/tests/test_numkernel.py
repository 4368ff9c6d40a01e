import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from coupled_eikonal.numkernel import (
    BracketError,
    BrentConfig,
    QuadratureError,
    SolverConfig,
    StencilError,
    brent1,
    fd_gradient,
    fd_gradient4,
    gradient_from_stencil,
    integrate_segments,
    minkowski_dot,
    newton2,
    newton2_batch,
    scan_brackets,
    seed_grid,
    solve_all_2d,
    stencil,
)

finite = st.floats(-10, 10, allow_nan=False)


def affine(A, b):
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)

    def fun(z):
        return z @ A.T + b, np.broadcast_to(A, z.shape[:-1] + (2, 2))

    return fun


def circle(z):
    F = np.stack([z[..., 0] ** 2 + z[..., 1] ** 2 - 1, z[..., 1]], axis=-1)
    J = np.zeros(z.shape + (2,))
    J[..., 0, 0] = 2 * z[..., 0]
    J[..., 0, 1] = 2 * z[..., 1]
    J[..., 1, 1] = 1.0
    return F, J


def unit_disk(z):
    return np.sum(z * z, axis=-1) < 1.0


# --------------------------------------------------------------------------
# config


@pytest.mark.parametrize(
    "field, value",
    [("tol_residual", 0.0), ("tol_step", -1.0), ("max_iterations", 0), ("damping", 1.0), ("damping", 0.0)],
)
def test_config_rejects_bad_values(field, value):
    with pytest.raises(ValueError, match=field):
        SolverConfig(**{field: value})


def test_seed_grid_stays_in_radius():
    cfg = SolverConfig(seed_grid_radius=0.9, seed_grid_count=7)
    Z = seed_grid(cfg)
    assert len(Z) <= 49
    assert np.all(np.hypot(Z[:, 0], Z[:, 1]) <= 0.9 + 1e-12)
    assert np.any(np.all(Z == 0, axis=1))


# --------------------------------------------------------------------------
# Newton


def test_affine_system_takes_one_step():
    out = newton2(affine(np.eye(2), [-0.3, 0.1]), (0.0, 0.0))
    assert out.converged and out.iterations == 1
    np.testing.assert_allclose(out.root, [0.3, -0.1], atol=1e-15)


def test_square_root_of_two():
    def fun(z):
        F = np.stack([z[..., 0] ** 2 - 2, z[..., 1]], axis=-1)
        J = np.zeros(z.shape + (2,))
        J[..., 0, 0] = 2 * z[..., 0]
        J[..., 1, 1] = 1.0
        return F, J

    out = newton2(fun, (1.0, 0.0))
    assert out.converged and out.iterations <= 6
    assert out.root[0] == pytest.approx(math.sqrt(2), abs=1e-14)
    assert out.root[1] == 0.0


def test_circle_basin():
    out = newton2(circle, (0.5, 0.3))
    assert out.converged
    np.testing.assert_allclose(out.root, [1.0, 0.0], atol=1e-12)


def test_converged_outcome_respects_tolerance():
    cfg = SolverConfig(tol_residual=1e-9)
    out = newton2(circle, (0.5, 0.3), cfg)
    assert out.converged and out.final_residual_norm <= 1e-9


def test_singular_jacobian_is_reported():
    out = newton2(affine([[1.0, 2.0], [2.0, 4.0]], [1.0, 0.0]), (0.0, 0.0))
    assert not out.converged
    assert out.reason == "singular jacobian"


def test_iteration_budget():
    out = newton2(circle, (0.5, 0.3), SolverConfig(max_iterations=1))
    assert not out.converged and out.reason == "max iterations" and out.iterations == 1


def test_domain_exit_never_leaves_the_domain():
    # the only root (2, 0) lies outside the unit disk
    out = newton2(affine(np.eye(2), [-2.0, 0.0]), (0.0, 0.0), domain=unit_disk)
    assert not out.converged
    assert unit_disk(out.root)
    assert out.reason in ("domain exit", "line search failed", "step below tol_step")


def test_seed_outside_domain_is_not_iterated():
    out = newton2(circle, (2.0, 0.0), domain=unit_disk)
    assert not out.converged and out.iterations == 0


def test_batch_matches_single_seed_runs():
    seeds = np.array([[0.5, 0.3], [-0.4, 0.2], [0.1, -0.8]])
    batch = newton2_batch(circle, seeds)
    for seed, b in zip(seeds, batch):
        one = newton2(circle, seed)
        np.testing.assert_array_equal(one.root, b.root)
        assert one.iterations == b.iterations


def test_per_lane_parameters():
    def fun(z, p):
        return z - p, np.broadcast_to(np.eye(2), z.shape + (2,))

    params = np.array([[0.1, 0.2], [-0.3, 0.4]])
    outs = newton2_batch(fun, np.zeros((2, 2)), params=params)
    np.testing.assert_allclose([o.root for o in outs], params, atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(finite, min_size=4, max_size=4),
    st.lists(finite, min_size=2, max_size=2),
    st.lists(st.floats(-1, 1), min_size=2, max_size=2),
)
def test_affine_nonsingular_systems_converge_in_one_step(entries, b, seed):
    A = np.array(entries).reshape(2, 2)
    assume(np.linalg.cond(A) < 1e6)
    root = np.linalg.solve(A, -np.array(b))
    assume(np.max(np.abs(root)) < 1e6)
    cfg = SolverConfig(tol_residual=1e-9 * (1 + np.abs(A).sum() * (1 + np.abs(root).max())))
    assume(np.linalg.norm(A @ seed + b) > cfg.tol_residual)
    out = newton2(affine(A, b), seed, cfg)
    assert out.converged and out.iterations == 1


# --------------------------------------------------------------------------
# multistart


def test_affine_multistart_has_one_root():
    roots = solve_all_2d(affine(np.eye(2), [-0.3, 0.1]))
    assert len(roots) == 1
    np.testing.assert_allclose(roots[0].root, [0.3, -0.1], atol=1e-15)


def test_symmetric_pair_of_roots():
    def fun(z):
        F = np.stack([z[..., 0] ** 2 - 0.25, z[..., 1]], axis=-1)
        J = np.zeros(z.shape + (2,))
        J[..., 0, 0] = 2 * z[..., 0]
        J[..., 1, 1] = 1.0
        return F, J

    roots = solve_all_2d(fun, unit_disk)
    assert sorted(round(r.root[0], 12) for r in roots) == [-0.5, 0.5]
    res = [r.final_residual_norm for r in roots]
    assert res == sorted(res)


def test_no_roots_is_an_empty_list():
    def fun(z):
        F = np.stack([z[..., 0] ** 2 + 1, z[..., 1]], axis=-1)
        J = np.zeros(z.shape + (2,))
        J[..., 0, 0] = 2 * z[..., 0]
        J[..., 1, 1] = 1.0
        return F, J

    assert solve_all_2d(fun, unit_disk) == []


def test_multistart_is_deterministic():
    a = solve_all_2d(circle)
    b = solve_all_2d(circle)
    assert [tuple(o.root) for o in a] == [tuple(o.root) for o in b]


# --------------------------------------------------------------------------
# scalar roots


@pytest.mark.parametrize(
    "f, bracket, root",
    [
        (lambda z: z - 0.25, (0.0, 1.0), 0.25),
        (math.cos, (1.0, 2.0), math.pi / 2),
        (lambda z: math.sqrt(1 - z * z) - 0.5, (0.0, 1.0), math.sqrt(3) / 2),
    ],
)
def test_brent_examples(f, bracket, root):
    out = brent1(f, bracket)
    assert out.converged
    assert out.root[0] == pytest.approx(root, abs=1e-12)


def test_brent_rejects_bracket_without_sign_change():
    calls = []

    def f(z):
        calls.append(z)
        return z * z + 1

    with pytest.raises(BracketError):
        brent1(f, (-1.0, 1.0))
    assert len(calls) == 2


def test_brent_endpoint_root():
    out = brent1(lambda z: z - 1.0, (0.0, 1.0))
    assert out.root[0] == 1.0 and out.iterations == 0


@settings(max_examples=200, deadline=None)
@given(st.floats(-0.99, 0.99), st.floats(0.5, 20), st.floats(0, 20))
def test_brent_stays_inside_a_shrinking_bracket(root, slope, curvature):
    def f(z):
        evaluated.append(z)
        return slope * (z - root) + curvature * (z - root) ** 3

    evaluated = []
    trace = []
    out = brent1(f, (-1.0, 1.0), BrentConfig(), trace)
    assert out.converged
    assert all(-1.0 <= z <= 1.0 for z in evaluated)
    widths = [hi - lo for lo, hi in trace]
    assert all(w2 <= w1 for w1, w2 in zip(widths, widths[1:]))
    for (lo, hi), z in zip(trace, evaluated[2:]):
        assert lo <= z <= hi


@pytest.mark.parametrize(
    "f, interval, n, count",
    [
        (lambda z: z * z - 0.25, (-1, 1), 20, 2),
        (lambda z: np.ones_like(z), (-1, 1), 20, 0),
        (lambda z: np.sin(5 * z), (-1, 1), 100, 3),
    ],
)
def test_scan_bracket_counts(f, interval, n, count):
    assert len(scan_brackets(f, interval, n)) == count


def test_scan_skips_non_finite_nodes():
    def f(z):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(np.abs(z) < 0.3, np.nan, z)

    assert scan_brackets(f, (-1, 1), 20) == []


def test_scan_accepts_scalar_functions():
    assert len(scan_brackets(lambda z: math.cos(3 * z), (0.0, 3.0), 50)) == 3


def test_scan_requires_two_intervals():
    with pytest.raises(ValueError):
        scan_brackets(lambda z: z, (0, 1), 1)


# --------------------------------------------------------------------------
# finite differences


def test_affine_gradient_is_exact():
    g = fd_gradient4(lambda x: x[0] + x[1], (0.3, -1.2, 4.0, 2.0), 1e-5)
    np.testing.assert_allclose(g, [1, 1, 0, 0], atol=1e-10)


def test_quadratic_gradient_component():
    g = fd_gradient4(lambda x: x[1] ** 2, (0.0, 2.0, 0.0, 0.0), 1e-5)
    assert abs(g[1] - 4.0) <= 1e-10


def test_non_finite_stencil_names_the_component():
    def f(x):
        return math.log(x[2]) if x[2] > 0 else math.nan

    with pytest.raises(StencilError, match="component 2"):
        fd_gradient4(f, (1.0, 1.0, 1e-4, 1.0), 1e-3)


def test_fd_gradient4_wants_four_components():
    with pytest.raises(ValueError):
        fd_gradient4(lambda x: 0.0, (1.0, 2.0), 1e-3)


def test_default_step_scales_with_coordinates():
    # truncation error at |x| = 100 stays small with the scaled step
    g = fd_gradient(lambda x: math.sin(x[0]), np.array([100.0]))
    assert g[0] == pytest.approx(math.cos(100.0), abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=5, max_size=5), st.lists(finite, min_size=4, max_size=4))
def test_affine_fields_have_exact_fd_gradients(coef, x):
    c = np.array(coef[:4])
    f = lambda p: float(c @ p) + coef[4]  # noqa: E731
    g = fd_gradient4(f, x, 0.5)
    assert np.max(np.abs(g - c)) <= 1e-12 * (1 + np.linalg.norm(c))


def test_fourth_order_stencil_is_exact_on_quartic():
    x = np.array([0.3, -0.7])
    h = 0.1
    f = lambda p: p[..., 0] ** 4 - 2 * p[..., 0] ** 2 * p[..., 1] + p[..., 1] ** 3  # noqa: E731
    vals = f(stencil(x, h, order=4))
    # the 4th-order rule leaves an h^4 f^(5) term, which vanishes here
    want = [4 * x[0] ** 3 - 4 * x[0] * x[1], -2 * x[0] ** 2 + 3 * x[1] ** 2]
    np.testing.assert_allclose(gradient_from_stencil(vals, h, order=4), want, atol=1e-13)


def test_stencil_layout():
    pts = stencil((1.0, 2.0), 0.5)
    np.testing.assert_array_equal(pts, [[1.5, 2.0], [0.5, 2.0], [1.0, 2.5], [1.0, 1.5]])
    with pytest.raises(ValueError):
        stencil((1.0,), 0.1, order=3)


# --------------------------------------------------------------------------
# Minkowski product


@pytest.mark.parametrize(
    "a, b, want",
    [((1, 1, 0, 0), (1, 1, 0, 0), 0.0), ((1, 1, 0, 0), (0.5, -0.5, 0, 0), 1.0), ((1, 0, 0, 0), (1, 0, 0, 0), 1.0)],
)
def test_minkowski_examples(a, b, want):
    assert minkowski_dot(a, b) == want


def test_minkowski_signature():
    assert minkowski_dot((0, 1, 2, 3), (0, 1, 2, 3)) == -14.0


vec4 = st.lists(finite, min_size=4, max_size=4).map(np.array)


@given(vec4, vec4)
def test_minkowski_is_symmetric(a, b):
    assert minkowski_dot(a, b) == minkowski_dot(b, a)


@given(vec4, vec4, vec4, finite, finite)
def test_minkowski_is_bilinear(a, b, c, s, t):
    lhs = minkowski_dot(s * a + t * b, c)
    rhs = s * minkowski_dot(a, c) + t * minkowski_dot(b, c)
    scale = (abs(s) * np.abs(a) + abs(t) * np.abs(b)) @ np.abs(c) + 1.0
    assert abs(lhs - rhs) <= 1e-13 * scale


def test_minkowski_broadcasts_over_rows():
    a = np.array([[1.0, 1, 0, 0], [2.0, 0, 0, 0]])
    np.testing.assert_array_equal(minkowski_dot(a, a), [0.0, 4.0])


# --------------------------------------------------------------------------
# quadrature


def test_segment_integrals():
    L = np.array([0.5, 1.0, 2.0])
    got = integrate_segments(lambda t: np.cos(t), L)
    np.testing.assert_allclose(got, np.sin(L), atol=1e-12)


def test_quadrature_reports_failure():
    with pytest.raises(QuadratureError):
        integrate_segments(lambda t: np.sqrt(np.abs(t - 0.3)), np.array([1.0]), tol=1e-14, max_panels=4)
