"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py`` (or ``python
tests/test_acceptance.py``); the summary appears under "acceptance criteria".
"""
import math
import sys
import time

import numpy as np
import pytest

from coupled_eikonal.cli import main as cli_main
from coupled_eikonal.exprdsl import ExpressionError, parse, fd_check_tuned
from coupled_eikonal.family2d import Family2D, evaluate2
from coupled_eikonal.family3d import (
    ConstraintVariant,
    Family3D,
    ParamPoint,
    analytic_grad_u,
    evaluate,
    solve_branches_many,
    u_of,
)
from coupled_eikonal.numkernel import minkowski_dot
from coupled_eikonal.verify import (
    FiberSamplingError,
    closure_audit,
    fiber_derive_closure,
    intermediate_ycheck,
    local_closure_residuals,
    plane_wave_pair,
    residuals_at,
)
from families import random_family2d, random_family3d_texts
from treegen import evaluable_samples, random_expression

TOL = 1e-6


def criterion(number):
    def mark(fn):
        fn.criterion_number = number
        return fn

    return mark


# --------------------------------------------------------------------------
# 1. plane-wave pair


@criterion(1)
def test_criterion_1_plane_wave_pair(criterion):
    u, v = plane_wave_pair()
    rng = np.random.default_rng(1)
    t = time.perf_counter()
    # the fields are affine, so every step is exact; a wide step keeps the
    # roundoff of the difference quotient (eps*|f|/h) under 1e-12
    worst = max(residuals_at(u, v, rng.uniform(-10, 10, 4), h=0.5).max_abs for _ in range(100))
    elapsed = time.perf_counter() - t
    ok = worst <= 1e-12 and elapsed < 1.0
    criterion(1, ok, f"max residual {worst:.2e} over 100 points, {elapsed:.3f}s")
    assert worst <= 1e-12
    assert elapsed < 1.0


# --------------------------------------------------------------------------
# 2. closed-form family g = 1, k = 0


@criterion(2)
def test_criterion_2_closed_form_family(criterion):
    family = Family3D.from_text("1", "0")
    rng = np.random.default_rng(2)
    X = np.column_stack([rng.uniform(-1, 1, (200, 3)), rng.uniform(0.2, 2.0, 200)])
    t = time.perf_counter()
    sols = solve_branches_many(family, X, fd_step=1e-5)
    err_u = err_v = worst = 0.0
    missing = flagged = 0
    for x, branch in zip(X, sols):
        if len(branch) != 1:
            missing += 1
            continue
        b = branch[0]
        flagged += not b.stencil_ok
        rho = math.sqrt(x[1] ** 2 + x[2] ** 2 + x[3] ** 2)
        err_u = max(err_u, abs(b.u + x[0] + rho))
        err_v = max(err_v, abs(b.v_center() - (rho - x[0]) / 2))
        worst = max(worst, b.residuals().max_abs)
    elapsed = time.perf_counter() - t
    ok = missing == 0 and flagged == 0 and err_u <= 1e-8 and err_v <= 1e-8 and worst <= TOL and elapsed < 5
    criterion(
        2, ok,
        f"|u err| {err_u:.1e}, |v err| {err_v:.1e}, max residual {worst:.1e}, "
        f"{missing} missing, {flagged} flagged, {elapsed:.2f}s",
    )
    assert missing == 0 and flagged == 0
    assert err_u <= 1e-8 and err_v <= 1e-8
    assert worst <= TOL
    assert elapsed < 5


# --------------------------------------------------------------------------
# 3. constraint-sign discriminator


@criterion(3)
def test_criterion_3_constraint_discriminator(criterion):
    x = [0.0, 0.6, 0.0, 0.8]
    t = time.perf_counter()
    y_res = evaluate(Family3D.from_text("1", "0"), x)
    x_res = evaluate(Family3D.from_text("1", "0", constraint_variant=ConstraintVariant.PAPER_X), x)
    report = closure_audit(("1", "0"), samples=10, seed=3)
    elapsed = time.perf_counter() - t
    uu_y = abs(y_res[0].residuals.res_uu)
    uu_x = abs(x_res[0].residuals.res_uu)
    chosen = report.selected.constraint
    ok = uu_y <= TOL and uu_x >= 1 and chosen == "paper_y_display" and elapsed < 1
    criterion(3, ok, f"y-display |u.u| {uu_y:.1e}, x-display |u.u| {uu_x:.3f}, audit picks {chosen}, {elapsed:.2f}s")
    assert uu_y <= TOL
    assert uu_x >= 1
    assert chosen == "paper_y_display"
    assert elapsed < 1


# --------------------------------------------------------------------------
# 4 and 5. random 3D families


FIBER_TRIES = 8
FIBER_MIN = 3
FIBER_ENOUGH = 5
FIBER_GATE = 1e-4


@pytest.fixture(scope="module")
def random_suite():
    """Audit every random family once; criteria 4 and 5 both read it."""
    t = time.perf_counter()
    runs = []
    for i, (g, k) in enumerate(random_family3d_texts(25, seed=2024)):
        family = Family3D.from_text(g, k)
        runs.append((family, closure_audit(family, samples=20, seed=i)))
    return runs, time.perf_counter() - t


def _fiber_fallback(family, report, seed):
    """Fiber-fitted closures at audit sample parameters: (successes, worst u.u / u.v residual)."""
    ok, worst = 0, 0.0
    for zs in report.sample_z[:FIBER_TRIES]:
        try:
            fit = fiber_derive_closure(family, ParamPoint(*zs), seed=seed)
        except FiberSamplingError:
            continue
        reports = local_closure_residuals(family, fit)
        if not all(r.branch_flag for r in reports):
            continue
        ok += 1
        worst = max(worst, *(max(abs(r.res_uu), abs(r.res_uv_minus_1)) for r in reports))
        if ok >= FIBER_ENOUGH:
            break
    return ok, worst


@criterion(4)
def test_criterion_4_random_family_suite(criterion, random_suite):
    runs, audit_time = random_suite
    t = time.perf_counter()
    null_worst = 0.0
    passed, findings, fallback_failures = [], [], []
    fallback_worst = 0.0
    for i, (family, report) in enumerate(runs):
        for zs in report.sample_z:
            gu = analytic_grad_u(family, ParamPoint(*zs))
            null_worst = max(null_worst, abs(minkowski_dot(gu, gu)))
        if report.passed:
            passed.append(i)
            continue
        findings.append(f"family {i}: best {'/'.join(report.selected.key())} at {report.selected.metric:.1e}")
        n_ok, worst = _fiber_fallback(family, report, seed=i)
        fallback_worst = max(fallback_worst, worst)
        if n_ok < FIBER_MIN or worst > FIBER_GATE:
            fallback_failures.append(f"family {i}: {n_ok} fitted fibers, worst {worst:.1e}")
    elapsed = audit_time + time.perf_counter() - t
    samples_ok = all(min(r.sample_count.values()) >= 20 for _, r in runs)
    ok = null_worst <= 1e-12 and samples_ok and not fallback_failures and elapsed < 60
    criterion(
        4, ok,
        f"{len(passed)}/25 pass the audit; {len(findings)} audit findings, fiber-closure u.u/u.v worst "
        f"{fallback_worst:.1e}; null identity {null_worst:.1e}; {elapsed:.1f}s",
    )
    for line in findings:
        print("audit finding:", line)
    assert samples_ok, "some family has fewer than 20 converged audit points"
    assert null_worst <= 1e-12
    assert not fallback_failures, fallback_failures
    assert elapsed < 60


def _y_points(family, report, count):
    """Hodograph points ``(u, x1, x2, x3)`` taken from converged audit samples."""
    pts = []
    for x, zs in zip(report.sample_points, report.sample_z):
        pts.append([u_of(family, x, ParamPoint(*zs)), x[1], x[2], x[3]])
        if len(pts) == count:
            break
    return pts


@criterion(5)
def test_criterion_5_hodograph_system(criterion, random_suite):
    runs, _ = random_suite
    t = time.perf_counter()
    eik4 = eik4a = eik4b = 0.0
    flagged = points = 0
    worst_family = None
    for i, (family, report) in enumerate(runs):
        selected = report.selected_family(family)
        for y in _y_points(family, report, 10):
            yc = intermediate_ycheck(selected, y)
            points += 1
            if yc.flagged:
                flagged += 1
                continue
            eik4 = max(eik4, abs(yc.eik4))
            eik4b = max(eik4b, abs(yc.eik4b))
            if abs(yc.eik4a) > eik4a:
                eik4a, worst_family = abs(yc.eik4a), i
    elapsed = time.perf_counter() - t
    ok = points == 250 and flagged == 0 and max(eik4, eik4a, eik4b) <= TOL and elapsed < 30
    criterion(
        5, ok,
        f"{points} points, {flagged} flagged: max |eik4| {eik4:.1e}, |eik4a| {eik4a:.1e} (family {worst_family}), "
        f"|eik4b| {eik4b:.1e}; {elapsed:.1f}s",
    )
    assert points == 250 and flagged == 0
    assert eik4 <= TOL
    assert elapsed < 30
    assert eik4b <= TOL
    assert eik4a <= TOL


# --------------------------------------------------------------------------
# 6. 2+1 dimensional family


@criterion(6)
def test_criterion_6_family2d(criterion):
    t = time.perf_counter()
    res = evaluate2(Family2D.from_text("z", "0", "0"), [2.0, 0.0, -1.0])
    r3 = math.sqrt(3.0)
    expected = [(-r3 / 2, r3, r3 / 2), (r3 / 2, -r3, -r3 / 2)]
    example_ok = len(res) == 2 and all(
        abs(r.z - z) <= 1e-9 and abs(r.u - u) <= 1e-8 and abs(r.v - v) <= 1e-8 for r, (z, u, v) in zip(res, expected)
    )
    rng = np.random.default_rng(6)
    worst, branches, flagged = 0.0, 0, 0
    for family in random_family2d(10, seed=77):
        for _ in range(6):
            for r in evaluate2(family, rng.uniform(-1, 1, 3)):
                branches += 1
                flagged += not r.residuals.branch_flag
                worst = max(worst, r.residuals.max_abs if r.residuals.branch_flag else math.inf)
    elapsed = time.perf_counter() - t
    ok = example_ok and branches > 0 and worst <= TOL and elapsed < 10
    criterion(6, ok, f"worked example {'ok' if example_ok else 'WRONG'}; {branches} random branches, "
                     f"{flagged} flagged, max residual {worst:.1e}; {elapsed:.2f}s")
    assert example_ok
    assert branches > 0 and worst <= TOL
    assert elapsed < 10


# --------------------------------------------------------------------------
# 7. expression engine


@criterion(7)
def test_criterion_7_expression_engine(criterion):
    rng = np.random.default_rng(7)
    t = time.perf_counter()
    checked = drawn = ill = 0
    worst = 0.0
    roundtrip_failures = []
    while checked < 1000:
        expr = random_expression(rng)
        drawn += 1
        text = expr.render()
        again = parse(text, expr.variables)
        P = rng.uniform(-1, 1, (10, expr.nvars))
        a = expr.evaluate(tuple(P.T), strict=False)
        b = again.evaluate(tuple(P.T), strict=False)
        if again.render() != text or not np.array_equal(a, b, equal_nan=True):
            roundtrip_failures.append(text)
        pts = evaluable_samples(expr, rng, 1)
        if not pts:
            continue
        try:
            check = fd_check_tuned(expr, pts[0])
        except ExpressionError:
            continue  # the FD stencil reached the edge of the domain
        if not check.spread <= 1e-6:
            ill += 1
            continue
        checked += 1
        worst = max(worst, check.discrepancy)
    elapsed = time.perf_counter() - t
    ok = not roundtrip_failures and worst <= 1e-5 and elapsed < 5
    criterion(7, ok, f"{drawn} trees round-tripped, {checked} derivative-checked ({ill} ill-conditioned skipped), "
                     f"max discrepancy {worst:.1e}; {elapsed:.2f}s")
    assert not roundtrip_failures, roundtrip_failures[:3]
    assert worst <= 1e-5
    assert ill <= 0.02 * checked
    assert elapsed < 5


# --------------------------------------------------------------------------
# 8. determinism


@criterion(8)
def test_criterion_8_grid_determinism(criterion, tmp_path):
    cfg = tmp_path / "grid.json"
    cfg.write_text(
        '{"g": "1 + 0.2*z1 - 0.1*z1*z2", "k": "0.1*z2^2", "seed": 11,'
        ' "variants": {"r": "R_envelope"}, "branches": "both",'
        ' "grid": {"x0": [-0.5, 0.5, 3], "x1": [-0.3, 0.3, 2], "x2": [0.1, 0.1, 1], "x3": [0.0, 1.0, 3]}}'
    )
    outs = []
    for name in ("a.csv", "b.csv"):
        code = cli_main(["grid", str(cfg), "--out", str(tmp_path / name)])
        assert code == 0
        outs.append((tmp_path / name).read_bytes())
    rows = outs[0].decode().count("\n") - 1
    same = outs[0] == outs[1]
    criterion(8, same, f"{rows} data rows, byte-identical: {same}")
    assert same


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
