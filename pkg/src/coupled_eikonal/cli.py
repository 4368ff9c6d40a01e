"""Command-line front end.

One JSON document configures a run::

    {
      "kind": "3d",
      "g": "1 + 0.2*z1", "k": "0.1*z2^2",
      "variants": {"constraint": "paper_y_display", "p": "P_printed", "r": "R_printed"},
      "solver": {"tol_residual": 1e-12, "max_iterations": 50},
      "grid": {"x0": [-1, 1, 3], "x1": [0, 0, 1], "x2": [0, 0, 1], "x3": [0.5, 1.0, 2]},
      "point": [0, 0.6, 0, 0.8],
      "fd_step": null, "branches": "auto", "samples": 40, "seed": 0, "out": null
    }

``variants`` may be ``"auto"`` (3d only): the closure audit runs first and
its selected combination is used.  For ``kind = "2d"`` the family takes ``g,
k, h`` in the variable ``z`` and points are 3-vectors.

Exit codes: 0 success, 1 config error, 2 no branch, 3 gate failure,
4 selfcheck failure.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field, fields
from typing import Optional, Sequence

import numpy as np

from . import numkernel
from .exprdsl import ExpressionError, ParseError, fd_check_tuned, parse
from .family2d import Family2D, Family2DError, evaluate2
from .family3d import (
    ConstraintVariant,
    Family3D,
    FamilyError,
    ParamPoint,
    PreconditionError,
    PVariant,
    RVariant,
    analytic_grad_u,
    evaluate,
)
from .numkernel import BrentConfig, SolverConfig, brent1, minkowski_dot
from .verify import (
    AUDIT_TOL,
    DEFAULT_SAMPLES,
    AuditError,
    closure_audit,
    intermediate_ycheck,
    plane_wave_pair,
    residuals_at,
    sample_box,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NO_BRANCH = 2
EXIT_GATE = 3
EXIT_SELFCHECK = 4

CSV_HEADER = ("x0", "x1", "x2", "x3", "branch", "z1", "z2", "s", "u", "v", "res_uu", "res_vv", "res_uv", "converged", "iters")
CSV_HEADER_2D = ("x0", "x1", "x2", "branch", "z", "u", "v", "res_uu", "res_vv", "res_uv", "converged", "iters")
AXES_3D = ("x0", "x1", "x2", "x3")
AXES_2D = ("x0", "x1", "x2")


class ConfigError(ValueError):
    pass


@dataclass
class GridAxis:
    lo: float
    hi: float
    count: int

    def values(self) -> np.ndarray:
        if self.count == 1:
            return np.array([self.lo])
        return np.linspace(self.lo, self.hi, self.count)


@dataclass
class RunConfig:
    kind: str = "3d"
    g: str = "1"
    k: str = "0"
    h: Optional[str] = None
    variants: object = None  # dict of constraint/p/r, "auto", or None for defaults
    solver: SolverConfig = field(default_factory=SolverConfig)
    grid: Optional[dict] = None  # axis name -> GridAxis
    point: Optional[list] = None
    fd_step: Optional[float] = None
    branches: object = "auto"
    samples: int = DEFAULT_SAMPLES
    seed: int = 0
    out: Optional[str] = None

    @property
    def axes(self) -> tuple:
        return AXES_3D if self.kind == "3d" else AXES_2D


_KNOWN_KEYS = {"kind", "g", "k", "h", "variants", "solver", "grid", "point", "fd_step", "branches", "samples", "seed", "out"}


def _number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{name}: expected a finite number, got {value!r}")
    return float(value)


def _integer(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name}: expected an integer, got {value!r}")
    return value


def _parse_point(value, dim: int, name: str = "point") -> list:
    if isinstance(value, str):
        try:
            value = [float(t) for t in value.split(",")]
        except ValueError:
            raise ConfigError(f"{name}: expected {dim} comma-separated numbers, got {value!r}") from None
    if not isinstance(value, (list, tuple)) or len(value) != dim:
        raise ConfigError(f"{name}: expected {dim} coordinates, got {value!r}")
    return [_number(v, name) for v in value]


def _parse_axis(spec, name: str) -> GridAxis:
    if isinstance(spec, dict):
        missing = {"min", "max", "count"} - set(spec)
        if missing:
            raise ConfigError(f"{name}: missing {', '.join(sorted(missing))}")
        spec = [spec["min"], spec["max"], spec["count"]]
    if not isinstance(spec, (list, tuple)) or len(spec) != 3:
        raise ConfigError(f"{name}: expected [min, max, count] or {{min, max, count}}")
    lo, hi = _number(spec[0], name + ".min"), _number(spec[1], name + ".max")
    count = _integer(spec[2], name + ".count")
    if count < 1:
        raise ConfigError(f"{name}.count must be >= 1")
    if hi < lo:
        raise ConfigError(f"{name}: max < min")
    return GridAxis(lo, hi, count)


def _parse_variants(value, kind: str):
    if value is None:
        return None
    if value == "auto":
        if kind != "3d":
            raise ConfigError('variants: "auto" is only available for kind "3d"')
        return "auto"
    if not isinstance(value, dict):
        raise ConfigError('variants: expected an object or "auto"')
    unknown = set(value) - {"constraint", "p", "r"}
    if unknown:
        raise ConfigError(f"variants: unknown key {sorted(unknown)[0]!r}")
    out = {}
    for key, enum in (("constraint", ConstraintVariant), ("p", PVariant), ("r", RVariant)):
        if key in value:
            try:
                out[key] = enum(value[key])
            except ValueError:
                choices = ", ".join(e.value for e in enum)
                raise ConfigError(f"variants.{key}: {value[key]!r} is not one of {choices}") from None
    return out


def _parse_solver(value) -> SolverConfig:
    if value is None:
        return SolverConfig()
    if not isinstance(value, dict):
        raise ConfigError("solver: expected an object")
    names = {f.name: f for f in fields(SolverConfig)}
    kw = {}
    for key, v in value.items():
        if key not in names:
            raise ConfigError(f"solver.{key}: unknown setting")
        kw[key] = _integer(v, f"solver.{key}") if names[key].type in ("int", int) else _number(v, f"solver.{key}")
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from None


def _check_expression(text, name: str, variables) -> str:
    if not isinstance(text, str):
        raise ConfigError(f"{name}: expected an expression string")
    try:
        parse(text, variables)
    except ParseError as exc:
        raise ConfigError(f"parse error in {name} at position {exc.position}: {exc}") from None
    except ExpressionError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    return text


def load_config(data: dict) -> RunConfig:
    """Validate a decoded JSON document and fill in defaults."""
    if not isinstance(data, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = set(data) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown config key")
    kind = data.get("kind", "3d")
    if kind not in ("3d", "2d"):
        raise ConfigError(f'kind: expected "3d" or "2d", got {kind!r}')
    variables = ("z1", "z2") if kind == "3d" else ("z",)
    cfg = RunConfig(kind=kind)
    cfg.g = _check_expression(data.get("g", "1" if kind == "3d" else "z"), "g", variables)
    cfg.k = _check_expression(data.get("k", "0"), "k", variables)
    if data.get("h") is not None:
        if kind != "2d":
            raise ConfigError('h: only used by kind "2d"')
        cfg.h = _check_expression(data["h"], "h", variables)
    cfg.variants = _parse_variants(data.get("variants"), kind)
    cfg.solver = _parse_solver(data.get("solver"))
    if data.get("grid") is not None:
        grid = data["grid"]
        if not isinstance(grid, dict):
            raise ConfigError("grid: expected an object with one entry per axis")
        extra = set(grid) - set(cfg.axes)
        if extra:
            raise ConfigError(f"grid.{sorted(extra)[0]}: unknown axis")
        cfg.grid = {a: _parse_axis(grid.get(a, [0.0, 0.0, 1]), f"grid.{a}") for a in cfg.axes}
    if data.get("point") is not None:
        cfg.point = _parse_point(data["point"], len(cfg.axes))
    if data.get("fd_step") is not None:
        cfg.fd_step = _number(data["fd_step"], "fd_step")
        if cfg.fd_step <= 0:
            raise ConfigError("fd_step must be > 0")
    branches = data.get("branches", "auto")
    if branches not in ("auto", "both", 1, -1):
        raise ConfigError('branches: expected "auto", "both", 1 or -1')
    cfg.branches = branches
    cfg.samples = _integer(data.get("samples", DEFAULT_SAMPLES), "samples")
    cfg.seed = _integer(data.get("seed", 0), "seed")
    if cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    out = data.get("out")
    if out is not None and not isinstance(out, str):
        raise ConfigError("out: expected a path string")
    cfg.out = out
    return cfg


def read_config(path: Optional[str], stdin=None) -> RunConfig:
    if path is None:
        return load_config({})
    try:
        if path == "-":
            text = (stdin or sys.stdin).read()
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return load_config(data)


# --------------------------------------------------------------------------
# family construction


def build_family3d(cfg: RunConfig, out=None) -> Family3D:
    try:
        family = Family3D.from_text(cfg.g, cfg.k)
    except (FamilyError, ExpressionError) as exc:
        raise ConfigError(f"g/k: {exc}") from None
    if cfg.variants == "auto":
        report = closure_audit(family, samples=max(cfg.samples, 1), config=cfg.solver, seed=cfg.seed)
        sel = report.selected
        if out is not None:
            print(f"audit selected {sel.constraint} {sel.p} {sel.r} (max residual {sel.metric:.3g})", file=out)
        return report.selected_family(family)
    if cfg.variants:
        return family.with_variants(cfg.variants.get("constraint"), cfg.variants.get("p"), cfg.variants.get("r"))
    return family


def build_family2d(cfg: RunConfig) -> Family2D:
    try:
        return Family2D.from_text(cfg.g, cfg.k, cfg.h)
    except (Family2DError, ExpressionError) as exc:
        raise ConfigError(f"g/k/h: {exc}") from None


# --------------------------------------------------------------------------
# rendering


def fmt(value) -> str:
    return format(float(value), ".17g")


def _branch_line(r) -> str:
    res = r.residuals
    return (
        f"branch s={r.z.branch:+d}: z=({r.z.z1:.12g}, {r.z.z2:.12g}) u={r.u:.12g} v={r.v:.12g} "
        f"res=({res.res_uu:.3e}, {res.res_vv:.3e}, {res.res_uv_minus_1:.3e}) iters={r.solver.iterations}"
        + ("" if res.branch_flag else " [stencil jumped branch]")
    )


def _branch_line2(r) -> str:
    res = r.residuals
    return (
        f"branch: z={r.z:.12g} u={r.u:.12g} v={r.v:.12g} "
        f"res=({res.res_uu:.3e}, {res.res_vv:.3e}, {res.res_uv_minus_1:.3e}) iters={r.solver.iterations}"
        + ("" if res.branch_flag else " [stencil jumped branch]")
    )


def _evaluate3(family, x, cfg):
    results = evaluate(family, x, cfg.solver, fd_step=cfg.fd_step, branches=cfg.branches)
    return sorted(results, key=lambda r: (r.z.z1, r.z.z2))


def _evaluate2(family, x, cfg):
    return evaluate2(family, x, BrentConfig(), fd_step=cfg.fd_step)


def grid_points(cfg: RunConfig):
    """Row-major: the first axis varies slowest."""
    vals = [cfg.grid[a].values() for a in cfg.axes]
    mesh = np.meshgrid(*vals, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def grid_rows(cfg: RunConfig, family) -> list[list[str]]:
    rows = []
    three = cfg.kind == "3d"
    for x in grid_points(cfg):
        try:
            results = _evaluate3(family, x, cfg) if three else _evaluate2(family, x, cfg)
        except PreconditionError:
            results = []
        coords = [fmt(c) for c in x]
        if not results:
            blanks = len(CSV_HEADER if three else CSV_HEADER_2D) - len(coords) - 2
            rows.append(coords + [""] * blanks + ["0", ""])
            continue
        for i, r in enumerate(results):
            res = r.residuals
            vals = [r.z.z1, r.z.z2, r.z.s] if three else [r.z]
            vals += [r.u, r.v, res.res_uu, res.res_vv, res.res_uv_minus_1]
            rows.append(coords + [str(i)] + [fmt(v) for v in vals] + ["1", str(r.solver.iterations)])
    return rows


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _write(text: str, path: Optional[str], out) -> None:
    if path is None or path == "-":
        out.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise ConfigError(f"out: cannot write {path}: {exc.strerror}") from None


# --------------------------------------------------------------------------
# subcommands


def cmd_eval(cfg: RunConfig, out=sys.stdout) -> int:
    if cfg.point is None:
        raise ConfigError("point: required for eval (use --point or the config key)")
    if cfg.kind == "2d":
        return cmd_family2d(cfg, out)
    family = build_family3d(cfg, out)
    try:
        results = _evaluate3(family, cfg.point, cfg)
    except PreconditionError as exc:
        print(f"no branch: {exc}", file=out)
        return EXIT_NO_BRANCH
    if not results:
        print("no branch converged", file=out)
        return EXIT_NO_BRANCH
    for r in results:
        print(_branch_line(r), file=out)
    return EXIT_OK


def cmd_family2d(cfg: RunConfig, out=sys.stdout) -> int:
    if cfg.kind != "2d":
        cfg = RunConfig(**{**cfg.__dict__, "kind": "2d"})
    if cfg.point is None:
        raise ConfigError("point: required for family2d (x0,x1,x2)")
    if len(cfg.point) != 3:
        raise ConfigError("point: family2d expects 3 coordinates (x0,x1,x2)")
    family = build_family2d(cfg)
    results = _evaluate2(family, cfg.point, cfg)
    if not results:
        print("no branch converged", file=out)
        return EXIT_NO_BRANCH
    for r in results:
        print(_branch_line2(r), file=out)
    return EXIT_OK


def cmd_grid(cfg: RunConfig, out=sys.stdout) -> int:
    if cfg.grid is None:
        raise ConfigError("grid: required for the grid subcommand")
    family = build_family3d(cfg) if cfg.kind == "3d" else build_family2d(cfg)
    rows = grid_rows(cfg, family)
    header = CSV_HEADER if cfg.kind == "3d" else CSV_HEADER_2D
    _write(render_csv(header, rows), cfg.out, out)
    return EXIT_OK


def cmd_audit(cfg: RunConfig, out=sys.stdout) -> int:
    if cfg.kind != "3d":
        raise ConfigError('kind: audit requires kind "3d"')
    if cfg.samples < 1:
        raise ConfigError("samples must be ≥ 1")
    try:
        family = Family3D.from_text(cfg.g, cfg.k)
    except (FamilyError, ExpressionError) as exc:
        raise ConfigError(f"g/k: {exc}") from None
    try:
        report = closure_audit(family, samples=cfg.samples, config=cfg.solver, seed=cfg.seed)
    except AuditError as exc:
        print(f"audit failed: {exc}", file=sys.stderr)
        return EXIT_GATE
    _write(report.to_json() + "\n", cfg.out, out)
    sel = report.selected
    verdict = "passes" if report.passed else "fails"
    print(
        f"selected {sel.constraint} {sel.p} {sel.r}: max residual {sel.metric:.3e} {verdict} the {report.tolerance:g} gate",
        file=sys.stderr if cfg.out is None else out,
    )
    return EXIT_OK if report.passed else EXIT_GATE


def cmd_verify(cfg: RunConfig, out=sys.stdout) -> int:
    """Residual check at `samples` fresh points of the audit box (or at --point)."""
    if cfg.samples < 1:
        raise ConfigError("samples must be ≥ 1")
    rng = np.random.default_rng(cfg.seed)
    if cfg.kind == "2d":
        family = build_family2d(cfg)
        points = [cfg.point] if cfg.point is not None else [rng.uniform(-1, 1, 3) for _ in range(cfg.samples)]
        evaluate_at = lambda x: _evaluate2(family, x, cfg)  # noqa: E731
    else:
        family = build_family3d(cfg, out)
        points = [cfg.point] if cfg.point is not None else [sample_box(rng) for _ in range(cfg.samples)]
        evaluate_at = lambda x: _evaluate3(family, x, cfg)  # noqa: E731
    worst = np.zeros(3)
    branches = flagged = 0
    for x in points:
        try:
            results = evaluate_at(x)
        except PreconditionError:
            continue
        for r in results:
            branches += 1
            if not r.residuals.branch_flag:
                flagged += 1
                continue
            worst = np.maximum(worst, np.abs(r.residuals.as_tuple()))
    if branches == 0:
        print("no branch converged at any sample point", file=out)
        return EXIT_NO_BRANCH
    ok = bool(np.all(worst <= AUDIT_TOL))
    print(
        f"points={len(points)} branches={branches} flagged={flagged} "
        f"max |u.u|={worst[0]:.3e} max |v.v|={worst[1]:.3e} max |u.v-1|={worst[2]:.3e} "
        f"{'PASS' if ok else 'FAIL'} at {AUDIT_TOL:g}",
        file=out,
    )
    return EXIT_OK if ok else EXIT_GATE


# --------------------------------------------------------------------------
# selfcheck


def _check_plane_wave() -> bool:
    # affine fields: any step is exact, and a wide one keeps roundoff below 1e-12
    u, v = plane_wave_pair()
    rng = np.random.default_rng(7)
    return all(residuals_at(u, v, rng.uniform(-10, 10, 4), h=0.5).max_abs <= 1e-12 for _ in range(10))


def _check_closed_form_3d() -> bool:
    family = Family3D.from_text("1", "0")
    res = evaluate(family, [0.0, 0.6, 0.0, 0.8])
    if len(res) != 1:
        return False
    r = res[0]
    return (
        abs(r.z.z1 + 0.6) < 1e-9 and abs(r.z.z2) < 1e-9 and abs(r.u + 1) < 1e-9 and abs(r.v - 0.5) < 1e-9
        and r.residuals.passes(1e-6)
    )


def _check_constraint_discriminator() -> bool:
    family = Family3D.from_text("1", "0", constraint_variant=ConstraintVariant.PAPER_X)
    res = evaluate(family, [0.0, 0.6, 0.0, 0.8])
    return bool(res) and abs(res[0].residuals.res_uu) >= 1


def _check_null_gradient() -> bool:
    family = Family3D.from_text("1 + 0.2*z1 - 0.1*z2^2", "0.3*z1*z2")
    rng = np.random.default_rng(3)
    for _ in range(20):
        r, t = 0.9 * math.sqrt(rng.uniform()), rng.uniform(0, 2 * math.pi)
        g = analytic_grad_u(family, ParamPoint.make(r * math.cos(t), r * math.sin(t), int(rng.choice([-1, 1]))))
        if abs(minkowski_dot(g, g)) > 1e-12:
            return False
    return True


def _check_family2d() -> bool:
    family = Family2D.from_text("z", "0", "0")
    res = evaluate2(family, [2.0, 0.0, -1.0])
    if len(res) != 2:
        return False
    root3 = math.sqrt(3.0)
    (a, b) = res
    return (
        abs(a.z + root3 / 2) < 1e-9 and abs(b.z - root3 / 2) < 1e-9
        and abs(a.u - root3) < 1e-8 and abs(b.u + root3) < 1e-8
        and abs(a.v - root3 / 2) < 1e-8 and abs(b.v + root3 / 2) < 1e-8
        and all(r.residuals.passes(1e-6) for r in res)
    )


def _check_expressions() -> bool:
    cases = [("exp(z1)", (0.0,)), ("sin(3*z1)", (0.2,)), ("z1*z2 + z1^2/z2", (0.5, 1.5))]
    for text, point in cases:
        names = ("z1", "z2")[: len(point)]
        if fd_check_tuned(parse(text, names), point).discrepancy > 1e-5:
            return False
    return True


def _check_brent() -> bool:
    oc = brent1(lambda t: t * t - 0.75, (0.0, 1.0), BrentConfig())
    return oc.converged and abs(oc.root[0] - math.sqrt(0.75)) < 1e-12


def _check_ycheck() -> bool:
    yc = intermediate_ycheck(Family3D.from_text("1", "0"), [0.2, 0.6, 0.0, 0.8])
    return not yc.flagged and max(abs(yc.eik4), abs(yc.eik4a), abs(yc.eik4b)) <= 1e-6


SELFCHECKS = (
    ("plane_wave_pair", _check_plane_wave),
    ("closed_form_g1_k0", _check_closed_form_3d),
    ("constraint_sign_discriminator", _check_constraint_discriminator),
    ("analytic_null_gradient", _check_null_gradient),
    ("family2d_g_equals_z", _check_family2d),
    ("expression_fd", _check_expressions),
    ("brent_sqrt", _check_brent),
    ("hodograph_g1_k0", _check_ycheck),
)

FAULTS = ("metric-sign",)


@contextlib.contextmanager
def injected_fault(name: Optional[str]):
    if name is None:
        yield
        return
    if name != "metric-sign":
        raise ConfigError(f"fault: unknown fault {name!r}")
    saved = numkernel.METRIC_SIGN
    numkernel.METRIC_SIGN = -saved
    try:
        yield
    finally:
        numkernel.METRIC_SIGN = saved


def cmd_selfcheck(out=sys.stdout, fault: Optional[str] = None) -> int:
    ok = True
    with injected_fault(fault):
        for name, check in SELFCHECKS:
            try:
                passed = bool(check())
                note = ""
            except Exception as exc:  # a crashing check is a failing check
                passed, note = False, f" ({type(exc).__name__}: {exc})"
            ok &= passed
            print(f"{'PASS' if passed else 'FAIL'} {name}{note}", file=out)
    print(f"{sum(1 for _ in SELFCHECKS)} checks, {'all pass' if ok else 'FAILURES'}", file=out)
    return EXIT_OK if ok else EXIT_SELFCHECK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coupled-eikonal", description="Evaluate and verify rank-2 coupled eikonal families.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config_path", nargs="?", metavar="CONFIG", help="JSON config path, or - for stdin")
    common.add_argument("--config", dest="config_flag", metavar="PATH", help="JSON config path, or - for stdin")
    common.add_argument("--point", help="comma-separated coordinates, e.g. 0,0.6,0,0.8")
    common.add_argument("--out", help="output path (default stdout)")
    common.add_argument("--seed", type=int, help="random seed (non-negative)")
    common.add_argument("--samples", type=int, help="sample count for audit/verify")
    for name, help_text in (
        ("eval", "evaluate every branch at one point"),
        ("grid", "evaluate a grid and write CSV"),
        ("verify", "residual check at random points"),
        ("audit", "rank closure variants and write a JSON report"),
        ("family2d", "evaluate the 2+1 dimensional family at one point"),
    ):
        sub.add_parser(name, parents=[common], help=help_text)
    sc = sub.add_parser("selfcheck", help="run the built-in check suite")
    sc.add_argument("--fault", choices=FAULTS, help=argparse.SUPPRESS)
    return parser


def _apply_flags(cfg: RunConfig, args) -> RunConfig:
    if args.point is not None:
        dim = 3 if args.command == "family2d" or cfg.kind == "2d" else 4
        cfg.point = _parse_point(args.point, dim, "--point")
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg.seed = args.seed
    if args.samples is not None:
        cfg.samples = args.samples
    return cfg


COMMANDS = {
    "eval": cmd_eval,
    "grid": cmd_grid,
    "verify": cmd_verify,
    "audit": cmd_audit,
    "family2d": cmd_family2d,
}


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    if args.command == "selfcheck":
        return cmd_selfcheck(out, args.fault)
    try:
        if args.config_path and args.config_flag:
            raise ConfigError("config: give the path once, positionally or with --config")
        cfg = read_config(args.config_flag or args.config_path)
        if args.command == "family2d" and cfg.kind == "3d" and (args.config_flag or args.config_path) is None:
            cfg = load_config({"kind": "2d"})
        cfg = _apply_flags(cfg, args)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
