"""Random expression trees for round-trip and derivative tests."""
import numpy as np

from coupled_eikonal.exprdsl import FUNCTIONS, BinOp, Call, Const, Expression, ExpressionError, Neg, Num, Var

NAMES = ("z1", "z2", "z3")


def random_tree(rng: np.random.Generator, nvars: int, depth: int = 6):
    if depth == 0 or rng.uniform() < 0.25:
        roll = rng.uniform()
        if roll < 0.6:
            i = int(rng.integers(nvars))
            return Var(NAMES[i], i)
        if roll < 0.67:
            return Const(str(rng.choice(["pi", "e"])))
        return Num(float(rng.uniform(-3, 3)) if rng.uniform() < 0.5 else float(rng.integers(0, 5)))
    roll = rng.uniform()
    if roll < 0.1:
        return Neg(random_tree(rng, nvars, depth - 1))
    if roll < 0.3:
        return Call(str(rng.choice(FUNCTIONS)), random_tree(rng, nvars, depth - 1))
    if roll < 0.4:
        exponent = Num(float(rng.choice([2, 3, 0.5, -1, 1.5])))
        return BinOp("^", random_tree(rng, nvars, depth - 1), exponent)
    op = str(rng.choice(["+", "-", "*", "/"]))
    return BinOp(op, random_tree(rng, nvars, depth - 1), random_tree(rng, nvars, depth - 1))


def random_expression(rng: np.random.Generator, depth: int = 6) -> Expression:
    nvars = int(rng.integers(1, 4))
    return Expression(random_tree(rng, nvars, depth), NAMES[:nvars])


def evaluable_samples(expr: Expression, rng: np.random.Generator, count: int, bound: float = 1e6):
    """Up to `count` points of [-1, 1]^n where the jet is finite and moderate."""
    points = []
    for _ in range(4 * count):
        p = rng.uniform(-1, 1, expr.nvars)
        try:
            with np.errstate(all="ignore"):
                J = expr.jet(p)
        except ExpressionError:
            continue
        mags = np.concatenate([[J.value], J.gradient, J.hessian.ravel()])
        if np.all(np.isfinite(mags)) and np.max(np.abs(mags)) < bound:
            points.append(p)
            if len(points) == count:
                break
    return points
