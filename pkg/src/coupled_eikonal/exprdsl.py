"""Small analytic-expression language for generating functions.

Text such as ``"1 + 0.2*z1 - z2^2"`` is parsed into an immutable syntax tree
over a declared list of variables (at most three).  Trees are evaluated with
second-order forward-mode jets, giving the value, gradient and Hessian in one
pass.  Evaluation points may be scalars or numpy arrays of a common shape, in
which case every jet component is an array and evaluation is vectorised.

Grammar::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?
    primary := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'
"""
from __future__ import annotations

import math
from functools import lru_cache
import re
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

MAX_VARIABLES = 3

CONSTANTS = {"pi": math.pi, "e": math.e}
FUNCTIONS = ("sin", "cos", "tan", "exp", "log", "sqrt", "sinh", "cosh", "atan")
_ARITY = {name: 1 for name in FUNCTIONS}


class ExpressionError(Exception):
    """Base class for parse and evaluation failures."""


class ParseError(ExpressionError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.message = message
        self.position = position


class UnknownIdentifierError(ParseError):
    pass


class UnknownFunctionError(ParseError):
    pass


class ArityError(ParseError):
    pass


class EvaluationDomainError(ExpressionError):
    """A sub-function was evaluated outside its domain."""

    def __init__(self, message: str, node: "Node"):
        super().__init__(f"{message} in `{render_node(node)}`")
        self.node = node


class NonFiniteError(ExpressionError):
    def __init__(self, node: "Node"):
        super().__init__(f"non-finite value in `{render_node(node)}`")
        self.node = node


# --------------------------------------------------------------------------
# syntax tree


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Const:
    name: str

    @property
    def value(self) -> float:
        return CONSTANTS[self.name]


@dataclass(frozen=True)
class Var:
    name: str
    index: int


@dataclass(frozen=True)
class Neg:
    operand: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Num, Const, Var, Neg, BinOp, Call]


# --------------------------------------------------------------------------
# tokenizer and parser

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),]))"
)


@dataclass(frozen=True)
class _Token:
    kind: str  # num | name | op | end
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    i = 0
    n = len(text)
    while True:
        while i < n and text[i].isspace():
            i += 1
        if i >= n:
            break
        m = _TOKEN.match(text, i)
        if m is None or m.end() == i:
            raise ParseError(f"unexpected character {text[i]!r}", _byte_offset(text, i))
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append(_Token(kind, m.group(kind), _byte_offset(text, start)))
        i = m.end()
    tokens.append(_Token("end", "", _byte_offset(text, n)))
    return tokens


def _byte_offset(text: str, index: int) -> int:
    return len(text[:index].encode("utf-8"))


class _Parser:
    def __init__(self, text: str, variables: Sequence[str]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.variables = {name: k for k, name in enumerate(variables)}

    @property
    def tok(self) -> _Token:
        return self.tokens[self.i]

    def advance(self) -> _Token:
        t = self.tokens[self.i]
        self.i += 1
        return t

    def expect(self, text: str) -> _Token:
        if self.tok.text != text or self.tok.kind != "op":
            self.fail(f"expected '{text}'")
        return self.advance()

    def fail(self, what: str):
        t = self.tok
        found = "end of input" if t.kind == "end" else repr(t.text)
        raise ParseError(f"syntax error: {what}, found {found}", t.pos)

    def parse(self) -> Node:
        node = self.expr()
        if self.tok.kind != "end":
            self.fail("expected operator or end of input")
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.tok.kind == "op" and self.tok.text == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Node:
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Num(float(t.text))
        if t.kind == "name":
            self.advance()
            if self.tok.kind == "op" and self.tok.text == "(":
                return self.call(t)
            if t.text in self.variables:
                return Var(t.text, self.variables[t.text])
            if t.text in CONSTANTS:
                return Const(t.text)
            if t.text in _ARITY:
                raise ArityError(f"function `{t.text}` used without arguments", t.pos)
            raise UnknownIdentifierError(f"unknown identifier `{t.text}`", t.pos)
        if t.kind == "op" and t.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        self.fail("expected number, name or '('")

    def call(self, name: _Token) -> Node:
        if name.text not in _ARITY:
            raise UnknownFunctionError(f"unknown function `{name.text}`", name.pos)
        self.expect("(")
        args = [self.expr()]
        while self.tok.kind == "op" and self.tok.text == ",":
            self.advance()
            args.append(self.expr())
        self.expect(")")
        if len(args) != _ARITY[name.text]:
            raise ArityError(
                f"function `{name.text}` takes {_ARITY[name.text]} argument(s), got {len(args)}",
                name.pos,
            )
        return Call(name.text, args[0])


def _check_variables(variables: Sequence[str]) -> tuple[str, ...]:
    variables = tuple(variables)
    if len(variables) > MAX_VARIABLES:
        raise ValueError(f"at most {MAX_VARIABLES} variables are supported")
    if len(set(variables)) != len(variables):
        raise ValueError(f"variable names must be distinct: {variables}")
    for name in variables:
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
            raise ValueError(f"invalid variable name {name!r}")
        if name in CONSTANTS or name in _ARITY:
            raise ValueError(f"variable name {name!r} is reserved")
    return variables


def parse(text: str, variables: Sequence[str]) -> "Expression":
    """Parse `text` into an :class:`Expression` over `variables`.

    Raises :class:`ParseError` (or one of its subclasses) carrying the byte
    offset of the offending token; the end of input sits at ``len(text)``.
    """
    variables = _check_variables(variables)
    if not text or not text.strip():
        raise ParseError("syntax error: empty expression", 0)
    root = _Parser(text, variables).parse()
    return Expression(root, variables)


# --------------------------------------------------------------------------
# rendering

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _prec(node: Node) -> int:
    if isinstance(node, BinOp):
        return {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL, "^": _PREC_POW}[node.op]
    if isinstance(node, Neg):
        return _PREC_UNARY
    if isinstance(node, Num) and node.value < 0:
        return _PREC_UNARY
    return _PREC_ATOM


def _format_number(v: float) -> str:
    if not math.isfinite(v):
        raise ValueError(f"cannot render non-finite literal {v}")
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def render_node(node: Node) -> str:
    def wrap(child: Node, min_prec: int) -> str:
        s = render_node(child)
        return f"({s})" if _prec(child) < min_prec else s

    if isinstance(node, Num):
        return _format_number(node.value)
    if isinstance(node, (Const, Var)):
        return node.name
    if isinstance(node, Neg):
        return "-" + wrap(node.operand, _PREC_UNARY)
    if isinstance(node, Call):
        return f"{node.func}({render_node(node.arg)})"
    if node.op in "+-":
        return f"{wrap(node.left, _PREC_ADD)} {node.op} {wrap(node.right, _PREC_MUL)}"
    if node.op in "*/":
        return f"{wrap(node.left, _PREC_MUL)}{node.op}{wrap(node.right, _PREC_UNARY)}"
    return f"{wrap(node.left, _PREC_ATOM)}^{wrap(node.right, _PREC_UNARY)}"


# --------------------------------------------------------------------------
# jets


def _pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i, n)]


@lru_cache(maxsize=None)
def _pair_index(n: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = _pairs(n)
    return np.array([i for i, _ in pairs], dtype=int), np.array([j for _, j in pairs], dtype=int)


class Jet2:
    """Value, gradient and upper-triangular Hessian of a scalar function.

    All components live in one array ``data`` of shape ``(1 + n + n(n+1)/2,
    *batch)``: value, gradient, then the Hessian once per unordered index
    pair, so it is symmetric by construction.  Jets known to be constant
    carry ``const=True`` with scalar components, and arithmetic with them
    skips the derivative bookkeeping.
    """

    __slots__ = ("data", "n", "const")

    def __init__(self, value, grad, hess_upper, const: bool = False):
        grad, hess_upper = tuple(grad), tuple(hess_upper)
        self.n = len(grad)
        self.const = const
        self.data = np.array(np.broadcast_arrays(value, *grad, *hess_upper), dtype=float)

    @classmethod
    def _packed(cls, data: np.ndarray, n: int, const: bool = False) -> "Jet2":
        out = cls.__new__(cls)
        out.data, out.n, out.const = data, n, const
        return out

    @classmethod
    def constant(cls, value, n: int) -> "Jet2":
        data = np.zeros(1 + n + n * (n + 1) // 2)
        data[0] = value
        return cls._packed(data, n, True)

    @classmethod
    def variable(cls, value, index: int, n: int) -> "Jet2":
        value = np.asarray(value, dtype=float)
        data = np.zeros((1 + n + n * (n + 1) // 2,) + value.shape)
        data[0] = value
        data[1 + index] = 1.0
        return cls._packed(data, n)

    @property
    def value(self):
        return self.data[0]

    @property
    def grad(self) -> tuple:
        return tuple(self.data[1 : 1 + self.n])

    @property
    def hess_upper(self) -> tuple:
        return tuple(self.data[1 + self.n :])

    @property
    def gradient(self) -> np.ndarray:
        """Gradient with the variable axis last."""
        return np.moveaxis(self.data[1 : 1 + self.n], 0, -1)

    @property
    def hessian(self) -> np.ndarray:
        """Full symmetric Hessian with the two variable axes last."""
        n = self.n
        I, J = _pair_index(n)
        H = self.data[1 + n :]
        out = np.zeros(H.shape[1:] + (n, n))
        out[..., I, J] = np.moveaxis(H, 0, -1)
        out[..., J, I] = np.moveaxis(H, 0, -1)
        return out

    def h(self, i: int, j: int):
        """Single Hessian entry."""
        if i > j:
            i, j = j, i
        return self.data[1 + self.n + i * self.n - i * (i - 1) // 2 + (j - i)]

    # arithmetic ----------------------------------------------------------
    def _shift(self, c) -> "Jet2":
        data = self.data.copy()
        data[0] = data[0] + c
        return Jet2._packed(data, self.n, self.const)

    def __add__(self, other: "Jet2") -> "Jet2":
        if other.const:
            return self._shift(other.data[0])
        if self.const:
            return other._shift(self.data[0])
        return Jet2._packed(self.data + other.data, self.n)

    def __sub__(self, other: "Jet2") -> "Jet2":
        if other.const:
            return self._shift(-other.data[0])
        if self.const:
            return (-other)._shift(self.data[0])
        return Jet2._packed(self.data - other.data, self.n)

    def __neg__(self) -> "Jet2":
        return Jet2._packed(-self.data, self.n, self.const)

    def __mul__(self, other: "Jet2") -> "Jet2":
        if other.const:
            return self.scale(other.data[0])
        if self.const:
            return other.scale(self.data[0])
        n = self.n
        A, B = self.data, other.data
        a, b = A[0], B[0]
        ga, gb = A[1 : 1 + n], B[1 : 1 + n]
        I, J = _pair_index(n)
        out = np.empty_like(A)
        out[0] = a * b
        out[1 : 1 + n] = a * gb + b * ga
        out[1 + n :] = a * B[1 + n :] + b * A[1 + n :] + ga[I] * gb[J] + ga[J] * gb[I]
        return Jet2._packed(out, n)

    def scale(self, c) -> "Jet2":
        return Jet2._packed(c * self.data, self.n, self.const)

    def chain(self, f0, f1, f2) -> "Jet2":
        """Compose with a scalar function whose value/derivatives at self.value are f0, f1, f2."""
        n = self.n
        if self.const:
            return Jet2.constant(f0, n)
        g = self.data[1 : 1 + n]
        I, J = _pair_index(n)
        out = np.empty_like(self.data)
        out[0] = f0
        out[1 : 1 + n] = f1 * g
        out[1 + n :] = f1 * self.data[1 + n :] + f2 * g[I] * g[J]
        return Jet2._packed(out, n)


# --------------------------------------------------------------------------
# evaluation


def _any(mask) -> bool:
    return bool(np.any(mask))


class _Evaluator:
    """Walks a tree producing jets (or plain values when `jets` is False).

    With ``strict=False`` invalid lanes become NaN instead of raising, which
    lets batched solvers discard individual lanes.
    """

    def __init__(self, point, n: int, jets: bool, strict: bool):
        self.point = point
        self.n = n
        self.jets = jets
        self.strict = strict
        self.var_jets: dict = {}

    def run(self, node: Node):
        with np.errstate(all="ignore"):
            out = self.visit(node)
        if self.strict and not np.all(np.isfinite(out.data if self.jets else out)):
            # overflow in +, -, * surfaces here; other nodes check themselves
            raise NonFiniteError(node)
        return out

    def visit(self, node: Node):
        if isinstance(node, (Num, Const)):
            v = np.float64(node.value)  # numpy scalars honour errstate; python floats raise
            return Jet2.constant(v, self.n) if self.jets else v
        if isinstance(node, Var):
            v = self.point[node.index]
            if not self.jets:
                return v
            if node.index not in self.var_jets:
                self.var_jets[node.index] = Jet2.variable(v, node.index, self.n)
            return self.var_jets[node.index]
        if isinstance(node, Neg):
            a = self.visit(node.operand)
            return -a
        if isinstance(node, Call):
            return self.check(node, self.call(node, self.visit(node.arg)))
        if node.op == "^":
            return self.check(node, self.power(node))
        a = self.visit(node.left)
        b = self.visit(node.right)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return self.check(node, self.divide(node, a, b))

    # helpers -------------------------------------------------------------
    def val(self, a):
        return a.value if self.jets else a

    def guard(self, node: Node, a, bad, message: str):
        """Raise, or poison the lanes of `a` where `bad` holds."""
        if not _any(bad):
            return a
        if self.strict:
            raise EvaluationDomainError(message, node)
        if self.jets:
            nan = lambda c: np.where(bad, np.nan, c)  # noqa: E731
            return Jet2(nan(a.value), [nan(c) for c in a.grad], [nan(c) for c in a.hess_upper])
        return np.where(bad, np.nan, a)

    def check(self, node: Node, out):
        if not self.strict:
            return out
        # derivatives are checked once at the root
        if not np.all(np.isfinite(out.value if self.jets else out)):
            raise NonFiniteError(node)
        return out

    def unary(self, a, f0, f1, f2):
        if self.jets:
            return a.chain(f0, f1, f2)
        return f0

    def divide(self, node: Node, a, b):
        bv = self.val(b)
        b = self.guard(node, b, np.asarray(bv) == 0, "division by zero")
        bv = self.val(b)
        with np.errstate(all="ignore"):
            r = 1.0 / bv
            recip = self.unary(b, r, -r * r, 2.0 * r * r * r)
        return a * recip

    def call(self, node: Call, a):
        x = self.val(a)
        f = node.func
        with np.errstate(all="ignore"):
            if f == "sin":
                s, c = np.sin(x), np.cos(x)
                return self.unary(a, s, c, -s)
            if f == "cos":
                s, c = np.sin(x), np.cos(x)
                return self.unary(a, c, -s, -c)
            if f == "tan":
                t = np.tan(x)
                sec2 = 1.0 + t * t
                return self.unary(a, t, sec2, 2.0 * t * sec2)
            if f == "exp":
                ex = np.exp(x)
                return self.unary(a, ex, ex, ex)
            if f == "sinh":
                sh, ch = np.sinh(x), np.cosh(x)
                return self.unary(a, sh, ch, sh)
            if f == "cosh":
                sh, ch = np.sinh(x), np.cosh(x)
                return self.unary(a, ch, sh, ch)
            if f == "atan":
                d = 1.0 / (1.0 + x * x)
                return self.unary(a, np.arctan(x), d, -2.0 * x * d * d)
            if f == "log":
                a = self.guard(node, a, np.asarray(x) <= 0, "log of non-positive argument")
                x = self.val(a)
                return self.unary(a, np.log(x), 1.0 / x, -1.0 / (x * x))
            if f == "sqrt":
                bad = np.asarray(x) < 0
                if self.jets:
                    # derivatives of sqrt blow up at 0
                    bad = np.asarray(x) <= 0
                a = self.guard(node, a, bad, "sqrt of negative argument" if _any(np.asarray(x) < 0)
                               else "sqrt at zero (derivative undefined)")
                x = self.val(a)
                r = np.sqrt(x)
                return self.unary(a, r, 0.5 / r, -0.25 / (r * x))
        raise UnknownFunctionError(f"unknown function `{f}`", 0)  # unreachable after parse

    def power(self, node: BinOp):
        exponent = _constant_value(node.right)
        base = self.visit(node.left)
        if exponent is not None and float(exponent).is_integer() and abs(exponent) <= 64:
            m = int(exponent)
            if m < 0:
                bv = self.val(base)
                base = self.guard(node, base, np.asarray(bv) == 0, "zero to a negative power")
                pos = _int_power(base, -m, self.jets, self.n)
                bv = self.val(pos)
                with np.errstate(divide="ignore", invalid="ignore"):
                    recip = self.unary(pos, 1.0 / bv, -1.0 / bv**2, 2.0 / bv**3)
                return recip
            return _int_power(base, m, self.jets, self.n)
        bv = self.val(base)
        base = self.guard(node, base, np.asarray(bv) <= 0, "non-integer power of non-positive base")
        bv = self.val(base)
        with np.errstate(all="ignore"):
            if exponent is not None:
                c = float(exponent)
                return self.unary(base, bv**c, c * bv ** (c - 1), c * (c - 1) * bv ** (c - 2))
            expo = self.visit(node.right)
            logb = self.unary(base, np.log(bv), 1.0 / bv, -1.0 / (bv * bv))
            prod = logb * expo
            pv = self.val(prod)
            ex = np.exp(pv)
            return self.unary(prod, ex, ex, ex)


def _int_power(base, m: int, jets: bool, n: int):
    """base**m by binary exponentiation on multiplications only."""
    if m == 0:
        return Jet2.constant(1.0, n) if jets else 1.0
    result = None
    acc = base
    while m:
        if m & 1:
            result = acc if result is None else result * acc
        m >>= 1
        if m:
            acc = acc * acc
    return result


def _constant_value(node: Node):
    """Value of a variable-free subtree, or None."""
    if isinstance(node, (Num, Const)):
        return float(node.value)
    if isinstance(node, Neg):
        v = _constant_value(node.operand)
        return None if v is None else -v
    return None


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Expression:
    """Parsed analytic function of up to three named variables (immutable)."""

    root: Node
    variables: tuple[str, ...]
    text: str = field(default="", compare=False)

    @property
    def nvars(self) -> int:
        return len(self.variables)

    def render(self) -> str:
        return render_node(self.root)

    def __str__(self) -> str:
        return self.render()

    def _point(self, point):
        if len(point) != self.nvars:
            raise ValueError(f"expected {self.nvars} coordinates, got {len(point)}")
        return [p if isinstance(p, np.ndarray) else float(p) for p in point]

    def evaluate(self, point, strict: bool = True):
        """Plain value at `point` (no derivatives)."""
        return _Evaluator(self._point(point), self.nvars, jets=False, strict=strict).run(self.root)

    def jet(self, point, strict: bool = True) -> Jet2:
        """Value, gradient and Hessian at `point` (arrays broadcast together)."""
        pts = self._point(point)
        if any(isinstance(p, np.ndarray) for p in pts):
            pts = list(np.broadcast_arrays(*pts))
        return _Evaluator(pts, self.nvars, jets=True, strict=strict).run(self.root)

    def is_constant(self) -> bool:
        return not any(isinstance(n, Var) for n in walk(self.root))


def walk(node: Node):
    yield node
    if isinstance(node, Neg):
        yield from walk(node.operand)
    elif isinstance(node, Call):
        yield from walk(node.arg)
    elif isinstance(node, BinOp):
        yield from walk(node.left)
        yield from walk(node.right)


def eval_jet(expr: Expression, point) -> Jet2:
    return expr.jet(point)


@dataclass
class FDCheck:
    """Discrepancy between jet derivatives and central differences.

    ``spread`` is filled by :func:`fd_check_tuned`: the smallest relative
    disagreement between the finite-difference estimates at two adjacent
    steps.  A large spread means the difference quotients themselves are
    unreliable at that point (a nearby singularity or violent oscillation),
    so the discrepancy says nothing about the jet.
    """

    gradient_error: float
    hessian_error: float
    h: float
    spread: float = math.nan

    @property
    def discrepancy(self) -> float:
        return max(self.gradient_error, self.hessian_error)


def _rel_err(exact: np.ndarray, approx: np.ndarray) -> float:
    if exact.size == 0:
        return 0.0
    return float(np.max(np.abs(exact - approx) / np.maximum(1.0, np.abs(exact))))


def _fd_derivatives(expr: Expression, x: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    # extended precision (where the platform has it) lowers the roundoff
    # floor of the second differences, ~eps*|f|/h^2
    n = x.size
    x = x.astype(np.longdouble)
    eye = np.eye(n, dtype=np.longdouble) * h
    offsets = [np.zeros(n)]
    for i in range(n):
        offsets += [eye[i], -eye[i]]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    for i, j in pairs:
        offsets += [eye[i] + eye[j], eye[i] - eye[j], -eye[i] + eye[j], -eye[i] - eye[j]]
    P = x + np.array(offsets)
    vals = np.broadcast_to(expr.evaluate(tuple(P.T)), (len(P),))
    f0, rest = vals[0], vals[1:]
    fp, fm = rest[0 : 2 * n : 2], rest[1 : 2 * n : 2]
    grad = (fp - fm) / (2 * h)
    hess = np.diag((fp - 2 * f0 + fm) / (h * h))
    for k, (i, j) in enumerate(pairs):
        a, b, c, d = rest[2 * n + 4 * k : 2 * n + 4 * k + 4]
        hess[i, j] = hess[j, i] = (a - b - c + d) / (4 * h * h)
    return grad.astype(float), hess.astype(float)


def _fd_estimate(expr: Expression, x: np.ndarray, h: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    grad, hess = _fd_derivatives(expr, x, h)
    if order == 4:
        grad2, hess2 = _fd_derivatives(expr, x, 2 * h)
        grad, hess = (4 * grad - grad2) / 3, (4 * hess - hess2) / 3
    return grad, hess


def fd_check(expr: Expression, point, h: float, order: int = 2) -> FDCheck:
    """Compare :func:`eval_jet` with central finite differences of step `h`.

    Errors are relative, with an absolute floor of one:
    ``|exact - fd| / max(1, |exact|)``.  Hessian differences use the
    standard four-point stencil for mixed partials.  ``order=4`` combines
    steps `h` and `2h` by Richardson extrapolation.
    """
    x = np.asarray(point, dtype=float)
    jet = expr.jet(x)
    grad, hess = _fd_estimate(expr, x, h, order)
    return FDCheck(_rel_err(jet.gradient, grad), _rel_err(jet.hessian, hess), h)


def fd_check_tuned(expr: Expression, point, steps=(3e-3, 1e-3, 3e-4, 1e-4, 3e-5), order: int = 4) -> FDCheck:
    """Run :func:`fd_check` over several steps, keeping the best-conditioned one.

    Truncation error falls and roundoff grows as the step shrinks; the step
    giving the smallest discrepancy is where the two balance.
    """
    x = np.asarray(point, dtype=float)
    scale = 1.0 + float(np.max(np.abs(x))) if x.size else 1.0
    jet = expr.jet(x)
    estimates = [(h * scale, *_fd_estimate(expr, x, h * scale, order)) for h in steps]
    checks = [FDCheck(_rel_err(jet.gradient, g), _rel_err(jet.hessian, H), h) for h, g, H in estimates]
    spread = min(
        max(_rel_err(g1, g2), _rel_err(H1, H2))
        for (_, g1, H1), (_, g2, H2) in zip(estimates, estimates[1:])
    ) if len(estimates) > 1 else math.nan
    best = min(checks, key=lambda c: c.discrepancy)
    return replace(best, spread=spread)
