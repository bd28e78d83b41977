"""Closed-form scalar fields over space-time.

Expressions are small arithmetic programs in the variables ``x1 .. xN`` and
``t``, e.g. ``"2 + 0.2*sin(3*x1)*t"``.  They are parsed once into an immutable
tree, evaluated vectorised with numpy, and differentiated symbolically.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?          # right associative
    primary := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Besides the public functions (sin, cos, exp, sqrt, abs, min, max, tanh, log)
two helpers appear in derivatives and are accepted by the parser so that
printed derivatives parse back: ``sign(a)`` with ``sign(0) = 0`` and
``where_le(a, b, x, y)`` which is ``x`` where ``a <= b`` and ``y`` elsewhere.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "FieldExpr", "ParseError", "FieldEvalError", "LipschitzEstimate",
    "parse", "evaluate", "differentiate", "lipschitz_estimate",
    "constant", "var",
]


class ParseError(ValueError):
    """Malformed expression text; ``offset`` is a byte offset into the UTF-8 text."""

    def __init__(self, message: str, text: str, index: int):
        self.offset = len(text[:index].encode("utf-8"))
        self.text = text
        super().__init__(f"{message} at byte {self.offset}: {text!r}")


class FieldEvalError(ArithmeticError):
    """Evaluation produced a non-finite value (overflow, division by zero, log/sqrt domain)."""


# ---------------------------------------------------------------------------
# tree nodes

_ADD, _MUL, _UNARY, _POW, _ATOM = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Node = Const | Var | Neg | BinOp | Call

_ARITY = {
    "sin": 1, "cos": 1, "exp": 1, "sqrt": 1, "abs": 1, "tanh": 1, "log": 1,
    "min": 2, "max": 2, "sign": 1, "where_le": 4,
}
_NAMED_CONSTANTS = {"pi": math.pi}
_VAR_RE = re.compile(r"x([1-9][0-9]*)\Z")


def _precedence(node: Node) -> int:
    if isinstance(node, BinOp):
        return {"+": _ADD, "-": _ADD, "*": _MUL, "/": _MUL, "^": _POW}[node.op]
    if isinstance(node, Neg):
        return _UNARY
    return _ATOM


def _format_number(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def _to_text(node: Node) -> str:
    if isinstance(node, Const):
        if node.value < 0:
            return "(" + _format_number(node.value) + ")"
        return _format_number(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return node.name + "(" + ", ".join(_to_text(a) for a in node.args) + ")"
    if isinstance(node, Neg):
        inner = _to_text(node.arg)
        if _precedence(node.arg) < _UNARY:
            inner = "(" + inner + ")"
        return "-" + inner
    prec = _precedence(node)
    left, right = _to_text(node.left), _to_text(node.right)
    if node.op == "^":
        # left operand binds tighter than '^'; right operand is parsed as 'unary'
        if _precedence(node.left) <= _POW:
            left = "(" + left + ")"
        if _precedence(node.right) < _UNARY:
            right = "(" + right + ")"
        return left + "^" + right
    if _precedence(node.left) < prec:
        left = "(" + left + ")"
    if _precedence(node.right) <= prec:
        right = "(" + right + ")"
    return f"{left} {node.op} {right}"


# ---------------------------------------------------------------------------
# parser

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[start]!r}", text, start)
        kind = m.lastgroup
        value = m.group(kind)
        if value == "**":
            value = "^"
        tokens.append((kind, value, m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, dim: int | None):
        self.text = text
        self.dim = dim
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def parse(self) -> Node:
        node = self.expr()
        kind, val, pos = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", self.text, pos)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.advance()
            return Neg(self.unary())
        if self.peek()[0] == "op" and self.peek()[1] == "+":
            self.advance()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.primary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Node:
        kind, val, pos = self.advance()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if self.peek()[1] == "(" and self.peek()[0] == "op":
                return self.call(val, pos)
            if val in _ARITY:
                raise ParseError(f"function {val!r} used without arguments", self.text, pos)
            return self.name(val, pos)
        if kind == "op" and val == "(":
            node = self.expr()
            k, v, p = self.advance()
            if v != ")":
                raise ParseError("expected ')'", self.text, p)
            return node
        what = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {what}", self.text, pos)

    def name(self, val: str, pos: int) -> Node:
        if val == "t":
            return Var("t")
        if val in _NAMED_CONSTANTS:
            return Const(_NAMED_CONSTANTS[val])
        m = _VAR_RE.match(val)
        if m is None:
            raise ParseError(f"unknown identifier {val!r}", self.text, pos)
        if self.dim is not None and int(m.group(1)) > self.dim:
            raise ParseError(f"variable {val!r} exceeds dimension {self.dim}", self.text, pos)
        return Var(val)

    def call(self, fname: str, pos: int) -> Node:
        if fname not in _ARITY:
            raise ParseError(f"unknown function {fname!r}", self.text, pos)
        self.advance()  # '('
        args = [self.expr()]
        while self.peek()[1] == "," and self.peek()[0] == "op":
            self.advance()
            args.append(self.expr())
        k, v, p = self.advance()
        if v != ")":
            raise ParseError("expected ')' or ','", self.text, p)
        if len(args) != _ARITY[fname]:
            raise ParseError(
                f"{fname} takes {_ARITY[fname]} argument(s), got {len(args)}", self.text, pos)
        return Call(fname, tuple(args))


# ---------------------------------------------------------------------------
# numeric evaluation


def _sign(a):
    return np.sign(a)


def _where_le(a, b, x, y):
    return np.where(a <= b, x, y)


_NUMPY_FUNCS: dict[str, Callable] = {
    "sin": np.sin, "cos": np.cos, "exp": np.exp, "sqrt": np.sqrt, "abs": np.abs,
    "tanh": np.tanh, "log": np.log, "min": np.minimum, "max": np.maximum,
    "sign": _sign, "where_le": _where_le,
}
_BINARY = {"+": np.add, "-": np.subtract, "*": np.multiply, "/": np.divide, "^": np.power}


def _compile(node: Node) -> Callable[[dict], np.ndarray]:
    if isinstance(node, Const):
        value = node.value
        return lambda env: value
    if isinstance(node, Var):
        name = node.name
        return lambda env: env[name]
    if isinstance(node, Neg):
        f = _compile(node.arg)
        return lambda env: np.negative(f(env))
    if isinstance(node, BinOp):
        fl, fr, op = _compile(node.left), _compile(node.right), _BINARY[node.op]
        return lambda env: op(fl(env), fr(env))
    fn = _NUMPY_FUNCS[node.name]
    fargs = [_compile(a) for a in node.args]
    return lambda env: fn(*(f(env) for f in fargs))


# ---------------------------------------------------------------------------
# smart constructors (light constant folding only)


def constant(value: float) -> "FieldExpr":
    return FieldExpr(_const(value))


def var(name: str) -> "FieldExpr":
    return FieldExpr(Var(name))


def _const(v: float) -> Node:
    v = float(v)
    return Neg(Const(-v)) if v < 0 else Const(v)


def _value(node: Node) -> float | None:
    if isinstance(node, Const):
        return node.value
    if isinstance(node, Neg) and isinstance(node.arg, Const):
        return -node.arg.value
    return None


def _add(a: Node, b: Node) -> Node:
    va, vb = _value(a), _value(b)
    if va is not None and vb is not None:
        return _const(va + vb)
    if va == 0.0:
        return b
    if vb == 0.0:
        return a
    return BinOp("+", a, b)


def _sub(a: Node, b: Node) -> Node:
    va, vb = _value(a), _value(b)
    if va is not None and vb is not None:
        return _const(va - vb)
    if vb == 0.0:
        return a
    if va == 0.0:
        return _neg(b)
    return BinOp("-", a, b)


def _mul(a: Node, b: Node) -> Node:
    va, vb = _value(a), _value(b)
    if va is not None and vb is not None:
        return _const(va * vb)
    if va == 0.0 or vb == 0.0:
        return Const(0.0)
    if va == 1.0:
        return b
    if vb == 1.0:
        return a
    if va == -1.0:
        return _neg(b)
    if vb == -1.0:
        return _neg(a)
    return BinOp("*", a, b)


def _div(a: Node, b: Node) -> Node:
    va, vb = _value(a), _value(b)
    if va == 0.0 and vb != 0.0:
        return Const(0.0)
    if vb == 1.0:
        return a
    return BinOp("/", a, b)


def _neg(a: Node) -> Node:
    va = _value(a)
    if va is not None:
        return _const(-va)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _pow(a: Node, b: Node) -> Node:
    vb = _value(b)
    if vb == 0.0:
        return Const(1.0)
    if vb == 1.0:
        return a
    return BinOp("^", a, b)


def _call(name: str, *args: Node) -> Node:
    return Call(name, tuple(args))


def _d(node: Node, v: str) -> Node:
    if isinstance(node, Const):
        return Const(0.0)
    if isinstance(node, Var):
        return Const(1.0 if node.name == v else 0.0)
    if isinstance(node, Neg):
        return _neg(_d(node.arg, v))
    if isinstance(node, BinOp):
        a, b = node.left, node.right
        da, db = _d(a, v), _d(b, v)
        if node.op == "+":
            return _add(da, db)
        if node.op == "-":
            return _sub(da, db)
        if node.op == "*":
            return _add(_mul(da, b), _mul(a, db))
        if node.op == "/":
            return _div(_sub(_mul(da, b), _mul(a, db)), _pow(b, Const(2.0)))
        # a^b
        vb = _value(b)
        if _value(db) == 0.0:
            exponent = _const(vb - 1.0) if vb is not None else _sub(b, Const(1.0))
            return _mul(_mul(b, _pow(a, exponent)), da)
        # a^b * (b' ln a + b a'/a)
        inner = _add(_mul(db, _call("log", a)), _div(_mul(b, da), a))
        return _mul(node, inner)
    name, args = node.name, node.args
    if name in ("sign",):
        return Const(0.0)
    if name == "where_le":
        a, b, x, y = args
        return _call("where_le", a, b, _d(x, v), _d(y, v))
    if name == "min":
        a, b = args
        return _call("where_le", a, b, _d(a, v), _d(b, v))
    if name == "max":
        a, b = args
        return _call("where_le", b, a, _d(a, v), _d(b, v))
    (a,) = args
    da = _d(a, v)
    if _value(da) == 0.0:
        return Const(0.0)
    if name == "sin":
        outer = _call("cos", a)
    elif name == "cos":
        outer = _neg(_call("sin", a))
    elif name == "exp":
        outer = node
    elif name == "sqrt":
        return _div(da, _mul(Const(2.0), node))
    elif name == "abs":
        outer = _call("sign", a)
    elif name == "tanh":
        outer = _sub(Const(1.0), _pow(node, Const(2.0)))
    elif name == "log":
        return _div(da, a)
    else:  # pragma: no cover - guarded by _ARITY
        raise KeyError(name)
    return _mul(outer, da)


def _free_vars(node: Node) -> frozenset[str]:
    if isinstance(node, Var):
        return frozenset([node.name])
    if isinstance(node, Const):
        return frozenset()
    if isinstance(node, Neg):
        return _free_vars(node.arg)
    if isinstance(node, BinOp):
        return _free_vars(node.left) | _free_vars(node.right)
    out = frozenset()
    for a in node.args:
        out |= _free_vars(a)
    return out


# ---------------------------------------------------------------------------
# public wrapper


@dataclass(frozen=True)
class FieldExpr:
    """An immutable parsed scalar field ``e(x1, ..., xN, t)``.

    Call it as ``e(x, t)`` where ``x`` is a sequence of coordinate arrays
    (broadcastable against each other and against ``t``).  The result has the
    broadcast shape even for constant expressions.
    """

    node: Node

    def __str__(self) -> str:
        return _to_text(self.node)

    @cached_property
    def _fn(self):
        return _compile(self.node)

    @cached_property
    def variables(self) -> frozenset[str]:
        return _free_vars(self.node)

    @property
    def depends_on_time(self) -> bool:
        return "t" in self.variables

    @property
    def is_constant(self) -> bool:
        return not self.variables

    def __call__(self, x: Sequence, t=0.0) -> np.ndarray:
        env = {f"x{i + 1}": np.asarray(xi, dtype=float) for i, xi in enumerate(x)}
        env["t"] = np.asarray(t, dtype=float)
        missing = [v for v in self.variables if v not in env]
        if missing:
            raise FieldEvalError(f"expression {self} needs {sorted(missing)}")
        with np.errstate(all="ignore"):
            out = np.asarray(self._fn(env), dtype=float)
        shape = np.broadcast_shapes(*(a.shape for a in env.values()))
        if out.shape != shape:
            out = np.broadcast_to(out, shape).copy()
        if not np.all(np.isfinite(out)):
            bad = np.argwhere(~np.isfinite(np.atleast_1d(out)))[0]
            raise FieldEvalError(f"non-finite value of {self} at grid index {tuple(bad)}")
        return out

    def diff(self, v: str) -> "FieldExpr":
        return differentiate(self, v)

    # arithmetic on expressions, used to assemble manufactured forcing terms
    def _wrap(self, other) -> Node:
        return other.node if isinstance(other, FieldExpr) else _const(other)

    def __add__(self, other):
        return FieldExpr(_add(self.node, self._wrap(other)))

    def __radd__(self, other):
        return FieldExpr(_add(self._wrap(other), self.node))

    def __sub__(self, other):
        return FieldExpr(_sub(self.node, self._wrap(other)))

    def __rsub__(self, other):
        return FieldExpr(_sub(self._wrap(other), self.node))

    def __mul__(self, other):
        return FieldExpr(_mul(self.node, self._wrap(other)))

    def __rmul__(self, other):
        return FieldExpr(_mul(self._wrap(other), self.node))

    def __truediv__(self, other):
        return FieldExpr(_div(self.node, self._wrap(other)))

    def __pow__(self, other):
        return FieldExpr(_pow(self.node, self._wrap(other)))

    def __neg__(self):
        return FieldExpr(_neg(self.node))

    def apply(self, fname: str) -> "FieldExpr":
        return FieldExpr(_call(fname, self.node))


def parse(text: str, dim: int | None = None) -> FieldExpr:
    """Parse ``text`` into a :class:`FieldExpr`.

    If ``dim`` is given, spatial variables beyond ``x{dim}`` are rejected.
    """
    return FieldExpr(_Parser(text, dim).parse())


def evaluate(e: FieldExpr, point: Sequence[float]) -> float:
    """Evaluate at a single space-time point ``(x1, ..., xN, t)``."""
    *x, t = point
    return float(e(x, t))


def differentiate(e: FieldExpr, v: str) -> FieldExpr:
    if v != "t" and _VAR_RE.match(v) is None:
        raise ValueError(f"cannot differentiate with respect to {v!r}")
    return FieldExpr(_d(e.node, v))


@dataclass(frozen=True)
class LipschitzEstimate:
    """Sampled Lipschitz bound; ``certified`` is always False (sampling may under-estimate)."""

    value: float
    sampled_max: float
    safety: float
    samples: int
    certified: bool = False

    def __float__(self) -> float:
        return self.value


LIPSCHITZ_SAFETY = 1.1


def lipschitz_estimate(e: FieldExpr, domain, horizon: float, samples: int = 64) -> LipschitzEstimate:
    """Max of the space-time gradient norm over a closed sample grid, times 1.1."""
    axes = [np.linspace(0.0, ell, samples) for ell in domain.lengths]
    grads = [differentiate(e, f"x{i + 1}") for i in range(domain.dim)]
    grads.append(differentiate(e, "t"))
    if not e.depends_on_time:
        times = np.array([0.0])
    else:
        times = np.linspace(0.0, horizon, samples)
    mesh = np.meshgrid(*axes, indexing="ij", sparse=True)
    best = 0.0
    for t in times:
        sq = sum(g(mesh, t) ** 2 for g in grads)
        best = max(best, float(np.sqrt(np.max(sq))))
    return LipschitzEstimate(LIPSCHITZ_SAFETY * best, best, LIPSCHITZ_SAFETY, samples)
