"""Coefficient expressions: a tiny one-variable grammar with exact derivatives.

Grammar::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | atom
    atom   := NUMBER | VAR | FUNC '(' expr ')' | '(' expr ')'
    FUNC   := sin | cos | tanh | exp

Evaluation is vectorised over numpy arrays.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "exp": np.exp,
}


class ExpressionError(ValueError):
    """Base class for parse and evaluation failures."""


class ParseError(ExpressionError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class EvaluationError(ExpressionError):
    pass


# --- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str = "x"


@dataclass(frozen=True)
class Neg:
    arg: "Expression"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expression"
    right: "Expression"


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Expression"


Expression = Num | Var | Neg | BinOp | Call

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


# --- parsing ---------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/()]))"
)


def _tokenize(source):
    tokens = []
    pos = 0
    while pos < len(source):
        if source[pos:].strip() == "":
            break
        m = _TOKEN.match(source, pos)
        if m is None or m.end() == pos:
            offset = pos + len(source[pos:]) - len(source[pos:].lstrip())
            raise ParseError(f"unexpected character {source[offset]!r}", offset)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, source, variable):
        self.tokens = _tokenize(source)
        self.i = 0
        self.variable = variable

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, offset = self.take()
        if text != value or kind != "op":
            found = text or "end of input"
            raise ParseError(f"expected {value!r}, found {found!r}", offset)

    def parse(self):
        node = self.expr()
        kind, text, offset = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {text!r}", offset)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Neg(self.unary())
        return self.atom()

    def atom(self):
        kind, text, offset = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text == self.variable:
                return Var(text)
            if text in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            raise ParseError(f"unknown identifier {text!r}", offset)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        raise ParseError(f"unexpected {text or 'end of input'!r}", offset)


def parse(source: str, variable: str = "x") -> Expression:
    """Parse ``source`` into an expression tree over one variable."""
    if variable in FUNCTIONS:
        raise ValueError(f"variable name {variable!r} clashes with a function")
    return _Parser(source, variable).parse()


# --- printing --------------------------------------------------------------

def _fmt_num(v):
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def to_source(e: Expression) -> str:
    """Render ``e`` so that ``parse(to_source(e)) == e``."""
    if isinstance(e, Num):
        s = _fmt_num(abs(e.value))
        # negative literals never come out of the parser; keep them atomic
        return f"(-{s})" if e.value < 0 or math.copysign(1.0, e.value) < 0 else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.func}({to_source(e.arg)})"
    if isinstance(e, Neg):
        inner = to_source(e.arg)
        if isinstance(e.arg, BinOp):
            inner = f"({inner})"
        return f"-{inner}"
    prec = _PRECEDENCE[e.op]
    left = to_source(e.left)
    if isinstance(e.left, BinOp) and _PRECEDENCE[e.left.op] < prec:
        left = f"({left})"
    right = to_source(e.right)
    # left-associative: equal precedence on the right needs parens
    if isinstance(e.right, BinOp) and _PRECEDENCE[e.right.op] <= prec:
        right = f"({right})"
    elif isinstance(e.right, Neg):
        right = f"({right})"
    return f"{left} {e.op} {right}"


# --- evaluation ------------------------------------------------------------

def evaluate(e: Expression, x):
    """Evaluate ``e`` at ``x`` (scalar or array). Division by zero raises."""
    x = np.asarray(x, dtype=float)
    out = _eval(e, x)
    out = np.broadcast_to(out, x.shape).astype(float, copy=True)
    return out if out.ndim else float(out)


def _eval(e, x):
    if isinstance(e, Num):
        return np.float64(e.value)
    if isinstance(e, Var):
        return x
    if isinstance(e, Neg):
        return -_eval(e.arg, x)
    if isinstance(e, Call):
        return FUNCTIONS[e.func](_eval(e.arg, x))
    a = _eval(e.left, x)
    b = _eval(e.right, x)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if np.any(np.asarray(b) == 0.0):
        raise EvaluationError(f"division by zero in {to_source(e)}")
    return a / b


# --- symbolic derivative ---------------------------------------------------

def _is(e, v):
    return isinstance(e, Num) and e.value == v


def _add(a, b):
    if _is(a, 0):
        return b
    if _is(b, 0):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a, b):
    if _is(b, 0):
        return a
    if _is(a, 0):
        return _neg(b)
    return BinOp("-", a, b)


def _mul(a, b):
    if _is(a, 0) or _is(b, 0):
        return Num(0.0)
    if _is(a, 1):
        return b
    if _is(b, 1):
        return a
    if isinstance(a, Num) and isinstance(b, Num):
        return Num(a.value * b.value)
    return BinOp("*", a, b)


def _div(a, b):
    if _is(a, 0):
        return Num(0.0)
    if _is(b, 1):
        return a
    return BinOp("/", a, b)


def _neg(a):
    if _is(a, 0):
        return Num(0.0)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def differentiate(e: Expression) -> Expression:
    """Exact derivative of ``e`` with respect to its variable."""
    if isinstance(e, Num):
        return Num(0.0)
    if isinstance(e, Var):
        return Num(1.0)
    if isinstance(e, Neg):
        return _neg(differentiate(e.arg))
    if isinstance(e, Call):
        u = e.arg
        du = differentiate(u)
        if e.func == "sin":
            outer = Call("cos", u)
        elif e.func == "cos":
            outer = Neg(Call("sin", u))
        elif e.func == "exp":
            outer = e
        else:  # tanh' = 1 - tanh^2
            outer = BinOp("-", Num(1.0), BinOp("*", e, e))
        return _mul(outer, du)
    da, db = differentiate(e.left), differentiate(e.right)
    if e.op == "+":
        return _add(da, db)
    if e.op == "-":
        return _sub(da, db)
    if e.op == "*":
        return _add(_mul(da, e.right), _mul(e.left, db))
    # quotient rule
    num = _sub(_mul(da, e.right), _mul(e.left, db))
    return _div(num, _mul(e.right, e.right))


# --- bound estimation ------------------------------------------------------

@dataclass(frozen=True)
class CoefficientProfile:
    """Grid-scan bounds of a coefficient and of its derivative.

    These are estimates on the scan grid, not certified global bounds.
    """

    expr: Expression
    derivative: Expression
    lower: float
    upper: float
    derivative_sup: float
    scan_range: tuple[float, float]
    scan_points: int
    grid_estimate: bool = field(default=True)

    @property
    def sup_abs(self):
        return max(abs(self.lower), abs(self.upper))

    def __call__(self, x):
        return evaluate(self.expr, x)

    def prime(self, x):
        return evaluate(self.derivative, x)


def profile(e: Expression, range_: tuple[float, float] = (-10.0, 10.0),
            points: int = 100_001) -> CoefficientProfile:
    lo, hi = float(range_[0]), float(range_[1])
    if points < 2:
        raise ValueError("profile needs at least 2 scan points")
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
        raise ValueError(f"bad scan range [{lo}, {hi}]")
    grid = np.linspace(lo, hi, points)
    de = differentiate(e)
    vals = evaluate(e, grid)
    dvals = evaluate(de, grid)
    return CoefficientProfile(
        expr=e,
        derivative=de,
        lower=float(vals.min()),
        upper=float(vals.max()),
        derivative_sup=float(np.abs(dvals).max()),
        scan_range=(lo, hi),
        scan_points=points,
    )
