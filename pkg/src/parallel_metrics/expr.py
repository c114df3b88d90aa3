"""Scalar coefficient expressions with exact second-order derivatives.

Expressions are parsed by a small Pratt parser into an immutable AST and
evaluated as :class:`Jet2` values (value, gradient, Hessian) by forward-mode
differentiation. Points may carry leading batch axes: a ``(..., n)`` array of
points yields jets whose fields have the same leading axes.

Grammar (see docs/formats.md)::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | "+" unary | power
    power   := atom (("^" | "**") unary)?        # right associative
    atom    := NUMBER | NAME | FUNC "(" expr ")" | "(" expr ")"
    FUNC    := exp | log | sin | cos | sqrt

The exponent of ``^`` must fold to a constant. Adding a function means adding
an entry to ``_UNARY`` (value, first and second derivative) and to
``FUNCTIONS``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DomainRestriction, EvalError, ExprSyntaxError

FUNCTIONS = ("exp", "log", "sin", "cos", "sqrt")
NAMED_CONSTANTS = {"pi": math.pi}


# -- AST ---------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int


@dataclass(frozen=True)
class Unary:
    op: str  # "neg" or one of FUNCTIONS
    arg: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str  # add, sub, mul, div, pow
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, Unary, Binary]


def variables(node: Expr) -> set[int]:
    if isinstance(node, Var):
        return {node.index}
    if isinstance(node, Const):
        return set()
    if isinstance(node, Unary):
        return variables(node.arg)
    return variables(node.left) | variables(node.right)


# -- tokenizer ---------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


@dataclass
class _Tok:
    kind: str  # num, name, op, end
    text: str
    pos: int  # character index


def _tokenize(text: str) -> list[_Tok]:
    toks = []
    pos = 0
    while True:
        while pos < len(text) and text[pos].isspace():
            pos += 1
        if pos == len(text):
            toks.append(_Tok("end", "", pos))
            return toks
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(
                f"unexpected character {text[pos]!r}", text, _byte_offset(text, pos)
            )
        kind = m.lastgroup
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


# -- parser ------------------------------------------------------------------

_BINARY = {"+": ("add", 10), "-": ("sub", 10), "*": ("mul", 20), "/": ("div", 20)}
_UNARY_BP = 30
_POW_BP = 40


class _Parser:
    def __init__(self, text: str, coord_names: Sequence[str]):
        self.text = text
        self.coords = {name: i for i, name in enumerate(coord_names)}
        self.toks = _tokenize(text)
        self.i = 0

    def error(self, message: str, tok: _Tok):
        raise ExprSyntaxError(message, self.text, _byte_offset(self.text, tok.pos))

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, text: str):
        if self.tok.text != text or self.tok.kind != "op":
            found = "end of input" if self.tok.kind == "end" else repr(self.tok.text)
            self.error(f"expected {text!r}, found {found}", self.tok)
        self.advance()

    def parse(self) -> Expr:
        node = self.expression(0)
        if self.tok.kind != "end":
            self.error(f"unexpected {self.tok.text!r}", self.tok)
        return node

    def expression(self, rbp: int) -> Expr:
        left = self.prefix()
        while True:
            t = self.tok
            if t.kind != "op":
                if t.kind == "end":
                    return left
                self.error(f"unexpected {t.text!r}", t)
            if t.text in ("^", "**"):
                if _POW_BP <= rbp:
                    return left
                self.advance()
                # right associative; the exponent may itself be signed
                exponent = self.expression(_UNARY_BP - 1)
                left = Binary("pow", left, _fold_exponent(exponent, self.text, t))
            elif t.text in _BINARY:
                op, bp = _BINARY[t.text]
                if bp <= rbp:
                    return left
                self.advance()
                left = Binary(op, left, self.expression(bp))
            else:
                return left

    def prefix(self) -> Expr:
        t = self.advance()
        if t.kind == "end":
            self.error("unexpected end of input", t)
        if t.kind == "num":
            return Const(float(t.text))
        if t.kind == "name":
            if t.text in FUNCTIONS and self.tok.text == "(":
                self.advance()
                arg = self.expression(0)
                self.expect(")")
                return Unary(t.text, arg)
            if t.text in self.coords:
                return Var(self.coords[t.text])
            if t.text in NAMED_CONSTANTS:
                return Const(NAMED_CONSTANTS[t.text])
            if t.text in FUNCTIONS:
                self.error(f"function {t.text!r} needs an argument in parentheses", t)
            self.error(f"unknown identifier {t.text!r}", t)
        if t.text == "(":
            node = self.expression(0)
            self.expect(")")
            return node
        if t.text == "-":
            return Unary("neg", self.expression(_UNARY_BP))
        if t.text == "+":
            return self.expression(_UNARY_BP)
        self.error(f"unexpected {t.text!r}", t)


def _fold_exponent(node: Expr, text: str, tok: _Tok) -> Const:
    if variables(node):
        raise DomainRestriction(
            f"exponent at byte {_byte_offset(text, tok.pos)} depends on a coordinate; "
            "rewrite f^g as exp(g*log(f))"
        )
    jet = eval_jet2(node, np.zeros(1))
    return Const(float(jet.value))


def parse(text: str, coord_names: Sequence[str]) -> Expr:
    """Parse ``text`` into an AST over the given coordinate names."""
    names = list(coord_names)
    if not names:
        raise ValueError("coord_names must be nonempty")
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate coordinate names in {names}")
    for name in names:
        if not re.fullmatch(r"[A-Za-z_][A-Za-z_0-9]*", name) or name in FUNCTIONS:
            raise ValueError(f"invalid coordinate name {name!r}")
    return _Parser(text, names).parse()


_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


def to_text(node: Expr, coord_names: Sequence[str]) -> str:
    """Fully parenthesised source text; ``parse(to_text(e)) == e``."""
    if isinstance(node, Const):
        if node.value < 0 or math.copysign(1.0, node.value) < 0:
            return f"(-{repr(-node.value)})"
        return repr(node.value)
    if isinstance(node, Var):
        return coord_names[node.index]
    if isinstance(node, Unary):
        inner = to_text(node.arg, coord_names)
        if node.op == "neg":
            return f"(-{inner})"
        return f"{node.op}({inner})"
    left = to_text(node.left, coord_names)
    right = to_text(node.right, coord_names)
    return f"({left} {_SYMBOL[node.op]} {right})"


# -- second-order jets -------------------------------------------------------

@dataclass(frozen=True)
class Jet2:
    """Value, gradient and Hessian of a scalar field at a point (or batch)."""

    value: np.ndarray  # (...)
    grad: np.ndarray  # (..., n)
    hess: np.ndarray  # (..., n, n)

    def __add__(self, other: "Jet2") -> "Jet2":
        return Jet2(self.value + other.value, self.grad + other.grad, self.hess + other.hess)

    def __sub__(self, other: "Jet2") -> "Jet2":
        return Jet2(self.value - other.value, self.grad - other.grad, self.hess - other.hess)

    def __neg__(self) -> "Jet2":
        return Jet2(-self.value, -self.grad, -self.hess)

    def __mul__(self, other: "Jet2") -> "Jet2":
        a, b = self.value[..., None], other.value[..., None]
        cross = _outer(self.grad, other.grad)
        hess = (
            a[..., None] * other.hess
            + b[..., None] * self.hess
            + (cross + np.swapaxes(cross, -1, -2))
        )
        return Jet2(self.value * other.value, a * other.grad + b * self.grad, hess)

    def apply(self, f0, f1, f2) -> "Jet2":
        """Chain rule for a scalar function with values f0, f1=f', f2=f''."""
        d1 = f1[..., None]
        return Jet2(
            f0,
            d1 * self.grad,
            d1[..., None] * self.hess + f2[..., None, None] * _outer(self.grad, self.grad),
        )


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., :, None] * b[..., None, :]


def _check_positive(x: np.ndarray, what: str):
    if np.any(x <= 0):
        raise EvalError(f"{what} of non-positive argument {float(np.min(x)):.6g}")


def _exp(x):
    e = np.exp(x)
    return e, e, e


def _log(x):
    _check_positive(x, "log")
    return np.log(x), 1.0 / x, -1.0 / (x * x)


def _sqrt(x):
    _check_positive(x, "sqrt")
    s = np.sqrt(x)
    return s, 0.5 / s, -0.25 / (s * x)


def _sin(x):
    s, c = np.sin(x), np.cos(x)
    return s, c, -s


def _cos(x):
    s, c = np.sin(x), np.cos(x)
    return c, -s, -c


_UNARY = {"exp": _exp, "log": _log, "sqrt": _sqrt, "sin": _sin, "cos": _cos}


def _reciprocal(x):
    if np.any(x == 0):
        raise EvalError("division by zero")
    r = 1.0 / x
    return r, -r * r, 2.0 * r * r * r


def _power(x, p: float):
    if p == 0:
        one = np.ones_like(x)
        return one, np.zeros_like(x), np.zeros_like(x)
    if float(p).is_integer():
        if p < 0 and np.any(x == 0):
            raise EvalError("division by zero in negative power")
    elif np.any(x <= 0):
        raise EvalError(f"non-integer power {p} of non-positive base")
    return x**p, p * x ** (p - 1), p * (p - 1) * x ** (p - 2)


def eval_jet2(node: Expr, point) -> Jet2:
    """Evaluate an expression and its first two derivatives at ``point``.

    ``point`` has shape ``(n,)`` or ``(..., n)``; the returned jet carries the
    same leading axes.
    """
    point = np.asarray(point, dtype=float)
    n = point.shape[-1]
    batch = point.shape[:-1]
    for idx in variables(node):
        if idx >= n:
            raise ValueError(f"variable index {idx} out of range for dimension {n}")
    eye = np.eye(n)
    zero_h = np.zeros(batch + (n, n))

    def const(c: float) -> Jet2:
        return Jet2(np.full(batch, c), np.zeros(batch + (n,)), zero_h)

    def walk(e: Expr) -> Jet2:
        if isinstance(e, Const):
            return const(e.value)
        if isinstance(e, Var):
            return Jet2(point[..., e.index].copy(), np.broadcast_to(eye[e.index], batch + (n,)).copy(), zero_h)
        if isinstance(e, Unary):
            a = walk(e.arg)
            if e.op == "neg":
                return -a
            return a.apply(*_UNARY[e.op](a.value))
        a = walk(e.left)
        if e.op == "pow":
            return a.apply(*_power(a.value, e.right.value))
        b = walk(e.right)
        if e.op == "add":
            return a + b
        if e.op == "sub":
            return a - b
        if e.op == "mul":
            return a * b
        return a * b.apply(*_reciprocal(b.value))

    return walk(node)
