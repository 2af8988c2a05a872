"""Scalar expression trees used for ODE right-hand sides.

Expressions are parsed from infix strings such as ``"cos(y0) + y1^2"``,
evaluated against a mapping of symbol values (floats or numpy arrays) and
differentiated symbolically.  Nodes are immutable.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom (('^' | '**') unary)?
    atom   := NUMBER | NAME | NAME '(' expr ')' | '(' expr ')'

The function set is closed: sin, cos, tan, exp, ln (alias log), sqrt.
New functions go in ``FUNCTIONS`` together with a derivative rule in
``_diff_unary``.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union

import numpy as np

Number = Union[float, np.ndarray]

FUNCTIONS: dict[str, Callable] = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "ln": np.log,
    "sqrt": np.sqrt,
}
_ALIASES = {"log": "ln"}


class ExprError(Exception):
    """Base class for expression errors."""


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        pointer = " " * position + "^"
        super().__init__(f"{message} at position {position} in {text!r}\n  {text}\n  {pointer}")


class UnboundSymbolError(ExprError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"unbound symbol {name!r}")


class ExprDomainError(ExprError):
    def __init__(self, message: str, node: "Expr"):
        self.node = node
        super().__init__(f"{message} in subexpression {to_string(node)!r}")


class Expr:
    """Base node.  Subclasses are frozen dataclasses."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_string(self)


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Unary(Expr):
    op: str  # 'neg' or a key of FUNCTIONS
    arg: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str  # 'add', 'sub', 'mul', 'div', 'pow'
    left: Expr
    right: Expr


ZERO = Const(0.0)
ONE = Const(1.0)

# ---------------------------------------------------------------------------
# parsing

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^()]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + (len(text[pos:]) - len(text[pos:].lstrip()))
            raise ExprSyntaxError(f"unexpected character {text[start]!r}", text, start)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def _error(self, message: str):
        raise ExprSyntaxError(message, self.text, self.tok[2])

    def _accept(self, *ops: str) -> str | None:
        kind, value, _ = self.tok
        if kind == "op" and value in ops:
            self.i += 1
            return value
        return None

    def parse(self) -> Expr:
        if self.tok[0] == "end":
            self._error("empty expression")
        node = self.expr()
        if self.tok[0] != "end":
            self._error(f"unexpected token {self.tok[1]!r}")
        return node

    def expr(self) -> Expr:
        node = self.term()
        while True:
            op = self._accept("+", "-")
            if op is None:
                return node
            node = Binary("add" if op == "+" else "sub", node, self.term())

    def term(self) -> Expr:
        node = self.unary()
        while True:
            op = self._accept("*", "/")
            if op is None:
                return node
            node = Binary("mul" if op == "*" else "div", node, self.unary())

    def unary(self) -> Expr:
        if self._accept("-"):
            return Unary("neg", self.unary())
        if self._accept("+"):
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self._accept("^", "**"):
            return Binary("pow", base, self.unary())
        return base

    def atom(self) -> Expr:
        kind, value, pos = self.tok
        if kind == "num":
            self.i += 1
            return Const(float(value))
        if kind == "name":
            self.i += 1
            if self._accept("("):
                fname = _ALIASES.get(value, value)
                if fname not in FUNCTIONS:
                    raise ExprSyntaxError(f"unknown function {value!r}", self.text, pos)
                arg = self.expr()
                if not self._accept(")"):
                    self._error("expected ')'")
                return Unary(fname, arg)
            return Var(value)
        if self._accept("("):
            node = self.expr()
            if not self._accept(")"):
                self._error("expected ')'")
            return node
        if kind == "end":
            self._error("unexpected end of expression")
        self._error(f"unexpected token {value!r}")


def parse(text: str) -> Expr:
    """Parse an infix expression string into an expression tree.

    Symbols are not checked here; unknown names surface when evaluating.
    """
    return _Parser(text).parse()


def as_expr(value: Union[Expr, str, float, int]) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, str):
        return parse(value)
    return Const(float(value))


# ---------------------------------------------------------------------------
# evaluation


def evaluate(e: Expr, bindings: Mapping[str, Number]) -> Number:
    """Evaluate ``e`` with symbol values from ``bindings``.

    Values may be floats or numpy arrays (elementwise evaluation).  Division
    by zero, ln of a non-positive number, sqrt of a negative number and
    non-integer powers of negative numbers raise :class:`ExprDomainError`.
    """
    with np.errstate(all="ignore"):
        return _eval(e, bindings)


def _eval(e: Expr, env: Mapping[str, Number]) -> Number:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundSymbolError(e.name) from None
    if isinstance(e, Unary):
        a = _eval(e.arg, env)
        if e.op == "neg":
            return -a
        if e.op == "ln" and np.any(np.asarray(a) <= 0):
            raise ExprDomainError("logarithm of non-positive value", e)
        if e.op == "sqrt" and np.any(np.asarray(a) < 0):
            raise ExprDomainError("square root of negative value", e)
        out = FUNCTIONS[e.op](a)
        return float(out) if np.ndim(out) == 0 else out
    a = _eval(e.left, env)
    b = _eval(e.right, env)
    op = e.op
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        if np.any(np.asarray(b) == 0):
            raise ExprDomainError("division by zero", e)
        return a / b
    # pow
    if isinstance(e.right, Const) and e.right.value.is_integer():
        k = int(e.right.value)
        if k == 0:
            return 1.0 + 0.0 * a
        if k < 0 and np.any(np.asarray(a) == 0):
            raise ExprDomainError("division by zero", e)
        return a**k if np.ndim(a) else float(a) ** k
    base = np.asarray(a)
    expo = np.asarray(b)
    if np.any((base < 0) & (expo != np.round(expo))):
        raise ExprDomainError("non-integer power of negative value", e)
    if np.any((base == 0) & (expo < 0)):
        raise ExprDomainError("division by zero", e)
    out = np.power(base, expo)
    return float(out) if np.ndim(out) == 0 else out


def free_symbols(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, Unary):
        return free_symbols(e.arg)
    return free_symbols(e.left) | free_symbols(e.right)


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (simultaneously)."""
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Const):
        return e
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.arg, mapping))
    return Binary(e.op, substitute(e.left, mapping), substitute(e.right, mapping))


# ---------------------------------------------------------------------------
# construction helpers with constant folding and 0/1 identities


def _c(e: Expr) -> float | None:
    return e.value if isinstance(e, Const) else None


def neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def add(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca + cb)
    if ca == 0:
        return b
    if cb == 0:
        return a
    return Binary("add", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca - cb)
    if cb == 0:
        return a
    if ca == 0:
        return neg(b)
    return Binary("sub", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca is not None and cb is not None:
        return Const(ca * cb)
    if ca == 0 or cb == 0:
        return ZERO
    if ca == 1:
        return b
    if cb == 1:
        return a
    if ca == -1:
        return neg(b)
    if cb == -1:
        return neg(a)
    return Binary("mul", a, b)


def div(a: Expr, b: Expr) -> Expr:
    ca, cb = _c(a), _c(b)
    if ca == 0 and cb != 0:
        return ZERO
    if cb == 1:
        return a
    if ca is not None and cb is not None and cb != 0:
        return Const(ca / cb)
    return Binary("div", a, b)


def power(a: Expr, b: Expr) -> Expr:
    cb = _c(b)
    if cb == 0:
        return ONE
    if cb == 1:
        return a
    if _c(a) is not None and cb is not None:
        try:
            return Const(math.pow(_c(a), cb))
        except (ValueError, OverflowError):
            pass
    return Binary("pow", a, b)


def func(name: str, a: Expr) -> Expr:
    return Unary(name, a)


def total(terms: Iterable[Expr]) -> Expr:
    """Sum of ``terms``; negated terms are folded into subtractions."""
    out: Expr | None = None
    for t in terms:
        if out is None:
            out = t
        elif isinstance(t, Unary) and t.op == "neg":
            out = sub(out, t.arg)
        else:
            out = add(out, t)
    return ZERO if out is None else out


# ---------------------------------------------------------------------------
# differentiation


def diff(e: Expr, symbol: str) -> Expr:
    """Symbolic partial derivative of ``e`` with respect to ``symbol``.

    The result is only lightly simplified (constant folding, 0/1 rules).
    """
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == symbol else ZERO
    if isinstance(e, Unary):
        da = diff(e.arg, symbol)
        if e.op == "neg":
            return neg(da)
        if _c(da) == 0:
            return ZERO
        return mul(_diff_unary(e.op, e.arg, e), da)
    u, v = e.left, e.right
    du, dv = diff(u, symbol), diff(v, symbol)
    op = e.op
    if op == "add":
        return add(du, dv)
    if op == "sub":
        return sub(du, dv)
    if op == "mul":
        return add(mul(du, v), mul(u, dv))
    if op == "div":
        if _c(dv) == 0:
            return div(du, v)
        return div(sub(mul(du, v), mul(u, dv)), power(v, Const(2.0)))
    # pow
    if _c(dv) == 0:
        if _c(du) == 0:
            return ZERO
        # d(u^v) = v u^(v-1) u'   (v independent of symbol)
        return mul(mul(v, power(u, sub(v, ONE))), du)
    if _c(du) == 0:
        return mul(mul(e, func("ln", u)), dv)
    return mul(e, add(mul(dv, func("ln", u)), div(mul(v, du), u)))


def _diff_unary(op: str, a: Expr, node: Expr) -> Expr:
    if op == "sin":
        return func("cos", a)
    if op == "cos":
        return neg(func("sin", a))
    if op == "tan":
        return add(ONE, power(func("tan", a), Const(2.0)))
    if op == "exp":
        return node
    if op == "ln":
        return div(ONE, a)
    if op == "sqrt":
        return div(Const(0.5), node)
    raise ExprError(f"no derivative rule for {op!r}")


# ---------------------------------------------------------------------------
# printing

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_SYM = {"add": "+", "sub": "-", "mul": "*", "div": "/", "pow": "^"}


def _fmt_number(x: float) -> str:
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def _is_atom(e: Expr) -> bool:
    if isinstance(e, Const):
        return e.value >= 0 and not math.copysign(1.0, e.value) < 0
    return isinstance(e, Var) or (isinstance(e, Unary) and e.op != "neg")


def to_string(e: Expr) -> str:
    """Render ``e`` so that ``parse(to_string(e))`` has the same tree shape."""
    if isinstance(e, Const):
        s = _fmt_number(abs(e.value)) if math.isfinite(e.value) else repr(e.value)
        return f"(-{s})" if math.copysign(1.0, e.value) < 0 else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = to_string(e.arg)
            if not (_is_atom(e.arg) or (isinstance(e.arg, Binary) and e.arg.op == "pow")):
                inner = f"({inner})"
            return f"-{inner}"
        return f"{e.op}({to_string(e.arg)})"
    p = _PREC[e.op]
    left = to_string(e.left)
    right = to_string(e.right)
    if e.op == "pow":
        if not _is_atom(e.left):
            left = f"({left})"
        if not _is_atom(e.right):
            right = f"({right})"
        return f"{left}^{right}"
    if _prec_of(e.left) < p:
        left = f"({left})"
    # left-associative: a right operand of equal precedence needs parentheses
    if _prec_of(e.right) <= p:
        right = f"({right})"
    return f"{left} {_SYM[e.op]} {right}"


def _prec_of(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    return 10


# ---------------------------------------------------------------------------
# compilation for hot loops

_PY_FUNC = {"sin": "sin", "cos": "cos", "tan": "tan", "exp": "exp", "ln": "log", "sqrt": "sqrt"}


def to_python(e: Expr, names: Mapping[str, str], scalar: bool = False) -> str:
    """Python source for ``e``; ``names`` maps symbols to source fragments.

    The source expects ``sin, cos, tan, exp, log, sqrt`` (and ``power``
    unless ``scalar``) in its namespace.
    """
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        try:
            return names[e.name]
        except KeyError:
            raise UnboundSymbolError(e.name) from None
    if isinstance(e, Unary):
        a = to_python(e.arg, names, scalar)
        if e.op == "neg":
            return f"(-{a})"
        return f"{_PY_FUNC[e.op]}({a})"
    a = to_python(e.left, names, scalar)
    b = to_python(e.right, names, scalar)
    if e.op == "pow":
        if isinstance(e.right, Const) and e.right.value.is_integer():
            k = int(e.right.value)
            return f"(1.0 + 0.0*{a})" if k == 0 else f"({a}**{k})"
        return f"({a} ** {b})" if scalar else f"power({a}, {b})"
    return f"({a} {_SYM[e.op]} {b})"


class Compiled:
    """Vectorised evaluator for a list of expressions over ordered variables.

    ``Compiled(exprs, variables)(Y)`` takes ``Y`` of shape (..., len(variables))
    and returns shape (..., len(exprs)).  Non-finite results are re-evaluated
    with :func:`evaluate` so a domain error names the offending subexpression.
    """

    def __init__(self, exprs: Iterable[Expr], variables: Iterable[str]):
        self.exprs = tuple(exprs)
        self.variables = tuple(variables)
        names = {v: f"_a{i}" for i, v in enumerate(self.variables)}
        body = ", ".join(to_python(e, names) for e in self.exprs)
        args = ", ".join(names[v] for v in self.variables)
        src = f"lambda {args}: ({body},)"
        ns = {"sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
              "log": np.log, "sqrt": np.sqrt, "power": np.power}
        self._fn = eval(src, ns)  # noqa: S307 - source built from our own AST

    def __call__(self, Y):
        Y = np.asarray(Y, dtype=float)
        with np.errstate(all="ignore"):
            cols = self._fn(*np.moveaxis(Y, -1, 0))
        out = np.empty(Y.shape[:-1] + (len(cols),))
        for i, col in enumerate(cols):
            out[..., i] = col
        if not np.isfinite(out).all():
            self._diagnose(Y)
        return out

    def _diagnose(self, Y):
        cols = np.moveaxis(Y, -1, 0)
        env = dict(zip(self.variables, cols))
        for e in self.exprs:
            evaluate(e, env)  # raises ExprDomainError when the cause is a domain fault
        raise ExprDomainError("non-finite value", self.exprs[0] if len(self.exprs) == 1
                              else Var(",".join(self.variables)))
