"""Initial value problems in autonomous first-order form, and operator splits.

Every problem is normalised to ``dy_i/dx = f_i(y)``, ``y(0) = alpha``.  An
explicit independent variable is carried by a *clock* component ``y0`` with
``y0' = 1`` and ``y0(0) = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from . import expr as ex
from .expr import Expr

ExprLike = Union[Expr, str, float, int]


class ProblemError(ValueError):
    pass


@dataclass(frozen=True)
class IvpSystem:
    """Autonomous system ``y' = f(y)`` with ``y(0) = initial``.

    ``clock`` is the index of the component standing for the independent
    variable, if any.  ``shift`` is the original start point: the system's
    x = 0 corresponds to ``shift`` in the caller's coordinates.
    """

    variables: tuple[str, ...]
    rhs: tuple[Expr, ...]
    initial: tuple[float, ...]
    interval: tuple[float, float]
    label: str = ""
    clock: int | None = None
    shift: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "rhs", tuple(ex.as_expr(f) for f in self.rhs))
        object.__setattr__(self, "initial", tuple(float(a) for a in self.initial))
        lo, hi = (float(t) for t in self.interval)
        object.__setattr__(self, "interval", (lo, hi))
        if not (len(self.variables) == len(self.rhs) == len(self.initial)):
            raise ProblemError(
                f"{len(self.variables)} variables, {len(self.rhs)} equations and "
                f"{len(self.initial)} initial values do not match"
            )
        if len(set(self.variables)) != len(self.variables):
            raise ProblemError(f"duplicate variable names in {self.variables}")
        if not lo <= 0.0 <= hi:
            raise ProblemError(f"interval [{lo}, {hi}] must contain 0 after translation")
        known = set(self.variables)
        for name, f in zip(self.variables, self.rhs):
            unknown = ex.free_symbols(f) - known
            if unknown:
                raise ProblemError(f"equation for {name} uses undeclared symbols {sorted(unknown)}")
        if self.clock is not None and not 0 <= self.clock < len(self.variables):
            raise ProblemError("clock index out of range")

    @property
    def dim(self) -> int:
        return len(self.variables)

    @property
    def alpha(self) -> np.ndarray:
        return np.array(self.initial)

    @property
    def unknowns(self) -> list[int]:
        """Indices of the components that are genuine unknowns (not the clock)."""
        return [i for i in range(self.dim) if i != self.clock]

    def compiled_rhs(self) -> ex.Compiled:
        return ex.Compiled(self.rhs, self.variables)


def _fresh(name: str, taken: Sequence[str]) -> str:
    while name in taken:
        name += "_"
    return name


def autonomize(
    rhs: Sequence[ExprLike],
    initial: Sequence[float],
    interval: tuple[float, float],
    variables: Sequence[str] | None = None,
    x: str = "x",
    label: str = "",
    shift: float = 0.0,
) -> IvpSystem:
    """Append the clock ``y0 = x`` and replace ``x`` by it in every equation.

    The clock is placed first, so ``variables`` become ``(y0, y1, ..., yn)``.
    """
    rhs = [ex.as_expr(f) for f in rhs]
    if variables is None:
        variables = [f"y{i + 1}" for i in range(len(rhs))]
    clock = _fresh("y0", list(variables))
    sub = {x: ex.Var(clock)}
    return IvpSystem(
        variables=(clock, *variables),
        rhs=(ex.ONE, *(ex.substitute(f, sub) for f in rhs)),
        initial=(0.0, *initial),
        interval=interval,
        label=label,
        clock=0,
        shift=shift,
    )


def first_order(
    rhs: Sequence[ExprLike],
    initial: Sequence[float],
    interval: tuple[float, float],
    variables: Sequence[str] | None = None,
    x: str = "x",
    label: str = "",
    clock: bool | None = None,
) -> IvpSystem:
    """Build a system, autonomizing only when some equation mentions ``x``.

    Pass ``clock=True`` to force the clock component.
    """
    rhs = [ex.as_expr(f) for f in rhs]
    if variables is None:
        variables = [f"y{i + 1}" for i in range(len(rhs))]
    mentions_x = any(x in ex.free_symbols(f) for f in rhs)
    if clock or (clock is None and mentions_x):
        return autonomize(rhs, initial, interval, variables, x=x, label=label)
    if mentions_x:
        raise ProblemError(f"equations mention {x!r}; a clock component is required")
    return IvpSystem(tuple(variables), tuple(rhs), tuple(initial), interval, label)


def derivative_symbol(k: int, y: str = "y") -> str:
    """Name of the k-th derivative of ``y`` in high-order equations: y, dy, d2y, ..."""
    if k == 0:
        return y
    if k == 1:
        return f"d{y}"
    return f"d{k}{y}"


def reduce_order(
    order: int,
    rhs: ExprLike,
    initial: Sequence[float],
    interval: tuple[float, float],
    x: str = "x",
    y: str = "y",
    label: str = "",
    clock: bool = True,
) -> IvpSystem:
    """Rewrite ``y^(n) = f(x, y, y', ..., y^(n-1))`` as a first-order system.

    Derivatives are written ``y, dy, d2y, ...`` in ``rhs``.  The result uses
    ``y0 = x`` (unless ``clock=False`` and ``rhs`` does not mention x),
    ``y1 = y``, ``y2 = y'``, ..., ``yn = y^(n-1)``.
    """
    if order < 1:
        raise ProblemError("order must be at least 1")
    if len(initial) != order:
        raise ProblemError(f"order {order} needs {order} initial values, got {len(initial)}")
    f = ex.as_expr(rhs)
    names = [f"y{k + 1}" for k in range(order)]
    mapping = {derivative_symbol(k, y): ex.Var(names[k]) for k in range(order)}
    allowed = set(mapping) | {x}
    unknown = ex.free_symbols(f) - allowed
    if unknown:
        raise ProblemError(f"unknown symbols {sorted(unknown)} in order-{order} equation")
    chain = [ex.Var(names[k + 1]) for k in range(order - 1)]
    top = ex.substitute(f, mapping)
    if clock or x in ex.free_symbols(f):
        # substitute the derivative names first so x is left for autonomize
        return autonomize([*chain, top], initial, interval, names, x=x, label=label)
    return IvpSystem(tuple(names), (*chain, top), tuple(initial), interval, label)


def translate_origin(
    rhs: Sequence[ExprLike],
    initial: Sequence[float],
    x0: float,
    interval: tuple[float, float],
    variables: Sequence[str] | None = None,
    x: str = "x",
    label: str = "",
) -> IvpSystem:
    """Move the start point ``x0`` to the origin.

    ``interval`` is given in original coordinates.  Explicit occurrences of
    ``x`` become ``x + x0`` in the shifted variable (then the system is
    autonomized); the returned system records ``shift = x0``.
    """
    rhs = [ex.as_expr(f) for f in rhs]
    lo, hi = interval
    shifted = (lo - x0, hi - x0)
    if variables is None:
        variables = [f"y{i + 1}" for i in range(len(rhs))]
    if any(x in ex.free_symbols(f) for f in rhs):
        moved = [ex.substitute(f, {x: ex.add(ex.Var(x), ex.Const(x0))}) for f in rhs]
        return autonomize(moved, initial, shifted, variables, x=x, label=label, shift=x0)
    return IvpSystem(tuple(variables), tuple(rhs), tuple(initial), shifted, label, shift=x0)


# ---------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class OperatorSplit:
    """``f = g + h``: ``g`` drives the associated problem, ``h`` is left to the network."""

    g: tuple[Expr, ...]
    h: tuple[Expr, ...]
    parent: IvpSystem = field(repr=False)

    def __post_init__(self):
        n = self.parent.dim
        if len(self.g) != n or len(self.h) != n:
            raise ProblemError(f"split needs {n} components, got {len(self.g)} and {len(self.h)}")
        known = set(self.parent.variables)
        for gi in self.g:
            unknown = ex.free_symbols(gi) - known
            if unknown:
                raise ProblemError(f"split expression {ex.to_string(gi)!r} uses undeclared {sorted(unknown)}")

    @property
    def h_is_zero(self) -> bool:
        return all(isinstance(hi, ex.Const) and hi.value == 0 for hi in self.h)


Selector = Union[str, Sequence[ExprLike], Mapping[str, ExprLike]]


def split(system: IvpSystem, selector: Selector = "heuristic") -> OperatorSplit:
    """Split every right-hand side into ``g + h``.

    ``selector`` is ``"heuristic"``, ``"full"`` (g = f), a sequence with one
    g expression per equation, or a mapping from variable name to g (omitted
    equations keep g = f).  For explicit selectors ``h = f - g``.
    """
    if isinstance(selector, str):
        if selector == "heuristic":
            parts = [linear_part(f, system) for f in system.rhs]
            return OperatorSplit(tuple(p[0] for p in parts), tuple(p[1] for p in parts), system)
        if selector == "full":
            return OperatorSplit(system.rhs, tuple(ex.ZERO for _ in system.rhs), system)
        raise ProblemError(f"unknown split selector {selector!r}")
    if isinstance(selector, Mapping):
        unknown = set(selector) - set(system.variables)
        if unknown:
            raise ProblemError(f"split selector names unknown variables {sorted(unknown)}")
        g = [ex.as_expr(selector[v]) if v in selector else f
             for v, f in zip(system.variables, system.rhs)]
    else:
        g = [ex.as_expr(s) for s in selector]
        if len(g) != system.dim:
            raise ProblemError(f"split selector has {len(g)} entries, system has {system.dim}")
    h = [f if _is_zero(gi) else (ex.ZERO if gi == f else ex.sub(f, gi))
         for f, gi in zip(system.rhs, g)]
    return OperatorSplit(tuple(g), tuple(h), system)


def _is_zero(e: Expr) -> bool:
    return isinstance(e, ex.Const) and e.value == 0


def additive_terms(e: Expr, sign: int = 1) -> list[Expr]:
    """Top-level summands of ``e`` with negation pushed onto each term."""
    if isinstance(e, ex.Binary) and e.op in ("add", "sub"):
        right_sign = sign if e.op == "add" else -sign
        return additive_terms(e.left, sign) + additive_terms(e.right, right_sign)
    if isinstance(e, ex.Unary) and e.op == "neg":
        return additive_terms(e.arg, -sign)
    return [e if sign > 0 else ex.neg(e)]


def polynomial_degree(e: Expr, symbols: set[str]) -> float:
    """Total degree of ``e`` as a polynomial in ``symbols``; ``inf`` if not polynomial."""
    if isinstance(e, ex.Const):
        return 0
    if isinstance(e, ex.Var):
        return 1 if e.name in symbols else 0
    if isinstance(e, ex.Unary):
        d = polynomial_degree(e.arg, symbols)
        if e.op == "neg":
            return d
        return 0 if d == 0 else math.inf
    dl = polynomial_degree(e.left, symbols)
    dr = polynomial_degree(e.right, symbols)
    if e.op in ("add", "sub"):
        return max(dl, dr)
    if e.op == "mul":
        return dl + dr
    if e.op == "div":
        return dl if dr == 0 else math.inf
    # pow
    if dr != 0:
        return math.inf
    if dl == 0:
        return 0
    if isinstance(e.right, ex.Const) and e.right.value.is_integer() and e.right.value >= 0:
        return dl * e.right.value
    return math.inf


def linear_part(f: Expr, system: IvpSystem) -> tuple[Expr, Expr]:
    """Heuristic split of one right-hand side into (g, h).

    Terms of degree at most one in the unknowns go to g; terms in the clock
    alone are forcing and also go to g (the clock equation y0' = 1 is itself
    in g, so the associated system stays linear).  Everything else goes to h.
    """
    unknowns = {system.variables[i] for i in system.unknowns}
    g_terms, h_terms = [], []
    for t in additive_terms(f):
        (g_terms if polynomial_degree(t, unknowns) <= 1 else h_terms).append(t)
    return ex.total(g_terms), ex.total(h_terms)
