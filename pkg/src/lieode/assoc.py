"""The associated problem ``ybar' = g(ybar)``, ``ybar(0) = alpha``.

Its solution is the parameter-free first part of the trial solution.  It is
obtained either from a registered closed form or from fixed-step RK4 with
cubic Hermite dense output, integrated forwards and backwards from x = 0.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import expr as ex
from .problem import OperatorSplit

log = logging.getLogger(__name__)

# evaluators accept x of shape (K,) and return (K, n)
Evaluator = Callable[[np.ndarray], np.ndarray]


class AssocError(RuntimeError):
    pass


class NoClosedForm(AssocError):
    pass


class IntegrationDomainError(AssocError):
    def __init__(self, x: float, cause: Exception):
        self.x = x
        super().__init__(f"integration failed at x = {x!r}: {cause}")


@dataclass(frozen=True)
class AssociatedSolution:
    """First part ``ybar(x)`` of the trial solution and its x-derivative.

    ``source`` is ``"closed-form"``, ``"numeric"`` or ``"baseline"``.  For the
    first two, ``derivative(x)`` equals ``g(ybar(x))``.
    """

    source: str
    value_fn: Evaluator = field(repr=False)
    derivative_fn: Evaluator = field(repr=False)
    interval: tuple[float, float]
    alpha: np.ndarray = field(repr=False)
    accuracy: float | None = None
    label: str = ""

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = self.value_fn(np.atleast_1d(x))
        return out[0] if x.ndim == 0 else out

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        out = self.derivative_fn(np.atleast_1d(x))
        return out[0] if x.ndim == 0 else out


# ---------------------------------------------------------------------------
# RK4 with Hermite dense output


def rk4_path(f: Callable[[np.ndarray], np.ndarray], y0, x_end: float, h_max: float):
    """Fixed-step RK4 from 0 to ``x_end`` (either sign).

    Returns nodes ``xs`` (starting at 0), states ``ys`` and slopes ``f(ys)``.
    The step is ``x_end / ceil(|x_end| / h_max)`` so the last node is exact.
    """
    y = np.array(y0, dtype=float)
    if x_end == 0:
        return np.zeros(1), y[None, :], f(y[None, :])
    steps = max(1, math.ceil(abs(x_end) / h_max - 1e-9))
    h = x_end / steps
    xs = np.arange(steps + 1) * h
    xs[-1] = x_end
    ys = np.empty((steps + 1, y.size))
    ks = np.empty_like(ys)
    ys[0] = y
    x = 0.0
    try:
        for i in range(steps):
            x = xs[i]
            k1 = f(y[None, :])[0]
            ks[i] = k1
            k2 = f((y + 0.5 * h * k1)[None, :])[0]
            k3 = f((y + 0.5 * h * k2)[None, :])[0]
            k4 = f((y + h * k3)[None, :])[0]
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            ys[i + 1] = y
        x = xs[-1]
        ks[-1] = f(y[None, :])[0]
    except (ex.ExprError, FloatingPointError) as err:
        raise IntegrationDomainError(float(x), err) from err
    return xs, ys, ks


class HermiteDense:
    """Piecewise cubic Hermite interpolant through nodes with known slopes."""

    def __init__(self, xs: np.ndarray, ys: np.ndarray, ks: np.ndarray):
        order = np.argsort(xs, kind="stable")
        self.xs = xs[order]
        self.ys = ys[order]
        self.ks = ks[order]

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        lo, hi = self.xs[0], self.xs[-1]
        if np.any((x < lo - 1e-12) | (x > hi + 1e-12)):
            raise AssocError(f"x outside dense-output range [{lo}, {hi}]")
        i = np.clip(np.searchsorted(self.xs, x, side="right") - 1, 0, len(self.xs) - 2)
        h = self.xs[i + 1] - self.xs[i]
        s = ((x - self.xs[i]) / h)[:, None]
        return i, h[:, None], s

    def __call__(self, x):
        if len(self.xs) == 1:
            return np.repeat(self.ys, np.size(x), axis=0)
        i, h, s = self._locate(x)
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        y = h00 * self.ys[i] + h10 * h * self.ks[i] + h01 * self.ys[i + 1] + h11 * h * self.ks[i + 1]
        # return nodes exactly (keeps ybar(0) = alpha bit-for-bit)
        at_left = s[:, 0] == 0
        y[at_left] = self.ys[i[at_left]]
        return y


def integrate(f, y0, interval: tuple[float, float], h_max: float) -> HermiteDense:
    """RK4 forwards to interval[1] and backwards to interval[0], both from x = 0."""
    lo, hi = interval
    xf, yf, kf = rk4_path(f, y0, hi, h_max)
    xb, yb, kb = rk4_path(f, y0, lo, h_max)
    xs = np.concatenate([xb[:0:-1], xf])
    ys = np.concatenate([yb[:0:-1], yf])
    ks = np.concatenate([kb[:0:-1], kf])
    return HermiteDense(xs, ys, ks)


def _g_derivative(split: OperatorSplit, value_fn: Evaluator) -> Evaluator:
    g = ex.Compiled(split.g, split.parent.variables)
    return lambda x: g(value_fn(x))


def solve_numeric(
    split: OperatorSplit,
    interval: tuple[float, float] | None = None,
    extension: float = 0.5,
    steps: int = 1000,
    estimate_error: bool = True,
) -> AssociatedSolution:
    """Integrate the associated problem with RK4 and Hermite dense output.

    ``interval`` defaults to the parent's training interval; it is widened by
    ``extension`` times its length on each side so extrapolated points are
    covered.  The step is at most (training length) / ``steps``.
    ``accuracy`` is the largest node difference against a half-step run.
    """
    system = split.parent
    lo, hi = interval if interval is not None else system.interval
    length = hi - lo
    if length <= 0:
        raise AssocError("empty interval")
    span = (lo - extension * length, hi + extension * length)
    g = ex.Compiled(split.g, system.variables)
    h_max = length / steps
    dense = integrate(g, system.alpha, span, h_max)
    accuracy = None
    if estimate_error:
        fine = integrate(g, system.alpha, span, h_max / 2)
        accuracy = float(np.max(np.abs(fine(dense.xs) - dense.ys)))
    return AssociatedSolution(
        source="numeric",
        value_fn=dense,
        derivative_fn=lambda x: g(dense(x)),
        interval=span,
        alpha=system.alpha,
        accuracy=accuracy,
        label=system.label,
    )


# ---------------------------------------------------------------------------
# closed forms

ClosedFormFactory = Callable[..., Evaluator]
CLOSED_FORMS: dict[str, ClosedFormFactory] = {}


def register(key: str):
    def deco(factory: ClosedFormFactory) -> ClosedFormFactory:
        CLOSED_FORMS[key] = factory
        return factory
    return deco


def _need(split: OperatorSplit, variables: tuple[str, ...], alpha=None):
    if split.parent.variables != variables:
        raise NoClosedForm(f"closed form expects variables {variables}, got {split.parent.variables}")
    if alpha is not None and not np.allclose(split.parent.alpha, alpha, rtol=0, atol=0):
        raise NoClosedForm(f"closed form expects initial values {alpha}")


@register("example1")
def _example1(split: OperatorSplit, **_) -> Evaluator:
    _need(split, ("y0", "y1", "y2"), (0.0, 0.0, 1.0))

    def fn(x):
        s, c = np.sin(x), np.cos(x)
        y1 = x * x * s + x / 2 - 4 * s + np.sin(2 * x) / 4 + 4 * x * c
        y2 = 2 + x * x + x * x * c - 2 * x * s - c
        return np.stack([x, y1, y2], axis=-1)

    return fn


@register("example2")
def _example2(split: OperatorSplit, eps: float = 0.2, **_) -> Evaluator:
    """Damped linear oscillator y'' + 2 eps y' + y = 0, with the clock first."""
    _need(split, ("y0", "y1", "y2"))
    a, b = split.parent.initial[1], split.parent.initial[2]
    if not 0 < eps < 1:
        raise NoClosedForm("closed form needs 0 < eps < 1")
    sigma = math.sqrt(1 - eps * eps)

    def fn(t):
        decay = np.exp(-eps * t)
        st, ct = np.sin(sigma * t), np.cos(sigma * t)
        y1 = decay * ((a * eps + b) * st + a * sigma * ct) / sigma
        y2 = decay * (b * ct - (a + b * eps) / sigma * st)
        return np.stack([t, y1, y2], axis=-1)

    return fn


@register("example3")
def _example3(split: OperatorSplit, **_) -> Evaluator:
    """Harmonic rotation y1' = y2, y2' = -y1."""
    _need(split, ("y1", "y2"))
    a, b = split.parent.initial

    def fn(t):
        c, s = np.cos(t), np.sin(t)
        return np.stack([a * c + b * s, -a * s + b * c], axis=-1)

    return fn


def solve_closed_form(
    split: OperatorSplit,
    key: str,
    params: dict | None = None,
    validate: bool = True,
    tol: float = 1e-6,
) -> AssociatedSolution:
    """Associated solution from the registered closed form ``key``.

    With ``validate`` the formula is compared against the RK4 solution over
    the widened interval; on disagreement above ``tol`` the numeric solution
    is returned instead (and a warning logged).
    """
    if key not in CLOSED_FORMS:
        raise NoClosedForm(f"no closed form registered under {key!r}")
    fn = CLOSED_FORMS[key](split, **(params or {}))
    system = split.parent
    lo, hi = system.interval
    length = hi - lo
    closed = AssociatedSolution(
        source="closed-form",
        value_fn=fn,
        derivative_fn=_g_derivative(split, fn),
        interval=(lo - 0.5 * length, hi + 0.5 * length),
        alpha=system.alpha,
        label=system.label,
    )
    if validate:
        numeric = solve_numeric(split, estimate_error=False)
        gap = sup_distance(closed, numeric)
        if gap > tol:
            log.warning("closed form %r disagrees with RK4 by %.3g; using RK4", key, gap)
            return numeric
    return closed


def sup_distance(a: AssociatedSolution, b: AssociatedSolution, interval=None, points: int = 2001) -> float:
    lo = max(a.interval[0], b.interval[0])
    hi = min(a.interval[1], b.interval[1])
    if interval is not None:
        lo, hi = interval
    x = np.linspace(lo, hi, points)
    return float(np.max(np.abs(a.value(x) - b.value(x))))


def solve(split: OperatorSplit, key: str | None = None, params: dict | None = None) -> AssociatedSolution:
    """Closed form when ``key`` names a registered form that applies, else RK4."""
    if key:
        try:
            return solve_closed_form(split, key, params)
        except NoClosedForm as err:
            log.info("falling back to RK4: %s", err)
    return solve_numeric(split)


# ---------------------------------------------------------------------------
# baseline first parts (not solutions of an associated problem)


def from_expressions(
    exprs: list[ex.Expr], alpha, interval: tuple[float, float], x: str = "x", label: str = ""
) -> AssociatedSolution:
    """First part given by explicit functions of x, e.g. constants or polynomials.

    Raises if the functions do not reproduce ``alpha`` at x = 0.
    """
    alpha = np.asarray(alpha, dtype=float)
    for e in exprs:
        unknown = ex.free_symbols(e) - {x}
        if unknown:
            raise AssocError(f"first part {ex.to_string(e)!r} uses symbols {sorted(unknown)}")
    value = ex.Compiled(exprs, [x])
    slope = ex.Compiled([ex.diff(e, x) for e in exprs], [x])
    at0 = value(np.zeros((1, 1)))[0]
    if not np.array_equal(at0, alpha):
        raise AssocError(f"first part gives {at0.tolist()} at x = 0, expected {alpha.tolist()}")
    return AssociatedSolution(
        source="baseline",
        value_fn=lambda t: value(t[:, None]),
        derivative_fn=lambda t: slope(t[:, None]),
        interval=(-math.inf, math.inf),
        alpha=alpha,
        label=label,
    )
