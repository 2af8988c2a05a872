"""Trial solution ``yhat(x) = ybar(x) + x * N(x; theta)`` and its training.

The collocation loss is

    L(theta) = (1/K) sum_k sum_i r_ik^2,
    r_ik = ybar_i'(x_k) + N_i(x_k) + x_k N_i'(x_k) - f_i(yhat(x_k)),

where ``ybar'`` equals ``g(ybar)`` for an associated solution.  ``ybar`` and
its slope do not depend on theta and are cached per grid.  The clock
component (if any) carries no network output: ``yhat_0 = ybar_0 = x``.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from . import kernels, net
from .assoc import AssociatedSolution, rk4_path
from .net import MlpParams
from .problem import IvpSystem, OperatorSplit

log = logging.getLogger(__name__)

MAX_EXTRAPOLATION = 0.5


class TrainError(RuntimeError):
    pass


class DivergenceError(TrainError):
    def __init__(self, message: str, trajectory: list[float]):
        self.trajectory = trajectory
        super().__init__(message)


@dataclass(frozen=True)
class TrialSolution:
    assoc: AssociatedSolution
    params: MlpParams
    split: OperatorSplit

    def __post_init__(self):
        if self.params.n != len(self.split.parent.unknowns):
            raise TrainError(
                f"network has {self.params.n} outputs, problem has "
                f"{len(self.split.parent.unknowns)} unknowns"
            )

    @property
    def system(self) -> IvpSystem:
        return self.split.parent

    def with_params(self, params: MlpParams) -> "TrialSolution":
        return replace(self, params=params)


def new_trial(assoc: AssociatedSolution, split: OperatorSplit, m: int = 3, seed: int = 0,
              zero: bool = False) -> TrialSolution:
    n = len(split.parent.unknowns)
    params = net.MlpParams.zeros(m, n) if zero else net.init(m, n, seed)
    return TrialSolution(assoc, params, split)


def check_domain(t: TrialSolution, x) -> np.ndarray:
    """Boolean mask of points beyond the training interval (extrapolation).

    Points more than 50% of the interval length outside it are rejected.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lo, hi = t.system.interval
    ext = MAX_EXTRAPOLATION * (hi - lo)
    tol = 1e-12 * max(1.0, abs(lo), abs(hi))
    if np.any((x < lo - ext - tol) | (x > hi + ext + tol)):
        raise TrainError(f"x outside [{lo - ext}, {hi + ext}] (training interval plus 50%)")
    return (x < lo - tol) | (x > hi + tol)


def _scatter(t: TrialSolution, out: np.ndarray) -> np.ndarray:
    """Place network outputs (K, n_out, ...) into full-system slots (K, n, ...)."""
    full = np.zeros((out.shape[0], t.system.dim) + out.shape[2:])
    full[:, t.system.unknowns] = out
    return full


def trial_eval(t: TrialSolution, x):
    """Return ``(yhat, dyhat/dx)`` at x (scalar or array of shape (K,))."""
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    check_domain(t, xs)
    ybar = t.assoc.value(xs)
    dybar = t.assoc.derivative(xs)
    N = _scatter(t, net.forward(t.params, xs))
    dN = _scatter(t, net.dforward_dx(t.params, xs))
    X = xs[:, None]
    y = ybar + X * N
    dy = dybar + N + X * dN
    if scalar:
        return y[0], dy[0]
    return y, dy


@dataclass(frozen=True)
class Boundary:
    """Extra point value ``yhat[component](point) = value`` enforced by a penalty."""

    point: float
    component: int
    value: float
    weight: float = 1.0


class Collocation:
    """Loss and gradient on a fixed grid, with theta-independent parts cached."""

    def __init__(self, t: TrialSolution, grid, boundary: Boundary | None = None):
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise TrainError("collocation grid must be a non-empty 1-d array")
        check_domain(t, grid)
        self.grid = grid
        self.split = t.split
        self.system = t.system
        self.assoc = t.assoc
        self.m = t.params.m
        self.n_out = t.params.n
        self.ybar = t.assoc.value(grid)
        self.dybar = t.assoc.derivative(grid)
        system = self.system
        self.f = ex.Compiled(system.rhs, system.variables)
        self.unknowns = system.unknowns
        # d f_i / d y_j for the network-carrying components only
        self.jac = ex.Compiled(
            [ex.diff(fi, system.variables[j]) for fi in system.rhs for j in self.unknowns],
            system.variables,
        )
        self.boundary = boundary
        if boundary is not None:
            if boundary.component not in self.unknowns:
                raise TrainError("boundary component must be an unknown, not the clock")
            self._b_ybar = float(t.assoc.value(np.array([boundary.point]))[0, boundary.component])
            self._b_slot = self.unknowns.index(boundary.component)

    def residuals(self, p: MlpParams) -> np.ndarray:
        """Residual matrix r (K, n)."""
        x = self.grid[:, None]
        N = self._full(net.forward(p, self.grid))
        dN = self._full(net.dforward_dx(p, self.grid))
        y = self.ybar + x * N
        return self.dybar + N + x * dN - self.f(y)

    def _full(self, a):
        out = np.zeros((a.shape[0], self.system.dim) + a.shape[2:])
        out[:, self.unknowns] = a
        return out

    def _penalty(self, p: MlpParams):
        b = self.boundary
        Nb, _, JNb, _ = net.gradients(p, b.point)
        gap = self._b_ybar + b.point * Nb[self._b_slot] - b.value
        return b.weight * gap * gap, 2 * b.weight * gap * b.point * JNb[self._b_slot]

    def loss(self, p: MlpParams) -> float:
        r = self.residuals(p)
        value = float(np.sum(r * r) / len(self.grid))
        if self.boundary is not None:
            value += self._penalty(p)[0]
        return value

    def loss_and_gradient(self, p: MlpParams) -> tuple[float, np.ndarray]:
        x = self.grid
        K = len(x)
        N, dN, JN, JdN = net.gradients(p, x)
        X = x[:, None]
        y = self.ybar + X * self._full(N)
        r = self.dybar + self._full(N) + X * self._full(dN) - self.f(y)
        # dr_i/dtheta = JN_i + x JdN_i - sum_j df_i/dy_j * x * JN_j   (j over unknowns)
        Jf = self.jac(y).reshape(K, self.system.dim, self.n_out)
        XX = x[:, None, None]
        dr = self._full(JN + XX * JdN) - XX * np.einsum("kij,kjp->kip", Jf, JN)
        value = float(np.sum(r * r) / K)
        grad = (2.0 / K) * np.einsum("ki,kip->p", r, dr)
        if self.boundary is not None:
            pv, pg = self._penalty(p)
            value += pv
            grad = grad + pg
        return value, grad


def loss(t: TrialSolution, grid, boundary: Boundary | None = None) -> float:
    return Collocation(t, grid, boundary).loss(t.params)


def loss_gradient(t: TrialSolution, grid, boundary: Boundary | None = None) -> np.ndarray:
    return Collocation(t, grid, boundary).loss_and_gradient(t.params)[1]


def residuals(t: TrialSolution, grid) -> np.ndarray:
    return Collocation(t, grid).residuals(t.params)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    """Training settings.

    ``restarts > 1`` trains ``restarts`` initialisations (the trial's own
    parameters, then seeds ``seed + 1``, ``seed + 2``, ...) for ``warmup``
    iterations each (at most ``max_iter``) and continues only the one with
    the lowest loss.
    """

    points: int = 21
    interval: tuple[float, float] | None = None  # defaults to the system's
    eta: float = 0.1
    max_iter: int = 50_000
    target: float = 1e-9
    optimizer: str = "gd"  # 'gd' (safeguarded) or 'adam'
    seed: int = 0
    boundary: Boundary | None = None
    restarts: int = 1
    warmup: int = 0
    backend: str = "compiled"  # 'compiled' (numba) or 'numpy'

    def __post_init__(self):
        if self.points < 2:
            raise ValueError("need at least 2 collocation points")
        if not self.eta > 0:
            raise ValueError("learning rate must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.restarts > 1 and self.warmup < 1:
            raise ValueError("restarts need a positive warmup")
        if self.backend not in ("compiled", "numpy"):
            raise ValueError(f"unknown backend {self.backend!r}")

    def grid(self, system: IvpSystem) -> np.ndarray:
        lo, hi = self.interval if self.interval is not None else system.interval
        return np.linspace(lo, hi, self.points)


@dataclass
class TrainReport:
    trajectory: np.ndarray
    params: MlpParams
    final_loss: float
    residuals: np.ndarray
    grid: np.ndarray
    iterations: int
    converged: bool
    wall_time: float
    eta_final: float
    start: int = 0
    start_losses: list[float] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)


def _numpy_loss_grad(col: Collocation, m: int, n: int):
    def loss_grad(th, grad):
        try:
            value, g = col.loss_and_gradient(MlpParams._from_flat(th, m, n))
        except (ValueError, ex.ExprError):
            return math.nan
        grad[:] = g
        return value
    return loss_grad


class _Run:
    """Mutable optimiser state for one initialisation."""

    def __init__(self, theta: np.ndarray, loss_grad, cfg: TrainConfig, length: int):
        self.th = theta.copy()
        self.grad = np.zeros_like(self.th)
        self.loss = loss_grad(self.th, self.grad)
        self.m1 = np.zeros_like(self.th)
        self.m2 = np.zeros_like(self.th)
        self.best = self.th.copy()
        self.best_loss = self.loss
        self.step = 0
        self.eta = cfg.eta
        self.done = 0
        self.status = kernels.OK
        self.traj = np.empty(length + 1)
        self.traj[0] = self.loss

    def advance(self, loss_grad, cfg: TrainConfig, iters: int, compiled: bool):
        if iters <= 0 or self.status != kernels.OK:
            return
        if self.traj.size < self.done + iters + 1:
            grown = np.empty(self.done + iters + 1)
            grown[: self.done + 1] = self.traj[: self.done + 1]
            self.traj = grown
        if cfg.optimizer == "adam":
            loop = kernels.adam_loop_jit if compiled else kernels.adam_loop
            self.loss, done, self.status, self.step, self.best_loss = loop(
                loss_grad, self.th, self.m1, self.m2, self.step, self.loss, self.grad,
                self.eta, iters, cfg.target, self.traj, self.done, self.best, self.best_loss)
        else:
            loop = kernels.gd_loop_jit if compiled else kernels.gd_loop
            self.loss, done, self.status, self.eta = loop(
                loss_grad, self.th, self.loss, self.grad, self.eta, iters, cfg.target,
                self.traj, self.done, np.empty_like(self.th), np.empty_like(self.th))
            self.best[:] = self.th
            self.best_loss = self.loss
        self.done += done

    @property
    def trajectory(self) -> np.ndarray:
        return self.traj[: self.done + 1]


def train(t: TrialSolution, cfg: TrainConfig = TrainConfig()) -> tuple[TrialSolution, TrainReport]:
    """Minimise the collocation loss; returns the trained trial and a report.

    ``trajectory[0]`` is the initial loss and ``trajectory[k]`` the loss after
    iteration k.  Plain gradient descent rejects any step that does not lower
    the loss and halves the learning rate instead, so its trajectory never
    increases.  Adam uses beta1 = 0.9, beta2 = 0.999, eps = 1e-8 and returns
    the lowest-loss iterate it visited, which need not be the last one.
    """
    start = time.perf_counter()
    grid = cfg.grid(t.system)
    col = Collocation(t, grid, cfg.boundary)
    m, n = t.params.m, t.params.n
    compiled = cfg.backend == "compiled"
    if compiled:
        from .kernels import compiled_loss_grad

        b = cfg.boundary
        bnd = None if b is None else (b.point, b.component, b.value, b.weight, col._b_ybar)
        loss_grad = compiled_loss_grad(t.system, grid, col.ybar, col.dybar, m, bnd)
    else:
        loss_grad = _numpy_loss_grad(col, m, n)

    inits = [t.params.flatten()] + [net.init(m, n, cfg.seed + r).flatten() for r in range(1, cfg.restarts)]
    first = min(cfg.warmup, cfg.max_iter) if cfg.restarts > 1 else cfg.max_iter
    runs = []
    for theta in inits:
        run = _Run(theta, loss_grad, cfg, first)
        if not math.isfinite(run.loss):
            col.loss(MlpParams.unflatten(theta, m, n))  # raises a domain error if that is the cause
            raise DivergenceError("initial loss is not finite", [run.loss])
        run.advance(loss_grad, cfg, first, compiled)
        runs.append(run)
    ok = [i for i, r in enumerate(runs) if r.status != kernels.DIVERGED]
    chosen = min(ok, key=lambda i: runs[i].best_loss) if ok else 0
    run = runs[chosen]
    run.advance(loss_grad, cfg, cfg.max_iter - run.done, compiled)
    if run.status == kernels.DIVERGED:
        bad = MlpParams._from_flat(run.th, m, n)
        try:
            col.loss(bad)
        except ex.ExprError as err:
            raise DivergenceError(f"domain error at iteration {run.done}: {err}",
                                  run.trajectory.tolist()) from err
        raise DivergenceError(f"loss diverged ({run.loss}) at iteration {run.done}",
                              run.trajectory.tolist())
    if run.status == kernels.STALLED:
        log.warning("learning rate underflow at iteration %d", run.done)

    params = MlpParams.unflatten(run.best, m, n)
    final = col.loss(params)
    report = TrainReport(
        trajectory=run.trajectory.copy(),
        params=params,
        final_loss=final,
        residuals=col.residuals(params),
        grid=grid,
        iterations=run.done,
        converged=final <= cfg.target,
        wall_time=time.perf_counter() - start,
        eta_final=run.eta,
        start=chosen,
        start_losses=[r.best_loss for r in runs],
    )
    return t.with_params(params), report


# ---------------------------------------------------------------------------
# references and metrics


class Reference:
    """Known solution for some components, as a function of the system's x."""

    def __init__(self, components: Sequence[int], fn: Callable[[np.ndarray], np.ndarray], kind: str):
        self.components = list(components)
        self.fn = fn
        self.kind = kind

    def __call__(self, x) -> np.ndarray:
        return self.fn(np.atleast_1d(np.asarray(x, dtype=float)))

    @classmethod
    def from_exprs(cls, system: IvpSystem, exprs: dict[str, ex.Expr | str], x: str = "x") -> "Reference":
        """Exact solutions written in the original independent variable ``x``."""
        names = list(exprs)
        comps = [system.variables.index(v) for v in names]
        compiled = ex.Compiled([ex.as_expr(exprs[v]) for v in names], [x])
        shift = system.shift
        return cls(comps, lambda s: compiled((s + shift)[:, None]), "exact")

    @classmethod
    def from_rk(cls, system: IvpSystem, interval: tuple[float, float] | None = None,
                step: float = 1e-4) -> "Reference":
        """RK4 solution of the full system at a fine fixed step."""
        lo, hi = interval if interval is not None else system.interval
        f = system.compiled_rhs()
        from .assoc import integrate

        dense = integrate(f, system.alpha, (lo, hi), step)
        comps = system.unknowns
        return cls(comps, lambda s: dense(s)[:, comps], "rk4")


def metrics(t: TrialSolution, reference: Reference | None, grid) -> dict:
    """Error and deviation statistics on ``grid``.

    ``ave_error`` is the mean over points of the summed squared residuals
    (the collocation loss evaluated on this grid).  Errors are ``y - yhat``
    and deviations ``|x (y - yhat)|`` over the reference components.
    """
    grid = np.asarray(grid, dtype=float)
    y, _ = trial_eval(t, grid)
    r = Collocation(t, grid).residuals(t.params)
    out = {"points": int(grid.size), "ave_error": float(np.sum(r * r) / grid.size)}
    if reference is not None:
        err = reference(grid) - y[:, reference.components]
        dev = np.abs(grid[:, None] * err)
        out.update(
            max_abs_error=float(np.max(np.abs(err))),
            mean_abs_error=float(np.mean(np.abs(err))),
            max_deviation=float(np.max(dev)),
            ave_deviation=float(np.mean(dev)),
        )
    return out


def rk_solution(system: IvpSystem, x_end: float, step: float = 1e-4):
    """Plain RK4 path from 0 to ``x_end`` (used as an independent oracle)."""
    return rk4_path(system.compiled_rhs(), system.alpha, x_end, step)
