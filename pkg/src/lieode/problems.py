"""Problem files and the built-in examples.

A problem file is an INI document.  Keys are case sensitive and every
formula is an expression string for :func:`lieode.expr.parse`.

    [problem]       label; either ``variables`` + ``rhs.<var>`` (first-order
                    system) or ``order`` + ``rhs`` (one equation in
                    y, dy, d2y, ...); initial; interval; x0; clock
    [params]        named constants substituted into every formula
    [split]         mode = heuristic | full | explicit, g.<var>, closed_form
    [network]       m, seed
    [train]         points, optimizer, eta, iterations, target, restarts, warmup
    [boundary]      point, variable, value, weight
    [reference]     <var> = exact solution in x, or method = rk and step
    [baseline]      poly.<var>, window
    [output]        points, extension

Built-in problems are stored as problem-file text, so exporting one and
running the exported file goes through exactly the same code.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import expr as ex
from . import problem as pb
from .train import Boundary, TrainConfig

_SECTIONS = ("problem", "params", "split", "network", "train", "boundary",
             "reference", "baseline", "output")


class ProblemFileError(ValueError):
    pass


@dataclass
class ProblemSpec:
    """Parsed problem file; formulas are kept as text until :meth:`build`."""

    label: str
    initial: list[str]
    interval: tuple[str, str]
    rhs: dict[str, str] = field(default_factory=dict)  # variable -> rhs, or {"y": rhs}
    variables: list[str] | None = None
    order: int | None = None
    x0: str = "0"
    clock: str = "auto"
    params: dict[str, str] = field(default_factory=dict)
    split_mode: str = "heuristic"
    split_g: dict[str, str] = field(default_factory=dict)
    closed_form: str | None = None
    m: int = 3
    seed: int = 0
    train: dict[str, str] = field(default_factory=dict)
    boundary: dict[str, str] = field(default_factory=dict)
    reference: dict[str, str] = field(default_factory=dict)
    baseline: dict[str, str] = field(default_factory=dict)
    output: dict[str, str] = field(default_factory=dict)

    def with_params(self, **values) -> "ProblemSpec":
        unknown = set(values) - set(self.params)
        if unknown:
            raise ProblemFileError(f"problem {self.label!r} has no parameter(s) {sorted(unknown)}")
        params = dict(self.params)
        params.update({k: str(v) for k, v in values.items()})
        return replace(self, params=params)


# ---------------------------------------------------------------------------
# reading and writing


def _split_list(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def loads(text: str) -> ProblemSpec:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ProblemFileError(f"malformed problem file: {err}") from err
    extra = set(cp.sections()) - set(_SECTIONS)
    if extra:
        raise ProblemFileError(f"unknown section(s) {sorted(extra)}")
    if not cp.has_section("problem"):
        raise ProblemFileError("missing [problem] section")
    sec = dict(cp["problem"])

    def need(key):
        if key not in sec:
            raise ProblemFileError(f"[problem] needs {key!r}")
        return sec.pop(key)

    interval = _split_list(need("interval"))
    if len(interval) != 2:
        raise ProblemFileError("interval needs two values")
    spec = ProblemSpec(
        label=sec.pop("label", "problem"),
        initial=_split_list(need("initial")),
        interval=(interval[0], interval[1]),
        x0=sec.pop("x0", "0"),
        clock=sec.pop("clock", "auto"),
    )
    if spec.clock not in ("auto", "yes", "no"):
        raise ProblemFileError("clock must be auto, yes or no")
    if "order" in sec:
        try:
            spec.order = int(sec.pop("order"))
        except ValueError as err:
            raise ProblemFileError(f"order: {err}") from err
        spec.rhs = {"y": need("rhs")}
    else:
        spec.variables = _split_list(need("variables"))
        for v in spec.variables:
            key = f"rhs.{v}"
            if key not in sec:
                raise ProblemFileError(f"[problem] needs {key!r}")
            spec.rhs[v] = sec.pop(key)
    if sec:
        raise ProblemFileError(f"unknown [problem] key(s) {sorted(sec)}")

    def section(name):
        return dict(cp[name]) if cp.has_section(name) else {}

    spec.params = section("params")
    sp = section("split")
    spec.split_mode = sp.pop("mode", "heuristic")
    spec.closed_form = sp.pop("closed_form", None) or None
    spec.split_g = {k[2:]: v for k, v in sp.items() if k.startswith("g.")}
    if set(sp) - {f"g.{k}" for k in spec.split_g}:
        raise ProblemFileError(f"unknown [split] key(s) {sorted(k for k in sp if not k.startswith('g.'))}")
    if spec.split_mode not in ("heuristic", "full", "explicit"):
        raise ProblemFileError(f"unknown split mode {spec.split_mode!r}")
    if spec.split_mode == "explicit" and not spec.split_g:
        raise ProblemFileError("explicit split needs g.<variable> entries")
    nw = section("network")
    try:
        spec.m = int(nw.pop("m", 3))
        spec.seed = int(nw.pop("seed", 0))
    except ValueError as err:
        raise ProblemFileError(f"[network]: {err}") from err
    if nw:
        raise ProblemFileError(f"unknown [network] key(s) {sorted(nw)}")
    spec.train = section("train")
    spec.boundary = section("boundary")
    spec.reference = section("reference")
    spec.baseline = section("baseline")
    spec.output = section("output")
    return spec


def load(path) -> ProblemSpec:
    with open(path) as fh:
        return loads(fh.read())


def dumps(spec: ProblemSpec) -> str:
    lines = ["[problem]", f"label = {spec.label}"]
    if spec.order is not None:
        lines += [f"order = {spec.order}", f"rhs = {spec.rhs['y']}"]
    else:
        lines.append(f"variables = {', '.join(spec.variables)}")
        lines += [f"rhs.{v} = {spec.rhs[v]}" for v in spec.variables]
    lines += [f"initial = {', '.join(spec.initial)}",
              f"interval = {', '.join(spec.interval)}"]
    if spec.x0 != "0":
        lines.append(f"x0 = {spec.x0}")
    if spec.clock != "auto":
        lines.append(f"clock = {spec.clock}")

    def block(name, items):
        if items:
            lines.extend(["", f"[{name}]"] + [f"{k} = {v}" for k, v in items])

    block("params", spec.params.items())
    split = [("mode", spec.split_mode)] + [(f"g.{k}", v) for k, v in spec.split_g.items()]
    if spec.closed_form:
        split.append(("closed_form", spec.closed_form))
    block("split", split)
    block("network", [("m", spec.m), ("seed", spec.seed)])
    block("train", spec.train.items())
    block("boundary", spec.boundary.items())
    block("reference", spec.reference.items())
    block("baseline", spec.baseline.items())
    block("output", spec.output.items())
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# building


@dataclass(frozen=True)
class Problem:
    """A problem file turned into library objects."""

    spec: ProblemSpec
    system: pb.IvpSystem
    split: pb.OperatorSplit
    constants: dict[str, float]
    x: str = "x"

    def reference_exprs(self) -> dict[str, ex.Expr]:
        out = {}
        for k, v in self.spec.reference.items():
            if k in ("method", "step"):
                continue
            if k not in self.system.variables:
                raise ProblemFileError(f"[reference] names unknown variable {k!r}")
            out[k] = self.formula(v, f"reference.{k}")
        return out

    def formula(self, text: str, where: str) -> ex.Expr:
        return _formula(text, where, self._param_exprs())

    def _param_exprs(self):
        return _resolve_params(self.spec.params)


def _formula(text: str, where: str, params: dict[str, ex.Expr]) -> ex.Expr:
    try:
        e = ex.parse(text)
    except ex.ExprSyntaxError as err:
        raise ProblemFileError(f"{where}: {err}") from err
    return ex.substitute(e, params) if params else e


def _resolve_params(raw: dict[str, str]) -> dict[str, ex.Expr]:
    """Parameters may refer to earlier parameters."""
    out: dict[str, ex.Expr] = {}
    for k, v in raw.items():
        out[k] = _formula(v, f"params.{k}", out)
    return out


def _number(text: str, where: str, params: dict[str, ex.Expr]) -> float:
    e = _formula(text, where, params)
    try:
        value = float(ex.evaluate(e, {}))
    except ex.ExprError as err:
        raise ProblemFileError(f"{where}: {err}") from err
    if not math.isfinite(value):
        raise ProblemFileError(f"{where}: value is not finite")
    return value


def build(spec: ProblemSpec) -> Problem:
    params = _resolve_params(spec.params)
    constants = {}
    for k, e in params.items():
        if not ex.free_symbols(e):
            try:
                constants[k] = float(ex.evaluate(e, {}))
            except ex.ExprError:
                pass
    initial = [_number(s, "initial", params) for s in spec.initial]
    x0 = _number(spec.x0, "x0", params)
    lo, hi = (_number(s, "interval", params) for s in spec.interval)
    if not lo <= x0 <= hi:
        raise ProblemFileError(f"start point {x0} lies outside the interval [{lo}, {hi}]")
    clock = {"auto": None, "yes": True, "no": False}[spec.clock]
    x = "x"
    shift = {x: ex.add(ex.Var(x), ex.Const(x0))} if x0 != 0 else None

    def rhs_of(key, text):
        e = _formula(text, f"rhs.{key}" if spec.order is None else "rhs", params)
        return ex.substitute(e, shift) if shift else e

    try:
        if spec.order is not None:
            f = rhs_of("y", spec.rhs["y"])
            mentions = x in ex.free_symbols(f)
            system = pb.reduce_order(spec.order, f, initial, (lo - x0, hi - x0), x=x,
                                     label=spec.label, clock=bool(clock) or (clock is None and mentions))
            if clock is False and mentions:
                raise ProblemFileError("clock = no, but the equation mentions x")
        else:
            rhs = [rhs_of(v, spec.rhs[v]) for v in spec.variables]
            system = pb.first_order(rhs, initial, (lo - x0, hi - x0), spec.variables, x=x,
                                    label=spec.label, clock=clock)
        if x0 != 0:
            system = replace(system, shift=x0)
        if spec.split_mode == "explicit":
            selector = {k: _formula(v, f"g.{k}", params) for k, v in spec.split_g.items()}
        else:
            selector = spec.split_mode
        split = pb.split(system, selector)
    except pb.ProblemError as err:
        raise ProblemFileError(str(err)) from err
    return Problem(spec, system, split, constants, x)


def train_config(problem: Problem, **overrides) -> TrainConfig:
    t = problem.spec.train
    params = problem._param_exprs()
    kwargs = {}
    conv = {"points": int, "iterations": int, "restarts": int, "warmup": int,
            "eta": float, "target": float, "optimizer": str}
    names = {"iterations": "max_iter"}
    for key, value in t.items():
        if key not in conv:
            raise ProblemFileError(f"unknown [train] key {key!r}")
        try:
            kwargs[names.get(key, key)] = conv[key](value)
        except ValueError as err:
            raise ProblemFileError(f"[train] {key}: {err}") from err
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    b = problem.spec.boundary
    if b:
        try:
            var = b["variable"]
            kwargs["boundary"] = Boundary(
                point=_number(b["point"], "boundary.point", params) - problem.system.shift,
                component=problem.system.variables.index(var),
                value=_number(b["value"], "boundary.value", params),
                weight=_number(b.get("weight", "1"), "boundary.weight", params),
            )
        except KeyError as err:
            raise ProblemFileError(f"[boundary] needs {err}") from err
        except ValueError as err:
            raise ProblemFileError(f"[boundary]: {err}") from err
    kwargs.setdefault("seed", problem.spec.seed)
    try:
        return TrainConfig(**kwargs)
    except ValueError as err:
        raise ProblemFileError(str(err)) from err


def baseline_exprs(problem: Problem, kind: str) -> list[ex.Expr]:
    """First parts for the comparison baselines, in the system's x.

    ``constant`` keeps every unknown at its initial value; ``poly`` uses the
    ``poly.<var>`` formulas of the problem file, defaulting to the
    second-order Taylor polynomial at 0.  The clock is always x itself.
    """
    system = problem.system
    xv = ex.Var(problem.x)
    alpha = system.alpha
    out = []
    for i, v in enumerate(system.variables):
        if i == system.clock:
            out.append(xv)
        elif kind == "constant":
            out.append(ex.Const(float(alpha[i])))
        elif kind == "poly" and f"poly.{v}" in problem.spec.baseline:
            e = problem.formula(problem.spec.baseline[f"poly.{v}"], f"baseline.poly.{v}")
            if system.shift:
                e = ex.substitute(e, {problem.x: ex.add(xv, ex.Const(system.shift))})
            out.append(e)
        elif kind == "poly":
            out.append(_taylor2(system, i, xv))
        else:
            raise ProblemFileError(f"unknown baseline {kind!r}")
    return out


def _taylor2(system: pb.IvpSystem, i: int, xv: ex.Expr) -> ex.Expr:
    env = dict(zip(system.variables, system.alpha.tolist()))
    f = system.rhs
    slope = [float(ex.evaluate(fj, env)) for fj in f]
    curv = sum(float(ex.evaluate(ex.diff(f[i], v), env)) * slope[j]
               for j, v in enumerate(system.variables))
    terms = [ex.Const(float(system.alpha[i])),
             ex.mul(ex.Const(slope[i]), xv),
             ex.mul(ex.Const(curv / 2), ex.power(xv, ex.Const(2.0)))]
    return ex.total(terms)


# ---------------------------------------------------------------------------
# built-in examples

EXAMPLE1 = """\
[problem]
label = example1
variables = y1, y2
rhs.y1 = cos(x) + y1^2 + y2 - (1 + x^2 + sin(x)^2)
rhs.y2 = 2*x - (1 + x^2)*sin(x) + y1*y2
initial = 0, 1
interval = -1, 1

[split]
mode = heuristic
closed_form = example1

[network]
m = 3
seed = 0

[train]
points = 21
optimizer = adam
eta = 0.01
iterations = 2000000
target = 1e-9
restarts = 4
warmup = 200000

[reference]
y1 = sin(x)
y2 = 1 + x^2

[baseline]
window = -0.5, 0.5

[output]
points = 201
extension = 0.25
"""

EXAMPLE2 = """\
[problem]
label = example2
order = 2
rhs = forcing - y - 2*eps*dy
initial = a, b
interval = 0, 2

[params]
eps = 0.2
a = 0
b = 1
forcing = -0.4*exp(-0.4*x)*cos(x)

[split]
mode = explicit
g.y1 = y2
g.y2 = -y1 - 2*eps*y2
closed_form = example2

[network]
m = 3
seed = 0

[train]
points = 21
optimizer = adam
eta = 0.01
iterations = 200000
target = 1e-9

[reference]
method = rk
step = 1e-4

[baseline]
poly.y1 = x*(1 + x)
poly.y2 = 1 + 2*x

[output]
points = 201
extension = 0.25
"""

EXAMPLE3 = """\
[problem]
label = example3
order = 2
rhs = -y - 2*eps*y^3
initial = 1, 0
interval = 0, 2

[params]
eps = 0.5

[split]
mode = explicit
g.y1 = y2
g.y2 = -y1
closed_form = example3

[network]
m = 3
seed = 0

[train]
points = 21
optimizer = adam
eta = 0.01
iterations = 200000
target = 1e-9

[reference]
method = rk
step = 1e-4

[output]
points = 201
extension = 0.25
"""

BUILTINS = {"example1": EXAMPLE1, "example2": EXAMPLE2, "example3": EXAMPLE3}


def builtin(name: str) -> ProblemSpec:
    try:
        return loads(BUILTINS[name])
    except KeyError:
        raise ProblemFileError(f"no built-in problem {name!r} (have {', '.join(BUILTINS)})") from None


def resolve(source: str) -> ProblemSpec:
    """A built-in name or a path to a problem file."""
    if source in BUILTINS:
        return builtin(source)
    try:
        return load(source)
    except FileNotFoundError:
        raise ProblemFileError(f"{source!r} is neither a built-in problem nor a readable file") from None


def grid_span(problem: Problem, extension: float) -> tuple[float, float]:
    """Training interval widened by ``extension`` lengths on each side not anchored at 0."""
    lo, hi = problem.system.interval
    length = hi - lo
    return (lo - extension * length if lo < 0 else lo,
            hi + extension * length if hi > 0 else hi)


def predict_grid(problem: Problem, points: int = 21, extension: float = 0.25) -> np.ndarray:
    """``points`` equidistant points on each extension beyond the training interval."""
    lo, hi = problem.system.interval
    length = hi - lo
    parts = []
    if lo < 0:
        parts.append(np.linspace(lo - extension * length, lo, points))
    if hi > 0:
        parts.append(np.linspace(hi, hi + extension * length, points))
    return np.concatenate(parts)


def test_grid(problem: Problem, points: int = 26, extension: float = 0.25) -> np.ndarray:
    lo, hi = grid_span(problem, extension)
    return np.linspace(lo, hi, points)
