"""Command-line front end.

    lieode run <problem> [--m --eta --iters --seed --optimizer --out ...]
    lieode compare <problem> --baseline {lie,constant,poly}
    lieode sweep <problem> --param eps --values 0.01,0.2,0.5,0.8
    lieode export-builtin <name>

``<problem>`` is a built-in name (example1, example2, example3) or a path
to a problem file (see :mod:`lieode.problems`).  Exit status is 0 only when
every requested run succeeded.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import assoc as assoc_mod
from . import expr as ex
from . import net
from . import problems as pf
from .train import (
    DivergenceError,
    Reference,
    TrainConfig,
    TrainError,
    TrainReport,
    TrialSolution,
    metrics,
    new_trial,
    train,
    trial_eval,
)

log = logging.getLogger("lieode")

FMT = "%.17g"
LOSS_ROWS = 20_000  # longer trajectories are thinned in loss.csv
GRIDS = ("train", "predict", "test", "eval")


class ReportError(RuntimeError):
    pass


@dataclass
class Table:
    header: list[str]
    data: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.header.index(name)]


@dataclass
class RunArtifacts:
    label: str
    first_part: str
    config: TrainConfig
    report: TrainReport
    trial: TrialSolution
    initial: net.MlpParams | None = None
    tables: dict[str, Table] = field(default_factory=dict)
    summary: dict[str, object] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# tables and metrics


def solution_table(t: TrialSolution, reference: Reference | None, grid) -> Table:
    """Per-point values on ``grid``; one block of columns per unknown.

    Columns: x (original variable), s (shifted variable), extrapolated, then
    for each unknown v: yhat_v, ybar_v, [ref_v, err_v, dev_v,] res_v.
    """
    from .train import Collocation, check_domain

    system = t.system
    s = np.asarray(grid, dtype=float)
    outside = check_domain(t, s).astype(float)
    y, _ = trial_eval(t, s)
    ybar = t.assoc.value(s)
    res = Collocation(t, s).residuals(t.params)
    ref = reference(s) if reference is not None else None
    header = ["x", "s", "extrapolated"]
    cols = [s + system.shift, s, outside]
    for i in system.unknowns:
        v = system.variables[i]
        header += [f"yhat_{v}", f"ybar_{v}"]
        cols += [y[:, i], ybar[:, i]]
        if reference is not None and i in reference.components:
            err = ref[:, reference.components.index(i)] - y[:, i]
            header += [f"ref_{v}", f"err_{v}", f"dev_{v}"]
            cols += [ref[:, reference.components.index(i)], err, np.abs(s * err)]
        header.append(f"res_{v}")
        cols.append(res[:, i])
    return Table(header, np.column_stack(cols))


def table_metrics(table: Table) -> dict[str, float]:
    """Metrics computed from table columns only (so a CSV reproduces them).

    ave_error is the mean over points of the summed squared residuals; the
    error statistics run over every component that has a reference.
    """
    res = [table.column(h) for h in table.header if h.startswith("res_")]
    out = {"points": table.data.shape[0],
           "ave_error": float(np.mean(np.sum(np.square(res), axis=0)))}
    err = [table.column(h) for h in table.header if h.startswith("err_")]
    dev = [table.column(h) for h in table.header if h.startswith("dev_")]
    if err:
        err, dev = np.abs(np.array(err)), np.array(dev)
        out.update(max_abs_error=float(err.max()), mean_abs_error=float(err.mean()),
                   max_deviation=float(dev.max()), ave_deviation=float(dev.mean()))
    return out


def make_reference(problem: pf.Problem, span: tuple[float, float]) -> Reference | None:
    spec = problem.spec.reference
    if not spec:
        return None
    if spec.get("method", "exact") == "rk":
        step = float(spec.get("step", "1e-4"))
        return Reference.from_rk(problem.system, span, step)
    try:
        return Reference.from_exprs(problem.system, problem.reference_exprs(), x=problem.x)
    except ValueError as err:
        raise pf.ProblemFileError(f"[reference]: {err}") from err


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return FMT % v
    if isinstance(v, (list, tuple)):
        return ", ".join(_fmt(a) for a in v)
    return str(v)


# ---------------------------------------------------------------------------
# runs


def _first_part(problem: pf.Problem, kind: str):
    if kind == "lie":
        return assoc_mod.solve(problem.split, problem.spec.closed_form, problem.constants)
    exprs = pf.baseline_exprs(problem, kind)
    return assoc_mod.from_expressions(exprs, problem.system.alpha, problem.system.interval,
                                      x=problem.x, label=kind)


def run_solve(spec: pf.ProblemSpec, overrides: dict | None = None, first_part: str = "lie") -> RunArtifacts:
    """Normalize, split, solve the associated problem, train and evaluate."""
    overrides = dict(overrides or {})
    m = overrides.pop("m", None) or spec.m
    if overrides.get("seed") is None:
        overrides["seed"] = spec.seed
    problem = pf.build(spec)
    cfg = pf.train_config(problem, **overrides)
    start = time.perf_counter()
    assoc = _first_part(problem, first_part)
    trial = new_trial(assoc, problem.split, m=m, seed=cfg.seed)
    anchor = float(np.max(np.abs(trial_eval(trial, 0.0)[0] - problem.system.alpha)))
    trained, report = train(trial, cfg)
    wall = time.perf_counter() - start

    out = spec.output
    extension = float(out.get("extension", "0.25"))
    span = pf.grid_span(problem, max(extension, 0.25))
    reference = make_reference(problem, span)
    grids = {
        "train": report.grid,
        "predict": pf.predict_grid(problem),
        "test": pf.test_grid(problem),
        "eval": np.linspace(*pf.grid_span(problem, extension), int(out.get("points", "201"))),
    }
    art = RunArtifacts(spec.label, first_part, cfg, report, trained, initial=trial.params)
    for name, g in grids.items():
        art.tables[name] = solution_table(trained, reference, g)

    s = art.summary
    system = problem.system
    s["label"] = spec.label
    s["variables"] = list(system.variables)
    for v, f, g, h in zip(system.variables, system.rhs, problem.split.g, problem.split.h):
        s[f"rhs.{v}"] = ex.to_string(f)
        s[f"g.{v}"] = ex.to_string(g)
        s[f"h.{v}"] = ex.to_string(h)
    s["initial"] = system.alpha.tolist()
    s["interval"] = list(system.interval)
    s["shift"] = float(system.shift)
    for k, v in spec.params.items():
        s[f"params.{k}"] = v
    s["first_part"] = first_part
    s["first_part.source"] = assoc.source
    s["reference"] = reference.kind if reference is not None else "none"
    s["m"] = m
    for k, v in asdict(cfg).items():
        if k not in ("interval", "boundary"):
            s[f"config.{k}"] = v
    if cfg.boundary is not None:
        s["config.boundary"] = [cfg.boundary.point, cfg.boundary.component,
                                cfg.boundary.value, cfg.boundary.weight]
    s["start"] = report.start
    s["start_losses"] = [float(v) for v in report.start_losses]
    s["iterations"] = report.iterations
    s["converged"] = report.converged
    s["final_loss"] = float(report.final_loss)
    s["anchor_before"] = anchor
    s["anchor_after"] = float(np.max(np.abs(trial_eval(trained, 0.0)[0] - system.alpha)))
    for name in GRIDS:
        for k, v in table_metrics(art.tables[name]).items():
            s[f"{name}.{k}"] = v
    art.summary["wall_time"] = wall
    return art


def _loss_rows(trajectory: np.ndarray) -> np.ndarray:
    n = trajectory.size
    k = np.arange(n)
    if n > LOSS_ROWS:
        stride = -(-n // LOSS_ROWS)
        keep = (k <= 1000) | (k % stride == 0) | (k == n - 1)
        k = k[keep]
    return np.column_stack([k, trajectory[k]])


def write_csv(path: Path, header: list[str], data: np.ndarray, int_cols: int = 0) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in data:
            cells = [str(int(v)) for v in row[:int_cols]] + [FMT % v for v in row[int_cols:]]
            fh.write(",".join(cells) + "\n")


def read_csv(path) -> Table:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return Table(header, data)


def emit_report(art: RunArtifacts, out: Path) -> list[Path]:
    """Write CSVs, parameters, summary.txt and timing.txt; returns the files written.

    Everything except timing.txt depends only on the problem and the
    configuration, so repeated runs give byte-identical files.
    """
    if art is None or not art.tables or art.report is None:
        raise ReportError("nothing to report: the run produced no artifacts")
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = []
        for name, table in art.tables.items():
            path = out / f"grid_{name}.csv"
            write_csv(path, table.header, table.data)
            files.append(path)
        path = out / "loss.csv"
        write_csv(path, ["iteration", "loss"], _loss_rows(art.report.trajectory), int_cols=1)
        files.append(path)
        path = out / "params.txt"
        net.save(art.trial.params, path, seed=art.config.seed)
        files.append(path)
        summary = {k: v for k, v in art.summary.items() if k != "wall_time"}
        summary["files"] = [p.name for p in files] + ["summary.txt"]
        path = out / "summary.txt"
        path.write_text("".join(f"{k} = {_fmt(v)}\n" for k, v in summary.items()))
        files.append(path)
        timing = out / "timing.txt"
        timing.write_text(f"wall_time = {art.summary.get('wall_time', float('nan')):.3f}\n")
    except OSError as err:
        raise ReportError(f"cannot write report to {out}: {err}") from err
    return files


def read_summary(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        k, _, v = line.partition(" = ")
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# compare and sweep


def first_term_error(problem: pf.Problem, a, reference: Reference, window) -> float:
    """Sup-norm distance of a first part to the reference on ``window``."""
    s = np.linspace(window[0], window[1], 1001)
    return float(np.max(np.abs(reference(s) - a.value(s)[:, reference.components])))


def run_compare(spec: pf.ProblemSpec, baseline: str, overrides: dict | None = None,
                out: Path | None = None) -> dict:
    """Train the Lie first part and a baseline first part with the same seed and config."""
    problem = pf.build(spec)
    window = pf._split_list(spec.baseline.get("window", "")) or None
    window = tuple(float(v) for v in window) if window else problem.system.interval
    legs = {"lie": run_solve(spec, overrides, "lie")}
    legs[baseline] = legs["lie"] if baseline == "lie" else run_solve(spec, overrides, baseline)
    span = pf.grid_span(problem, max(float(spec.output.get("extension", "0.25")), 0.25))
    reference = make_reference(problem, span)
    result = {"window": list(window)}
    s = legs["lie"].tables["eval"].column("s")
    header, cols = ["x", "s"], [s + problem.system.shift, s]
    for name, art in legs.items():
        a = art.trial.assoc
        if reference is not None:
            result[f"{name}.first_term_sup_error"] = first_term_error(problem, a, reference, window)
        result[f"{name}.final_loss"] = art.summary["final_loss"]
        for k in ("ave_error", "max_abs_error", "ave_deviation"):
            if f"train.{k}" in art.summary:
                result[f"{name}.train.{k}"] = art.summary[f"train.{k}"]
    ybars = {name: art.trial.assoc.value(s) for name, art in legs.items()}
    for i in problem.system.unknowns:
        v = problem.system.variables[i]
        if reference is not None and i in reference.components:
            header.append(f"ref_{v}")
            cols.append(reference(s)[:, reference.components.index(i)])
        for name in legs:
            header.append(f"ybar_{name}_{v}")
            cols.append(ybars[name][:, i])
    if out is not None:
        out = Path(out)
        for name, art in legs.items():
            emit_report(art, out / name)
        write_csv(out / "first_terms.csv", header, np.column_stack(cols))
        (out / "comparison.txt").write_text("".join(f"{k} = {_fmt(v)}\n" for k, v in result.items()))
    result["legs"] = legs
    return result


SWEEP_HEADER = ["value", "data", "points", "ave_error", "ave_deviation", "status"]


def run_sweep(spec: pf.ProblemSpec, param: str, values: list[str], overrides: dict | None = None,
              out: Path | None = None) -> list[dict]:
    """One full run per parameter value; failed rows are recorded and skipped."""
    if param not in spec.params:
        raise pf.ProblemFileError(f"problem {spec.label!r} has no parameter {param!r}")
    rows = []
    for value in values:
        try:
            art = run_solve(spec.with_params(**{param: value}), overrides)
            if out is not None:
                emit_report(art, Path(out) / f"{param}={value}")
            for data, grid in (("training", "train"), ("predict", "predict"), ("test", "test")):
                rows.append({"value": value, "data": data,
                             "points": art.summary[f"{grid}.points"],
                             "ave_error": art.summary[f"{grid}.ave_error"],
                             "ave_deviation": art.summary.get(f"{grid}.ave_deviation", float("nan")),
                             "status": "ok"})
        except (pf.ProblemFileError, ex.ExprError, assoc_mod.AssocError, TrainError) as err:
            log.error("%s = %s failed: %s", param, value, err)
            for data in ("training", "predict", "test"):
                rows.append({"value": value, "data": data, "points": 0, "ave_error": float("nan"),
                             "ave_deviation": float("nan"), "status": "failed"})
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        with open(Path(out) / "sweep.csv", "w") as fh:
            fh.write(",".join([param] + SWEEP_HEADER[1:]) + "\n")
            for r in rows:
                fh.write(f"{r['value']},{r['data']},{r['points']},{FMT % r['ave_error']},"
                         f"{FMT % r['ave_deviation']},{r['status']}\n")
    return rows


# ---------------------------------------------------------------------------
# argument handling


def _overrides(args) -> dict:
    return {"m": args.m, "eta": args.eta, "max_iter": args.iters, "seed": args.seed,
            "optimizer": args.optimizer, "restarts": args.restarts, "warmup": args.warmup,
            "points": args.points, "backend": args.backend}


def _with_sets(spec: pf.ProblemSpec, sets: list[str]) -> pf.ProblemSpec:
    values = {}
    for item in sets or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise pf.ProblemFileError(f"--set expects name=value, got {item!r}")
        values[key.strip()] = value.strip()
    return spec.with_params(**values) if values else spec


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lieode", description="Lie-group split neural solver for ODE initial value problems")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp):
        sp.add_argument("problem", help="built-in name or problem file")
        sp.add_argument("--m", type=int, help="hidden neurons")
        sp.add_argument("--eta", type=float, help="learning rate")
        sp.add_argument("--iters", type=int, help="maximum iterations")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--optimizer", choices=["gd", "adam"])
        sp.add_argument("--restarts", type=int)
        sp.add_argument("--warmup", type=int)
        sp.add_argument("--points", type=int, help="collocation points")
        sp.add_argument("--backend", choices=["compiled", "numpy"])
        sp.add_argument("--set", action="append", metavar="NAME=VALUE", help="override a [params] entry")
        sp.add_argument("--out", type=Path)

    common(sub.add_parser("run", help="train on one problem and write artifacts"))
    sp = sub.add_parser("compare", help="train with the Lie first part and with a baseline first part")
    common(sp)
    sp.add_argument("--baseline", choices=["lie", "constant", "poly"], required=True)
    sp = sub.add_parser("sweep", help="repeat a run over values of one parameter")
    common(sp)
    sp.add_argument("--param", required=True)
    sp.add_argument("--values", required=True, help="comma separated")
    sp = sub.add_parser("export-builtin", help="print a built-in problem as a problem file")
    sp.add_argument("name", choices=sorted(pf.BUILTINS))
    sp.add_argument("--out", type=Path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "export-builtin":
            text = pf.BUILTINS[args.name]
            if args.out:
                args.out.write_text(text)
            else:
                sys.stdout.write(text)
            return 0
        spec = _with_sets(pf.resolve(args.problem), args.set)
        overrides = _overrides(args)
        out = args.out or Path("runs") / spec.label
        if args.cmd == "run":
            art = run_solve(spec, overrides)
            emit_report(art, out)
            s = art.summary
            print(f"{spec.label}: final loss {FMT % s['final_loss']} after {s['iterations']} iterations")
            for k in ("train.max_abs_error", "train.ave_error", "train.ave_deviation"):
                if k in s:
                    print(f"  {k} = {FMT % s[k]}")
            print(f"  artifacts in {out}")
            return 0
        if args.cmd == "compare":
            result = run_compare(spec, args.baseline, overrides, out)
            for k, v in result.items():
                if k != "legs":
                    print(f"{k} = {_fmt(v)}")
            return 0
        if args.cmd == "sweep":
            rows = run_sweep(spec, args.param, pf._split_list(args.values), overrides, out)
            print(f"{args.param:>8} {'data':>9} {'Ave.Error':>12} {'Ave.Deviation':>14}")
            for r in rows:
                print(f"{r['value']:>8} {r['data']:>9} {r['ave_error']:12.4e} {r['ave_deviation']:14.4e} {r['status']}")
            return 0 if all(r["status"] == "ok" for r in rows) else 1
    except ex.ExprSyntaxError as err:
        print(f"error: {err}", file=sys.stderr)
    except (pf.ProblemFileError, ex.ExprError, assoc_mod.AssocError, ReportError) as err:
        print(f"error: {err}", file=sys.stderr)
    except DivergenceError as err:
        print(f"error: training diverged: {err}", file=sys.stderr)
    except TrainError as err:
        print(f"error: {err}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
