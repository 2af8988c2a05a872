"""Acceptance criteria, each checked at its stated tolerance.

Every test prints one PASS/FAIL line; the lines are repeated in a summary
section at the end of the pytest run.  Run alone with

    python3 -m pytest tests/test_acceptance.py -v
"""
import dataclasses
import filecmp
import time

import numpy as np
import pytest

from lieode import assoc, cli, net
from lieode import problems as pf
from lieode import train as tr
from lieode.net import MlpParams

from conftest import ACCEPTANCE_LINES
from test_net import _fd_jacobians
from test_train import gradient_suite

SWEEP_EPS = ["0.01", "0.2", "0.5", "0.8"]


def record(capsys, number: int, ok: bool, text: str):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {text}"
    ACCEPTANCE_LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


@pytest.fixture(scope="session")
def runs():
    """Full built-in runs, shared by several criteria."""
    out = {}
    for name in pf.BUILTINS:
        start = time.perf_counter()
        art = cli.run_solve(pf.builtin(name))
        out[name] = (art, time.perf_counter() - start)
    return out


def test_criterion_1_example1_training_accuracy(runs, capsys):
    art, wall = runs["example1"]
    err = art.summary["train.max_abs_error"]
    record(capsys, 1, err <= 5e-4 and wall <= 60,
           f"example1 max training-grid error {err:.3e} (<= 5e-4), m={art.trial.params.m}, "
           f"{art.summary['train.points']} points, run time {wall:.1f} s (<= 60 s)")


def test_criterion_2_example1_extrapolation(runs, capsys):
    art, _ = runs["example1"]
    x = np.r_[np.linspace(-1.5, -1, 101), np.linspace(1, 1.5, 101)]
    y, _ = tr.trial_eval(art.trial, x)
    ref = np.column_stack([np.sin(x), 1 + x * x])
    err = float(np.max(np.abs(y[:, 1:] - ref)))
    record(capsys, 2, err <= 1e-2, f"example1 max error on [-1.5,-1] U [1,1.5] {err:.3e} (<= 1e-2)")


@pytest.fixture(scope="session")
def sweep():
    return cli.run_sweep(pf.builtin("example2"), "eps", SWEEP_EPS)


def test_criterion_3_example2_and_sweep(runs, sweep, capsys):
    art, _ = runs["example2"]
    dev, err = art.summary["train.ave_deviation"], art.summary["train.ave_error"]
    rows = [r for r in sweep if r["data"] == "training"]
    worst = max(r["ave_deviation"] for r in rows)
    complete = len(sweep) == 12 and all(r["status"] == "ok" for r in sweep)
    ok = dev <= 1e-3 and err <= 1e-5 and complete and worst <= 5e-3
    per_eps = ", ".join(f"eps={r['value']}: {r['ave_deviation']:.3e}" for r in rows)
    record(capsys, 3, ok,
           f"example2 Ave.Deviation {dev:.3e} (<= 1e-3), Ave.Error {err:.3e} (<= 1e-5); "
           f"sweep {len(sweep)} rows complete={complete}, training Ave.Deviation {per_eps} (each <= 5e-3)")


def test_criterion_4_duffing_against_rk(runs, capsys):
    art, _ = runs["example3"]
    system = art.trial.system
    ref = tr.Reference.from_rk(system, (0, 2), 1e-4)
    x = np.linspace(0, 2, 401)
    y, _ = tr.trial_eval(art.trial, x)
    err = float(np.max(np.abs(y[:, 0] - ref(x)[:, 0])))
    record(capsys, 4, err <= 1e-3,
           f"example3 max |yhat_1 - y_RK| on [0,2] {err:.3e} (<= 1e-3), m={art.trial.params.m}, "
           f"g = ({', '.join(art.summary[f'g.{v}'] for v in system.variables)})")


def test_criterion_5_anchoring(runs, capsys):
    worst = max(max(a.summary["anchor_before"], a.summary["anchor_after"]) for a, _ in runs.values())
    record(capsys, 5, worst <= 1e-12, f"max |yhat(0) - alpha| over built-ins before/after training {worst:.1e} (<= 1e-12)")


def test_criterion_6_gradients(capsys):
    grad = gradient_suite(50)
    rng = np.random.default_rng(11)
    jac = 0.0
    for _ in range(100):
        m, n = rng.integers(1, 5), rng.integers(1, 4)
        p = MlpParams.unflatten(rng.uniform(-2, 2, net.param_count(m, n)), m, n)
        x = rng.uniform(-2, 2)
        _, _, JN, JdN = net.gradients(p, x)
        fJN, fJdN = _fd_jacobians(p, x)
        jac = max(jac, np.max(np.abs(JN - fJN)), np.max(np.abs(JdN - fJdN)))
    record(capsys, 6, grad <= 1e-6 and jac <= 1e-7,
           f"loss gradient worst relative error {grad:.2e} over 50 configurations (<= 1e-6); "
           f"network Jacobian worst abs error {jac:.2e} over 100 draws (<= 1e-7)")


EXACT = {
    "example1": lambda x: np.column_stack([np.sin(x), 1 + x * x]),
    "example2": lambda x: np.column_stack([np.exp(-0.4 * x) * np.sin(x), np.exp(-0.4 * x) * (np.cos(x) - 0.4 * np.sin(x))]),
}


def test_criterion_7_full_split(capsys):
    parts = []
    ok = True
    for name in pf.BUILTINS:
        problem = pf.build(dataclasses.replace(pf.builtin(name), split_mode="full", split_g={}))
        a = assoc.solve_numeric(problem.split)
        t = tr.new_trial(a, problem.split, zero=True)
        loss = tr.loss(t, np.linspace(*problem.system.interval, 21))
        ok &= loss <= 1e-12
        text = f"{name} loss {loss:.1e}"
        if name in EXACT:
            x = np.linspace(*problem.system.interval, 401)
            gap = float(np.max(np.abs(a.value(x)[:, problem.system.unknowns] - EXACT[name](x))))
            ok &= gap <= 1e-8
            text += f", |ybar - y| {gap:.1e}"
        else:
            text += ", no exact solution"
        parts.append(text)
    record(capsys, 7, ok, "g = f with zero network: " + "; ".join(parts) + " (loss <= 1e-12, gap <= 1e-8)")


def test_criterion_8_closed_form_equivalence(capsys):
    parts = []
    ok = True
    for name in pf.BUILTINS:
        problem = pf.build(pf.builtin(name))
        closed = assoc.solve_closed_form(problem.split, problem.spec.closed_form, problem.constants,
                                         validate=False)
        numeric = assoc.solve_numeric(problem.split)
        gap = assoc.sup_distance(closed, numeric, problem.system.interval)
        ok &= gap <= 1e-8
        parts.append(f"{name} {gap:.1e}")
    record(capsys, 8, ok, "closed form vs RK4 sup-norm: " + ", ".join(parts) + " (<= 1e-8)")


def test_criterion_9_determinism(tmp_path, capsys):
    short = {"max_iter": 2000, "restarts": 2, "warmup": 500}
    same = True
    for name in pf.BUILTINS:
        for k in ("a", "b"):
            cli.emit_report(cli.run_solve(pf.builtin(name), short), tmp_path / name / k)
        for path in sorted((tmp_path / name / "a").glob("*.csv")):
            same &= filecmp.cmp(path, tmp_path / name / "b" / path.name, shallow=False)
    record(capsys, 9, same, "identical seed/config gives byte-identical CSVs for every built-in")


def test_criterion_10_baseline_comparison(capsys):
    res = cli.run_compare(pf.builtin("example1"), "constant", {"max_iter": 1000, "restarts": 1})
    lie, const = res["lie.first_term_sup_error"], res["constant.first_term_sup_error"]
    record(capsys, 10, lie < const,
           f"example1 first-term sup error on [-0.5,0.5]: Lie {lie:.3e} < constant {const:.3e}")
