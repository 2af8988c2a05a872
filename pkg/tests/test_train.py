import numpy as np
import pytest

from lieode import assoc, kernels, net
from lieode import expr as ex
from lieode import problem as pr
from lieode import train as tr
from lieode.net import MlpParams

from conftest import duffing_system, example1_system, example2_split


def test_anchor_is_exact(ex1, ex2, ex3):
    for split, a in (ex1, ex2, ex3):
        for seed in range(3):
            t = tr.new_trial(a, split, 3, seed)
            y, _ = tr.trial_eval(t, 0.0)
            assert np.array_equal(y, split.parent.alpha)


def test_zero_network_reduces_to_first_part(ex1, rng):
    split, a = ex1
    t = tr.new_trial(a, split, zero=True)
    x = rng.uniform(-1, 1, 20)
    y, dy = tr.trial_eval(t, x)
    np.testing.assert_array_equal(y, a.value(x))
    np.testing.assert_array_equal(dy, a.derivative(x))


def test_trial_slope_matches_finite_difference(ex1, rng):
    split, a = ex1
    t = tr.new_trial(a, split, 3, seed=4)
    x = rng.uniform(-0.9, 0.9, 30)
    h = 1e-6
    fd = (tr.trial_eval(t, x + h)[0] - tr.trial_eval(t, x - h)[0]) / (2 * h)
    assert np.max(np.abs(fd - tr.trial_eval(t, x)[1])) <= 1e-7


def test_extrapolation_limits(ex1):
    split, a = ex1
    t = tr.new_trial(a, split)
    mask = tr.check_domain(t, np.array([-1.5, 0.0, 1.2]))
    assert mask.tolist() == [True, False, True]
    with pytest.raises(tr.TrainError):
        tr.trial_eval(t, 2.1)


def test_network_size_must_match_unknowns(ex1):
    split, a = ex1
    with pytest.raises(tr.TrainError):
        tr.TrialSolution(a, net.init(3, 3), split)


def test_loss_vanishes_for_full_split_with_closed_form():
    split = pr.split(duffing_system(0.0), "full")  # y'' = -y, g = f
    a = assoc.solve_closed_form(split, "example3")
    t = tr.new_trial(a, split, zero=True)
    assert tr.loss(t, np.linspace(0, 2, 21)) <= 1e-20


def test_single_point_at_origin(ex1):
    split, a = ex1
    t = tr.new_trial(a, split, zero=True)
    # h = (0, y1^2, y1*y2) vanishes at alpha = (0, 0, 1)
    assert tr.loss(t, np.array([0.0])) == 0.0


def test_loss_is_nonnegative(ex2):
    split, a = ex2
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = MlpParams.unflatten(rng.normal(size=net.param_count(3, 2)), 3, 2)
        assert tr.loss(tr.TrialSolution(a, p, split), np.linspace(0, 2, 11)) >= 0


def test_zero_loss_means_zero_residuals():
    split = pr.split(example1_system(), "full")
    a = assoc.solve_numeric(split)
    t = tr.new_trial(a, split, zero=True)
    grid = np.linspace(-1, 1, 21)
    assert tr.loss(t, grid) == 0.0
    assert np.all(tr.residuals(t, grid) == 0.0)
    assert np.linalg.norm(tr.loss_gradient(t, grid)) <= 1e-12


# ---------------------------------------------------------------------------
# gradient oracle

def _random_setup(rng):
    """A random (split, first part, parameters, grid, boundary) configuration."""
    kind = rng.integers(5)
    if kind == 0:
        system = example1_system()
        selector = ["heuristic", "full", ["1", "y2", "y1*y2"], {"y1": "y1 - y2"}][rng.integers(4)]
    elif kind == 1:
        system = example2_split(float(rng.uniform(0.05, 0.9))).parent
        selector = ["heuristic", {"y1": "y2", "y2": "-y1"}][rng.integers(2)]
    elif kind == 2:
        system = duffing_system(float(rng.uniform(0.1, 1)))
        selector = ["heuristic", "full", ["y2", "-y1 - y1^3/2"]][rng.integers(3)]
    elif kind == 3:
        system = pr.first_order(["y1*y2 - sin(y3)", "exp(-y1) - y3^2", "y1 + y2*y3"], [0.5, -0.2, 1.0],
                                (-0.5, 1.0))
        selector = "heuristic"
    else:
        system = pr.autonomize(["sqrt(1 + y1^2)*cos(x) - y1/(2 + y1^2)"], [0.3], (0, 1.5))
        selector = "heuristic"
    split = pr.split(system, selector)
    a = assoc.solve_numeric(split, estimate_error=False)
    m = int(rng.integers(1, 5))
    n = len(system.unknowns)
    p = MlpParams.unflatten(rng.uniform(-1.5, 1.5, net.param_count(m, n)), m, n)
    lo, hi = system.interval
    grid = np.sort(rng.uniform(lo, hi, int(rng.integers(2, 25))))
    boundary = None
    if rng.random() < 0.3:
        boundary = tr.Boundary(float(rng.uniform(lo, hi)), int(rng.choice(system.unknowns)),
                               float(rng.normal()), float(rng.uniform(0.1, 5)))
    return tr.TrialSolution(a, p, split), grid, boundary


def _fd_gradient(col, p, h=1e-6):
    theta = p.flatten()
    out = np.empty_like(theta)
    for k in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        out[k] = (col.loss(MlpParams.unflatten(up, p.m, p.n))
                  - col.loss(MlpParams.unflatten(down, p.m, p.n))) / (2 * h)
    return out


def gradient_suite(configs=50, seed=2024):
    """Worst relative error of the analytic gradient over random configurations."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(configs):
        t, grid, boundary = _random_setup(rng)
        col = tr.Collocation(t, grid, boundary)
        _, g = col.loss_and_gradient(t.params)
        fd = _fd_gradient(col, t.params)
        worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300))
    return worst


def test_gradient_matches_finite_differences():
    assert gradient_suite() <= 1e-6


def test_compiled_loss_matches_numpy():
    rng = np.random.default_rng(99)
    for _ in range(15):
        t, grid, boundary = _random_setup(rng)
        col = tr.Collocation(t, grid, boundary)
        value, g = col.loss_and_gradient(t.params)
        bnd = None
        if boundary is not None:
            bnd = (boundary.point, boundary.component, boundary.value, boundary.weight, col._b_ybar)
        lg = kernels.compiled_loss_grad(t.system, grid, col.ybar, col.dybar, t.params.m, bnd)
        cg = np.empty_like(g)
        cv = lg(t.params.flatten(), cg)
        assert cv == pytest.approx(value, rel=1e-12)
        np.testing.assert_allclose(cg, g, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(g).max()))


def test_boundary_penalty_term(ex2):
    split, a = ex2
    t = tr.new_trial(a, split, 3, seed=1)
    grid = np.linspace(0, 2, 21)
    b = tr.Boundary(point=2.0, component=1, value=0.3, weight=2.5)
    gap = tr.trial_eval(t, 2.0)[0][1] - 0.3
    assert tr.loss(t, grid, b) - tr.loss(t, grid) == pytest.approx(2.5 * gap * gap, rel=1e-12)
    with pytest.raises(tr.TrainError):
        tr.Collocation(t, grid, tr.Boundary(1.0, 0, 0.0))


# ---------------------------------------------------------------------------
# training loop

def test_config_validation():
    with pytest.raises(ValueError):
        tr.TrainConfig(max_iter=0)
    with pytest.raises(ValueError):
        tr.TrainConfig(eta=0)
    with pytest.raises(ValueError):
        tr.TrainConfig(points=1)
    with pytest.raises(ValueError):
        tr.TrainConfig(optimizer="lbfgs")
    with pytest.raises(ValueError):
        tr.TrainConfig(restarts=2, warmup=0)


@pytest.mark.parametrize("optimizer", ["gd", "adam"])
@pytest.mark.parametrize("backend", ["compiled", "numpy"])
def test_single_iteration(ex1, optimizer, backend):
    split, a = ex1
    t = tr.new_trial(a, split)
    _, rep = tr.train(t, tr.TrainConfig(max_iter=1, optimizer=optimizer, backend=backend, target=0))
    assert rep.iterations == 1 and rep.trajectory.size == 2
    assert rep.trajectory[0] == pytest.approx(tr.loss(t, rep.grid), rel=1e-12)


@pytest.mark.parametrize("backend", ["compiled", "numpy"])
def test_gd_trajectory_never_increases(ex1, backend):
    split, a = ex1
    t = tr.new_trial(a, split, seed=2)
    _, rep = tr.train(t, tr.TrainConfig(eta=0.5, max_iter=300, backend=backend))
    assert np.all(np.diff(rep.trajectory) <= 0)
    assert np.all(rep.trajectory >= 0)
    assert rep.eta_final < 0.5


def test_backends_agree(ex2):
    split, a = ex2
    t = tr.new_trial(a, split, seed=1)
    cfg = dict(max_iter=200, optimizer="adam", eta=0.01)
    _, r1 = tr.train(t, tr.TrainConfig(backend="compiled", **cfg))
    _, r2 = tr.train(t, tr.TrainConfig(backend="numpy", **cfg))
    np.testing.assert_allclose(r1.trajectory, r2.trajectory, rtol=1e-9)


def test_final_loss_is_recomputable(ex2):
    split, a = ex2
    t = tr.new_trial(a, split)
    trained, rep = tr.train(t, tr.TrainConfig(max_iter=2000, optimizer="adam", eta=0.01))
    assert rep.final_loss == tr.loss(trained, rep.grid)
    assert rep.final_loss == pytest.approx(rep.trajectory.min(), rel=1e-12)
    np.testing.assert_array_equal(rep.residuals, tr.residuals(trained, rep.grid))


def test_training_is_deterministic(ex1):
    split, a = ex1
    t = tr.new_trial(a, split, seed=5)
    cfg = tr.TrainConfig(max_iter=3000, optimizer="adam", eta=0.01, restarts=3, warmup=500)
    _, r1 = tr.train(t, cfg)
    _, r2 = tr.train(t, cfg)
    assert np.array_equal(r1.trajectory, r2.trajectory)
    assert np.array_equal(r1.params.flatten(), r2.params.flatten())
    assert r1.start == r2.start and r1.start_losses == r2.start_losses


def test_restarts_keep_the_best_start(ex1):
    split, a = ex1
    t = tr.new_trial(a, split, seed=0)
    _, rep = tr.train(t, tr.TrainConfig(max_iter=600, optimizer="adam", eta=0.01, restarts=3, warmup=300))
    assert len(rep.start_losses) == 3
    assert rep.iterations == 600
    assert rep.final_loss <= min(rep.start_losses) * (1 + 1e-12)


def test_stops_at_target(ex2):
    split, a = ex2
    t = tr.new_trial(a, split)
    _, rep = tr.train(t, tr.TrainConfig(max_iter=10_000, optimizer="adam", eta=0.01, target=1e-3))
    assert rep.converged and rep.iterations < 10_000
    assert rep.trajectory[-1] <= 1e-3 < rep.trajectory[-2]


@pytest.mark.parametrize("backend", ["compiled", "numpy"])
def test_divergence_is_reported(ex1, backend):
    split, a = ex1
    t = tr.new_trial(a, split)
    with pytest.raises(tr.DivergenceError) as info:
        tr.train(t, tr.TrainConfig(optimizer="adam", eta=1e4, max_iter=100, backend=backend))
    assert len(info.value.trajectory) >= 2


def test_domain_error_at_start_is_raised():
    system = pr.first_order(["-sqrt(y1)"], [1.0], (0, 1), ["y1"])
    split = pr.split(system, ["0"])
    a = assoc.solve_numeric(split)
    t = tr.TrialSolution(a, MlpParams.unflatten(np.array([0.0, 0.0, 0.0, -50.0]), 1, 1), split)
    with pytest.raises(ex.ExprDomainError, match="square root"):
        tr.train(t, tr.TrainConfig(max_iter=5))


@pytest.mark.parametrize("backend", ["compiled", "numpy"])
def test_domain_error_during_training_is_reported(backend):
    system = pr.first_order(["-sqrt(y1)"], [1.0], (0, 1), ["y1"])
    split = pr.split(system, ["0"])
    t = tr.new_trial(assoc.solve_numeric(split), split, m=1, zero=True)
    with pytest.raises(tr.DivergenceError, match="domain error") as info:
        tr.train(t, tr.TrainConfig(optimizer="adam", eta=10.0, max_iter=50, backend=backend))
    assert not np.isfinite(info.value.trajectory[-1])


# ---------------------------------------------------------------------------
# metrics

def test_metrics_vanish_for_exact_trial():
    split = pr.split(duffing_system(0.0), "full")
    a = assoc.solve_closed_form(split, "example3")
    t = tr.new_trial(a, split, zero=True)
    ref = tr.Reference.from_exprs(split.parent, {"y1": "cos(x)", "y2": "-sin(x)"})
    m = tr.metrics(t, ref, np.linspace(0, 2, 21))
    assert m["ave_error"] == 0
    assert m["max_abs_error"] == m["max_deviation"] == m["ave_deviation"] == 0


def test_weighted_deviation_is_zero_at_origin(ex2):
    split, a = ex2
    t = tr.new_trial(a, split, seed=3)
    ref = tr.Reference.from_rk(split.parent, (0, 2))
    m = tr.metrics(t, ref, np.array([0.0]))
    assert m["max_deviation"] == 0.0


def test_example2_exact_solution_matches_rk_reference():
    system = example2_split().parent
    ref = tr.Reference.from_rk(system, (0, 2.5))
    x = np.linspace(0, 2.5, 251)
    y = np.exp(-0.4 * x) * np.sin(x)
    assert np.max(np.abs(ref(x)[:, 0] - y)) <= 1e-10
    exact = ex.Compiled([ex.parse("exp(-0.4*x)*sin(x)")], ["x"])
    np.testing.assert_allclose(exact(x[:, None])[:, 0], y, rtol=1e-15, atol=1e-16)
