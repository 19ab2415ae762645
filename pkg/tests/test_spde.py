import math

import numpy as np
import pytest

from skewheat.drift import JumpDrift, SmoothPart, mollify
from skewheat.pathcore import LINEAR, Grid, Path, TestFunction, basis_vector, l2_inner
from skewheat.spde import (
    DivergenceError, SpdeScheme, martingale_check, simulate_regularized,
    stationarity_check, stationary_midpoint_variance, weak_residual,
)


def _inner(run, k, j):
    return np.ravel(l2_inner(run.at(j), basis_vector(k, run.grid)))


def test_scheme_validation():
    with pytest.raises(ValueError):
        SpdeScheme(0, 1e-3)
    with pytest.raises(ValueError):
        SpdeScheme(5, -1e-3)
    s = SpdeScheme(5, 1e-3, JumpDrift(SmoothPart("poly", (0.0, 1.0))))
    assert s.has_drift and s.drift.d1(np.array([0.2]))[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        simulate_regularized(s, Path.zeros(Grid(4)), 0.1, np.random.default_rng(0))


def test_dirichlet_bitwise(rng):
    s = SpdeScheme(5, 1e-3)
    run = simulate_regularized(s, Path.zeros(Grid(5), batch=(50,)), 0.1, rng, stride=10)
    assert np.all(run.slices[..., 0] == 0.0) and np.all(run.slices[..., -1] == 0.0)


def test_heat_mode_decay(rng):
    g = Grid(6)
    u0 = Path(g, math.sqrt(2) * np.sin(np.pi * g.nodes), LINEAR)
    run = simulate_regularized(SpdeScheme(6, 1e-4, noise=False), u0, 0.5, rng, stride=1000)
    c = np.array([_inner(run, 1, j)[0] for j in range(len(run.times))])
    np.testing.assert_allclose(c, np.exp(-np.pi**2 * run.times / 2), rtol=0.01)


def test_midpoint_variance_from_rest():
    s = SpdeScheme(4, 2.5e-4)
    run = simulate_regularized(s, Path.zeros(Grid(4), batch=(3000,)), 2.0, np.random.default_rng(11))
    mid = run.final.values[:, 8]
    assert abs(mid.var() - 0.25) < 0.01
    e1 = np.ravel(l2_inner(run.final, basis_vector(1, run.grid)))
    assert abs(e1.mean()) < 3 * e1.std() / math.sqrt(e1.size)


def test_noise_isometry(rng):
    t = 0.05
    run = simulate_regularized(SpdeScheme(6, 1e-4), Path.zeros(Grid(6), batch=(4000,)), t, rng)
    for k in (1, 2):
        c = _inner(run, k, -1)
        lam = np.pi**2 * k**2
        target = -math.expm1(-lam * t) / lam
        se = target * math.sqrt(2.0 / c.size)
        assert abs(c.var(ddof=1) - target) < 3 * se


def test_stationary_variance_cauchy():
    v = [stationary_midpoint_variance(m, 0.1 * 4.0**-m) for m in (5, 6, 7)]
    gaps = np.abs(np.diff(v))
    assert gaps[0] / gaps[1] >= 1.5
    assert abs(v[-1] - 0.25) < 1e-3
    # the scheme formula is what the solver does: spot check at mesh 4
    s = SpdeScheme(4, 2e-3)
    run = simulate_regularized(s, Path.zeros(Grid(4), batch=(20_000,)), 1.5, np.random.default_rng(2))
    mid = run.final.values[:, 8]
    target = stationary_midpoint_variance(4, 2e-3)
    assert abs(mid.var() - target) < 3 * target * math.sqrt(2.0 / mid.size)


def test_divergence_detected():
    s = SpdeScheme(4, 1e-2, JumpDrift(SmoothPart("poly", (0.0, 0.0, -400.0))), noise=False)
    g = Grid(4)
    u0 = Path(g, 5 * np.sin(np.pi * g.nodes), LINEAR)
    with pytest.warns(RuntimeWarning), pytest.raises(DivergenceError):
        simulate_regularized(s, u0, 1.0, np.random.default_rng(0), stride=1)


def test_residual_deterministic(rng):
    g = Grid(6)
    u0 = Path(g, g.nodes * (1 - g.nodes), LINEAR)
    run = simulate_regularized(SpdeScheme(6, 2e-5, noise=False), u0, 0.3, rng, stride=10)
    for k in (1, 2):
        w = weak_residual(run, TestFunction.sine(k, g), None, 0.0)
        assert w.values[:, 0] == pytest.approx(0.0)
        assert np.max(np.abs(w.values)) <= 1e-4


def test_residual_start_time(rng):
    g = Grid(5)
    u0 = Path(g, np.sin(np.pi * g.nodes), LINEAR)
    run = simulate_regularized(SpdeScheme(5, 1e-4, noise=False), u0, 0.2, rng, stride=10)
    w = weak_residual(run, TestFunction.sine(1, g), None, 0.05)
    assert w.times[0] == pytest.approx(0.05) and np.all(w.values[:, 0] == 0.0)
    with pytest.raises(ValueError):
        weak_residual(run, TestFunction.sine(1, g), None, 0.5)


@pytest.mark.slow
def test_residual_variance_isometry():
    s = SpdeScheme(6, 1e-4)
    w = martingale_check(s, TestFunction.sine(1, Grid(6)), None, 0.1, 0.5, 2000,
                         np.random.default_rng(7), stride=10)
    assert abs(w.mean[-1]) < 3 * w.stderr[-1]
    assert abs(w.var[-1] / 0.4 - 1) < 0.05


def test_residual_local_time_drift_term():
    # a drift strong enough that omitting its term is visible at this M
    g = Grid(6)
    h = TestFunction.sine(1, g)
    d = JumpDrift(SmoothPart("sin", (0.5, 2.0)), ((0.1, 3.0),))
    s = SpdeScheme(6, 1e-4, mollify(d, 32))
    rng = np.random.default_rng(5)
    w = martingale_check(s, h, d, 0.05, 0.25, 800, rng, stride=5)
    assert abs(w.mean[-1]) < 3 * w.stderr[-1]
    assert w.skipped == 0
    w0 = martingale_check(s, h, None, 0.05, 0.25, 800, np.random.default_rng(5), stride=5)
    assert abs(w0.mean[-1]) > 3 * w0.stderr[-1]


def test_stationarity_gaussian(rng):
    out = stationarity_check(SpdeScheme(5, 2e-4), None, 0.1, 1000, rng, shift_check=True)
    assert all(r.pvalue > 0.001 for r in out["at_T"] + out["shift"])
    assert {r.name for r in out["at_T"]} == {"midpoint", "e1", "posocc"}
