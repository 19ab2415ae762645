"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Statistical criteria use fixed seeds; where a criterion involves many
p-values or a tight band, three independent seeds are run and the majority
decides.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from skewheat.drift import JumpDrift, mollify
from skewheat.harness import (
    convergence_study, holder_scaling, stationary_heat_trajectories,
)
from skewheat.localtime import Cylinder, default_panel, ibp_residual_continuum, occupation_check
from skewheat.measures import GibbsSpec, covariance_sigma_n, estimate_Z, sample_bridge, sample_gibbs
from skewheat.pathcore import Grid, TestFunction, l2_inner, time_below
from skewheat.rng import derive
from skewheat.skew import simulate_interacting, skew_walk_path, stable_dt
from skewheat.spde import SpdeScheme, martingale_check, stationarity_check
from skewheat.spectral import (
    _counts_by_enumeration, divergence_diagnostic, euler_product_coefficients, hs_trace,
)

SEED = 20240611
SEEDS = (0, 1, 2)
INDICATOR = JumpDrift.indicator(1.0, 0.0)       # f = 1(y <= 0)


@pytest.fixture
def report(capsys, request):
    t0 = time.perf_counter()

    def emit(number: int, title: str, ok: bool, detail: str):
        line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}  [{time.perf_counter() - t0:.1f}s]"
        with capsys.disabled():
            print("\n" + line)
        request.config.stash.setdefault(_LINES, []).append(line)
        return ok

    return emit


_LINES = pytest.StashKey[list]()


def _majority(flags) -> bool:
    flags = list(flags)
    return sum(flags) * 2 > len(flags)


def test_01_partition_identity(report):
    N = 60
    enum = _counts_by_enumeration(N)
    series = euler_product_coefficients(N)
    ok = enum == series and series[0] == 1
    assert report(1, "partition identity", ok,
                  f"enumeration == Euler product for n <= {N}: {enum == series}; C_0 = {series[0]}; C_60 = {series[60]}")


def test_02_hs_trace(report):
    rows = []
    ok = True
    for t in (0.05, 0.1, 0.5):
        r = hs_trace(t)
        good = r.rel_gap <= 1e-6 and r.sum_tail_bound / r.product_side <= 1e-6 and r.product_tail_bound / r.product_side <= 1e-6
        if t == 0.1:
            good = good and abs(r.product_side - 1.16175) < 5e-6
        ok = ok and good
        rows.append(f"t={t}: sum={r.sum_side:.8f} prod={r.product_side:.8f} rel={r.rel_gap:.1e} "
                    f"tails<={max(r.sum_tail_bound, r.product_tail_bound):.1e}")
    assert report(2, "Hilbert-Schmidt trace", ok, "; ".join(rows))


def test_03_non_hs_divergence(report):
    d = divergence_diagnostic(400)
    s = [d.at(c) for c in (100, 200, 400)]
    ok = s[0] < s[1] < s[2] and d.gap_ratio >= 0.9
    assert report(3, "non-HS divergence", ok,
                  f"S(100,200,400) = {s[0]:.2f}, {s[1]:.2f}, {s[2]:.2f}; gap ratio {d.gap_ratio:.3f} (>= 0.9)")


def test_04_skew_walk_law(report):
    rows = []
    ok = True
    for i, beta in enumerate((0.0, 0.5, 1.0)):
        x = skew_walk_path(beta, 1.0, 1e-4, rng=derive(SEED, "walk", i), size=100_000)
        q = float(np.mean(x > 0))
        ok = ok and abs(q - (1 + beta) / 2) <= 0.01
        rows.append(f"beta={beta}: P(X_1>0)={q:.4f} vs {(1 + beta) / 2:.2f}")
    assert report(4, "skew-walk law", ok, "; ".join(rows))


def test_05_occupation_formula(report):
    x = sample_bridge(Grid(8), derive(SEED, "occupation"), 20)
    worst = {}
    for g in default_panel():
        worst[g.name] = max(occupation_check(x[i], g, level_cells=4096).residual for i in range(20))
    m = max(worst.values())
    detail = f"max residual {m:.1e} (<= 1e-6) over 20 bridges; " + ", ".join(f"{k}:{v:.0e}" for k, v in worst.items())
    assert report(5, "occupation-time formula", m <= 1e-6, detail)


def test_06_continuum_ibp(report):
    grid = Grid(7)
    rows = []
    ok = True
    analytic = None
    case = 0
    for fname, d in (("0", JumpDrift.zero()), ("1(y<=0)", INDICATOR)):
        for k in (1, 2):
            h = TestFunction.sine(k, grid)
            H = h.as_path()
            for kind in ("one", "linear", "cos"):
                r = ibp_residual_continuum(d, h, Cylinder(kind, H), 100_000, derive(SEED, "ibp", case), level=7)
                case += 1
                ok = ok and r.within(3)
                rows.append(f"{fname}/e{k}/{kind}: z={r.z_score:.2f}")
                if fname == "0" and kind == "linear" and k == 1:
                    norm2 = float(l2_inner(H, H))
                    analytic = (r.rhs, r.stderr, norm2)
    rhs, se, norm2 = analytic
    ok_an = abs(rhs - norm2) <= 3 * se and abs(norm2 - 1.0) < 1e-3
    detail = (f"all 12 |lhs-rhs| <= 3 se: {ok}; analytic f=0, phi=<.,e1>: rhs={rhs:.4f}+-{se:.4f} vs "
              f"||Ih||^2={norm2:.5f} (||h||^2=1); " + ", ".join(rows))
    assert report(6, "continuum IBP", ok and ok_an, detail)


def test_07_gibbs_normalization(report):
    target = 1 - math.exp(-1)
    z8 = estimate_Z(GibbsSpec(INDICATOR, level=8), 200_000, derive(SEED, "Z", 8))
    zc = estimate_Z(GibbsSpec(INDICATOR, level=None, mesh=8), 100_000, derive(SEED, "Z", "nu"))
    # uniform occupation oracle: the time a bridge spends below 0 is U(0, 1)
    tb = time_below(sample_bridge(Grid(8), derive(SEED, "Z", "occ"), 20_000), 0.0)[..., 0]
    p_unif = stats.kstest(tb, "uniform").pvalue
    agree = abs(z8.mean - zc.mean) <= 3 * math.hypot(z8.stderr, zc.stderr)
    ok = abs(z8.mean - target) <= 0.005 and abs(zc.mean - target) <= 0.005 and agree and p_unif > 0.01
    assert report(7, "Gibbs normalization", ok,
                  f"Z(level 8) = {z8.mean:.5f}+-{z8.stderr:.5f}, Z(mesh 8 bridge) = {zc.mean:.5f}+-{zc.stderr:.5f}, "
                  f"target {target:.5f} +- 0.005; uniform occupation KS p = {p_unif:.3f}")


def test_08_pi_n_invariance(report):
    n, M = 2, 2000
    spec = GibbsSpec(INDICATOR, level=n)
    verdicts, rows = [], []
    for s in SEEDS:
        x0 = sample_gibbs(spec, derive(SEED, "inv", s, 0), M)
        fresh = sample_gibbs(spec, derive(SEED, "inv", s, 1), M).values
        run = simulate_interacting(n, INDICATOR, 1e-4, 1.0, x0.values, derive(SEED, "inv", s, 2))
        pv = [stats.ks_2samp(run.state.x[:, i], fresh[:, i]).pvalue for i in range(1 << n)]
        verdicts.append(min(pv) > 0.01)
        rows.append(f"seed {s}: p=" + ",".join(f"{p:.3f}" for p in pv))
    assert report(8, "pi_n invariance", _majority(verdicts), f"majority {sum(verdicts)}/3; " + "; ".join(rows))


def test_09_ou_calibration(report):
    verdicts, rows = [], []
    for s in SEEDS:
        worst = 0.0
        for n in (1, 2, 3):
            M = 20_000
            r = simulate_interacting(n, JumpDrift.zero(), stable_dt(n), 2.0, np.zeros((M, 1 << n)),
                                     derive(SEED, "ou", s, n))
            x = r.state.x
            S = covariance_sigma_n(n).sigma
            prod = x[:, :, None] * x[:, None, :]
            z = np.abs(prod.mean(0) - S) / (prod.std(0) / math.sqrt(M))
            worst = max(worst, float(z.max()))
        verdicts.append(worst <= 3)
        rows.append(f"seed {s}: max |z| = {worst:.2f}")
    assert report(9, "OU calibration", _majority(verdicts),
                  f"Sigma_n entries within 3 se for n=1,2,3: majority {sum(verdicts)}/3; " + "; ".join(rows))


def test_10_spde_stationarity(report):
    verdicts, rows = [], []
    for s in SEEDS:
        good = True
        parts = []
        for fname, drift in (("0", None), ("mollify8", mollify(INDICATOR, 8))):
            scheme = SpdeScheme(6, 1e-4, drift)
            out = stationarity_check(scheme, None, 0.2, 2000, derive(SEED, "stat", s, fname), shift_check=True)
            pv = [r.pvalue for r in out["at_T"] + out["shift"]]
            good = good and min(pv) > 0.01
            parts.append(f"{fname} min p={min(pv):.3f}")
        verdicts.append(good)
        rows.append(f"seed {s}: " + ", ".join(parts))
    assert report(10, "SPDE stationarity", _majority(verdicts),
                  f"panel KS at T and T vs 2T, mesh 2^-6: majority {sum(verdicts)}/3; " + "; ".join(rows))


def test_11_martingale_structure(report):
    verdicts, rows = [], []
    eps, t = 0.1, 0.5
    for s in SEEDS:
        w = martingale_check(SpdeScheme(6, 1e-4), TestFunction.sine(1, Grid(6)), None, eps, t, 2000,
                             derive(SEED, "mart", s), stride=10)
        target = 1.0 * (t - eps)
        ok_mean = abs(w.mean[-1]) <= 3 * w.stderr[-1]
        ok_var = abs(w.var[-1] / target - 1) <= 0.05
        verdicts.append(ok_mean and ok_var)
        rows.append(f"seed {s}: mean={w.mean[-1]:+.4f} (se {w.stderr[-1]:.4f}), var={w.var[-1]:.4f} vs {target}")
    assert report(11, "martingale structure", _majority(verdicts), f"majority {sum(verdicts)}/3; " + "; ".join(rows))


def test_12_convergence_in_law(report):
    verdicts, rows = [], []
    for s in SEEDS:
        rep = convergence_study(INDICATOR, [2, 4, 6], ("posocc",), M=2000, rng=derive(SEED, "conv", s))
        dec = rep.decreasing("posocc")
        agree = rep.routes_agree()
        ks6 = next(ks for n, _, ks, _ in rep.route_agreement if n == 6)
        band = rep.route_agreement[-1][3]
        verdicts.append(dec and agree)
        d = ", ".join(f"{v:.3f}" for v in rep.distances("posocc"))
        ci = rep.row(6, "posocc").ci
        rows.append(f"seed {s}: KS(n=2,4,6)={d} (n=6 CI {ci[0]:.3f}-{ci[1]:.3f}), routes KS={ks6:.3f} <= {band:.3f}")
    assert report(12, "convergence in law", _majority(verdicts), f"majority {sum(verdicts)}/3; " + "; ".join(rows))


def test_13_holder_scaling(report):
    verdicts, rows = [], []
    for s in SEEDS:
        times, sl, g = stationary_heat_trajectories(6, 2.0**-14, 2.0**-3, 300, derive(SEED, "holder", s, 0), stride=4)
        fh = holder_scaling(times, sl, g, 0.1, 12, [2.0**-k for k in range(8, 3, -1)], rng=derive(SEED, "holder", s, 1))
        times, sl, g = stationary_heat_trajectories(6, 2.0**-16, 2.0**-10, 2000, derive(SEED, "holder", s, 2))
        fm = holder_scaling(times, sl, g, 0.1, 4, [2.0**-k for k in range(16, 11, -1)], norm="hm1",
                            max_starts=16, rng=derive(SEED, "holder", s, 3))
        ok = fh.ci[0] > 1.0 and fm.ci[1] >= 2.0
        verdicts.append(ok)
        rows.append(f"seed {s}: xi={fh.slope:.2f} CI ({fh.ci[0]:.2f}, {fh.ci[1]:.2f}); "
                    f"H^-1 p=4 slope={fm.slope:.3f} CI ({fm.ci[0]:.3f}, {fm.ci[1]:.3f}) vs 2")
    assert report(13, "Holder scaling", _majority(verdicts), f"majority {sum(verdicts)}/3; " + "; ".join(rows))
