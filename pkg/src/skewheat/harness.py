"""Statistical machinery: KS comparisons, convergence studies across
approximation levels and time-increment scaling fits."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import functionals
from .drift import JumpDrift, mollify
from .measures import GibbsSpec, potential, sample_bridge, sample_gibbs
from .pathcore import LINEAR, Grid, Path, h_minus1_norm, holder_norm, project
from .skew import simulate_interacting, stable_dt
from .spde import SpdeScheme, simulate_regularized


class DegenerateDataError(ValueError):
    """All increments vanish; a power law cannot be fitted."""


@dataclass(frozen=True)
class SampleSet:
    label: str
    values: np.ndarray
    weights: np.ndarray | None = None
    provenance: tuple = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size == 0:
            raise ValueError(f"sample set {self.label!r} is empty")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"sample set {self.label!r} has non-finite values")
        object.__setattr__(self, "values", v)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).ravel()
            if w.shape != v.shape or np.any(w < 0) or not w.sum() > 0:
                raise ValueError("weights must be nonnegative, not all zero, one per value")
            object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.values.size

    @property
    def effective_size(self) -> float:
        if self.weights is None:
            return float(self.values.size)
        w = self.weights
        return float(w.sum() ** 2 / np.sum(w * w))


def _values(a) -> np.ndarray:
    if isinstance(a, SampleSet):
        return a.values
    v = np.asarray(a, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("KS test needs nonempty samples")
    return v


def ks_two_sample(a, b) -> tuple[float, float]:
    """Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value."""
    x, y = _values(a), _values(b)
    res = stats.ks_2samp(x, y, method="asymp")
    return float(res.statistic), float(res.pvalue)


def ks_band(m1: float, m2: float, level: float = 0.01) -> float:
    """Critical KS distance at the given level for sample sizes m1, m2."""
    c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c * math.sqrt(1.0 / m1 + 1.0 / m2)


def weighted_ks_distance(x, y, wy=None) -> float:
    """sup |F_x - G_y| with G the (optionally weighted) empirical CDF of y."""
    x = np.sort(np.asarray(x, float))
    order = np.argsort(y, kind="stable")
    ys = np.asarray(y, float)[order]
    w = np.ones(ys.size) if wy is None else np.asarray(wy, float)[order]
    G = np.cumsum(w) / w.sum()
    pts = np.union1d(x, ys)
    Fx = np.searchsorted(x, pts, side="right") / x.size
    idx = np.searchsorted(ys, pts, side="right")
    Gy = np.where(idx > 0, G[np.maximum(idx - 1, 0)], 0.0)
    return float(np.max(np.abs(Fx - Gy)))


def bootstrap_ks(x, ref: SampleSet, rng: np.random.Generator, B: int = 200,
                 level: float = 0.95) -> tuple[float, float, float]:
    """KS distance to a (weighted) reference with a percentile bootstrap CI."""
    x = np.asarray(x, float)
    d = weighted_ks_distance(x, ref.values, ref.weights)
    reps = np.empty(B)
    n, m = x.size, ref.values.size
    for b in range(B):
        i = rng.integers(0, n, n)
        j = rng.integers(0, m, m)
        reps[b] = weighted_ks_distance(x[i], ref.values[j], None if ref.weights is None else ref.weights[j])
    lo, hi = np.quantile(reps, [(1 - level) / 2, (1 + level) / 2])
    return d, float(lo), float(hi)


# --------------------------------------------------------------------------
# convergence across levels


@dataclass
class LevelResult:
    n: int
    functional: str
    route: str
    distance: float
    ci: tuple

    def to_json(self) -> dict:
        return {"n": self.n, "functional": self.functional, "route": self.route,
                "distance": self.distance, "ci": list(self.ci)}


@dataclass
class ConvergenceReport:
    levels: list
    results: list = field(default_factory=list)
    route_agreement: list = field(default_factory=list)   # (n, functional, KS, band)
    reference: str = ""

    def distances(self, functional: str, route: str = "skew") -> list[float]:
        return [r.distance for n in self.levels for r in self.results
                if r.n == n and r.functional == functional and r.route == route]

    def row(self, n, functional, route="skew") -> LevelResult:
        return next(r for r in self.results if r.n == n and r.functional == functional and r.route == route)

    def decreasing(self, functional: str, route: str = "skew") -> bool:
        """Point estimates strictly decrease and the finest CI lies below the coarsest."""
        rows = [self.row(n, functional, route) for n in self.levels]
        d = [r.distance for r in rows]
        strict = all(b < a for a, b in zip(d, d[1:]))
        return strict and rows[-1].ci[1] < rows[0].ci[0]

    def routes_agree(self, levels=None) -> bool:
        """KS between the two routes within the null band; by default at the finest level only.

        At coarse levels the routes are different finite approximations of the
        same limit and need not agree.
        """
        levels = [self.levels[-1]] if levels is None else list(levels)
        rows = [r for r in self.route_agreement if r[0] in levels]
        return bool(rows) and all(ks <= band for _, _, ks, band in rows)

    def to_json(self) -> dict:
        return {
            "levels": list(self.levels),
            "reference": self.reference,
            "results": [r.to_json() for r in self.results],
            "route_agreement": [
                {"n": n, "functional": f, "ks": ks, "band": band, "ok": ks <= band}
                for n, f, ks, band in self.route_agreement
            ],
        }

    def to_csv(self) -> str:
        lines = ["n,functional,route,distance,ci_lo,ci_hi"]
        for r in self.results:
            lines.append(f"{r.n},{r.functional},{r.route},{r.distance:.8g},{r.ci[0]:.8g},{r.ci[1]:.8g}")
        return "\n".join(lines) + "\n"


def reference_sample(d: JumpDrift, mesh: int, M: int, rng: np.random.Generator) -> tuple[Path, np.ndarray]:
    """Fine-mesh bridges with importance weights exp(-F) (normalized to mean 1)."""
    x = sample_bridge(Grid(mesh), rng, M)
    F = potential(x, d)
    w = np.exp(-(F - F.min()))
    return x, w / w.mean()


def skew_route(d: JumpDrift, n: int, M: int, rng: np.random.Generator, T: float = 0.02,
               dt: float | None = None) -> Path:
    """Exact pi_n starts evolved by the interacting skew system."""
    a, b = rng.spawn(2)
    x0 = sample_gibbs(GibbsSpec(d, level=n), a, M)
    dt = stable_dt(n) if dt is None else dt
    T = max(T, dt)
    run = simulate_interacting(n, d, dt, T, x0.values, b)
    return run.paths(-1)


def spde_route(d: JumpDrift, n: int, M: int, rng: np.random.Generator, mesh: int | None = None,
               T: float = 0.05, dt: float = 1e-4, index: int | None = None) -> Path:
    """Mollified SPDE from its exact invariant law, projected to the level-n cells."""
    mesh = max(n, 6) if mesh is None else mesh
    idx = index if index is not None else 1 << n
    drift = mollify(d, idx) if d.has_jumps else (None if d.is_zero else d)
    s = SpdeScheme(mesh, dt, drift)
    guard = s.drift_guard()
    if guard > 0.9:
        # keep the explicit drift step inside the soft stability guard
        s = SpdeScheme(mesh, dt * 0.9 / guard, drift)
    a, b = rng.spawn(2)
    u0 = sample_gibbs(s.gibbs(), a, M)
    run = simulate_regularized(s, u0, T, b)
    return project(run.final, n)


def convergence_study(d: JumpDrift, levels, names=("posocc",), M: int = 2000,
                      rng: np.random.Generator | None = None, reference_mesh: int = 10,
                      reference_M: int = 20_000, spde: bool = True, bootstrap: int = 200,
                      skew_T: float = 0.02, spde_T: float = 0.05, spde_dt: float = 1e-4) -> ConvergenceReport:
    """Distances of level-n stationary laws to the continuum Gibbs law.

    For each n the skew route samples pi_n exactly and evolves it with the
    interacting system; the SPDE route (optional) runs the mollified equation
    from its own invariant law and projects to level n. Both are compared by
    KS distance with the importance-weighted fine-mesh reference, and with
    each other against the KS null band.
    """
    levels = sorted(int(n) for n in levels)
    if len(levels) < 2:
        raise ValueError("a convergence study needs at least two levels")
    if len(set(levels)) != len(levels):
        raise ValueError("levels must be distinct")
    rng = rng if rng is not None else np.random.default_rng()
    ref_rng, boot_rng, *lvl = rng.spawn(2 + len(levels))
    xr, w = reference_sample(d, reference_mesh, reference_M, ref_rng)
    ref_f = functionals.evaluate(xr, names)
    refs = {nm: SampleSet(f"reference:{nm}", ref_f[nm], w) for nm in names}
    rep = ConvergenceReport(levels, reference=f"bridge at mesh {reference_mesh}, {reference_M} weighted samples")
    for n, child in zip(levels, lvl):
        r_skew, r_spde = child.spawn(2)
        routes = {"skew": functionals.evaluate(skew_route(d, n, M, r_skew, T=skew_T), names)}
        if spde:
            routes["spde"] = functionals.evaluate(spde_route(d, n, M, r_spde, T=spde_T, dt=spde_dt), names)
        for route, vals in routes.items():
            for nm in names:
                dist, lo, hi = bootstrap_ks(vals[nm], refs[nm], boot_rng, B=bootstrap)
                rep.results.append(LevelResult(n, nm, route, dist, (lo, hi)))
        if spde:
            for nm in names:
                ks, _ = ks_two_sample(routes["skew"][nm], routes["spde"][nm])
                rep.route_agreement.append((n, nm, ks, ks_band(M, M)))
    return rep


# --------------------------------------------------------------------------
# time-increment scaling


@dataclass
class ScalingFit:
    slope: float
    ci: tuple
    intercept: float
    lags: np.ndarray
    moments: np.ndarray

    def to_json(self) -> dict:
        return {"slope": self.slope, "ci": list(self.ci), "intercept": self.intercept,
                "lags": self.lags.tolist(), "moments": self.moments.tolist()}


def _lag_steps(times, lag) -> int:
    dt = float(times[1] - times[0])
    k = int(round(lag / dt))
    if k < 1 or abs(k * dt - lag) > 1e-9 * max(1.0, lag):
        raise ValueError(f"lag {lag} is not a multiple of the stored step {dt}")
    if k >= len(times):
        raise ValueError(f"lag {lag} exceeds the trajectory length")
    return k


def _increment_norms(slices, grid, k, starts, norm, theta):
    inc = slices[starts + k] - slices[starts]      # (starts, M, N+1)
    p = Path(grid, inc, LINEAR)
    if norm == "holder":
        return holder_norm(p, theta)
    return h_minus1_norm(p, min(64, grid.n_cells))


def holder_scaling(times, slices, grid: Grid, theta: float, p: float, lags,
                   norm: str = "holder", rng: np.random.Generator | None = None,
                   B: int = 400, level: float = 0.95, max_starts: int = 8) -> ScalingFit:
    """Fit xi in E||X_{t+delta} - X_t||^p ~ delta^xi by least squares in log-log.

    ``slices`` has shape (records, runs, nodes) on equally spaced ``times``;
    increments start at up to ``max_starts`` evenly spread times per run
    (stationarity makes them identically distributed). ``norm`` is
    ``"holder"`` (C^theta) or ``"hm1"``. The CI is a percentile bootstrap
    over runs.
    """
    lags = np.asarray(sorted(lags), dtype=float)
    if lags.size < 3:
        raise ValueError("need at least three lags")
    if norm not in ("holder", "hm1"):
        raise ValueError(f"unknown norm {norm!r}")
    slices = np.asarray(slices, dtype=float)
    runs = slices.shape[1]
    per_run = np.empty((lags.size, runs))
    for i, lag in enumerate(lags):
        k = _lag_steps(times, lag)
        n_start = slices.shape[0] - k
        starts = np.unique(np.linspace(0, n_start - 1, min(max_starts, n_start)).astype(int))
        vals = _increment_norms(slices, grid, k, starts, norm, theta)
        per_run[i] = np.mean(vals ** p, axis=0)
    if np.all(per_run == 0):
        raise DegenerateDataError("all increments vanish")
    if np.any(per_run.mean(axis=1) == 0):
        raise DegenerateDataError("some lag has identically zero increments")
    X = np.log(lags)

    def fit(pr):
        coef = np.polyfit(X, np.log(pr.mean(axis=1)), 1)
        return coef[0], coef[1]

    slope, icpt = fit(per_run)
    rng = rng if rng is not None else np.random.default_rng(0)
    reps = np.empty(B)
    for b in range(B):
        reps[b] = fit(per_run[:, rng.integers(0, runs, runs)])[0]
    lo, hi = np.quantile(reps, [(1 - level) / 2, (1 + level) / 2])
    return ScalingFit(float(slope), (float(lo), float(hi)), float(icpt), lags, per_run.mean(axis=1))


def stationary_heat_trajectories(mesh: int, dt: float, T: float, M: int, rng: np.random.Generator,
                                 stride: int = 1, drift=None):
    """Runs of the heat equation started from its exact invariant law; returns (times, slices, grid)."""
    s = SpdeScheme(mesh, dt, drift)
    a, b = rng.spawn(2)
    u0 = sample_gibbs(s.gibbs(), a, M)
    run = simulate_regularized(s, u0, T, b, stride=stride)
    return run.times, run.slices, run.grid
