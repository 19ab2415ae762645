"""Finite-difference solver for du = (u''/2 - f'(u)/2) dt + dW on [0, 1] with
Dirichlet boundary, and the weak-formulation residual diagnostics.

Space: nodes i h, h = 2^-m, values pinned to 0 at both ends. Time:
semi-implicit Euler,

    (I - dt/2 D2) u_{k+1} = u_k - dt/2 f'(u_k) + sqrt(dt / h) xi_k,

with D2 the three-point Laplacian and xi_k i.i.d. standard normal per
interior node. With f = 0 the space-discrete equation has the bridge at the
nodes as its invariant law; with a drift the invariant law is the bridge
reweighted by exp(-h sum_i f(u_i)) (the trapezoid potential).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import functionals
from .drift import JumpDrift, SmoothDrift, as_smooth
from .localtime import DegenerateLevelError, batch_crossing_sum
from .measures import GibbsSpec, sample_gibbs
from .pathcore import LINEAR, Grid, Path, TestFunction, _gauss


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SpdeScheme:
    mesh: int
    dt: float
    drift: SmoothDrift | None = None
    noise: bool = True

    def __post_init__(self):
        if self.mesh < 1:
            raise ValueError("mesh level must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        d = self.drift
        if isinstance(d, JumpDrift):
            object.__setattr__(self, "drift", as_smooth(d))

    @property
    def grid(self) -> Grid:
        return Grid(self.mesh)

    @property
    def has_drift(self) -> bool:
        return self.drift is not None and not self.drift.is_zero

    def drift_guard(self, probe: np.ndarray | None = None) -> float:
        """dt sup|f''| / 2 on a probe range (soft stability guard for the explicit drift)."""
        if not self.has_drift:
            return 0.0
        y = np.linspace(-4, 4, 8001) if probe is None else probe
        return 0.5 * self.dt * float(np.max(np.abs(self.drift.d2(y))))

    def gibbs(self) -> GibbsSpec:
        """Invariant law of the space-discrete equation, sampled exactly."""
        d = self.drift if self.has_drift else JumpDrift.zero()
        return GibbsSpec(d, level=None, mesh=self.mesh, rule="trapezoid")


def _banded(mesh: int, dt: float) -> np.ndarray:
    N = 1 << mesh
    h = 1.0 / N
    n = N - 1
    off = -0.5 * dt / (h * h)
    ab = np.zeros((3, n))
    ab[0, 1:] = off
    ab[1, :] = 1.0 + dt / (h * h)
    ab[2, :-1] = off
    return ab


@dataclass
class SpdeRun:
    grid: Grid
    times: np.ndarray
    slices: np.ndarray                 # (records, M, N + 1)

    def at(self, k: int) -> Path:
        return Path(self.grid, self.slices[k], LINEAR)

    @property
    def final(self) -> Path:
        return self.at(-1)


def simulate_regularized(s: SpdeScheme, u0: Path, T: float, rng: np.random.Generator,
                         stride: int | None = None, blow_up: float = 1e3) -> SpdeRun:
    """Semi-implicit Euler run from ``u0`` (batched linear Path at the scheme mesh)."""
    if u0.kind != LINEAR or u0.level != s.mesh:
        raise ValueError("initial state must be a linear path at the scheme mesh")
    if T <= 0:
        raise ValueError("T must be positive")
    guard = s.drift_guard()
    if guard >= 1.0:
        warnings.warn(f"explicit drift step is large: dt sup|f''|/2 = {guard:.3g}", RuntimeWarning)
    N = s.grid.n_cells
    h = s.grid.h
    u = np.array(np.atleast_2d(u0.values), dtype=float)
    u[:, 0] = u[:, -1] = 0.0
    M = u.shape[0]
    ab = _banded(s.mesh, s.dt)
    sd = math.sqrt(s.dt / h)
    steps = int(round(T / s.dt))
    interior = u[:, 1:-1].T.copy()      # (N-1, M) for the banded solve
    rec_t = [0.0]
    rec = [u.copy()]
    d = s.drift if s.has_drift else None
    for k in range(1, steps + 1):
        rhs = interior
        if d is not None:
            rhs = rhs - 0.5 * s.dt * d.d1(interior)
        if s.noise:
            rhs = rhs + sd * rng.standard_normal((N - 1, M))
        interior = linalg.solve_banded((1, 1), ab, rhs, overwrite_b=True, check_finite=False)
        if stride and k % stride == 0:
            if not np.all(np.abs(interior) < blow_up):
                raise DivergenceError(f"solution exceeded {blow_up} at step {k}")
            full = np.zeros((M, N + 1))
            full[:, 1:-1] = interior.T
            rec.append(full)
            rec_t.append(k * s.dt)
    if not np.all(np.abs(interior) < blow_up):
        raise DivergenceError(f"solution exceeded {blow_up}")
    if not stride:
        full = np.zeros((M, N + 1))
        full[:, 1:-1] = interior.T
        rec = [u, full]
        rec_t = [0.0, steps * s.dt]
    squeeze = u0.values.ndim == 1
    slices = np.stack(rec)
    if squeeze:
        slices = slices[:, :1]
    return SpdeRun(s.grid, np.array(rec_t), slices)


# --------------------------------------------------------------------------
# linear-scheme exact moments


def scheme_modes(mesh: int, dt: float):
    """Discrete sine eigenvalues of D2/2 and the per-step amplification of the scheme."""
    N = 1 << mesh
    h = 1.0 / N
    k = np.arange(1, N)
    lam = -(2.0 / h**2) * np.sin(k * np.pi * h / 2) ** 2   # eigenvalues of D2 / 2
    amp = 1.0 / (1.0 - dt * lam)
    return k, lam, amp


def stationary_midpoint_variance(mesh: int, dt: float) -> float:
    """Exact stationary Var u(1/2) of the linear (f = 0) fully discrete scheme."""
    k, lam, amp = scheme_modes(mesh, dt)
    # orthonormal (in h-weighted sum) modes phi_k(i h) = sqrt(2) sin(k pi i h)
    # mode coefficients follow c' = amp (c + sqrt(dt) eta), eta ~ N(0, 1)
    var_mode = dt * amp**2 / (1.0 - amp**2)
    phi_mid = np.sqrt(2.0) * np.sin(k * np.pi * 0.5)
    return float(np.sum(var_mode * phi_mid**2))


# --------------------------------------------------------------------------
# stationarity


@dataclass
class KSReport:
    name: str
    statistic: float
    pvalue: float

    def to_json(self) -> dict:
        return {"functional": self.name, "statistic": self.statistic, "pvalue": self.pvalue}


def stationarity_check(s: SpdeScheme, gibbs: GibbsSpec | None, T: float, M: int,
                       rng: np.random.Generator, names=("midpoint", "e1", "posocc"),
                       shift_check: bool = False) -> dict:
    """Start M runs from exact invariant samples and compare the panel at T with fresh samples.

    With ``shift_check`` the laws at T and 2T are also compared.
    """
    from .harness import ks_two_sample

    gibbs = gibbs or s.gibbs()
    if gibbs.mesh != s.mesh or gibbs.level is not None:
        raise ValueError("the Gibbs law must live on the scheme mesh")
    start_rng, run_rng, ref_rng = rng.spawn(3)
    u0 = sample_gibbs(gibbs, start_rng, M)
    fresh = sample_gibbs(gibbs, ref_rng, M)
    stride = int(round(T / s.dt))
    run = simulate_regularized(s, u0, (2 if shift_check else 1) * T, run_rng, stride=stride)
    out = {"at_T": [], "shift": []}
    ref = functionals.evaluate(fresh, names)
    at_T = functionals.evaluate(run.at(1), names)
    for nm in names:
        st, p = ks_two_sample(at_T[nm], ref[nm])
        out["at_T"].append(KSReport(nm, st, p))
    if shift_check:
        at_2T = functionals.evaluate(run.at(2), names)
        for nm in names:
            st, p = ks_two_sample(at_T[nm], at_2T[nm])
            out["shift"].append(KSReport(nm, st, p))
    return out


# --------------------------------------------------------------------------
# weak residual


@dataclass
class WeakResidual:
    h: TestFunction
    times: np.ndarray
    values: np.ndarray                # (M, times): M^h_t per run
    skipped: int = 0
    n_slices: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    @property
    def var(self) -> np.ndarray:
        return self.values.var(axis=0, ddof=1)

    @property
    def stderr(self) -> np.ndarray:
        return self.values.std(axis=0, ddof=1) / math.sqrt(self.values.shape[0])


def _node_inner(values, hv, h):
    # trapezoid pairing; both vanish (or are weighted by 1/2) at the ends
    w = np.full(hv.shape, h)
    w[0] = w[-1] = 0.5 * h
    return values @ (hv * w)


def weak_residual(run: SpdeRun, h: TestFunction, d: JumpDrift | SmoothDrift | None,
                  eps: float, laplacian: str = "discrete") -> WeakResidual:
    """M^h_t = <u_t - u_eps, h> - 1/2 int <h'', u_s> ds - 1/2 int int f(da) int h' l^a_{s,.} ds.

    The last term is evaluated slice by slice through the identity
    int f(da) int h'(th) l^a_th dth = -int df(a) int h(r) l^a(dr), with df the
    Lebesgue-Stieltjes measure of f (density f_0', mass -alpha_j at y_j); the
    jump part is the exact crossing sum over the slice. Time integrals use
    the trapezoid rule over the stored slices from ``eps`` on.
    ``laplacian="discrete"`` pairs u with the three-point second difference
    of h, which is the scheme's own operator; ``"exact"`` uses h''.
    """
    grid = run.grid
    if h.grid != grid:
        if h.funcs is None:
            raise ValueError("test function must live on the run grid")
        h = TestFunction.from_callables(*h.funcs, grid, h.compact)
    hv = np.asarray(h.values, dtype=float)
    hh = grid.h
    if laplacian == "discrete":
        d2 = np.zeros_like(hv)
        d2[1:-1] = (hv[2:] - 2 * hv[1:-1] + hv[:-2]) / hh**2
    elif laplacian == "exact":
        d2 = np.asarray(h.d2, dtype=float)
    else:
        raise ValueError(f"unknown laplacian {laplacian!r}")
    keep = run.times >= eps - 1e-12
    times = run.times[keep]
    if times.size < 2:
        raise ValueError("need at least two stored slices after eps")
    S = run.slices[keep]                             # (R, M, N+1)
    lin = _node_inner(S, hv, hh)                     # (R, M)
    lap = _node_inner(S, d2, hh)
    drift_term = np.zeros_like(lin)
    skipped = 0
    if d is not None and not d.is_zero:
        gx, gw = _gauss(5)
        hq = hv[:-1, None] + np.diff(hv)[:, None] * gx
        if isinstance(d, JumpDrift):
            f0p = d.f0.d1 if not d.f0.is_zero else None
            atoms = d.stieltjes_atoms()
        else:
            f0p, atoms = d.d1, []
        for r in range(S.shape[0]):
            v = S[r]
            smooth = 0.0
            if f0p is not None:
                pts = v[:, :-1, None] + np.diff(v, axis=1)[:, :, None] * gx
                smooth = hh * np.sum((f0p(pts) * hq[None]) @ gw, axis=-1)
            jump = 0.0
            try:
                for y, mass in atoms:
                    jump = jump + mass * batch_crossing_sum(v, grid, y, hv)
            except DegenerateLevelError:
                skipped += 1
                jump = 0.0
            # int f(da) int h' l dtheta = -(smooth + jump)
            drift_term[r] = -(smooth + jump)
        if skipped > 0.01 * S.shape[0]:
            raise DegenerateLevelError(f"{skipped} of {S.shape[0]} slices were degenerate")
    integrand = 0.5 * lap + 0.5 * drift_term
    dt = np.diff(times)[:, None]
    cum = np.vstack([np.zeros((1, lin.shape[1])), np.cumsum(0.5 * dt * (integrand[1:] + integrand[:-1]), axis=0)])
    resid = (lin - lin[0]) - cum
    return WeakResidual(h, times - times[0] + eps, resid.T, skipped, int(S.shape[0]),
                        {"eps": eps, "laplacian": laplacian})


def martingale_check(s: SpdeScheme, h: TestFunction, d: JumpDrift | SmoothDrift | None, eps: float,
                     t: float, M: int, rng: np.random.Generator, u0: Path | None = None,
                     stride: int = 10, batch: int = 250) -> WeakResidual:
    """Runs M trajectories in batches (memory) and collects M^h over [eps, t].

    Without ``u0`` the runs start from exact invariant samples of the scheme.
    """
    out = []
    times = None
    skipped = n_sl = 0
    gibbs = s.gibbs()
    for b, child in enumerate(rng.spawn((M + batch - 1) // batch)):
        m = min(batch, M - b * batch)
        a, r = child.spawn(2)
        start = sample_gibbs(gibbs, a, m) if u0 is None else u0
        if start.batch_shape and start.batch_shape[0] != m:
            start = Path(start.grid, np.broadcast_to(start.values[:1], (m, start.values.shape[-1])), LINEAR)
        elif not start.batch_shape:
            start = Path(start.grid, np.broadcast_to(start.values, (m, start.values.shape[-1])), LINEAR)
        run = simulate_regularized(s, start, t, r, stride=stride)
        w = weak_residual(run, h, d, eps)
        out.append(w.values)
        times = w.times
        skipped += w.skipped
        n_sl += w.n_slices
    return WeakResidual(h, times, np.concatenate(out, axis=0), skipped, n_sl, {"eps": eps})
