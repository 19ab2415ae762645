"""Exact local times of piecewise-linear paths, the occupation identity and
Monte-Carlo checks of the Gibbs integration-by-parts formulas.

For the linear interpolant of node values, the occupation density at a level
a is the sum of 1/|slope| over the segments crossing a. A node sitting
exactly at a contributes half a crossing from each adjacent segment, which
is the symmetric local time.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .drift import JumpDrift, skew_coeffs
from .measures import GibbsSpec, covariance_sigma_n, potential, sample_bridge, sample_gibbs
from .pathcore import LINEAR, Grid, Path, TestFunction, _gauss, l2_inner


class DegenerateLevelError(ValueError):
    """A path is flat exactly at a requested level; the density is undefined there."""


# --------------------------------------------------------------------------
# crossing arithmetic on (times, values) polylines


def _polyline(x: Path, theta: float = 1.0):
    if x.kind != LINEAR:
        raise ValueError("local times are defined for piecewise-linear paths")
    if x.batch_shape:
        raise ValueError("pass a single path")
    t = x.grid.nodes
    v = np.asarray(x.values)
    if theta >= 1.0:
        return t, v
    if theta <= 0.0:
        return t[:1], v[:1]
    k = int(np.searchsorted(t, theta, side="right"))
    vt = np.interp(theta, t, v)
    return np.r_[t[:k], theta], np.r_[v[:k], vt]


def _check_flat(v0, v1, a):
    bad = (v0 == v1) & (v0 == a)
    if np.any(bad):
        raise DegenerateLevelError(f"path is flat at level {a!r}")


def segment_crossings(t, v, a: float):
    """Crossing times r*, weights (1 or 1/2) and 1/|slope| of segments at level a."""
    v0, v1 = v[:-1], v[1:]
    _check_flat(v0, v1, a)
    dt = np.diff(t)
    d0, d1 = v0 - a, v1 - a
    strict = d0 * d1 < 0
    w = strict.astype(float) + 0.5 * (d0 == 0) + 0.5 * (d1 == 0)
    w = np.where(v0 == v1, 0.0, w)
    on = w > 0
    slope = (v1[on] - v0[on]) / dt[on]
    r = t[:-1][on] + (a - v0[on]) / slope
    return r, w[on], 1.0 / np.abs(slope)


def local_time_at(x: Path, a: float, theta: float = 1.0) -> float:
    """Point value of the occupation density of x restricted to [0, theta]."""
    t, v = _polyline(x, theta)
    _, w, inv = segment_crossings(t, v, a)
    return float(np.sum(w * inv))


def crossing_integral(x: Path, a: float, func: Callable) -> float:
    """int h_r l^a(dr) = sum over crossings of h(r*) / |slope|."""
    t, v = _polyline(x)
    r, w, inv = segment_crossings(t, v, a)
    return float(np.sum(w * inv * func(r)))


def batch_crossing_sum(values: np.ndarray, grid: Grid, a: float, h_nodes: np.ndarray) -> np.ndarray:
    """Vectorized sum over crossings of (I h)(r*) / |slope| for a batch of node arrays.

    ``I h`` is the linear interpolant of ``h_nodes``, which makes the IBP
    identities exact for the interpolated path.
    """
    v0, v1 = values[..., :-1], values[..., 1:]
    _check_flat(v0, v1, a)
    d0, d1 = v0 - a, v1 - a
    w = (d0 * d1 < 0) + 0.5 * (d0 == 0) + 0.5 * (d1 == 0)
    w = np.where(v0 == v1, 0.0, w)
    dv = np.where(v0 == v1, 1.0, v1 - v0)
    frac = np.clip((a - v0) / dv, 0.0, 1.0)
    hr = h_nodes[:-1] * (1 - frac) + h_nodes[1:] * frac
    inv = grid.h / np.abs(dv)
    return np.sum(w * inv * hr, axis=-1)


# --------------------------------------------------------------------------
# the field


@dataclass(frozen=True, eq=False)
class LocalTimeField:
    levels: np.ndarray
    thetas: np.ndarray
    ell: np.ndarray                       # (levels, thetas)
    crossings: list = field(repr=False)   # per level: (r*, weight, 1/|slope|)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("a,theta,ell\n")
        for i, a in enumerate(self.levels):
            for j, th in enumerate(self.thetas):
                buf.write(f"{a!r},{th!r},{self.ell[i, j]!r}\n")
        return buf.getvalue()

    def total_occupation(self, j: int = -1) -> float:
        """Trapezoid integral of l^a_theta over the level grid."""
        return float(np.trapezoid(self.ell[:, j], self.levels)) if hasattr(np, "trapezoid") \
            else float(np.trapz(self.ell[:, j], self.levels))


def local_time_field(x: Path, levels: Sequence[float], thetas: Sequence[float] = (1.0,)) -> LocalTimeField:
    levels = np.asarray(levels, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    t, v = _polyline(x)
    ell = np.zeros((levels.size, thetas.size))
    cross = []
    for i, a in enumerate(levels):
        r, w, inv = segment_crossings(t, v, a)
        cross.append((r, w, inv))
        # crossing inside [0, theta) counts fully, at theta itself by half
        below = (r[:, None] < thetas[None, :]) + 0.5 * (r[:, None] == thetas[None, :])
        ell[i] = (w * inv) @ below
    return LocalTimeField(levels, thetas, ell, cross)


def kernel_local_time(x: Path, a: float, eps: float, theta: float = 1.0) -> float:
    """(1 / 2 eps) |{r <= theta : |x_r - a| <= eps}|, the epsilon-band estimator."""
    t, v = _polyline(x, theta)
    hi = _time_below_poly(t, v, a + eps)
    lo = _time_below_poly(t, v, a - eps, strict=True)
    return float((hi - lo) / (2 * eps))


def _time_below_poly(t, v, a, strict=False):
    v0, v1 = v[:-1], v[1:]
    dt = np.diff(t)
    lo, hi = np.minimum(v0, v1), np.maximum(v0, v1)
    span = hi - lo
    flat = span == 0
    frac = np.clip((a - lo) / np.where(flat, 1.0, span), 0.0, 1.0)
    frac = np.where(flat, (lo < a) if strict else (lo <= a), frac)
    return float(np.sum(dt * frac))


# --------------------------------------------------------------------------
# occupation identity


@dataclass(frozen=True)
class LevelTest:
    """A bounded Borel test function g on levels with its discontinuity points."""

    func: Callable
    breaks: tuple = ()
    name: str = "g"

    def __call__(self, a):
        return self.func(np.asarray(a, dtype=float))

    @classmethod
    def constant(cls, c: float = 1.0):
        return cls(lambda a: np.full(np.shape(a), float(c)), (), f"const({c})")

    @classmethod
    def above(cls, c: float = 0.0):
        return cls(lambda a: (a > c).astype(float), (c,), f"1(a>{c})")

    @classmethod
    def below(cls, c: float = 0.0):
        return cls(lambda a: (a <= c).astype(float), (c,), f"1(a<={c})")

    @classmethod
    def polynomial(cls, coeffs: Sequence[float]):
        p = np.polynomial.Polynomial(coeffs)
        return cls(p, (), f"poly{list(coeffs)}")


def default_panel() -> list[LevelTest]:
    return [
        LevelTest.constant(1.0),
        LevelTest.above(0.0),
        LevelTest.below(0.0),
        LevelTest.polynomial([0.0, 0.0, 1.0]),
        LevelTest.polynomial([0.3, -1.0, 2.0]),
    ]


def level_grid(lo: float, hi: float, cells: int, anchor: float = 0.0) -> np.ndarray:
    """``cells`` uniform level cells covering [lo, hi], with ``anchor`` on an edge."""
    if cells < 2:
        raise ValueError("level grid needs at least two cells")
    da = max(hi - lo, 1e-12) / (cells - 1)
    start = anchor + da * math.floor((lo - anchor) / da)
    return start + da * np.arange(cells + 1)


def _split_points(t, v, breaks):
    """Times at which the polyline crosses any break level."""
    extra = []
    for b in breaks:
        v0, v1 = v[:-1], v[1:]
        m = (v0 - b) * (v1 - b) < 0
        if np.any(m):
            extra.append(t[:-1][m] + (b - v0[m]) / (v1[m] - v0[m]) * np.diff(t)[m])
    if not extra:
        return t, v
    tt = np.unique(np.r_[t, np.concatenate(extra)])
    return tt, np.interp(tt, t, v)


def _gl_integral_polyline(t, v, g, q=6):
    gx, gw = _gauss(q)
    dt = np.diff(t)
    pts = v[:-1, None] + (v[1:] - v[:-1])[:, None] * gx
    return float(np.sum(dt * (g(pts) @ gw)))


@dataclass(frozen=True)
class OccupationResult:
    lhs: float
    rhs: float

    @property
    def residual(self) -> float:
        return abs(self.lhs - self.rhs)


def occupation_check(x: Path, g: LevelTest | Callable, theta: float = 1.0,
                     level_cells: int = 4096, anchor: float = 0.0,
                     method: str = "split") -> OccupationResult:
    """Both sides of int_0^theta g(x_r) dr = int g(a) l^a_theta da.

    The time side integrates g along the path by Gauss-Legendre, split where
    the path crosses a break of g. The level side runs over a uniform grid of
    ``level_cells`` cells (``anchor`` on an edge):

    ``split``
        cells are further split at the node values of the path and at the
        breaks of g; on each piece the density is constant and is evaluated
        by crossing arithmetic at the piece midpoint.
    ``cell_average``
        one density value per cell, (T(a_{c+1}) - T(a_c)) / da with T the
        exact time below a. First order in the cell width.
    """
    if not isinstance(g, LevelTest):
        g = LevelTest(g)
    t, v = _polyline(x, theta)
    ts, vs = _split_points(t, v, g.breaks)
    lhs = _gl_integral_polyline(ts, vs, g)

    edges = level_grid(float(v.min()), float(v.max()), level_cells, anchor)
    inner_breaks = [b for b in g.breaks if edges[0] < b < edges[-1]]
    gx, gw = _gauss(6)
    if method == "cell_average":
        T = _time_below_many(t, v, edges)
        dens = np.diff(T) / np.diff(edges)
        cuts = np.unique(np.r_[edges, inner_breaks])
        widths = np.diff(cuts)
        pieces = widths * (g(cuts[:-1, None] + widths[:, None] * gx) @ gw)
        owner = np.clip(np.searchsorted(edges, cuts[:-1], side="right") - 1, 0, dens.size - 1)
        return OccupationResult(lhs, float(np.sum(pieces * dens[owner])))
    if method != "split":
        raise ValueError(f"unknown occupation quadrature {method!r}")
    cuts = np.unique(np.r_[edges, inner_breaks, v])
    widths = np.diff(cuts)
    keep = widths > 0
    lo, widths = cuts[:-1][keep], widths[keep]
    dens = density_many(t, v, lo + 0.5 * widths)
    pieces = widths * (g(lo[:, None] + widths[:, None] * gx) @ gw)
    return OccupationResult(lhs, float(np.sum(pieces * dens)))


def density_many(t, v, levels) -> np.ndarray:
    """Occupation density of the polyline at many levels (none equal to a node value)."""
    v0, v1 = v[:-1], v[1:]
    inv = np.diff(t) / np.where(v0 == v1, np.inf, np.abs(v1 - v0))
    lo, hi = np.minimum(v0, v1), np.maximum(v0, v1)
    out = np.empty(len(levels))
    for s in range(0, len(levels), 1024):
        a = np.asarray(levels[s:s + 1024])[:, None]
        inside = (a > lo) & (a < hi)
        out[s:s + 1024] = inside @ inv
    return out


def _time_below_many(t, v, levels):
    v0, v1 = v[:-1], v[1:]
    dt = np.diff(t)
    lo, hi = np.minimum(v0, v1), np.maximum(v0, v1)
    span = hi - lo
    flat = span == 0
    out = np.empty(levels.size)
    for s in range(0, levels.size, 1024):
        a = levels[s:s + 1024, None]
        frac = np.clip((a - lo) / np.where(flat, 1.0, span), 0.0, 1.0)
        frac = np.where(flat, lo <= a, frac)
        out[s:s + 1024] = frac @ dt
    return out


# --------------------------------------------------------------------------
# cylinder functionals


@dataclass(frozen=True, eq=False)
class Cylinder:
    """phi(x) = psi(<x, g>) with psi in {one, linear, cos, sin}.

    ``g`` is a Path (continuum, L2 pairing of interpolants) or a coordinate
    vector (level-n cell values, H_n pairing with weight 2^-n).
    """

    kind: str
    g: Path | np.ndarray | None = None

    _psi = {
        "one": (lambda s: np.ones_like(s), lambda s: np.zeros_like(s)),
        "linear": (lambda s: s, lambda s: np.ones_like(s)),
        "cos": (np.cos, lambda s: -np.sin(s)),
        "sin": (np.sin, np.cos),
    }

    def __post_init__(self):
        if self.kind not in self._psi:
            raise ValueError(f"unknown cylinder kind {self.kind!r}")

    def _pair(self, x):
        if self.g is None:
            return np.zeros(np.shape(x)[:-1] if not isinstance(x, Path) else x.batch_shape)
        if isinstance(self.g, Path):
            return l2_inner(x, self.g)
        return np.asarray(x) @ self.g / len(self.g)

    def value(self, x):
        return self._psi[self.kind][0](np.asarray(self._pair(x), dtype=float))

    def derivative(self, x, direction):
        """Directional derivative along ``direction`` (same representation as g)."""
        if self.g is None:
            return np.zeros(np.shape(self._pair(x)))
        if isinstance(self.g, Path):
            dg = float(l2_inner(direction, self.g))
        else:
            dg = float(np.dot(direction, self.g) / len(self.g))
        return self._psi[self.kind][1](np.asarray(self._pair(x), dtype=float)) * dg


# --------------------------------------------------------------------------
# integration by parts


@dataclass(frozen=True)
class IBPResult:
    lhs: float
    rhs: float
    stderr: float
    n_samples: int

    @property
    def gap(self) -> float:
        return abs(self.lhs - self.rhs)

    @property
    def z_score(self) -> float:
        return self.gap / self.stderr if self.stderr > 0 else (0.0 if self.gap == 0 else np.inf)

    def within(self, k: float = 3.0) -> bool:
        return self.gap <= k * self.stderr or self.gap < 1e-12

    def to_json(self) -> dict:
        return {"lhs": self.lhs, "rhs": self.rhs, "stderr": self.stderr, "n_samples": self.n_samples}


def ibp_residual_continuum(d: JumpDrift, h: TestFunction, phi: Cylinder, M: int,
                           rng: np.random.Generator, level: int = 7, chunk: int = 10_000) -> IBPResult:
    """Monte-Carlo check of E[rho d_h phi] = E[rho phi (-<h'', b> + int df(a) int h l^a(dr))].

    Bridges are realized at ``level``; the perturbation direction is the
    interpolant I h, with -<h'', b> in its discrete form b^T C^-1 h
    (C the node covariance), so that the identity is exact for the
    interpolated path. df has density f_0' and mass -alpha_j at y_j.
    """
    grid = Grid(level)
    if h.grid != grid:
        h = TestFunction.from_callables(*h.funcs, grid, h.compact) if h.funcs else h
    k = np.asarray(h.values, dtype=float)
    hk = grid.h
    d2k = (k[2:] - 2 * k[1:-1] + k[:-2]) / hk**2
    H = Path(grid, k, LINEAR)
    dphi_dir = H
    gx, gw = _gauss(5)
    kq = k[:-1, None] + np.diff(k)[:, None] * gx

    sums = np.zeros(3)   # w*dphi, w*phi*R, w
    diffs = []
    done = 0
    while done < M:
        m = min(chunk, M - done)
        b = sample_bridge(grid, rng, m)
        v = b.values
        w = np.exp(-potential(b, d)) if not d.is_zero else np.ones(m)
        R = -hk * (v[:, 1:-1] @ d2k)
        if not d.f0.is_zero:
            pts = v[:, :-1, None] + np.diff(v, axis=1)[:, :, None] * gx
            R = R + hk * np.sum((d.f0.d1(pts) * kq[None]) @ gw, axis=-1)
        for y, mass in d.stieltjes_atoms():
            R = R + mass * batch_crossing_sum(v, grid, y, k)
        ph = phi.value(b)
        dph = phi.derivative(b, dphi_dir)
        D = w * (dph - ph * R)
        sums += [np.sum(w * dph), np.sum(w * ph * R), np.sum(w)]
        diffs.append(D)
        done += m
    D = np.concatenate(diffs)
    Z = sums[2] / M
    se = float(np.std(D, ddof=1) / math.sqrt(M) / Z)
    return IBPResult(float(sums[0] / M / Z), float(sums[1] / M / Z), se, M)


def richardson_weights(eps: Sequence[float]) -> np.ndarray:
    """Weights c with sum c_k S(eps_k) = intercept of the least-squares line in eps."""
    X = np.column_stack([np.ones(len(eps)), np.asarray(eps, dtype=float)])
    return np.linalg.pinv(X)[0]


DEFAULT_EPS = (0.05, 0.02, 0.01)


def ibp_residual_discrete(d: JumpDrift, n: int, h: np.ndarray, phi: Cylinder, M: int,
                          rng: np.random.Generator, eps_factors: Sequence[float] = DEFAULT_EPS,
                          gaussian_factor: float = 2.0, skew_factor: float = 2.0,
                          samples: Path | None = None) -> IBPResult:
    """Monte-Carlo check of the IBP formula of pi_n in cell coordinates.

    E[d_h phi] = E[phi (-c_g x^T A_n h + 2^-n sum_i f_0'(x_i) h_i)]
                 - sum_{i,j} c_s beta_j h_i lim (1/2eps) E[phi 1(|x_i - y_j| <= eps)].

    The Gaussian term of mu_n is x^T Sigma_n^-1 h = -2 x^T A_n h, hence
    ``gaussian_factor`` = 2; the density of pi_n jumps by the factor
    exp(-alpha_j 2^-n) across y_j, so the symmetric slice carries
    ``skew_factor`` = 2. Slices use eps = factor * std(x_i), extrapolated
    linearly to eps = 0 per sample.
    """
    N = 1 << n
    h = np.asarray(h, dtype=float)
    if h.shape != (N,):
        raise ValueError(f"direction must have {N} coordinates")
    if samples is None:
        samples = sample_gibbs(GibbsSpec(d, level=n), rng, M)
    x = np.asarray(samples.values)
    M = x.shape[0]
    A = covariance_sigma_n(n).a_n
    R = -gaussian_factor * (x @ (A @ h))
    if not d.f0.is_zero:
        R = R + d.f0.d1(x) @ h / N
    ph = phi.value(x)
    dph = phi.derivative(x, h)
    rhs_i = ph * R
    if d.jumps:
        beta = skew_coeffs(d, n)
        sd = x.std(axis=0)
        c = richardson_weights(eps_factors)
        for (y, _), bj in zip(d.jumps, beta):
            slice_i = np.zeros(M)
            for ck, fk in zip(c, eps_factors):
                eps = fk * sd
                slice_i += ck * ((np.abs(x - y) <= eps) / (2 * eps)) @ h
            rhs_i = rhs_i - skew_factor * bj * ph * slice_i
    D = dph - rhs_i
    se = float(np.std(D, ddof=1) / math.sqrt(M))
    return IBPResult(float(np.mean(dph)), float(np.mean(rhs_i)), se, M)
