"""Bridge laws, Gibbs reweightings and the finite-dimensional Gaussian geometry.

Measures handled here:

* mu      Brownian bridge on [0, 1] (realized on the nodes of a dyadic mesh)
* mu_n    law of the level-n cell averages of the bridge
* nu      mu reweighted by exp(-F), F(x) = int_0^1 f(x_r) dr (realized at a mesh)
* pi_n    mu_n reweighted by exp(-F_n), F_n(x) = 2^-n sum_i f(x_i)

Gibbs laws are sampled by exact rejection from the Gaussian proposal with
acceptance probability exp(-F - B), B = sup |f|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import linalg

from .drift import JumpDrift, SmoothDrift, eval_f
from .pathcore import CONSTANT, LINEAR, Grid, Path, _gauss, project, time_below


class FactorizationError(np.linalg.LinAlgError):
    pass


# --------------------------------------------------------------------------
# covariance of cell averages


def _sigma_closed_form(n: int) -> np.ndarray:
    N = 1 << n
    e = np.arange(N + 1) / N
    a, b = e[:-1], e[1:]
    first = (b**2 - a**2) / 2                 # int_cell r dr
    comp = (b - a) - first                    # int_cell (1 - s) ds
    S = np.outer(first, comp)
    S = np.triu(S, 1)
    S = S + S.T
    diag = (b**3 - a**3) / 3 - a**2 * (b - a) - first**2
    S[np.diag_indices(N)] = diag
    return S * float(N * N)


@dataclass(frozen=True, eq=False)
class CovarianceOperator:
    """Sigma_n = Cov of bridge cell averages; A_n = -Sigma_n^-1 / 2."""

    level: int
    sigma: np.ndarray
    chol: np.ndarray
    a_n: np.ndarray

    @property
    def generator(self) -> np.ndarray:
        """Drift matrix of the cell coordinates, 2^n A_n (noise variance 2^n dt)."""
        return self.a_n * float(1 << self.level)

    @property
    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        return _generator_eigh(self.level)

    def sample(self, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
        N = 1 << self.level
        z = rng.standard_normal((1 if size is None else size, N))
        out = z @ self.chol.T
        return out[0] if size is None else out


@lru_cache(maxsize=None)
def covariance_sigma_n(n: int) -> CovarianceOperator:
    """Closed-form 4^n int int_{cell_i x cell_j} (r ^ s - r s) dr ds."""
    if n < 0:
        raise ValueError("level must be >= 0")
    S = _sigma_closed_form(n)
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError(f"Sigma_{n} is not positive definite") from exc
    inv = linalg.cho_solve((L, True), np.eye(S.shape[0]))
    A = -0.5 * (inv + inv.T) / 2
    for arr in (S, L, A):
        arr.setflags(write=False)
    return CovarianceOperator(n, S, L, A)


def drift_matrix_an(n: int) -> np.ndarray:
    return covariance_sigma_n(n).a_n


@lru_cache(maxsize=None)
def _generator_eigh(n: int):
    w, V = np.linalg.eigh(covariance_sigma_n(n).generator)
    w.setflags(write=False)
    V.setflags(write=False)
    return w, V


# --------------------------------------------------------------------------
# bridge samplers


@lru_cache(maxsize=16)
def _node_cholesky(level: int) -> np.ndarray:
    r = Grid(level).nodes[1:-1]
    C = np.minimum.outer(r, r) - np.outer(r, r)
    L = np.linalg.cholesky(C)
    L.setflags(write=False)
    return L


def _bridge_cholesky(level: int, rng, size: int) -> np.ndarray:
    N = 1 << level
    out = np.zeros((size, N + 1))
    if N > 1:
        out[:, 1:-1] = rng.standard_normal((size, N - 1)) @ _node_cholesky(level).T
    return out


def _bridge_bisection(level: int, rng, size: int) -> np.ndarray:
    N = 1 << level
    out = np.zeros((size, N + 1))
    h = 1.0 / N
    for lev in range(1, level + 1):
        step = N >> lev
        idx = np.arange(step, N, 2 * step)
        # midpoint of a bridge over length 2 step h has conditional variance step h / 2
        sd = math.sqrt(step * h / 2.0)
        out[:, idx] = 0.5 * (out[:, idx - step] + out[:, idx + step]) + sd * rng.standard_normal((size, idx.size))
    return out


def sample_bridge(grid: Grid, rng: np.random.Generator, size: int | None = None,
                  method: str = "auto") -> Path:
    """Exact Brownian-bridge values at the grid nodes (piecewise-linear Path)."""
    if method == "auto":
        method = "cholesky" if grid.level <= 6 else "bisection"
    m = 1 if size is None else int(size)
    if method == "cholesky":
        v = _bridge_cholesky(grid.level, rng, m)
    elif method == "bisection":
        v = _bridge_bisection(grid.level, rng, m)
    else:
        raise ValueError(f"unknown bridge method {method!r}")
    return Path(grid, v[0] if size is None else v, LINEAR)


def sample_mu_n(n: int, rng: np.random.Generator, size: int | None = None,
                method: str = "auto") -> Path:
    """Exact draw of the bridge cell averages at level n.

    ``cholesky`` factors Sigma_n; ``nodes`` samples the bridge at level-n
    nodes and adds the independent within-cell fluctuation of the average,
    whose variance is h / 12 for a sub-bridge of length h.
    """
    if method == "auto":
        method = "cholesky" if n <= 6 else "nodes"
    m = 1 if size is None else int(size)
    if method == "cholesky":
        v = covariance_sigma_n(n).sample(rng, m)
    elif method == "nodes":
        nodes = _bridge_bisection(n, rng, m)
        h = 1.0 / (1 << n)
        v = 0.5 * (nodes[:, :-1] + nodes[:, 1:]) + math.sqrt(h / 12.0) * rng.standard_normal((m, 1 << n))
    else:
        raise ValueError(f"unknown mu_n method {method!r}")
    return Path(Grid(n), v[0] if size is None else v, CONSTANT)


# --------------------------------------------------------------------------
# potentials


Drift = JumpDrift | SmoothDrift


def _drift_values(d: Drift, y):
    return eval_f(d, y) if isinstance(d, JumpDrift) else d(y)


def _constant_value(d: Drift) -> float | None:
    if isinstance(d, JumpDrift):
        if not d.has_jumps and d.f0.is_constant:
            return float(d.f0.params[0])
    elif d.f0.is_constant and not np.any(d.alphas):
        return float(d.f0.params[0])
    return None


def potential(x: Path, d: Drift, n: int | None = None, rule: str = "exact") -> np.ndarray:
    """F(x) for a path.

    Constant paths (or any path when ``n`` is given, after projection onto
    level n) use the cell rule 2^-n sum_i f(x_i) over all cells.
    Linear paths use ``rule``: ``"exact"`` integrates the jumps by exact
    time-below and the smooth part by Gauss-Legendre; ``"trapezoid"`` is the
    node rule h (sum_interior f(x_i) + (f(x_0) + f(x_N)) / 2).
    """
    c = _constant_value(d)
    if c is not None:
        return np.full(x.batch_shape, c) if x.batch_shape else np.float64(c)
    if n is not None:
        x = project(x, n)
    if x.kind == CONSTANT:
        return np.mean(_drift_values(d, x.values), axis=-1)
    h = x.grid.h
    v = x.values
    if rule == "trapezoid":
        fv = _drift_values(d, v)
        return h * (fv[..., 1:-1].sum(axis=-1) + 0.5 * (fv[..., 0] + fv[..., -1]))
    if rule != "exact":
        raise ValueError(f"unknown potential rule {rule!r}")
    q = 8 if isinstance(d, SmoothDrift) and np.any(d.alphas) else 5
    gx, gw = _gauss(q)
    pts = v[..., :-1, None] + (v[..., 1:] - v[..., :-1])[..., None] * gx
    if isinstance(d, JumpDrift):
        smooth = 0.0 if d.f0.is_zero else h * np.sum(d.f0(pts) @ gw, axis=-1)
        jumps = 0.0
        if d.jumps:
            jumps = time_below(x, d.ys) @ d.alphas
        return smooth + jumps
    return h * np.sum(d(pts) @ gw, axis=-1)


def drift_bound(d: Drift) -> float:
    b = d.sup_bound() if isinstance(d, JumpDrift) else d.sup_bound
    if not np.isfinite(b):
        raise ValueError("rejection sampling needs a bounded drift")
    return float(b)


def _is_zero(d: Drift) -> bool:
    return d.is_zero


# --------------------------------------------------------------------------
# Gibbs laws


@dataclass(frozen=True, eq=False)
class GibbsSpec:
    """Target law exp(-F) d(proposal) / Z.

    * ``level=n, mesh=None``: pi_n with the exact mu_n proposal
    * ``level=n, mesh=m``: pi_n with proposal P_n(bridge at mesh m)
    * ``level=None, mesh=m``: nu realized on the mesh-m linear interpolant,
      potential by ``rule``
    """

    drift: Drift
    level: int | None = None
    mesh: int | None = None
    rule: str = "exact"

    def __post_init__(self):
        if self.level is None and self.mesh is None:
            raise ValueError("GibbsSpec needs a level or a mesh")
        if self.level is not None and self.mesh is not None and self.mesh < self.level:
            raise ValueError("mesh must be at least as fine as the level")
        if self.rule not in ("exact", "trapezoid"):
            raise ValueError(f"unknown potential rule {self.rule!r}")

    @property
    def bound(self) -> float:
        return drift_bound(self.drift)

    def propose(self, rng: np.random.Generator, size: int) -> Path:
        if self.mesh is None:
            return sample_mu_n(self.level, rng, size)
        bridge = sample_bridge(Grid(self.mesh), rng, size)
        return bridge if self.level is None else project(bridge, self.level)

    def potential(self, x: Path) -> np.ndarray:
        return potential(x, self.drift, None, self.rule)


@dataclass
class RejectionStats:
    proposed: int = 0
    accepted: int = 0

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


def sample_gibbs(spec: GibbsSpec, rng: np.random.Generator, size: int | None = None,
                 return_stats: bool = False, batch: int | None = None):
    """Exact rejection sampler; returns a batched Path (or single path when size is None)."""
    m = 1 if size is None else int(size)
    stats = RejectionStats()
    if _is_zero(spec.drift):
        out = spec.propose(rng, m)
        stats.proposed = stats.accepted = m
    else:
        B = spec.bound
        chunks = []
        have = 0
        while have < m:
            k = batch or int(min(50_000, max(64, math.ceil((m - have) * math.exp(min(B, 5.0)) * 1.1))))
            prop = spec.propose(rng, k)
            F = spec.potential(prop)
            u = rng.random(k)
            keep = u < np.exp(-F - B)
            stats.proposed += k
            stats.accepted += int(keep.sum())
            chunks.append(prop.values[keep])
            have += int(keep.sum())
        vals = np.concatenate(chunks, axis=0)[:m]
        out = Path(prop.grid, vals, prop.kind)
    if size is None:
        out = out[0]
    return (out, stats) if return_stats else out


def weighted_proposals(spec: GibbsSpec, rng: np.random.Generator, size: int):
    """Proposal draws with unnormalized weights exp(-F)."""
    prop = spec.propose(rng, size)
    return prop, np.exp(-spec.potential(prop))


@dataclass(frozen=True)
class ZEstimate:
    mean: float
    stderr: float
    n_samples: int

    def to_json(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "n_samples": self.n_samples}


def estimate_Z(spec: GibbsSpec, M: int, rng: np.random.Generator, chunk: int = 20_000) -> ZEstimate:
    """Monte-Carlo mean of exp(-F) under the proposal, with its standard error."""
    if M < 2:
        raise ValueError("estimate_Z needs at least two samples")
    c = _constant_value(spec.drift)
    if c is not None:
        return ZEstimate(float(math.exp(-c)), 0.0, int(M))
    s1 = s2 = 0.0
    done = 0
    while done < M:
        k = min(chunk, M - done)
        _, w = weighted_proposals(spec, rng, k)
        s1 += float(np.sum(w))
        s2 += float(np.sum(w * w))
        done += k
    mean = s1 / M
    var = max(s2 / M - mean * mean, 0.0) * M / (M - 1)
    return ZEstimate(mean, math.sqrt(var / M), int(M))
