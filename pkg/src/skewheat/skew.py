"""Skew Brownian motion simulators and the interacting skew system on H_n.

Conventions. A skew Brownian motion with parameter beta in [-1, 1] starts
its excursions from 0 positive with probability (1 + beta) / 2.

The interacting system lives on the cell coordinates x in R^{2^n} of H_n.
With noise of variance 2^n dt per coordinate, the drift that leaves
pi_n(dx) ~ exp(-F_n(x)) mu_n(dx) invariant is 2^n A_n x - f_0'(x) / 2 plus,
at each jump level y_j, a skew reflection with parameter
beta_j = tanh(alpha_j 2^{-n-1}).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .drift import JumpDrift, skew_coeffs
from .measures import covariance_sigma_n
from .pathcore import CONSTANT, Grid, Path


class SolvabilityError(ValueError):
    """|beta| > 1: the skew equation has no solution."""


class StabilityError(ValueError):
    pass


# --------------------------------------------------------------------------
# one dimension


def skew_walk_path(beta: float, T: float, dt: float, x0: float = 0.0,
                   rng: np.random.Generator | None = None, size: int | None = None,
                   stride: int | None = None, chunk: int = 100_000):
    """Harrison-Shepp walk on the lattice sqrt(dt) Z.

    Away from 0 the walk steps +-1 with probability 1/2 each; at 0 it steps up
    with probability (1 + beta) / 2.

    Returns terminal values (shape ``size``) or, with ``stride``, a tuple
    (times, values) with values of shape (size, n_records).
    """
    if not -1.0 <= beta <= 1.0:
        raise SolvabilityError(f"skew parameter must satisfy |beta| <= 1, got {beta}")
    if dt <= 0 or T <= 0:
        raise ValueError("T and dt must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    steps = int(round(T / dt))
    sd = math.sqrt(dt)
    start = int(round(x0 / sd))
    M = 1 if size is None else int(size)
    p0 = np.float32((1.0 + beta) / 2.0)
    half = np.float32(0.5)
    finals = []
    records = []
    for lo in range(0, M, chunk):
        m = min(chunk, M - lo)
        S = np.full(m, start, dtype=np.int64)
        rec = [S.copy()] if stride else None
        for k in range(1, steps + 1):
            u = rng.random(m, dtype=np.float32)
            up = np.where(S == 0, u < p0, u < half)
            S += 2 * up.astype(np.int64) - 1
            if stride and k % stride == 0:
                rec.append(S.copy())
        finals.append(S * sd)
        if stride:
            records.append(np.stack(rec, axis=1) * sd)
    out = np.concatenate(finals)
    if stride:
        vals = np.concatenate(records, axis=0)
        times = np.arange(vals.shape[1]) * stride * dt
        return times, (vals[0] if size is None else vals)
    return out[0] if size is None else out


def skew_flip_exact(alpha: float, t: float, rng: np.random.Generator, size: int | None = None):
    """Exact time-t marginal from 0: |N(0, t)| with sign + w.p. alpha."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if t <= 0:
        raise ValueError("t must be positive")
    m = 1 if size is None else int(size)
    mag = np.abs(rng.standard_normal(m)) * math.sqrt(t)
    sign = np.where(rng.random(m) < alpha, 1.0, -1.0)
    out = sign * mag
    return out[0] if size is None else out


# --------------------------------------------------------------------------
# interacting system


@dataclass
class SkewSystemState:
    level: int
    x: np.ndarray               # (M, 2^n)
    t: float
    local_times: np.ndarray     # (M, 2^n, J)

    def as_path(self) -> Path:
        return Path(Grid(self.level), self.x, CONSTANT)


@dataclass
class InteractingRun:
    times: np.ndarray
    snapshots: np.ndarray       # (records, M, 2^n)
    state: SkewSystemState
    crossings: int

    def paths(self, k: int = -1) -> Path:
        return Path(Grid(self.state.level), self.snapshots[k], CONSTANT)


def stable_dt(n: int, safety: float = 0.5) -> float:
    """A time step with dt ||2^n A_n|| = safety."""
    w, _ = covariance_sigma_n(n).spectrum
    return safety / float(np.max(np.abs(w)))


def simulate_interacting(n: int, d: JumpDrift, dt: float, T: float, x0, rng: np.random.Generator,
                         stride: int | None = None, linear_drift: bool = True,
                         skew_scale: float = 1.0) -> InteractingRun:
    """Splitting scheme for the interacting skew system, batched over trajectories.

    Step (a): exact flow of the linear SDE dx = 2^n A_n x dt + 2^{n/2} dw over
    dt, computed in the eigenbasis of A_n, followed by an Euler step of
    -f_0'(x) dt / 2. Step (b): for each level y_j and coordinate, the step is
    taken to touch y_j if it changed side or, otherwise, with the Brownian
    bridge probability exp(-2 d_0 d_1 / (2^n dt)). A touching endpoint on the
    disfavoured side is mirrored across y_j with probability |beta_j|, which
    makes it end on the favoured side with probability (1 + |beta_j|) / 2.

    ``x0`` has shape (M, 2^n) or (2^n,). ``skew_scale`` multiplies every
    beta_j; values other than 1 exist only to compare local-time conventions.
    """
    if dt <= 0 or T <= 0:
        raise ValueError("dt and T must be positive")
    N = 1 << n
    c = float(N)
    w, V = covariance_sigma_n(n).spectrum
    if linear_drift and dt * float(np.max(np.abs(w))) >= 1.0:
        raise StabilityError(
            f"dt={dt} too large at level {n}: dt*||2^n A_n|| = {dt * np.max(np.abs(w)):.3g} >= 1"
        )
    x = np.array(x0, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != N:
        raise ValueError(f"state must have {N} coordinates")
    M = x.shape[0]
    beta = skew_scale * skew_coeffs(d, n)
    if np.any(np.abs(beta) >= 1):
        raise SolvabilityError("skew coefficients must lie in (-1, 1)")
    active = [(j, y, b) for j, ((y, _), b) in enumerate(zip(d.jumps, beta)) if b != 0.0]

    g_rng, u_rng = rng.spawn(2)
    if linear_drift:
        decay = np.exp(w * dt)
        var = np.where(w != 0, c * np.expm1(2 * w * dt) / (2 * w), c * dt)
        noise_sd = np.sqrt(var)
    smooth = not d.f0.is_zero
    lt_inc = math.sqrt(2.0 * c * dt / math.pi)
    local = np.zeros((M, N, len(d.jumps)))
    steps = int(round(T / dt))
    times = [0.0]
    snaps = [x.copy()] if stride else []
    n_cross = 0
    for k in range(1, steps + 1):
        xi = g_rng.standard_normal((M, N))
        if linear_drift:
            xn = ((x @ V) * decay + xi * noise_sd) @ V.T
        else:
            xn = x + math.sqrt(c * dt) * xi
        if smooth:
            xn -= 0.5 * dt * d.f0.d1(x)
        for j, y, b in active:
            d0 = x - y
            d1 = xn - y
            prod = d0 * d1
            u = u_rng.random((2, M, N))
            touched = (prod <= 0) | (u[0] < np.exp(-2.0 * np.maximum(prod, 0.0) / (c * dt)))
            wrong = (d1 < 0) if b > 0 else (d1 > 0)
            flip = touched & wrong & (u[1] < abs(b))
            xn = np.where(flip, 2.0 * y - xn, xn)
            local[:, :, j] += touched * lt_inc
            n_cross += int(touched.sum())
        x = xn
        if stride and k % stride == 0:
            snaps.append(x.copy())
            times.append(k * dt)
    if not stride:
        snaps = [x.copy()]
        times = [steps * dt]
    state = SkewSystemState(n, x, steps * dt, local)
    return InteractingRun(np.array(times), np.stack(snaps), state, n_cross)
