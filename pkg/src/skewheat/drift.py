"""Drift data f = f_0 + sum_j alpha_j 1(y <= y_j), mollifications and skew coefficients."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial import Polynomial


class DriftError(ValueError):
    pass


# --------------------------------------------------------------------------
# smooth parts


@dataclass(frozen=True)
class SmoothPart:
    """Bounded smooth function with two analytic derivatives.

    ``kind`` is ``"poly"`` (coefficients c0, c1, ... in increasing degree,
    optionally evaluated at y clamped to ``clip``) or ``"sin"``
    (a sin(w y + phi), parameters [a, w, phi]).
    """

    kind: str = "poly"
    params: tuple = (0.0,)
    clip: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("poly", "sin"):
            raise DriftError(f"unknown smooth part {self.kind!r}")
        object.__setattr__(self, "params", tuple(float(c) for c in self.params))
        if self.kind == "sin" and len(self.params) not in (2, 3):
            raise DriftError("sin part takes [a, w] or [a, w, phi]")
        if self.kind == "poly" and not self.params:
            raise DriftError("poly part needs at least one coefficient")
        if self.clip is not None:
            lo, hi = map(float, self.clip)
            if not lo < hi:
                raise DriftError("clip interval must satisfy lo < hi")
            object.__setattr__(self, "clip", (lo, hi))

    @property
    def _poly(self) -> Polynomial:
        return Polynomial(self.params)

    def _arg(self, y):
        y = np.asarray(y, dtype=float)
        if self.clip is None:
            return y, np.ones_like(y)
        lo, hi = self.clip
        inside = ((y >= lo) & (y <= hi)).astype(float)
        return np.clip(y, lo, hi), inside

    def __call__(self, y):
        z, _ = self._arg(y)
        if self.kind == "poly":
            return self._poly(z)
        a, w, phi = (self.params + (0.0,))[:3]
        return a * np.sin(w * z + phi)

    def d1(self, y):
        z, inside = self._arg(y)
        if self.kind == "poly":
            return self._poly.deriv(1)(z) * inside if len(self.params) > 1 else np.zeros_like(z)
        a, w, phi = (self.params + (0.0,))[:3]
        return a * w * np.cos(w * z + phi) * inside

    def d2(self, y):
        z, inside = self._arg(y)
        if self.kind == "poly":
            return self._poly.deriv(2)(z) * inside if len(self.params) > 2 else np.zeros_like(z)
        a, w, phi = (self.params + (0.0,))[:3]
        return -a * w * w * np.sin(w * z + phi) * inside

    @property
    def is_zero(self) -> bool:
        return all(c == 0.0 for c in (self.params if self.kind == "poly" else self.params[:1]))

    @property
    def is_constant(self) -> bool:
        return self.kind == "poly" and all(c == 0.0 for c in self.params[1:]) or self.is_zero

    def sup(self) -> float:
        """sup |f_0|; infinite for an unclipped non-constant polynomial."""
        if self.kind == "sin":
            return abs(self.params[0])
        if self.is_constant:
            return abs(self.params[0])
        if self.clip is None:
            return np.inf
        lo, hi = self.clip
        p = self._poly
        cands = [lo, hi] + [r.real for r in p.deriv().roots() if abs(r.imag) < 1e-12 and lo < r.real < hi]
        return float(np.max(np.abs(p(np.array(cands)))))

    def spec_string(self) -> str:
        body = json.dumps(list(self.params))
        return f"{self.kind}:{body}"


_SMOOTH_RE = re.compile(r"^\s*(poly|sin)\s*:\s*(\[.*\])\s*$")


def parse_smooth(text: str, clip=None) -> SmoothPart:
    m = _SMOOTH_RE.match(text)
    if not m:
        raise DriftError(f"cannot parse smooth part {text!r}; expected 'poly:[c0,c1,...]' or 'sin:[a,w]'")
    try:
        params = json.loads(m.group(2))
    except json.JSONDecodeError as exc:
        raise DriftError(f"bad coefficient list in {text!r}: {exc}") from None
    if not all(isinstance(c, (int, float)) for c in params):
        raise DriftError(f"coefficients must be numbers in {text!r}")
    return SmoothPart(m.group(1), tuple(params), clip)


# --------------------------------------------------------------------------
# mollifier profile


class Mollifier:
    """Quintic smoothstep profile: rho = 1 on (-inf, 0], 0 on [1, inf), C^2, nonincreasing."""

    @staticmethod
    def rho(t):
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        return 1.0 - t**3 * (10.0 - 15.0 * t + 6.0 * t * t)

    @staticmethod
    def drho(t):
        t = np.asarray(t, dtype=float)
        inside = (t > 0.0) & (t < 1.0)
        return np.where(inside, -30.0 * t * t * (t - 1.0) ** 2, 0.0)

    @staticmethod
    def d2rho(t):
        t = np.asarray(t, dtype=float)
        inside = (t > 0.0) & (t < 1.0)
        return np.where(inside, -60.0 * t * (t - 1.0) * (2.0 * t - 1.0), 0.0)

    # sup |rho'| = 30/16 at t = 1/2
    max_slope = 1.875


@dataclass(frozen=True, eq=False)
class SmoothDrift:
    """A twice-differentiable drift g with g', g'' (mollified or purely smooth)."""

    f0: SmoothPart
    ys: np.ndarray
    alphas: np.ndarray
    index: int | None  # mollifier index n; None when there are no jumps
    sup_bound: float

    def _t(self, y):
        y = np.asarray(y, dtype=float)
        shift = (self.alphas < 0).astype(float)
        return self.index * (y[..., None] - self.ys) + shift

    def __call__(self, y):
        out = self.f0(y)
        if self.ys.size:
            out = out + Mollifier.rho(self._t(y)) @ self.alphas
        return out

    def d1(self, y):
        out = self.f0.d1(y)
        if self.ys.size:
            out = out + Mollifier.drho(self._t(y)) @ (self.alphas * self.index)
        return out

    def d2(self, y):
        out = self.f0.d2(y)
        if self.ys.size:
            out = out + Mollifier.d2rho(self._t(y)) @ (self.alphas * self.index**2)
        return out

    @property
    def is_zero(self) -> bool:
        return self.f0.is_zero and not np.any(self.alphas)


# --------------------------------------------------------------------------
# the drift datum


@dataclass(frozen=True, eq=False)
class JumpDrift:
    f0: SmoothPart = field(default_factory=SmoothPart)
    jumps: tuple = ()

    def __post_init__(self):
        jumps = sorted((float(y), float(a)) for y, a in self.jumps)
        ys = [y for y, _ in jumps]
        if len(set(ys)) != len(ys):
            raise DriftError(f"jump levels must be distinct, got {ys}")
        if not all(np.isfinite(v) for pair in jumps for v in pair):
            raise DriftError("jump levels and sizes must be finite")
        object.__setattr__(self, "jumps", tuple(jumps))

    @classmethod
    def indicator(cls, alpha: float = 1.0, y: float = 0.0) -> "JumpDrift":
        """f = alpha 1(y' <= y)."""
        return cls(SmoothPart(), ((y, alpha),))

    @classmethod
    def zero(cls) -> "JumpDrift":
        return cls()

    @classmethod
    def from_config(cls, table: dict) -> "JumpDrift":
        allowed = {"f0", "jumps", "clip"}
        unknown = set(table) - allowed
        if unknown:
            raise DriftError(f"unknown drift keys: {sorted(unknown)}")
        f0 = parse_smooth(table.get("f0", "poly:[0]"), table.get("clip"))
        jumps = table.get("jumps", [])
        for item in jumps:
            if not (isinstance(item, (list, tuple)) and len(item) == 2):
                raise DriftError(f"each jump must be [y, alpha], got {item!r}")
        return cls(f0, tuple(tuple(j) for j in jumps))

    def to_config(self) -> dict:
        out = {"f0": self.f0.spec_string(), "jumps": [list(j) for j in self.jumps]}
        if self.f0.clip is not None:
            out["clip"] = list(self.f0.clip)
        return out

    @property
    def ys(self) -> np.ndarray:
        return np.array([y for y, _ in self.jumps], dtype=float)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([a for _, a in self.jumps], dtype=float)

    @property
    def has_jumps(self) -> bool:
        return any(a != 0.0 for _, a in self.jumps)

    @property
    def is_zero(self) -> bool:
        return self.f0.is_zero and not self.has_jumps

    def sup_bound(self) -> float:
        """B = ||f_0||_inf + sum |alpha_j|, a bound on |f|."""
        return float(self.f0.sup() + np.sum(np.abs(self.alphas)))

    def __call__(self, y):
        return eval_f(self, y)

    def stieltjes_atoms(self) -> list[tuple[float, float]]:
        """Atoms of the Lebesgue-Stieltjes measure df: mass -alpha_j at y_j."""
        return [(y, -a) for y, a in self.jumps]

    def time_below(self, values) -> np.ndarray:
        """Broadcast helper: indicator matrix 1(values <= y_j) on a trailing axis."""
        return (np.asarray(values, dtype=float)[..., None] <= self.ys).astype(float)


def eval_f(d: JumpDrift, y) -> np.ndarray:
    """f(y) = f_0(y) + sum_j alpha_j 1(y <= y_j); the jump point carries the jump."""
    y = np.asarray(y, dtype=float)
    out = d.f0(y)
    if d.jumps:
        out = out + d.time_below(y) @ d.alphas
    return out


def mollify(d: JumpDrift, n: int) -> SmoothDrift:
    """f_n(y) = f_0(y) + sum_j alpha_j rho(n (y - y_j) + 1(alpha_j < 0))."""
    if int(n) != n or n < 1:
        raise DriftError(f"mollifier index must be a positive integer, got {n!r}")
    return SmoothDrift(d.f0, d.ys, d.alphas, int(n), d.sup_bound())


def smooth_approx_sequence(d: JumpDrift, n: int) -> SmoothDrift:
    """Member n of the decreasing smooth approximations; uniformly bounded by ``d.sup_bound()``."""
    return mollify(d, n)


def skew_coeffs(d: JumpDrift, n: int) -> np.ndarray:
    """beta_j = (1 - e^{-alpha_j 2^-n}) / (1 + e^{-alpha_j 2^-n}) = tanh(alpha_j 2^{-n-1})."""
    return np.tanh(d.alphas * 2.0 ** (-n - 1))


def as_smooth(d: JumpDrift) -> SmoothDrift:
    """View a jump-free drift as a SmoothDrift."""
    if d.has_jumps:
        raise DriftError("drift has jumps; mollify it first")
    return SmoothDrift(d.f0, np.zeros(0), np.zeros(0), None, d.sup_bound())


def drift_from_pairs(f0: SmoothPart | None, pairs: Sequence[Sequence[float]]) -> JumpDrift:
    return JumpDrift(f0 or SmoothPart(), tuple(tuple(p) for p in pairs))
