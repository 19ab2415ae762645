"""Dyadic grids, sampled paths on [0, 1], the cell-average projector and path norms.

Two path kinds are used throughout:

``constant``
    one value per dyadic cell ``[i 2^-n, (i+1) 2^-n)``, i.e. an element of the
    space of step functions on level ``n`` with the inherited L2(0,1) product.
``linear``
    one value per node ``i 2^-n``, representing the piecewise-linear
    interpolant (bridge samples, SPDE slices).

Values may carry leading batch axes; the last axis is always the grid axis.
Conversions between kinds are explicit (:func:`project`, :func:`refine`).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import BinaryIO, Callable, Iterable, Iterator

import numpy as np

CONSTANT = "constant"
LINEAR = "linear"
KINDS = (CONSTANT, LINEAR)


class RefinementError(ValueError):
    """Raised when a path is asked to live on a coarser-than-available grid."""


@dataclass(frozen=True)
class Grid:
    level: int

    def __post_init__(self):
        if int(self.level) != self.level or self.level < 0:
            raise ValueError(f"grid level must be a non-negative integer, got {self.level!r}")

    @property
    def n_cells(self) -> int:
        return 1 << self.level

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_cells + 1)

    @property
    def edges(self) -> np.ndarray:
        return self.nodes

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.h

    def size(self, kind: str) -> int:
        return self.n_cells + (1 if kind == LINEAR else 0)


@dataclass(frozen=True, eq=False)
class Path:
    """Function values on a dyadic grid, possibly batched along leading axes."""

    grid: Grid
    values: np.ndarray
    kind: str = LINEAR

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown path kind {self.kind!r}")
        values = np.array(self.values, dtype=float)
        if values.ndim == 0 or values.shape[-1] != self.grid.size(self.kind):
            raise ValueError(
                f"{self.kind} path at level {self.grid.level} needs "
                f"{self.grid.size(self.kind)} values on the last axis, got shape {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def level(self) -> int:
        return self.grid.level

    @property
    def batch_shape(self) -> tuple:
        return self.values.shape[:-1]

    def __len__(self):
        if not self.batch_shape:
            raise TypeError("unbatched path has no length")
        return self.batch_shape[0]

    def __getitem__(self, index) -> "Path":
        if not self.batch_shape:
            raise TypeError("unbatched path cannot be indexed")
        return Path(self.grid, self.values[index], self.kind)

    def with_values(self, values) -> "Path":
        return Path(self.grid, values, self.kind)

    def __mul__(self, c) -> "Path":
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __add__(self, other: "Path") -> "Path":
        _check_same(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Path") -> "Path":
        _check_same(self, other)
        return self.with_values(self.values - other.values)

    def __neg__(self) -> "Path":
        return self.with_values(-self.values)

    @property
    def abscissae(self) -> np.ndarray:
        return self.grid.nodes if self.kind == LINEAR else self.grid.midpoints

    @classmethod
    def from_function(cls, func: Callable, grid: Grid, kind: str = LINEAR) -> "Path":
        """Sample ``func`` at nodes (linear) or take exact-ish cell averages (constant)."""
        if kind == LINEAR:
            return cls(grid, func(grid.nodes), LINEAR)
        gx, gw = _gauss(8)
        r = grid.nodes[:-1, None] + grid.h * gx[None, :]
        return cls(grid, func(r) @ gw, CONSTANT)

    @classmethod
    def zeros(cls, grid: Grid, kind: str = LINEAR, batch: tuple = ()) -> "Path":
        return cls(grid, np.zeros(tuple(batch) + (grid.size(kind),)), kind)


def _check_same(x: Path, y: Path):
    if x.grid != y.grid or x.kind != y.kind:
        raise ValueError("paths must share grid and kind")


@lru_cache(maxsize=None)
def _gauss(q: int):
    """Gauss-Legendre nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(q)
    return (x + 1.0) / 2.0, w / 2.0


def basis_vector(k: int, grid: Grid, kind: str = LINEAR) -> Path:
    """The Dirichlet sine eigenvector e_k(r) = sqrt(2) sin(k pi r)."""
    return Path.from_function(lambda r: np.sqrt(2.0) * np.sin(k * np.pi * r), grid, kind)


# --------------------------------------------------------------------------
# refinement and projection


def refine(x: Path, level: int) -> Path:
    """Exact representation of ``x`` on a finer grid (same kind)."""
    m = x.level
    if level < m:
        raise RefinementError(f"cannot refine level {m} path down to level {level}")
    if level == m:
        return x
    factor = 1 << (level - m)
    if x.kind == CONSTANT:
        return Path(Grid(level), np.repeat(x.values, factor, axis=-1), CONSTANT)
    old = x.grid.nodes
    new = Grid(level).nodes
    idx = np.minimum((new * x.grid.n_cells).astype(int), x.grid.n_cells - 1)
    frac = (new - old[idx]) / x.grid.h
    v = x.values
    out = v[..., idx] * (1.0 - frac) + v[..., idx + 1] * frac
    return Path(Grid(level), out, LINEAR)


def project(x: Path, n: int) -> Path:
    """Orthogonal L2 projection onto step functions of level ``n`` (cell averages)."""
    m = x.level
    if n > m:
        raise RefinementError(f"cannot project a level {m} path onto finer level {n}")
    if x.kind == LINEAR:
        cells = 0.5 * (x.values[..., :-1] + x.values[..., 1:])
    else:
        cells = x.values
    factor = 1 << (m - n)
    if factor > 1:
        cells = cells.reshape(cells.shape[:-1] + (1 << n, factor)).mean(axis=-1)
    return Path(Grid(n), cells, CONSTANT)


def to_common(x: Path, y: Path) -> tuple[Path, Path]:
    level = max(x.level, y.level)
    return refine(x, level), refine(y, level)


# --------------------------------------------------------------------------
# inner products and norms


def l2_inner(x: Path, y: Path) -> np.ndarray:
    """Exact integral of the product of the two piecewise representatives."""
    x, y = to_common(x, y)
    h = x.grid.h
    a, b = x.values, y.values
    if x.kind == CONSTANT and y.kind == CONSTANT:
        return h * np.sum(a * b, axis=-1)
    if x.kind == LINEAR and y.kind == LINEAR:
        a0, a1, b0, b1 = a[..., :-1], a[..., 1:], b[..., :-1], b[..., 1:]
        return h / 6.0 * np.sum(2 * a0 * b0 + a0 * b1 + a1 * b0 + 2 * a1 * b1, axis=-1)
    if x.kind == LINEAR:
        a, b = b, a
    # a constant, b linear
    return h * np.sum(a * 0.5 * (b[..., :-1] + b[..., 1:]), axis=-1)


def l2_norm(x: Path) -> np.ndarray:
    return np.sqrt(np.maximum(l2_inner(x, x), 0.0))


@lru_cache(maxsize=64)
def _sine_weights(level: int, kind: str, K: int) -> np.ndarray:
    grid = Grid(level)
    k = np.arange(1, K + 1)
    if kind == CONSTANT:
        # exact cell integrals of e_k; a step function has no useful Simpson rule
        e = grid.edges
        cosines = np.cos(np.pi * np.outer(e, k))
        w = np.sqrt(2.0) * (cosines[:-1] - cosines[1:]) / (np.pi * k)
    else:
        # exact integrals of e_k against the hat functions of the interpolant
        om = np.pi * k
        h = grid.h
        w = np.sqrt(2.0) * np.sin(np.outer(grid.nodes, om)) * (2.0 * (1.0 - np.cos(om * h)) / (om**2 * h))
        end = np.sqrt(2.0) * (1.0 / om - np.sin(om * h) / (om**2 * h))
        w[0] = end
        w[-1] = end * (-1.0) ** (k + 1)
    w.setflags(write=False)
    return w


def sine_coefficients(x: Path, K: int) -> np.ndarray:
    """<x, e_k> for k = 1..K, exact for both path kinds."""
    if K < 1:
        raise ValueError("need at least one sine mode")
    return x.values @ _sine_weights(x.level, x.kind, K)


def h_minus1_norm(x: Path, K: int) -> np.ndarray:
    """Truncated H^-1 norm (sum_{k<=K} k^-2 <x,e_k>^2)^(1/2)."""
    c = sine_coefficients(x, K)
    k = np.arange(1, K + 1)
    return np.sqrt(np.sum(c**2 / k**2, axis=-1))


def _abs_pow_antiderivative(u, p):
    return np.sign(u) * np.abs(u) ** (p + 1) / (p + 1)


def _int_abs_linear_pow(A, B, w1, w2, p):
    """Integral over w in [w1, w2] of |A + B w|^p, closed form."""
    A, B, w1, w2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (A, B, w1, w2)))
    out = np.empty(A.shape)
    flat = np.abs(B) < 1e-300
    out[flat] = np.abs(A[flat]) ** p * (w2[flat] - w1[flat])
    nf = ~flat
    out[nf] = (
        _abs_pow_antiderivative(A[nf] + B[nf] * w2[nf], p)
        - _abs_pow_antiderivative(A[nf] + B[nf] * w1[nf], p)
    ) / B[nf]
    return out


def sobolev_wnp_norm(x: Path, eta: float, p: float, quad: int = 6) -> np.ndarray:
    """Fractional Sobolev norm of W^{eta,p}(0,1) for a piecewise-linear path.

    Same-cell pairs use the closed form of the integral of |s-t|^{p(1-eta)-1}
    over the square; touching cells are integrated in corner-polar coordinates
    (closed form in the angle, Gauss-Legendre in the radius); separated cells
    use tensor Gauss-Legendre.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in ]0,1[, got {eta}")
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    if x.kind != LINEAR:
        raise ValueError("the Sobolev norm is defined here for piecewise-linear paths")
    values = np.atleast_2d(x.values)
    out = np.array([_wnp_single(v, x.grid, eta, p, quad) for v in values])
    return out.reshape(x.batch_shape) if x.batch_shape else out[0]


def _wnp_single(v, grid, eta, p, quad):
    h = grid.h
    N = grid.n_cells
    m = np.diff(v) / h
    # integral of |x|^p along each segment
    lp = np.sum(_int_abs_linear_pow(v[:-1], m, 0.0, h, p))

    gamma = p * (1.0 - eta) - 1.0
    diag = np.sum(np.abs(m) ** p) * 2.0 * h ** (gamma + 2.0) / ((gamma + 1.0) * (gamma + 2.0))

    beta = p * (1.0 - eta)
    adj = 0.0
    if N > 1:
        ml, mr = m[:-1], m[1:]
        A, B = mr, ml - mr
        near = h ** (beta + 1.0) / (beta + 1.0) * _int_abs_linear_pow(A, B, 0.0, 1.0, p)
        gx, gw = _gauss(24)
        rho = h + h * gx
        w1 = 1.0 - h / rho
        w2 = h / rho
        inner = _int_abs_linear_pow(A[:, None], B[:, None], w1[None, :], w2[None, :], p)
        far_corner = (inner * (rho**beta * gw * h)[None, :]).sum(axis=1)
        adj = np.sum(near + far_corner)

    sep = 0.0
    if N > 2:
        gx, gw = _gauss(quad)
        s = grid.nodes[:-1, None] + h * gx[None, :]            # (N, q)
        xs = v[:-1, None] + m[:, None] * h * gx[None, :]        # (N, q)
        W = np.outer(gw, gw) * h * h
        jj, kk = np.triu_indices(N, k=2)
        for start in range(0, jj.size, 4096):
            j = jj[start:start + 4096]
            k = kk[start:start + 4096]
            dx = np.abs(xs[j][:, :, None] - xs[k][:, None, :]) ** p
            ds = np.abs(s[j][:, :, None] - s[k][:, None, :]) ** (p * eta + 1.0)
            sep += np.sum(dx / ds * W[None])
    total = lp + diag + 2.0 * (adj + sep)
    return total ** (1.0 / p)


def _pairwise_holder(values, nodes, theta, chunk=512):
    dist = np.abs(nodes[:, None] - nodes[None, :])
    np.fill_diagonal(dist, np.inf)
    denom = dist**theta
    flat = values.reshape(-1, values.shape[-1])
    out = np.empty(flat.shape[0])
    for start in range(0, flat.shape[0], chunk):
        v = flat[start:start + chunk]
        diff = np.abs(v[:, :, None] - v[:, None, :])
        out[start:start + chunk] = (diff / denom[None]).max(axis=(1, 2))
    return out.reshape(values.shape[:-1])


def holder_seminorm(x: Path, theta: float) -> np.ndarray:
    """Max over node pairs of |x_r - x_s| / |r - s|^theta."""
    if not 0.0 < theta < 1.0:
        raise ValueError(f"theta must lie in ]0,1[, got {theta}")
    if x.kind != LINEAR:
        raise ValueError("Holder seminorm is evaluated on node values of linear paths")
    return _pairwise_holder(x.values, x.grid.nodes, theta)


def holder_norm(x: Path, theta: float) -> np.ndarray:
    """C^theta norm: sup norm plus the node-pair Holder seminorm."""
    return np.max(np.abs(x.values), axis=-1) + holder_seminorm(x, theta)


def time_below(x: Path, levels) -> np.ndarray:
    """Exact Lebesgue measure of {r : x(r) <= a} for each level a.

    Output shape is ``x.batch_shape + levels.shape`` (levels flattened to 1-D).
    """
    a = np.atleast_1d(np.asarray(levels, dtype=float))
    h = x.grid.h
    v = x.values
    if x.kind == CONSTANT:
        return h * np.sum(v[..., :, None] <= a, axis=-2)
    lo = np.minimum(v[..., :-1], v[..., 1:])[..., None]
    hi = np.maximum(v[..., :-1], v[..., 1:])[..., None]
    span = hi - lo
    flat = span == 0.0
    frac = np.clip((a - lo) / np.where(flat, 1.0, span), 0.0, 1.0)
    frac = np.where(flat, (lo <= a).astype(float), frac)
    return h * frac.sum(axis=-2)


# --------------------------------------------------------------------------
# serialization

_FRAME = struct.Struct("<4sBBHI")
_MAGIC = b"SKHP"
_KIND_CODE = {CONSTANT: 0, LINEAR: 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def to_csv(x: Path) -> str:
    if x.batch_shape:
        raise ValueError("CSV export takes a single path")
    buf = io.StringIO()
    buf.write("r,value\n")
    for r, v in zip(x.abscissae, x.values):
        buf.write(f"{float(r)!r},{float(v)!r}\n")
    return buf.getvalue()


def from_csv(text: str) -> Path:
    rows = [line.split(",") for line in text.strip().splitlines()[1:]]
    r = np.array([float(a) for a, _ in rows])
    v = np.array([float(b) for _, b in rows])
    if r[0] == 0.0:
        kind, count = LINEAR, r.size - 1
    else:
        kind, count = CONSTANT, r.size
    level = count.bit_length() - 1
    if 1 << level != count:
        raise ValueError(f"{count} cells is not a dyadic grid")
    return Path(Grid(level), v, kind)


def write_frame(stream: BinaryIO, x: Path) -> None:
    values = np.ascontiguousarray(x.values, dtype="<f8")
    for row in values.reshape(-1, values.shape[-1]):
        stream.write(_FRAME.pack(_MAGIC, 1, _KIND_CODE[x.kind], x.level, row.size))
        stream.write(row.tobytes())


def write_frames(stream: BinaryIO, paths: Iterable[Path]) -> None:
    for x in paths:
        write_frame(stream, x)


def read_frames(stream: BinaryIO) -> Iterator[Path]:
    while True:
        head = stream.read(_FRAME.size)
        if not head:
            return
        if len(head) != _FRAME.size:
            raise ValueError("truncated frame header")
        magic, version, code, level, count = _FRAME.unpack(head)
        if magic != _MAGIC or version != 1:
            raise ValueError("not a path frame stream")
        payload = stream.read(8 * count)
        if len(payload) != 8 * count:
            raise ValueError("truncated frame payload")
        yield Path(Grid(level), np.frombuffer(payload, dtype="<f8").copy(), _CODE_KIND[code])


# --------------------------------------------------------------------------
# test functions


@dataclass(frozen=True, eq=False)
class TestFunction:
    """A test function h with h' and h'' tabulated on the nodes of a grid.

    When built from callables, those are kept so that h can be evaluated
    exactly off the grid (e.g. at level-crossing points).
    """

    __test__ = False  # not a pytest class

    grid: Grid
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    compact: bool = False
    funcs: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.compact and (np.any(self.values[:2] != 0) or np.any(self.values[-2:] != 0)):
            raise ValueError("compactly supported test function must vanish on the first and last cell")

    @classmethod
    def from_callables(cls, h, dh, d2h, grid: Grid, compact: bool = False) -> "TestFunction":
        r = grid.nodes
        return cls(grid, np.asarray(h(r), float), np.asarray(dh(r), float),
                   np.asarray(d2h(r), float), compact, (h, dh, d2h))

    @classmethod
    def sine(cls, k: int, grid: Grid) -> "TestFunction":
        c = np.sqrt(2.0)
        w = k * np.pi
        return cls.from_callables(
            lambda r: c * np.sin(w * r),
            lambda r: c * w * np.cos(w * r),
            lambda r: -c * w * w * np.sin(w * r),
            grid,
        )

    @classmethod
    def bump(cls, grid: Grid, a: float = 0.25, b: float = 0.75) -> "TestFunction":
        """((r-a)(b-r))^3 on [a,b], zero elsewhere: C^2 with compact support."""
        if a < grid.h or b > 1.0 - grid.h:
            raise ValueError("bump support must avoid the boundary cells")

        def h(r):
            q = np.clip((r - a) * (b - r), 0.0, None)
            return q**3

        def dh(r):
            q = np.clip((r - a) * (b - r), 0.0, None)
            return 3 * q**2 * (a + b - 2 * r)

        def d2h(r):
            q = np.clip((r - a) * (b - r), 0.0, None)
            return 6 * q * (a + b - 2 * r) ** 2 - 6 * q**2

        return cls.from_callables(h, dh, d2h, grid, compact=True)

    def __call__(self, r) -> np.ndarray:
        if self.funcs is not None:
            return self.funcs[0](r)
        return np.interp(r, self.grid.nodes, self.values)

    def derivative(self, r) -> np.ndarray:
        if self.funcs is not None:
            return self.funcs[1](r)
        return np.interp(r, self.grid.nodes, self.d1)

    def as_path(self, order: int = 0) -> Path:
        data = (self.values, self.d1, self.d2)[order]
        return Path(self.grid, data, LINEAR)

    def norm2(self) -> float:
        """||h||^2 in L2(0,1), exact when built from callables."""
        if self.funcs is not None:
            gx, gw = _gauss(10)
            g = Grid(max(self.grid.level, 8))
            r = g.nodes[:-1, None] + g.h * gx[None, :]
            return float(np.sum(self.funcs[0](r) ** 2 * gw) * g.h)
        return float(l2_inner(self.as_path(), self.as_path()))
