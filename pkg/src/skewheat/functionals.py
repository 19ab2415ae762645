"""The fixed panel of path functionals used by the statistical checks.

u(1/2), <u, e_1>, <u, e_2>, the time spent above 0, and ||u||_{H^-1}.
Each functional maps a (batched) Path to an array over the batch.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .pathcore import CONSTANT, Path, basis_vector, h_minus1_norm, l2_inner, time_below

HM1_MODES = 64


def midpoint(x: Path) -> np.ndarray:
    """u(1/2): the centre node of a linear path, the cell starting at 1/2 for a step path."""
    N = x.grid.n_cells
    if x.kind == CONSTANT:
        return np.asarray(x.values[..., N // 2] if N > 1 else x.values[..., 0])
    return np.asarray(x.values[..., N // 2])


def sine_mode(k: int) -> Callable[[Path], np.ndarray]:
    def f(x: Path):
        return np.asarray(l2_inner(x, basis_vector(k, x.grid, x.kind)))
    f.__name__ = f"e{k}"
    return f


def positive_occupation(x: Path) -> np.ndarray:
    """Lebesgue measure of {r : x_r > 0}, exact for both path kinds."""
    return 1.0 - time_below(x, 0.0)[..., 0]


def hm1(x: Path) -> np.ndarray:
    return np.asarray(h_minus1_norm(x, min(HM1_MODES, max(1, x.grid.n_cells))))


PANEL: dict[str, Callable[[Path], np.ndarray]] = {
    "midpoint": midpoint,
    "e1": sine_mode(1),
    "e2": sine_mode(2),
    "posocc": positive_occupation,
    "hm1": hm1,
}


def evaluate(x: Path, names=None) -> dict[str, np.ndarray]:
    names = list(PANEL) if names is None else list(names)
    unknown = [n for n in names if n not in PANEL]
    if unknown:
        raise KeyError(f"unknown functionals {unknown}; panel is {list(PANEL)}")
    return {n: PANEL[n](x) for n in names}
