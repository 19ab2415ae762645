import math

import numpy as np
import pytest

from skewheat import functionals
from skewheat.measures import sample_bridge
from skewheat.pathcore import CONSTANT, LINEAR, Grid, Path, project


def test_panel_names_and_shapes(rng):
    x = sample_bridge(Grid(6), rng, 50)
    out = functionals.evaluate(x)
    assert list(out) == ["midpoint", "e1", "e2", "posocc", "hm1"]
    assert all(v.shape == (50,) for v in out.values())
    with pytest.raises(KeyError):
        functionals.evaluate(x, ["nope"])


def test_known_values():
    g = Grid(4)
    x = Path(g, math.sqrt(2) * np.sin(np.pi * g.nodes), LINEAR)
    out = functionals.evaluate(x)
    assert out["midpoint"] == pytest.approx(math.sqrt(2))
    assert out["e1"] == pytest.approx(1.0, rel=2e-2)       # the interpolant is slightly flat
    assert abs(out["e2"]) < 1e-12
    assert out["posocc"] == pytest.approx(1.0)
    assert out["hm1"] == pytest.approx(out["e1"], rel=1e-2)   # aliased high modes are tiny
    step = Path(Grid(2), np.array([-1.0, 2.0, 3.0, -4.0]), CONSTANT)
    assert functionals.midpoint(step) == 3.0
    assert functionals.positive_occupation(step) == pytest.approx(0.5)


def test_bridge_moments(rng):
    x = sample_bridge(Grid(7), rng, 20_000)
    out = functionals.evaluate(x, ["midpoint", "e1", "posocc"])
    assert abs(out["midpoint"].var() - 0.25) < 0.01
    assert abs(out["e1"].var() - 1 / np.pi**2) < 0.004
    # time above 0 of a bridge is uniform on [0, 1]
    assert abs(out["posocc"].mean() - 0.5) < 0.01
    assert abs(out["posocc"].var() - 1 / 12) < 0.003


def test_projection_changes_little_at_fine_levels(rng):
    x = sample_bridge(Grid(8), rng, 200)
    a = functionals.evaluate(x, ["e1"])["e1"]
    b = functionals.evaluate(project(x, 8), ["e1"])["e1"]
    np.testing.assert_allclose(a, b, atol=1e-3)
