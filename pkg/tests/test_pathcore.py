import io

import numpy as np
import pytest
from scipy import integrate

from skewheat.pathcore import (
    CONSTANT, LINEAR, Grid, Path, RefinementError, TestFunction, basis_vector,
    from_csv, h_minus1_norm, holder_norm, holder_seminorm, l2_inner, project,
    read_frames, refine, sine_coefficients, sobolev_wnp_norm, to_csv, write_frames,
)


def identity_path(level):
    g = Grid(level)
    return Path(g, g.nodes, LINEAR)


def test_grid_basics():
    g = Grid(3)
    assert g.n_cells == 8
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
    assert np.allclose(np.diff(g.edges), 1 / 8)
    with pytest.raises(ValueError):
        Grid(-1)


def test_path_validation_and_immutability():
    g = Grid(2)
    with pytest.raises(ValueError):
        Path(g, np.zeros(4), LINEAR)
    x = Path(g, np.zeros(5), LINEAR)
    with pytest.raises(ValueError):
        x.values[0] = 1.0


def test_project_identity_level1():
    p = project(identity_path(6), 1)
    assert p.kind == CONSTANT
    np.testing.assert_allclose(p.values, [0.25, 0.75], atol=1e-15)


def test_project_constants_and_idempotence():
    g = Grid(5)
    c = Path(g, np.full(33, 2.5), LINEAR)
    np.testing.assert_allclose(project(c, 3).values, 2.5)
    rng = np.random.default_rng(0)
    x = Path(g, rng.normal(size=32), CONSTANT)
    assert np.array_equal(project(x, 5).values, x.values)
    once = project(x, 2)
    assert np.array_equal(project(once, 2).values, once.values)
    assert l2_inner(once, once) <= l2_inner(x, x) + 1e-12


def test_project_refinement_error():
    with pytest.raises(RefinementError):
        project(identity_path(2), 3)


def test_refine_is_exact():
    rng = np.random.default_rng(1)
    x = Path(Grid(3), rng.normal(size=9), LINEAR)
    y = refine(x, 6)
    np.testing.assert_allclose(y.values[::8], x.values)
    np.testing.assert_allclose(l2_inner(x, x), l2_inner(y, y), rtol=1e-13)


def test_l2_inner_sine_basis():
    g = Grid(10)
    e1, e2 = basis_vector(1, g), basis_vector(2, g)
    assert abs(l2_inner(e1, e1) - 1) < 1e-5
    assert abs(l2_inner(e1, e2)) < 1e-5
    assert l2_inner(Path.zeros(g), e1) == 0.0


def test_l2_inner_mixed_kinds():
    # constant 1 against x(r)=r is 1/2 exactly
    one = Path(Grid(2), np.ones(4), CONSTANT)
    assert abs(l2_inner(one, identity_path(5)) - 0.5) < 1e-15
    assert abs(l2_inner(identity_path(5), one) - 0.5) < 1e-15
    # linear-linear: int r^2 = 1/3 exactly for the interpolant of r
    assert abs(l2_inner(identity_path(1), identity_path(3)) - 1 / 3) < 1e-15


def test_h_minus1():
    g = Grid(10)
    assert abs(h_minus1_norm(basis_vector(1, g), 20) - 1) < 1e-4
    assert abs(h_minus1_norm(basis_vector(2, g), 20) - 0.5) < 1e-4
    assert h_minus1_norm(Path.zeros(g), 5) == 0.0


def test_h_minus1_monotone_and_bounded():
    rng = np.random.default_rng(2)
    x = Path(Grid(7), rng.normal(size=129), LINEAR)
    vals = [h_minus1_norm(x, K) for K in (1, 2, 5, 20, 60)]
    assert np.all(np.diff(vals) >= 0)
    bound = np.sqrt(l2_inner(x, x)) * np.pi / np.sqrt(6)
    assert vals[-1] <= bound


def test_sine_coefficients_constant_kind_exact():
    # <1, e_1> = 2 sqrt(2) / pi exactly for the constant function
    one = Path(Grid(0), [1.0], CONSTANT)
    assert abs(sine_coefficients(one, 1)[0] - 2 * np.sqrt(2) / np.pi) < 1e-14


def test_wnp_trivial_cases():
    g = Grid(4)
    assert sobolev_wnp_norm(Path.zeros(g), 0.3, 2) == 0.0
    c = Path(g, np.full(17, -1.7), LINEAR)
    assert abs(sobolev_wnp_norm(c, 0.3, 3) - 1.7) < 1e-12
    with pytest.raises(ValueError):
        sobolev_wnp_norm(c, 1.0, 2)
    with pytest.raises(ValueError):
        sobolev_wnp_norm(c, 0.5, 0.5)


def test_wnp_identity_analytic():
    # int r^2 + int int |s-t|^{2-1.5} = 1/3 + 2/(1.5*2.5)
    exact = np.sqrt(1 / 3 + 2 / (1.5 * 2.5))
    for level in (0, 3, 6):
        assert abs(sobolev_wnp_norm(identity_path(level), 0.25, 2) - exact) < 1e-10


def test_wnp_against_brute_force_quadrature():
    rng = np.random.default_rng(3)
    x = Path(Grid(2), np.r_[0.0, rng.normal(size=3), 0.0], LINEAR)
    eta, p = 0.25, 2.0
    f = lambda r: np.interp(r, x.grid.nodes, x.values)
    lp = integrate.quad(lambda r: abs(f(r)) ** p, 0, 1, points=x.grid.nodes[1:-1], limit=200)[0]
    # integrate on the half-square t<s, across a 4x finer breakpoint set
    pts = Grid(4).nodes
    total = 0.0
    for i in range(len(pts) - 1):
        for j in range(i + 1):
            lo_s, hi_s = pts[i], pts[i + 1]
            lo_t, hi_t = pts[j], pts[j + 1]
            g = lambda t, s: abs(f(s) - f(t)) ** p / abs(s - t) ** (p * eta + 1) if s != t else 0.0
            if i == j:
                val = integrate.dblquad(g, lo_s, hi_s, lo_t, lambda s: s, epsabs=1e-8)[0]
            else:
                val = integrate.dblquad(g, lo_s, hi_s, lo_t, hi_t, epsabs=1e-8)[0]
            total += val
    oracle = (lp + 2 * total) ** (1 / p)
    assert abs(sobolev_wnp_norm(x, eta, p) - oracle) < 1e-3


def test_wnp_homogeneous_and_batched():
    rng = np.random.default_rng(4)
    v = rng.normal(size=(3, 17))
    x = Path(Grid(4), v, LINEAR)
    b = sobolev_wnp_norm(x, 0.4, 3)
    assert b.shape == (3,)
    s = sobolev_wnp_norm(x * -2.5, 0.4, 3)
    np.testing.assert_allclose(s, 2.5 * b, rtol=1e-12)
    assert abs(sobolev_wnp_norm(x[1], 0.4, 3) - b[1]) < 1e-13


def test_holder():
    assert holder_seminorm(identity_path(4), 0.5) == pytest.approx(1.0, abs=1e-12)
    tent = Path(Grid(1), [0.0, 1.0, 0.0], LINEAR)
    assert holder_seminorm(tent, 0.5) == pytest.approx(1.41421, abs=1e-5)
    assert holder_seminorm(Path.zeros(Grid(3)), 0.5) == 0.0
    assert holder_norm(tent, 0.5) == pytest.approx(1 + np.sqrt(2), abs=1e-12)
    rng = np.random.default_rng(5)
    x = Path(Grid(5), rng.normal(size=(4, 33)), LINEAR)
    np.testing.assert_allclose(holder_seminorm(3 * x, 0.3), 3 * holder_seminorm(x, 0.3), rtol=1e-12)


def test_csv_roundtrip():
    rng = np.random.default_rng(6)
    for kind, size in ((LINEAR, 9), (CONSTANT, 8)):
        x = Path(Grid(3), rng.normal(size=size), kind)
        y = from_csv(to_csv(x))
        assert y.kind == kind and y.level == 3
        assert np.array_equal(x.values, y.values)


def test_frame_roundtrip():
    rng = np.random.default_rng(7)
    batch = Path(Grid(4), rng.normal(size=(3, 17)), LINEAR)
    single = Path(Grid(2), rng.normal(size=4), CONSTANT)
    buf = io.BytesIO()
    write_frames(buf, [batch, single])
    buf.seek(0)
    back = list(read_frames(buf))
    assert len(back) == 4
    assert np.array_equal(back[1].values, batch.values[1])
    assert back[3].kind == CONSTANT and np.array_equal(back[3].values, single.values)
    with pytest.raises(ValueError):
        list(read_frames(io.BytesIO(b"JUNKJUNKJUNK")))


def test_test_functions():
    g = Grid(6)
    b = TestFunction.bump(g)
    assert b.compact and b.values[0] == 0 and b.values[-1] == 0
    # derivative consistency by finite differences
    r = np.linspace(0.3, 0.7, 5)
    fd = (b(r + 1e-6) - b(r - 1e-6)) / 2e-6
    np.testing.assert_allclose(fd, b.derivative(r), rtol=1e-6, atol=1e-10)
    s = TestFunction.sine(1, g)
    assert abs(s.norm2() - 1) < 1e-12
    with pytest.raises(ValueError):
        TestFunction(g, np.ones(65), np.zeros(65), np.zeros(65), compact=True)
