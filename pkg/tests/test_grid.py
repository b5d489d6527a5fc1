import math
import warnings

import numpy as np
import pytest

from lsred.coefficients import CoefficientField
from lsred.errors import InvalidParameter, MeshMismatch
from lsred.grid import (
    DiscreteField,
    PeriodicGrid,
    ResolutionWarning,
    assemble,
    eps_inner,
    resample,
)
from lsred.manifold import (
    build_circle,
    build_round_sphere,
    build_surface_of_revolution,
    circle_curve,
)

TWO_PI = 2 * math.pi
pytestmark = pytest.mark.filterwarnings("ignore::lsred.grid.ResolutionWarning")


@pytest.fixture(scope="module")
def grid(torus):
    return PeriodicGrid(torus, (32, 24))


def test_constants_and_symmetry(grid):
    coeffs = CoefficientField.from_expressions(2, a="1.5 + 0.3*sin(x2)", c="1 + 0.2*cos(x1)")
    op = assemble(grid, coeffs, 0.7)
    assert np.allclose(op.strong(np.ones(grid.shape)), coeffs.a(grid.points), atol=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(3):
        u, v = rng.normal(size=(2,) + grid.shape)
        assert abs(op.inner(u, v) - op.inner(v, u)) <= 1e-10 * abs(op.inner(u, v))


def test_fourier_symbol(grid):
    eps, a, c = 0.3, 1.7, 0.6
    op = assemble(grid, CoefficientField.constant(2, a=a, c=c), eps)
    k = np.array([3.0, 2.0])
    mode = np.cos(k[0] * grid.points[..., 0] + k[1] * grid.points[..., 1])
    expected = eps ** 2 * c * float(k @ k) + a
    assert np.allclose(op.strong(mode), expected * mode, atol=1e-11)


def test_variable_coefficient_operator_on_curve():
    t, curve = circle_curve()
    base = build_surface_of_revolution(t, curve, 1).base
    g = PeriodicGrid(base, (256,))
    op = assemble(g, CoefficientField.from_expressions(1, c="2 + cos(x1)"), 1.0)
    s = g.points[..., 0]
    u = np.sin(s)
    strong = op.strong(u)
    # the circle profile has unit speed, so the operator is -(c u')' + u in the arclength s
    exact = -(-np.sin(s) * np.cos(s) - (2 + np.cos(s)) * np.sin(s)) + np.sin(s)
    assert np.max(np.abs(strong - exact)) < 1e-6


def test_eps_inner_constant_field(grid):
    coeffs = CoefficientField.constant(2)
    one = DiscreteField(grid, np.ones(grid.shape))
    assert eps_inner(one, one, 0.5, coeffs) == pytest.approx(TWO_PI ** 2 / 0.25, rel=1e-12)
    rng = np.random.default_rng(1)
    u, v = (DiscreteField(grid, rng.normal(size=grid.shape)) for _ in range(2))
    twice = DiscreteField(grid, 2 * u.values)
    assert eps_inner(twice, v, 0.5, coeffs) == pytest.approx(2 * eps_inner(u, v, 0.5, coeffs), rel=1e-13)
    op = assemble(grid, coeffs, 0.5)
    assert eps_inner(u, v, 0.5, coeffs) == pytest.approx(op.inner(u.values, v.values), rel=1e-10)


def test_mesh_mismatch(torus):
    a = DiscreteField(PeriodicGrid(torus, (8, 8)), np.zeros((8, 8)))
    b = DiscreteField(PeriodicGrid(torus, (16, 8)), np.zeros((16, 8)))
    with pytest.raises(MeshMismatch):
        eps_inner(a, b, 0.5, CoefficientField.constant(2))


def test_solve_inverts_operator(grid):
    coeffs = CoefficientField.from_expressions(2, a="1.5 + 0.3*sin(x2)", c="1 + 0.2*cos(x1)")
    op = assemble(grid, coeffs, 0.4)
    rhs = np.random.default_rng(2).normal(size=grid.shape)
    u = op.solve(rhs)
    assert np.max(np.abs(op.apply(u) - rhs)) < 1e-9 * np.max(np.abs(rhs))


def test_resolution_warning(torus):
    grid = PeriodicGrid(torus, (16, 16))
    with pytest.warns(ResolutionWarning):
        assemble(grid, CoefficientField.constant(2), 0.05)


def test_for_epsilon_spacing(torus):
    g = PeriodicGrid.for_epsilon(torus, 0.1, 4)
    assert max(g.h) <= 0.1 / 4 + 1e-12
    assert all(s % 2 == 0 for s in g.shape)
    with pytest.raises(InvalidParameter):
        PeriodicGrid(build_round_sphere(2), (16, 16))


def test_resample_and_interpolate(torus):
    coarse = PeriodicGrid(torus, (16, 16))
    fine = PeriodicGrid(torus, (40, 24))
    fn = lambda x: np.cos(x[..., 0]) * np.sin(2 * x[..., 1]) + 0.3  # noqa: E731
    up = resample(DiscreteField(coarse, fn(coarse.points)), fine)
    assert np.max(np.abs(up.values - fn(fine.points))) < 1e-12
    pts = np.random.default_rng(3).uniform(0, TWO_PI, (20, 2))
    assert np.max(np.abs(DiscreteField(coarse, fn(coarse.points)).interpolate(pts) - fn(pts))) < 1e-12


def test_csv_roundtrip(tmp_path, torus):
    g = PeriodicGrid(torus, (8, 6))
    u = DiscreteField(g, np.random.default_rng(4).normal(size=g.shape))
    u.to_csv(tmp_path / "u.csv")
    assert np.array_equal(DiscreteField.from_csv(tmp_path / "u.csv", g).values, u.values)


def test_circle_grid():
    g = PeriodicGrid(build_circle(1.0), (64,))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        op = assemble(g, CoefficientField.constant(1), 0.5)
    s = g.points[..., 0]
    assert np.allclose(op.strong(np.cos(3 * s)), (0.25 * 9 + 1) * np.cos(3 * s), atol=1e-11)
