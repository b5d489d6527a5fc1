import math

import numpy as np
import pytest

from lsred.coefficients import CoefficientField
from lsred.errors import InvalidParameter
from lsred.grid import DiscreteField, PeriodicGrid, assemble
from lsred.groundstate import energy_constant, rescale_profile, sphere_area
from lsred.reduction import (
    Reduction,
    adjoint_istar,
    energy,
    f_plus,
    find_critical_points,
    gamma,
    landscape,
    loglog_slope,
    reduced_energy,
    torus_distance,
    xi_grid,
)

pytestmark = pytest.mark.filterwarnings("ignore::lsred.grid.ResolutionWarning")
TWO_PI = 2 * math.pi
XI = np.array([1.0, 0.5])
COS_A = "1 + 0.5*cos(x1)"
EPS = (0.2, 0.1, 0.05)


@pytest.fixture(scope="module")
def small_grid(torus):
    return PeriodicGrid(torus, (32, 32))


def test_istar_constants(small_grid):
    op = assemble(small_grid, CoefficientField.constant(2, c=3.0), 0.3)
    u = adjoint_istar(DiscreteField(small_grid, np.ones(small_grid.shape)), op)
    assert np.allclose(u.values, 1.0, atol=1e-12)


def test_istar_fourier_mode(small_grid):
    eps = 0.3
    op = assemble(small_grid, CoefficientField.constant(2), eps)
    w = np.cos(small_grid.points[..., 0])
    u = adjoint_istar(DiscreteField(small_grid, w), op)
    assert np.allclose(u.values, w / (1 + eps ** 2), atol=1e-12)


def test_istar_bound_stable_in_eps(make_torus_setup):
    p = 4.0
    q = p / (p - 1)
    ratios = []
    for eps in EPS:
        s = make_torus_setup(eps, a=COS_A)
        W = s.ansatz(XI).W
        w = W ** 3
        u = adjoint_istar(DiscreteField(s.grid, w), s.op)
        lp = (s.op.scale * float(np.sum(s.grid.weights * np.abs(w) ** q))) ** (1 / q)
        ratios.append(s.op.norm(u.values) / lp)
    assert max(ratios) / min(ratios) <= 1.2


def test_one_sided_nonlinearity():
    u = np.array([-2.0, 0.0, 1.5])
    assert np.array_equal(f_plus(u, 4.0), [0.0, 0.0, 1.5 ** 3])


def test_gamma_values():
    assert gamma(CoefficientField.constant(2), 2, 4.0, [0, 0]) == pytest.approx(1.0)
    assert gamma(CoefficientField.constant(2, a=4.0), 2, 4.0, [0, 0]) == pytest.approx(4.0)
    assert gamma(CoefficientField.constant(2, b=16.0), 2, 4.0, [0, 0]) == pytest.approx(1 / 16)


def test_cp_gamma_equals_limit_energy(profile_2d4):
    from scipy.integrate import quad
    coeffs = CoefficientField.constant(2, a=1.7, b=0.6, c=1.3)
    V = rescale_profile(profile_2d4, coeffs, np.zeros(2))
    p = 4.0
    quad_energy = sphere_area(2) * quad(
        lambda r: (0.5 * (V.c * V.radial_derivative(r) ** 2 + V.a * V.radial(r) ** 2) - V.b * V.radial(r) ** p / p) * r,
        0, 40, limit=400, epsabs=0, epsrel=1e-12)[0]
    assert energy_constant(profile_2d4) * gamma(coeffs, 2, p, [0, 0]) == pytest.approx(quad_energy, rel=1e-6)


def test_remainder_orthogonal_and_rates(make_torus_setup):
    # constant coefficients leave only exponentially small cutoff terms; at four nodes per eps
    # the discretization floor (about 1e-4) would hide them, so this case runs at eight
    const, varying = [], []
    for eps in EPS:
        red = Reduction(make_torus_setup(eps, nodes_per_eps=8), XI)
        R, norm = red.remainder()
        assert red.ans.orthogonality_defect(R.values) < 1e-9
        const.append(norm)
        varying.append(Reduction(make_torus_setup(eps, a=COS_A), XI).remainder()[1])
    assert loglog_slope(EPS, const) > 1.5
    assert loglog_slope(EPS, varying) >= 0.9


def test_linear_operator_basics(make_torus_setup):
    red = Reduction(make_torus_setup(0.2, a=COS_A), XI)
    shape = red.op.grid.shape
    assert np.all(red.apply_L(np.zeros(shape)).values == 0)
    assert np.all(red.nonlinear_N(np.zeros(shape)).values == 0)
    rng = np.random.default_rng(0)
    u, v = rng.normal(size=(2,) + shape)
    lhs = red.apply_L(2 * u - 3 * v).values
    rhs = 2 * red.apply_L(u).values - 3 * red.apply_L(v).values
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(rhs))


def test_nonlinear_quadratic_smallness(make_torus_setup):
    red = Reduction(make_torus_setup(0.2, a=COS_A), XI)
    rng = np.random.default_rng(1)
    base = red.ans.project_orthogonal(rng.normal(size=red.op.grid.shape) * red.ans.chi)
    base /= red.op.norm(base)
    ts = np.array([1e-2, 5e-3, 2.5e-3])
    sizes = [red.op.norm(red.nonlinear_N(t * base).values) for t in ts]
    assert loglog_slope(ts, sizes) >= 1.9


def test_nonlinear_negative_part(make_torus_setup):
    red = Reduction(make_torus_setup(0.2, a=COS_A), XI)
    phi = -2 * red.ans.W - 1.0  # W + phi < 0 everywhere
    expected = red.op.wb * (0.0 - red.fW - red.fpW * phi)
    got = red.nonlinear_N(phi).values
    assert np.max(np.abs(got - red.ans.project_orthogonal(red.op.solve(expected)))) < 1e-10 * np.max(np.abs(got))


def test_sigma_min_floor(make_torus_setup):
    sig = [Reduction(make_torus_setup(eps, a=COS_A), XI).sigma_min() for eps in EPS]
    assert sig[0] > 0
    assert min(sig[1:]) >= 0.5 * sig[0]


def test_fixed_point_contract(make_torus_setup):
    tol = 1e-9
    state = Reduction(make_torus_setup(0.1, a=COS_A), XI).fixed_point_phi(tol=tol)
    assert state.residual <= 10 * tol
    assert state.max_contraction < 1
    assert state.orthogonality < 1e-9


def test_fixed_point_rates(make_torus_setup):
    const = [Reduction(make_torus_setup(eps, nodes_per_eps=8), XI).fixed_point_phi().phi_norm for eps in EPS]
    varying = [Reduction(make_torus_setup(eps, a=COS_A), XI).fixed_point_phi().phi_norm for eps in EPS]
    assert loglog_slope(EPS, const) > 1.5
    assert loglog_slope(EPS, varying) >= 0.9


def test_fixed_point_rejects_large_eps(profile_2d4, torus):
    from lsred.ansatz import PeakSetup
    setup = PeakSetup(profile_2d4, PeriodicGrid(torus, (32, 32)), CoefficientField.constant(2), 0.5)
    with pytest.raises(InvalidParameter):
        Reduction(setup, XI).fixed_point_phi()


def test_reduced_energy_translation_invariant(make_torus_setup):
    setup = make_torus_setup(0.1)
    vals = [reduced_energy(setup, xi)[0] for xi in ([1.0, 0.5], [3.3, 2.0], [5.0, 4.1])]
    assert np.ptp(vals) <= 1e-6 * abs(vals[0])


def test_reduced_energy_close_to_ansatz_energy(make_torus_setup):
    gaps = []
    for eps in EPS:
        red = Reduction(make_torus_setup(eps, a=COS_A), XI)
        gaps.append(abs(red.reduced_energy(red.fixed_point_phi()) - red.ansatz_energy()))
    assert loglog_slope(EPS, gaps) >= 0.9


def test_energy_functional(make_torus_setup):
    setup = make_torus_setup(0.2)
    u = np.full(setup.grid.shape, 0.5)
    # constant field: 1/2 eps^-2 (2 pi)^2 u^2 - 1/4 eps^-2 (2 pi)^2 u^4
    expected = TWO_PI ** 2 / 0.04 * (0.5 * 0.25 - 0.0625 / 4)
    assert energy(setup.op, u, 4.0) == pytest.approx(expected, rel=1e-12)


def test_critical_points_of_interpolant():
    axes = [TWO_PI * np.arange(16) / 16, TWO_PI * np.arange(12) / 12]
    X, Y = np.meshgrid(*axes, indexing="ij")
    vals = np.cos(X - 0.3) + 0.5 * np.cos(Y)
    crit, flat = find_critical_points(vals, axes, np.array([TWO_PI, TWO_PI]), np.zeros(2))
    assert not flat and len(crit) == 4
    best = max(crit, key=lambda c: c.value)
    assert torus_distance(best.xi, [0.3, 0.0], np.array([TWO_PI, TWO_PI])) < 1e-8
    assert best.signature.startswith("max")
    _, flat = find_critical_points(np.ones((4, 4)), axes, np.array([TWO_PI, TWO_PI]), np.zeros(2))
    assert flat


def test_landscape_constant_is_degenerate(make_torus_setup):
    setup = make_torus_setup(0.2)
    land = landscape(setup, xi_grid(setup.grid.manifold, [3, 2]))
    assert land.degenerate and not land.critical_jtilde


def test_landscape_cosine_critical_points(make_torus_setup, tmp_path):
    periods = np.array([TWO_PI, TWO_PI])
    distances = []
    for eps in (0.1, 0.05):
        setup = make_torus_setup(eps, a=COS_A)
        axes = xi_grid(setup.grid.manifold, [6, 1], offset=[0.0, 0.5])
        land = landscape(setup, axes)
        assert bool(np.all(land.converged))
        cell = TWO_PI / 6
        found = sorted(land.critical_jtilde, key=lambda c: -c.value)
        assert len(found) == 2
        assert torus_distance(found[0].xi[:1], [0.0], periods[:1]) < cell
        assert torus_distance(found[1].xi[:1], [math.pi], periods[:1]) < cell
        distances.append(max(p["distance"] for p in land.pairing))
    assert distances[1] <= distances[0] + 1e-9
    land.write(tmp_path / "l.csv", tmp_path / "c.json")
    assert (tmp_path / "l.csv").read_text().startswith("xi1,xi2,Gamma,Jtilde,converged")
