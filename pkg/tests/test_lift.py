import json
import warnings

import numpy as np
import pytest

from lsred.ansatz import PeakSetup
from lsred.errors import InvalidParameter, SourceNotASolution
from lsred.fullsolve import corrected_ansatz, newton_solve
from lsred.grid import DiscreteField, PeriodicGrid, ResolutionWarning
from lsred.lift import (
    LiftSpec,
    default_warped_product,
    exponent_bookkeeping,
    fd_derivative,
    fd_laplacian,
    hm_condition_check,
    hopf_map,
    identity_morphism,
    lift_warped,
    morphism_commutation_check,
    random_test_fields,
    revolution_scenario,
    warped_identity_check,
    warped_product_from_expression,
    warped_projection_base,
    warped_projection_fiber,
)
from lsred.manifold import (
    build_circle,
    build_flat_torus,
    build_round_sphere,
    circle_curve,
)


def test_fd_derivative_is_fourth_order():
    fn = lambda x: np.sin(x[..., 0]) * np.cos(x[..., 1])  # noqa: E731
    x = np.array([[0.3, 0.7]])
    exact = np.cos(0.3) * np.cos(0.7)
    errs = [abs(fd_derivative(fn, x, h, 0)[0] - exact) for h in (0.1, 0.05)]
    assert np.log2(errs[0] / errs[1]) > 3.8


def test_fd_laplacian_on_flat_torus_matches_closed_form():
    torus = build_flat_torus([2 * np.pi, 2 * np.pi])
    fn = lambda x: np.sin(x[..., 0]) + np.cos(2 * x[..., 1])  # noqa: E731
    x = np.array([[0.4, 1.1], [2.0, -0.5]])
    lap = fd_laplacian(lambda y: torus.metric(y, 0), fn, x, 1e-2)
    exact = -np.sin(x[:, 0]) - 4 * np.cos(2 * x[:, 1])
    assert np.max(np.abs(lap - exact)) < 1e-6


def test_fd_laplacian_on_sphere_of_spherical_harmonic():
    # x3 restricted to the unit sphere is an eigenfunction with eigenvalue -2
    s2 = build_round_sphere(2, 1.0)
    chart = s2.chart(0)
    fn = lambda y: chart.embed(y)[..., 2]  # noqa: E731
    y = np.array([[0.2, -0.1], [0.3, 0.4]])
    lap = fd_laplacian(lambda z: s2.metric(z, 0), fn, y, 1e-3)
    assert np.max(np.abs(lap + 2 * fn(y))) < 1e-6


def test_warped_identity_converges_at_second_order_or_better():
    wp = default_warped_product(1)
    fn = random_test_fields(np.random.default_rng(0), 2, 1, True)[0]
    rep = warped_identity_check(fn, wp, h=0.2)
    assert rep.order >= 2
    assert rep.deviations[-1] < rep.deviations[0]


def test_warped_identity_exact_for_constant_warping_and_constant_fields():
    wp = warped_product_from_expression(build_flat_torus([2 * np.pi, 2 * np.pi]), build_circle(), "3")
    fn = random_test_fields(np.random.default_rng(1), 2, 1, True)[0]
    assert warped_identity_check(fn, wp, h=0.1).deviations[-1] < 1e-10
    wp2 = default_warped_product(1)
    const = lambda x: np.full(np.shape(x)[:-1], 2.0)  # noqa: E731
    assert warped_identity_check(const, wp2, h=0.1).deviations[-1] < 1e-10


def test_warped_identity_detects_missing_gradient_term():
    from dataclasses import replace
    wp = default_warped_product(1)
    broken = replace(wp, grad_f=lambda x: np.zeros(np.shape(x)))
    fn = random_test_fields(np.random.default_rng(0), 2, 1, True)[0]
    rep = warped_identity_check(fn, broken, h=0.2)
    assert rep.deviations[-1] > 1e-2


@pytest.fixture(scope="module")
def revolution_solution(profile_1d4):
    t, curve = circle_curve()
    scen = revolution_scenario(t, curve, k=1, p=4.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        grid = PeriodicGrid.for_epsilon(scen.warped.base, 0.1)
        setup = PeakSetup(profile_1d4, grid, scen.coeffs, 0.1)
        seed, _ = corrected_ansatz(setup, np.array([scen.critical[0].xi[0]]))
        u, rep = newton_solve(setup, seed, tol=1e-10)
    assert rep.converged
    return scen, u


def test_revolution_lift_ratio_and_fiber_constancy(revolution_solution):
    scen, u = revolution_solution
    lifted, faxes, rep = scen.lift(u, 0.1, samples=1000, seed=0)
    assert rep.ratio <= 3
    assert rep.fiber_derivative_max < 1e-10
    assert lifted.shape == u.grid.shape + (16,)
    # fiber-constant on the grid
    assert np.ptp(lifted, axis=-1).max() == 0.0
    assert len(faxes) == 1


def test_lift_rejects_non_solution(revolution_solution):
    scen, u = revolution_solution
    bad = DiscreteField(u.grid, 1.1 * u.values)
    with pytest.raises(SourceNotASolution):
        scen.lift(bad, 0.1, samples=10)


def test_lift_of_constant_solution_has_zero_residual():
    # u = 1 solves -eps^2 div(f grad u) + f u = f u^(p-1) for any f
    wp = default_warped_product(1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        grid = PeriodicGrid.for_epsilon(wp.base, 0.5)
    u = DiscreteField(grid, np.ones(grid.shape))
    _, _, rep = lift_warped(u, wp, 0.5, 4.0, samples=50)
    assert rep.source_sampled_residual < 1e-12
    assert rep.lifted_sampled_residual < 1e-12


def test_lift_with_unit_warping_reproduces_source_residual():
    # f = 1: the product metric, so both equations coincide pointwise
    base = build_flat_torus([2 * np.pi, 2 * np.pi])
    wp = warped_product_from_expression(base, build_circle(), "1")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        grid = PeriodicGrid.for_epsilon(base, 0.5)
    x = grid.points
    u = DiscreteField(grid, 1.0 + 0.01 * np.cos(x[..., 0]))
    _, _, rep = lift_warped(u, wp, 0.5, 4.0, tol=1.0, samples=50)
    np.testing.assert_allclose(rep.lifted_residuals, rep.source_residuals, atol=1e-9)


def test_commutation_identity_is_exact():
    rep = morphism_commutation_check(identity_morphism(build_flat_torus([2 * np.pi, 2 * np.pi])))
    assert rep.deviations[-1] < 1e-9 * max(rep.scale, 1.0)


def test_commutation_warped_fiber_projection():
    wp = default_warped_product(1)
    rep = morphism_commutation_check(warped_projection_fiber(wp), h=0.05)
    assert rep.deviations[-1] < 1e-6 * max(rep.scale, 1.0) or rep.order >= 3.5


def test_commutation_hopf_fourth_order():
    rep = morphism_commutation_check(hopf_map(), h=0.05)
    assert rep.order >= 3.5


def test_commutation_requires_dilation():
    spec = identity_morphism(build_flat_torus([2 * np.pi, 2 * np.pi]))
    spec.lam = None
    with pytest.raises(InvalidParameter):
        morphism_commutation_check(spec)


def test_hm_condition_totally_geodesic_fibers():
    rep = hm_condition_check(hopf_map())
    assert rep.hm_residual == 0
    assert rep.conformality_defect < 1e-8


def test_hm_condition_warped_projections():
    wp = default_warped_product(1)
    assert hm_condition_check(warped_projection_fiber(wp)).residual <= 1e-6
    # the base projection is a Riemannian submersion, but its fibers are not minimal
    base = hm_condition_check(warped_projection_base(wp))
    assert base.conformality_defect <= 1e-6
    assert base.hm_residual >= 0.1


def test_hm_condition_detects_wrong_dilation():
    wp = default_warped_product(1)
    assert hm_condition_check(warped_projection_fiber(wp, 2.0)).residual >= 0.1


def test_hm_condition_requires_evaluators():
    spec = hopf_map()
    spec.kappa = None
    with pytest.raises(InvalidParameter):
        hm_condition_check(spec)


def test_factored_dilation():
    x = hopf_map().sample(np.random.default_rng(0), 20)
    assert hopf_map().check_factored_dilation(x) <= 1e-8
    spec = warped_projection_fiber(default_warped_product(1))
    assert isinstance(spec, LiftSpec)
    assert np.isnan(spec.check_factored_dilation(x))


def test_revolution_scenario_critical_points():
    t, curve = circle_curve()
    scen = revolution_scenario(t, curve, k=1, p=4.0)
    assert not scen.degenerate
    assert len(scen.critical) == 2

    def circ(a, b):
        d = np.mod(a - b, 2 * np.pi)
        return min(d, 2 * np.pi - d)

    # sorted by Gamma value: maximum of rho at t = 0, then the minimum at t = pi
    assert circ(scen.critical[0].xi[0], 0.0) < 1e-6
    assert circ(scen.critical[1].xi[0], np.pi) < 1e-6
    assert scen.fibers[0]["fiber_radius"] == pytest.approx(3.0, abs=1e-6)


def test_revolution_scenario_constant_radius_is_degenerate():
    t = np.linspace(0.0, 2 * np.pi, 257)
    curve = np.stack([np.cos(t), np.sin(t), np.full_like(t, 3.0)], axis=1)
    scen = revolution_scenario(t, curve, k=1, p=4.0)
    assert scen.degenerate


def test_revolution_scenario_json(tmp_path):
    t, curve = circle_curve()
    scen = revolution_scenario(t, curve, k=1, p=4.0)
    scen.to_json(tmp_path / "s.json")
    data = json.loads((tmp_path / "s.json").read_text())
    assert data["kind"] == "surface_of_revolution_scenario"
    assert len(data["critical_points"]) == 2
    assert data["exponents"]["subcritical_on_base"]


def test_exponent_bookkeeping():
    info = exponent_bookkeeping(2, 3, 5)
    assert info["base_critical"] == np.inf
    assert info["total_critical"] == pytest.approx(10 / 3)
    assert info["subcritical_on_base"] and info["supercritical_on_total"]
    assert not exponent_bookkeeping(2, 1, 4)["supercritical_on_total"]
