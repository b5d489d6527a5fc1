import math

import numpy as np
import pytest
from scipy.integrate import quad

from lsred.ansatz import (
    build_kernel_field,
    build_peak,
    gram_Z,
    project_orthogonal,
    smooth_step_cutoff,
)
from lsred.errors import InvalidParameter
from lsred.grid import DiscreteField
from lsred.groundstate import rescale_profile, sphere_area
from lsred.manifold import normal_coordinates

pytestmark = pytest.mark.filterwarnings("ignore::lsred.grid.ResolutionWarning")
XI = np.array([1.0, 0.5])


def test_cutoff_shape():
    r = 1.0
    rho = np.linspace(0, 1.2, 121)
    chi = smooth_step_cutoff(rho, r)
    assert np.all(chi[rho <= 0.5] == 1) and np.all(chi[rho >= 1.0] == 0)
    assert np.all(np.diff(chi) <= 0)


def test_peak_center_and_support(make_torus_setup):
    setup = make_torus_setup(0.2, a="1 + 0.5*cos(x1)")
    xi = np.array([setup.grid.axes[0][10], setup.grid.axes[1][7]])  # on a node
    W = build_peak(setup.profile, setup.grid, setup.coeffs, setup.eps, xi)
    gamma = (1 + 0.5 * math.cos(xi[0])) ** 0.5
    assert W.values[10, 7] == pytest.approx(gamma * setup.profile.center_value, rel=1e-12)
    y = normal_coordinates(setup.grid.manifold, xi, setup.grid.points)
    assert np.all(W.values[np.linalg.norm(y, axis=-1) >= setup.r] == 0)


def test_peak_defining_formula(make_torus_setup):
    setup = make_torus_setup(0.2)
    ans = setup.ansatz(XI)
    y = normal_coordinates(setup.grid.manifold, XI, setup.grid.points)
    rho = np.linalg.norm(y, axis=-1)
    idx = np.random.default_rng(0).choice(setup.grid.size, 100, replace=False)
    flat_rho = rho.ravel()[idx]
    direct = setup.profile(flat_rho / setup.eps) * smooth_step_cutoff(flat_rho, setup.r)
    assert np.max(np.abs(ans.W.ravel()[idx] - direct)) < 1e-12


def test_kernel_field_symmetry(make_torus_setup):
    setup = make_torus_setup(0.2)
    g = setup.grid
    xi = np.array([g.axes[0][16], g.axes[1][20]])
    Z0 = build_kernel_field(setup.profile, g, setup.coeffs, setup.eps, xi, 0).values
    assert Z0[16, 20] == 0
    # reflection x1 -> 2 xi1 - x1 maps node 16 + j to node 16 - j
    reflected = np.roll(Z0[::-1], 2 * 16 + 1, axis=0)
    assert np.max(np.abs(reflected + Z0)) < 1e-12 * np.max(np.abs(Z0))
    with pytest.raises(InvalidParameter):
        build_kernel_field(setup.profile, g, setup.coeffs, setup.eps, xi, 2)


def test_xi_derivative_of_peak(make_torus_setup):
    """d W / d xi_i + Z^i / eps stays O(1) while Z^i / eps grows like 1/eps."""
    errors, sizes = [], []
    for eps in (0.2, 0.1, 0.05):
        setup = make_torus_setup(eps, a="1 + 0.5*cos(x1)")
        h = 1e-4
        wp = setup.ansatz(XI + [h, 0]).W
        wm = setup.ansatz(XI - [h, 0]).W
        Z = setup.ansatz(XI).Z[0]
        dW = (wp - wm) / (2 * h)
        errors.append(np.max(np.abs(dW + Z / eps)))
        sizes.append(np.max(np.abs(Z / eps)))
    rel = np.array(errors) / np.array(sizes)
    slope = np.polyfit(np.log([0.2, 0.1, 0.05]), np.log(rel), 1)[0]
    assert slope >= 0.9


def test_gram_properties(make_torus_setup):
    setup = make_torus_setup(0.1, a="1 + 0.5*cos(x1)")
    G = gram_Z(setup, XI)
    assert np.array_equal(G, G.T)
    assert abs(G[0, 1]) / min(G[0, 0], G[1, 1]) < 0.05


def test_projection(make_torus_setup):
    setup = make_torus_setup(0.2, a="1 + 0.5*cos(x1)")
    ans = setup.ansatz(XI)
    Z1 = DiscreteField(setup.grid, ans.Z[0])
    assert setup.op.norm(project_orthogonal(Z1, setup, XI).values) <= 1e-10 * setup.op.norm(ans.Z[0])
    rng = np.random.default_rng(1)
    phi = DiscreteField(setup.grid, rng.normal(size=setup.grid.shape))
    once = project_orthogonal(phi, setup, XI)
    twice = project_orthogonal(once, setup, XI)
    assert np.max(np.abs(twice.values - once.values)) <= 1e-10 * np.max(np.abs(once.values))
    assert ans.orthogonality_defect(once.values) < 1e-10


def test_peak_norm_limit(make_torus_setup, profile_2d4):
    setup = make_torus_setup(0.2, a="1 + 0.5*cos(x1)")
    V = rescale_profile(profile_2d4, setup.coeffs, XI)
    radial = quad(lambda r: (V.c * V.radial_derivative(r) ** 2 + V.a * V.radial(r) ** 2) * r, 0, 40, limit=200)[0]
    limit = sphere_area(2) * radial
    gaps = []
    for eps in (0.2, 0.1, 0.05):
        s = make_torus_setup(eps, a="1 + 0.5*cos(x1)")
        W = s.ansatz(XI).W
        gaps.append(abs(s.op.inner(W, W) - limit))
    slope = np.polyfit(np.log([0.2, 0.1, 0.05]), np.log(gaps), 1)[0]
    assert slope >= 0.9


def test_eps_larger_than_cutoff_rejected(profile_2d4, torus):
    from lsred.ansatz import PeakSetup
    from lsred.coefficients import CoefficientField
    from lsred.grid import PeriodicGrid
    with pytest.raises(InvalidParameter):
        PeakSetup(profile_2d4, PeriodicGrid(torus, (16, 16)), CoefficientField.constant(2), 5.0)
