"""Peak ansatz W, kernel fields Z^i, the eps inner product and the Z projections."""
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidParameter, SingularGram
from .grid import DiscreteField, PeriodicGrid, assemble, eps_inner
from .groundstate import linearized_kernel, rescale_profile
from .manifold import normal_coordinates

GRAM_COND_LIMIT = 1e12

__all__ = [
    "smooth_step_cutoff", "bump_cutoff", "CUTOFFS", "PeakSetup", "PeakAnsatz", "build_peak",
    "build_kernel_field", "eps_inner", "gram_Z", "project_orthogonal",
]


def _psi(t):
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step_cutoff(rho, r):
    """C-infinity radial cutoff: 1 on [0, r/2], 0 beyond r, smooth step in between."""
    s = np.clip((2.0 * np.asarray(rho, dtype=float) - r) / r, 0.0, 1.0)
    lo, hi = _psi(1.0 - s), _psi(s)
    return lo / (lo + hi)


def bump_cutoff(rho, r):
    """exp(1 - 1/(1 - s^2)) with s = (2 rho - r)/r; C^1 at rho = r/2, used as the alternative cutoff."""
    s = np.clip((2.0 * np.asarray(rho, dtype=float) - r) / r, 0.0, 1.0)
    out = np.zeros_like(s)
    inside = s < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


CUTOFFS = {"smooth_step": smooth_step_cutoff, "bump": bump_cutoff}


@dataclass
class PeakSetup:
    """Everything fixed for one value of eps: profile, grid, coefficients, operator."""
    profile: object
    grid: PeriodicGrid
    coeffs: object
    eps: float
    r: float | None = None
    cutoff: str = "smooth_step"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.r is None:
            self.r = self.grid.manifold.cutoff_radius()
        if self.cutoff not in CUTOFFS:
            raise InvalidParameter(f"unknown cutoff {self.cutoff!r}; choose from {sorted(CUTOFFS)}")
        if not 0 < self.eps <= self.r:
            raise InvalidParameter(f"eps = {self.eps} must lie in (0, r = {self.r:.4g}]")
        if self.profile.n != self.grid.n:
            raise InvalidParameter("profile dimension differs from the manifold dimension")

    @property
    def p(self):
        return self.profile.p

    @property
    def n(self):
        return self.grid.n

    @cached_property
    def op(self):
        return assemble(self.grid, self.coeffs, self.eps)

    def ansatz(self, xi):
        key = tuple(np.round(np.atleast_1d(np.asarray(xi, dtype=float)), 14))
        if key not in self._cache:
            self._cache.clear()
            self._cache[key] = PeakAnsatz(self, np.atleast_1d(np.asarray(xi, dtype=float)))
        return self._cache[key]

    def field(self, values):
        return DiscreteField(self.grid, values)


class PeakAnsatz:
    """W_{eps,xi}, the kernel fields Z^i and their Gram matrix at one point xi."""

    def __init__(self, setup, xi):
        self.setup = setup
        self.xi = setup.grid.manifold.chart(0).wrap(np.asarray(xi, dtype=float))
        self.rescaled = rescale_profile(setup.profile, setup.coeffs, self.xi)
        y = normal_coordinates(setup.grid.manifold, self.xi, setup.grid.points)
        rho = np.linalg.norm(y, axis=-1)
        self.y, self.rho = y, rho
        inside = rho < setup.r
        chi = np.zeros_like(rho)
        chi[inside] = CUTOFFS[setup.cutoff](rho[inside], setup.r)
        self.chi = chi
        eps = setup.eps
        w = np.zeros_like(rho)
        w[inside] = self.rescaled.radial(rho[inside] / eps) * chi[inside]
        self.W = w
        dv = np.zeros_like(rho)
        dv[inside] = self.rescaled.radial_derivative(rho[inside] / eps)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(rho[..., None] > 0, y / np.where(rho > 0, rho, 1.0)[..., None], 0.0)
        self.Z = [dv * unit[..., i] * chi for i in range(setup.n)]
        op = setup.op
        self.KZ = [op.apply(z) for z in self.Z]
        self.KW = op.apply(self.W)
        gram = np.array([[op.scale * float(np.sum(zh * kz)) for kz in self.KZ] for zh in self.Z])
        self.gram = 0.5 * (gram + gram.T)
        self.gram_condition = float(np.linalg.cond(self.gram))
        if not np.isfinite(self.gram_condition) or self.gram_condition > GRAM_COND_LIMIT:
            raise SingularGram(f"Gram matrix of kernel fields has condition {self.gram_condition:.3g}")

    # projections -------------------------------------------------------
    def kernel_coefficients(self, phi):
        """c with Pi phi = sum_h c_h Z^h."""
        rhs = np.array([self.setup.op.scale * float(np.sum(phi * kz)) for kz in self.KZ])
        return np.linalg.solve(self.gram, rhs)

    def project_kernel(self, phi):
        coef = self.kernel_coefficients(phi)
        return sum(c * z for c, z in zip(coef, self.Z))

    def project_orthogonal(self, phi):
        return phi - self.project_kernel(phi)

    def orthogonality_defect(self, phi):
        """max_i |<phi, Z^i>_eps| / (||phi||_eps ||Z^i||_eps)."""
        op = self.setup.op
        nphi = op.norm(phi)
        if nphi == 0:
            return 0.0
        return max(abs(op.scale * float(np.sum(phi * kz))) / (nphi * math.sqrt(self.gram[i, i]))
                   for i, kz in enumerate(self.KZ))


def build_peak(profile, grid, coeffs, eps, xi, r=None, cutoff="smooth_step"):
    """Nodal values of W_{eps,xi}(exp_xi(y)) = V^xi(y / eps) chi(|y|)."""
    return DiscreteField(grid, PeakSetup(profile, grid, coeffs, eps, r, cutoff).ansatz(xi).W)


def build_kernel_field(profile, grid, coeffs, eps, xi, axis, r=None, cutoff="smooth_step"):
    """Nodal values of Z^axis(exp_xi(y)) = psi^axis(y / eps) chi(|y|); axis is 0-based."""
    if not 0 <= axis < grid.n:
        raise InvalidParameter(f"axis {axis} out of range for dimension {grid.n}")
    return DiscreteField(grid, PeakSetup(profile, grid, coeffs, eps, r, cutoff).ansatz(xi).Z[axis])


def gram_Z(setup, xi):
    """Matrix of <Z^h, Z^k>_eps."""
    return setup.ansatz(xi).gram.copy()


def project_orthogonal(phi, setup, xi):
    """phi minus its eps-orthogonal projection onto span{Z^i}."""
    return DiscreteField(setup.grid, setup.ansatz(xi).project_orthogonal(phi.values))


def kernel_reference(profile, coeffs, xi, axis=0):
    """Evaluator of psi^axis at xi (convenience re-export for tests and checks)."""
    return linearized_kernel(rescale_profile(profile, coeffs, xi), axis)
