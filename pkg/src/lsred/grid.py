"""Periodic tensor grids, nodal fields and the discrete elliptic operator.

The operator is the Fourier-collocation Galerkin form of
-eps^2 div_g(c grad u) + a u: with quadrature weights w = sqrt|g| h^n and the
real spectral derivative D (Nyquist mode dropped, so D^T = -D),

    K u = eps^2 sum_ij D_i^T [w c g^ij D_j u] + w a u,

which is symmetric positive definite, and <u, v>_eps = eps^-n u.K v.
"""
import csv
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft
from scipy.sparse.linalg import LinearOperator, cg

from .errors import InvalidParameter, MeshMismatch, NonConvergence

NODES_PER_EPS = 4


class ResolutionWarning(UserWarning):
    pass


class PeriodicGrid:
    """Uniform tensor grid on the (fully periodic) chart 0 of a manifold."""

    def __init__(self, manifold, shape):
        chart = manifold.chart(0)
        if len(chart.periodic) != manifold.dim:
            raise InvalidParameter("periodic grids need a chart with every axis periodic")
        shape = tuple(int(s) for s in np.broadcast_to(shape, (manifold.dim,)))
        if min(shape) < 4 or any(s % 2 for s in shape):
            raise InvalidParameter("grid sizes must be even and at least 4")
        self.manifold = manifold
        self.n = manifold.dim
        self.shape = shape
        self.lo = np.asarray(chart.lo, dtype=float)
        self.periods = np.asarray(chart.hi - chart.lo, dtype=float)
        self.h = self.periods / np.array(shape)
        axes = [self.lo[i] + self.h[i] * np.arange(shape[i]) for i in range(self.n)]
        self.axes = axes
        self.points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        g = manifold.metric(self.points)
        self.flat = bool(manifold.flat)
        self.ginv = np.linalg.inv(g)
        self.sqrtg = np.sqrt(np.linalg.det(g))
        self.weights = self.sqrtg * float(np.prod(self.h))
        # wavenumbers matching rfftn's layout, Nyquist entries zeroed
        ks = []
        for i in range(self.n):
            m = fft.rfftfreq(shape[i], self.h[i]) if i == self.n - 1 else fft.fftfreq(shape[i], self.h[i])
            k = 2 * np.pi * m
            k[np.isclose(np.abs(m), 0.5 / self.h[i])] = 0.0
            view = [1] * self.n
            view[i] = -1
            ks.append(k.reshape(view))
        self.wavenumbers = ks

    @classmethod
    def for_epsilon(cls, manifold, eps, nodes_per_eps=NODES_PER_EPS, minimum=32):
        """Grid whose spacing (in metric length) is at most eps / nodes_per_eps."""
        chart = manifold.chart(0)
        periods = chart.hi - chart.lo
        probe = chart.lo + periods * (np.arange(64)[:, None] + 0.5) / 64
        stretch = np.sqrt(np.max(np.diagonal(manifold.metric(probe), axis1=-2, axis2=-1), axis=0))
        shape = []
        for i in range(manifold.dim):
            need = max(minimum, math.ceil(nodes_per_eps * periods[i] * stretch[i] / eps))
            size = fft.next_fast_len(need, real=True)
            shape.append(size + size % 2)
        return cls(manifold, shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    def cell(self):
        return float(np.max(self.h))

    def same_as(self, other):
        return other is self or (self.shape == other.shape and np.allclose(self.periods, other.periods)
                                 and self.manifold is other.manifold)

    def fourier(self, u):
        return fft.rfftn(u, s=self.shape, axes=range(self.n))

    def inverse(self, uh):
        return fft.irfftn(uh, s=self.shape, axes=range(self.n))

    def gradient(self, u):
        """Spectral gradient, shape (*shape, n)."""
        uh = self.fourier(u)
        return np.stack([self.inverse(1j * k * uh) for k in self.wavenumbers], axis=-1)

    def derivative(self, u, axis):
        return self.inverse(1j * self.wavenumbers[axis] * self.fourier(u))

    def divergence_transpose(self, flux):
        """sum_i D_i^T flux_i = -sum_i D_i flux_i."""
        total = 0.0
        for i, k in enumerate(self.wavenumbers):
            total = total - 1j * k * self.fourier(flux[..., i])
        return self.inverse(total)

    def integrate(self, values):
        return float(np.sum(self.weights * values))

    def descriptor(self):
        return {"kind": "periodic_grid", "shape": list(self.shape), "lo": self.lo.tolist(),
                "periods": self.periods.tolist(), "manifold": self.manifold.descriptor()}


@dataclass
class DiscreteField:
    """Nodal values on a grid."""
    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise MeshMismatch(f"field shape {self.values.shape} does not match grid {self.grid.shape}")

    @property
    def weights(self):
        return self.grid.weights

    def integral(self):
        return self.grid.integrate(self.values)

    def check_same_grid(self, other):
        if not self.grid.same_as(other.grid):
            raise MeshMismatch("fields live on different grids")

    def like(self, values):
        return DiscreteField(self.grid, values)

    def to_csv(self, path, name="value"):
        pts = self.grid.points.reshape(-1, self.grid.n)
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(self.grid.n)] + [name])
            for x, v in zip(pts, self.values.ravel()):
                w.writerow([repr(float(c)) for c in x] + [repr(float(v))])

    @classmethod
    def from_csv(cls, path, grid):
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        vals = np.array([float(r[-1]) for r in rows if r])
        if vals.size != grid.size:
            raise MeshMismatch(f"{path} holds {vals.size} nodes, grid has {grid.size}")
        return cls(grid, vals.reshape(grid.shape))

    def interpolate(self, points):
        """Trigonometric interpolant at arbitrary chart points (shape (..., n))."""
        g = self.grid
        pts = np.asarray(points, dtype=float)
        flat = pts.reshape(-1, g.n)
        coef = np.fft.fftn(self.values) / self.values.size
        out = np.empty(flat.shape[0])
        for start in range(0, flat.shape[0], 512):
            chunk = flat[start:start + 512]
            acc = coef[None, ...]
            for i in range(g.n):
                m = np.fft.fftfreq(g.shape[i], 1.0 / g.shape[i])
                phase = np.exp(2j * np.pi * np.outer(chunk[:, i] - g.lo[i], m) / g.periods[i])
                # contract the leading grid axis of acc with this axis' phases
                acc = np.einsum("pk,pk...->p...", phase, acc) if i else np.einsum("pk,k...->p...", phase, acc[0])
            out[start:start + len(chunk)] = np.real(acc)
        return out.reshape(pts.shape[:-1])

    def write_mesh_json(self, path):
        Path(path).write_text(json.dumps(self.grid.descriptor(), indent=2) + "\n", encoding="utf-8")


class EllipticOperator:
    """Discrete -eps^2 div_g(c grad .) + a on a periodic grid (see module docstring)."""

    def __init__(self, grid, coeffs, eps, min_nodes_per_eps=NODES_PER_EPS):
        if not eps > 0:
            raise InvalidParameter("eps must be positive")
        self.grid, self.coeffs, self.eps = grid, coeffs, float(eps)
        pts = grid.points
        coeffs.check_positive(pts)
        self.a, self.b, self.c = coeffs.values(pts)
        w = grid.weights
        self.wa = w * self.a
        self.wb = w * self.b
        self.flux_tensor = (w * self.c)[..., None, None] * grid.ginv
        self.scale = self.eps ** (-grid.n)
        const_c = np.ptp(self.c) == 0 and grid.flat
        self._laplace_symbol = None
        if const_c:
            self._laplace_symbol = float(self.c.flat[0] * w.flat[0]) * sum(k ** 2 for k in grid.wavenumbers)
        # constant-coefficient Fourier preconditioner
        diag = [float(np.mean(self.flux_tensor[..., i, i])) for i in range(grid.n)]
        symbol = self.eps ** 2 * sum(d * k ** 2 for d, k in zip(diag, grid.wavenumbers)) + float(np.mean(self.wa))
        self._precond_symbol = symbol
        stretch = np.sqrt(np.max(np.diagonal(np.linalg.inv(grid.ginv), axis1=-2, axis2=-1)))
        if grid.cell() * stretch > self.eps / min_nodes_per_eps * (1 + 1e-9):
            warnings.warn(f"grid spacing {grid.cell():.3g} gives fewer than {min_nodes_per_eps} nodes per eps",
                          ResolutionWarning, stacklevel=2)

    @property
    def n(self):
        return self.grid.n

    def apply(self, u):
        """K u (weak form, weights included)."""
        g = self.grid
        if self._laplace_symbol is not None:
            lap = g.inverse(self._laplace_symbol * g.fourier(u))
            return self.eps ** 2 * lap + self.wa * u
        grad = g.gradient(u)
        flux = np.einsum("...ij,...j->...i", self.flux_tensor, grad)
        return self.eps ** 2 * g.divergence_transpose(flux) + self.wa * u

    def strong(self, u):
        """Nodal values of -eps^2 div(c grad u) + a u."""
        return self.apply(u) / self.grid.weights

    def precondition(self, r):
        g = self.grid
        return g.inverse(g.fourier(r) / self._precond_symbol)

    def inner(self, u, v):
        return self.scale * float(np.sum(u * self.apply(v)))

    def norm(self, u):
        return math.sqrt(max(self.inner(u, u), 0.0))

    def linear_operator(self, shift=None):
        """K (minus diag(shift) if given) as a scipy LinearOperator on flat vectors."""
        shape, size = self.grid.shape, self.grid.size

        def mv(x):
            u = x.reshape(shape)
            out = self.apply(u)
            if shift is not None:
                out = out - shift * u
            return out.ravel()

        return LinearOperator((size, size), matvec=mv, rmatvec=mv, dtype=float)

    def preconditioner(self):
        shape, size = self.grid.shape, self.grid.size
        mv = lambda x: self.precondition(x.reshape(shape)).ravel()  # noqa: E731
        return LinearOperator((size, size), matvec=mv, rmatvec=mv, dtype=float)

    def solve(self, rhs, rtol=1e-12, x0=None, maxiter=2000):
        """K^-1 rhs by preconditioned CG; raises NonConvergence on breakdown."""
        rhs = np.asarray(rhs, dtype=float)
        if not np.any(rhs):
            return np.zeros_like(rhs)
        x, info = cg(self.linear_operator(), rhs.ravel(), x0=None if x0 is None else x0.ravel(),
                     rtol=rtol, atol=0.0, maxiter=maxiter, M=self.preconditioner())
        if info != 0:
            raise NonConvergence(f"CG failed to converge (info={info})")
        return x.reshape(self.grid.shape)


def assemble(grid, coeffs, eps):
    """Discrete operator handle for -eps^2 div_g(c grad u) + a u on ``grid``."""
    return EllipticOperator(grid, coeffs, eps)


def eps_inner(u, v, eps, coeffs):
    """<u, v>_eps = eps^(2-n) int c grad u . grad v + eps^(-n) int a u v (quadrature)."""
    u.check_same_grid(v)
    g = u.grid
    a, _, c = coeffs.values(g.points)
    gu, gv = g.gradient(u.values), g.gradient(v.values)
    dot = np.einsum("...i,...ij,...j->...", gu, g.ginv, gv)
    return eps ** (2 - g.n) * g.integrate(c * dot) + eps ** (-g.n) * g.integrate(a * u.values * v.values)


def resample(field, grid):
    """Spectral (zero-padded or truncated) interpolation of a field onto another grid on the same chart."""
    src = field.grid
    if src.same_as(grid):
        return DiscreteField(grid, field.values.copy())
    if not np.allclose(src.periods, grid.periods) or not np.allclose(src.lo, grid.lo):
        raise MeshMismatch("resampling needs grids on the same periodic box")
    coef = np.fft.fftn(field.values) / field.values.size
    out = np.zeros(grid.shape, dtype=complex)
    # keep modes |m| < min(N_src, N_dst)/2; the shared Nyquist mode is dropped
    sel_src, sel_dst = [], []
    for ns, nd in zip(src.shape, grid.shape):
        m = min(ns, nd) // 2
        sel_src.append(np.r_[0:m, ns - m + 1:ns] if m > 0 else np.r_[0:1])
        sel_dst.append(np.r_[0:m, nd - m + 1:nd] if m > 0 else np.r_[0:1])
    out[np.ix_(*sel_dst)] = coef[np.ix_(*sel_src)]
    return DiscreteField(grid, np.real(np.fft.ifftn(out * out.size)))
