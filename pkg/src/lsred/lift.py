"""Lifts of base solutions through warped products and harmonic morphisms, with numerical validators.

All second-order checks use nested fourth-order central differences of the
divergence form (1/(w sqrt|G|)) d_i (w sqrt|G| G^ij d_j u), so they are
independent of the spectral discretization used by the solvers.
"""
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import sympy

from .ansatz import PeakSetup
from .coefficients import CoefficientField, concentration_function, parse_expression
from .errors import InvalidParameter, SourceNotASolution
from .fullsolve import corrected_ansatz, newton_solve
from .grid import DiscreteField, PeriodicGrid, assemble
from .groundstate import critical_exponent
from .manifold import (Chart, ChartedManifold, WarpedProduct, build_circle, build_flat_torus,
                       build_round_sphere, build_surface_of_revolution)
from .reduction import f_plus, find_critical_points

__all__ = [
    "fd_derivative", "fd_gradient", "fd_laplacian", "LiftSpec", "LiftReport", "lift_warped",
    "warped_product_from_expression", "warped_coefficients", "warped_identity_check",
    "WarpedIdentityReport", "CommutationReport", "morphism_commutation_check", "HMReport", "hm_condition_check",
    "identity_morphism", "warped_projection_fiber", "warped_projection_base", "hopf_map",
    "critical_exponent", "exponent_bookkeeping", "RevolutionScenario", "revolution_scenario",
    "random_test_fields", "default_warped_product",
]


# ---------------------------------------------------------------------------
# finite differences


def fd_derivative(fn, x, h, axis):
    """Fourth-order central difference of fn along coordinate ``axis`` at points x (..., m)."""
    e = np.zeros(x.shape[-1])
    e[axis] = h
    return (-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * h)


def fd_gradient(fn, x, h):
    return np.stack([fd_derivative(fn, x, h, i) for i in range(x.shape[-1])], axis=-1)


def fd_laplacian(metric, fn, x, h, weight=None):
    """(1/(w sqrt|G|)) sum_i d_i (w sqrt|G| G^ij d_j fn) by nested differences; w = 1 if not given."""
    x = np.asarray(x, dtype=float)
    m = x.shape[-1]

    def density(y):
        g = metric(y)
        out = np.sqrt(np.linalg.det(g))
        return out * weight(y) if weight is not None else out

    def flux(i):
        def evaluate(y):
            ginv = np.linalg.inv(metric(y))
            grad = fd_gradient(fn, y, h)
            return density(y) * np.einsum("...j,...j->...", ginv[..., i, :], grad)
        return evaluate

    total = sum(fd_derivative(flux(i), x, h, i) for i in range(m))
    return total / density(x)


def _richardson_order(dev_coarse, dev_fine, ratio=2.0, floor=1e-13):
    if dev_fine <= floor:
        return math.inf
    return math.log(max(dev_coarse, floor) / dev_fine) / math.log(ratio)


# ---------------------------------------------------------------------------
# warped products


def warped_product_from_expression(base, fiber, f_text):
    """M x_{f^2} N with f given as an expression in the base chart coordinates x1..xn."""
    expr, syms = parse_expression(str(f_text), base.dim)
    f_fn = sympy.lambdify([syms], expr, "numpy")
    grads = [sympy.lambdify([syms], sympy.diff(expr, s), "numpy") for s in syms]

    def f(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(f_fn(np.moveaxis(x, -1, 0)), x.shape[:-1]).astype(float)

    def grad_f(x):
        x = np.asarray(x, dtype=float)
        xs = np.moveaxis(x, -1, 0)
        return np.stack([np.broadcast_to(g(xs), x.shape[:-1]) for g in grads], axis=-1).astype(float)

    return WarpedProduct(base=base, fiber=fiber, f=f, grad_f=grad_f, meta={"kind": "warped_product", "f": str(f_text)})


def warped_coefficients(wp):
    """a = b = c = f^k on the base, the weighted problem whose fiber-constant lift is unweighted."""
    k = wp.k

    def fk(x):
        return wp.f(x) ** k

    def grad_fk(x):
        return (k * wp.f(x) ** (k - 1))[..., None] * wp.grad_f(x)

    recipe = f"f^{k}"
    return CoefficientField(n=wp.n, a=fk, b=fk, c=fk, grad_a=grad_fk, grad_b=grad_fk, grad_c=grad_fk,
                            recipe={"a": recipe, "b": recipe, "c": recipe})


@dataclass
class WarpedIdentityReport:
    steps: list
    deviations: list
    order: float

    def as_dict(self):
        return {"steps": self.steps, "deviations": self.deviations, "order": self.order}


def warped_identity_check(u, wp, points=None, h=0.1, samples=50, seed=0, levels=2):
    """max |div_g(f^k grad u) - f^k (Lap_g u + k g(grad f / f, grad u))| at sample points.

    The left side is a nested difference of the weighted flux; the right side
    combines the unweighted nested Laplacian with an analytic grad f.  The
    deviation is computed at steps h, h/2, ... and a Richardson order fitted.
    ``u`` is a callable on base chart points or a DiscreteField.
    """
    fn = u.interpolate if isinstance(u, DiscreteField) else u
    chart = wp.base.chart(0)
    if points is None:
        rng = np.random.default_rng(seed)
        points = chart.lo + (chart.hi - chart.lo) * rng.random((samples, wp.n))
    points = np.asarray(points, dtype=float)
    k = wp.k
    metric = wp.base.metric

    def fk(y):
        return wp.f(y) ** k

    steps, devs = [], []
    for level in range(levels):
        step = h / 2 ** level
        lhs = fk(points) * fd_laplacian(metric, fn, points, step, weight=fk)
        grad_u = fd_gradient(fn, points, step)
        ginv = wp.base.inverse_metric(points)
        cross = np.einsum("...i,...ij,...j->...", wp.grad_f(points), ginv, grad_u) / wp.f(points)
        rhs = fk(points) * (fd_laplacian(metric, fn, points, step) + k * cross)
        steps.append(step)
        devs.append(float(np.max(np.abs(lhs - rhs))))
    order = _richardson_order(devs[-2], devs[-1]) if levels > 1 else float("nan")
    return WarpedIdentityReport(steps=steps, deviations=devs, order=order)


@dataclass
class LiftReport:
    eps: float
    p: float
    base_dim: int
    fiber_dim: int
    source_nodal_residual: float
    source_sampled_residual: float
    lifted_sampled_residual: float
    ratio: float
    fiber_derivative_max: float
    step: float
    points: np.ndarray = field(repr=False)
    source_residuals: np.ndarray = field(repr=False)
    lifted_residuals: np.ndarray = field(repr=False)

    def as_dict(self):
        return {k: getattr(self, k) for k in (
            "eps", "p", "base_dim", "fiber_dim", "source_nodal_residual", "source_sampled_residual",
            "lifted_sampled_residual", "ratio", "fiber_derivative_max", "step")}

    def to_csv(self, path):
        m = self.points.shape[-1]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i + 1}" for i in range(m)] + ["source_residual", "lifted_residual"])
            for x, rs, rl in zip(self.points, self.source_residuals, self.lifted_residuals):
                w.writerow([repr(float(c)) for c in x] + [repr(float(rs)), repr(float(rl))])


def lift_warped(u, wp, eps, p, tol=1e-6, samples=1000, seed=0, h=None, fiber_nodes=16):
    """Lift a base solution u of the f^k-weighted problem to v = u o pi_M on M x_{f^2} N.

    The nodal residual of -eps^2 div_g(f^k grad u) + f^k u - f^k u^(p-1) is
    checked against ``tol`` first.  Returns the lifted values on the product of
    the base grid with a uniform fiber grid, and a LiftReport comparing
    sampled residuals of both equations at random product points.
    """
    grid = u.grid
    coeffs = warped_coefficients(wp)
    op = assemble(grid, coeffs, eps)
    nodal = float(np.max(np.abs(op.strong(u.values) - op.b * f_plus(u.values, p))))
    if nodal > tol:
        raise SourceNotASolution(f"source residual {nodal:.3g} exceeds tolerance {tol:.3g}")
    fchart = wp.fiber.chart(0)
    faxes = [np.linspace(fchart.lo[i], fchart.hi[i], fiber_nodes, endpoint=False) for i in range(wp.k)]
    lifted = np.broadcast_to(u.values.reshape(grid.shape + (1,) * wp.k), grid.shape + (fiber_nodes,) * wp.k).copy()

    rng = np.random.default_rng(seed)
    bchart = wp.base.chart(0)
    xb = bchart.lo + (bchart.hi - bchart.lo) * rng.random((samples, wp.n))
    # keep fiber samples away from the chart box faces so difference stencils stay inside
    margin = 0.1 * (fchart.hi - fchart.lo)
    lo_f = np.where([i in fchart.periodic for i in range(wp.k)], fchart.lo, fchart.lo + margin)
    hi_f = np.where([i in fchart.periodic for i in range(wp.k)], fchart.hi, fchart.hi - margin)
    xf = lo_f + (hi_f - lo_f) * rng.random((samples, wp.k))
    pts = np.concatenate([xb, xf], axis=-1)
    if h is None:
        h = 0.05 * eps

    def v(y):
        return u.interpolate(y[..., : wp.n])

    def fk(y):
        return wp.f(y) ** wp.k

    vals = u.interpolate(xb)
    src = (-eps ** 2 * fk(xb) * fd_laplacian(wp.base.metric, u.interpolate, xb, h, weight=fk)
           + fk(xb) * vals - fk(xb) * np.maximum(vals, 0.0) ** (p - 1))
    lifted_res = (-eps ** 2 * fd_laplacian(wp.metric, v, pts, h) + vals - np.maximum(vals, 0.0) ** (p - 1))
    fiber_d = max(float(np.max(np.abs(fd_derivative(v, pts, h, wp.n + i)))) for i in range(wp.k))
    s_max, l_max = float(np.max(np.abs(src))), float(np.max(np.abs(lifted_res)))
    report = LiftReport(
        eps=float(eps), p=float(p), base_dim=wp.n, fiber_dim=wp.k, source_nodal_residual=nodal,
        source_sampled_residual=s_max, lifted_sampled_residual=l_max,
        ratio=l_max / s_max if s_max > 0 else (0.0 if l_max == 0 else math.inf),
        fiber_derivative_max=fiber_d, step=float(h), points=pts, source_residuals=src, lifted_residuals=lifted_res,
    )
    return lifted, faxes, report


# ---------------------------------------------------------------------------
# submersions and harmonic morphisms


@dataclass
class LiftSpec:
    """A map pi from a chart of the total space to a target manifold, with its dilation data.

    ``project(x)`` returns target ambient points (the embedding for spheres,
    chart coordinates for tori and circles); ``to_target(q)`` returns
    (chart coordinates, chart index) for ambient points and ``from_target(y,
    chart)`` the ambient point of chart coordinates.  ``lam`` and ``kappa``
    are evaluators on total-space chart points; ``mu`` (optional) lives on the
    target ambient points with lam^2 = mu o pi.
    """
    kind: str
    m: int
    n: int
    source_metric: Callable
    sample: Callable
    project: Callable
    to_target: Callable
    from_target: Callable
    target_metric: Callable
    periodic_target: bool
    lam: Callable | None = None
    mu: Callable | None = None
    kappa: Callable | None = None
    k: int | None = None
    name: str = ""

    def project_in_chart(self, x, chart):
        y, _ = self.to_target(self.project(x), chart)
        return y

    def check_factored_dilation(self, x):
        """max |mu o pi - lam^2| at the given points (nan when mu is absent)."""
        if self.mu is None or self.lam is None:
            return float("nan")
        return float(np.max(np.abs(self.mu(self.project(x)) - self.lam(x) ** 2)))


def random_test_fields(rng, dim, count, periodic, periods=None):
    """Smooth random fields on target ambient points: trig sums (periodic) or cubic polynomials."""
    fields = []
    for _ in range(count):
        if periodic:
            waves = rng.integers(-2, 3, size=(4, dim))
            amps = rng.normal(size=(4, 2))
            scale = 2 * np.pi / np.asarray(periods if periods is not None else np.full(dim, 2 * np.pi))

            def fn(q, waves=waves, amps=amps, scale=scale):
                ph = np.einsum("...i,ki->...k", np.asarray(q) * scale, waves)
                return np.sum(amps[:, 0] * np.cos(ph) + amps[:, 1] * np.sin(ph), axis=-1)
        else:
            lin = rng.normal(size=dim)
            quad = rng.normal(size=(dim, dim))
            cub = rng.normal(size=dim)

            def fn(q, lin=lin, quad=quad, cub=cub):
                q = np.asarray(q)
                return q @ lin + np.einsum("...i,ij,...j->...", q, quad, q) + (q @ cub) ** 3
        fields.append(fn)
    return fields


@dataclass
class CommutationReport:
    steps: list
    deviations: list
    order: float
    scale: float

    def as_dict(self):
        return {"steps": self.steps, "deviations": self.deviations, "order": self.order, "scale": self.scale}


def morphism_commutation_check(spec, fields=None, points=None, h=0.05, samples=40, seed=0, levels=2):
    """max over points and fields of |Lap(u o pi) - lam^2 (Lap u) o pi|, at steps h, h/2, ...

    ``scale`` is the largest |Lap(u o pi)| seen, for relative reading.
    """
    if spec.lam is None:
        raise InvalidParameter("morphism check needs a dilation evaluator")
    rng = np.random.default_rng(seed)
    if fields is None:
        fields = random_test_fields(rng, _ambient_dim(spec), 5, spec.periodic_target,
                                    getattr(spec, "target_periods", None))
    x = spec.sample(rng, samples) if points is None else np.asarray(points, dtype=float)
    q = spec.project(x)
    y, charts = spec.to_target(q)
    lam2 = spec.lam(x) ** 2
    steps, devs, scale = [], [], 0.0
    for level in range(levels):
        step = h / 2 ** level
        worst = 0.0
        for fn in fields:
            top = fd_laplacian(spec.source_metric, lambda z, fn=fn: fn(spec.project(z)), x, step)
            bottom = np.empty(len(x))
            for c in np.unique(charts):
                sel = charts == c
                bottom[sel] = fd_laplacian(lambda w, c=c: spec.target_metric(w, c),
                                           lambda w, fn=fn, c=c: fn(spec.from_target(w, c)), y[sel], step)
            worst = max(worst, float(np.max(np.abs(top - lam2 * bottom))))
            scale = max(scale, float(np.max(np.abs(top))))
        steps.append(step)
        devs.append(worst)
    order = _richardson_order(devs[-2], devs[-1], floor=1e-12 * max(scale, 1.0)) if levels > 1 else float("nan")
    return CommutationReport(steps=steps, deviations=devs, order=order, scale=scale)


def _ambient_dim(spec):
    return int(np.asarray(spec.project(spec.sample(np.random.default_rng(0), 1))).shape[-1])


@dataclass
class HMReport:
    hm_residual: float
    conformality_defect: float
    residual: float
    dims: tuple

    def as_dict(self):
        return {"hm_residual": self.hm_residual, "conformality_defect": self.conformality_defect,
                "residual": self.residual, "m": self.dims[0], "n": self.dims[1]}


def hm_condition_check(spec, points=None, samples=40, seed=0, h=1e-4):
    """Pointwise (n-2) H(grad ln lam) + (m-n) kappa, with H the horizontal projection of d pi.

    Also reports the horizontal conformality defect max |d pi G^-1 d pi^T H_N / lam^2 - I|,
    which detects a wrong dilation even where grad ln lam is vertical.
    ``residual`` is the larger of the two.
    """
    if spec.lam is None or spec.kappa is None:
        raise InvalidParameter("hm check needs both the dilation and the fiber mean curvature evaluators")
    rng = np.random.default_rng(seed)
    x = spec.sample(rng, samples) if points is None else np.asarray(points, dtype=float)
    _, charts = spec.to_target(spec.project(x))
    m, n = spec.m, spec.n
    hm, conf = 0.0, 0.0
    for idx in range(len(x)):
        xi = x[idx:idx + 1]
        c = charts[idx]
        jac = np.stack([fd_derivative(lambda z: spec.project_in_chart(z, c), xi, h, l) for l in range(m)],
                       axis=-1)[0]
        g = spec.source_metric(xi)[0]
        ginv = np.linalg.inv(g)
        lam = float(spec.lam(xi)[0])
        dlog = np.array([float(fd_derivative(lambda z: np.log(spec.lam(z)), xi, h, l)[0]) for l in range(m)])
        grad_log = ginv @ dlog
        jgj = jac @ ginv @ jac.T
        horiz = ginv @ jac.T @ np.linalg.solve(jgj, jac)
        vec = (n - 2) * horiz @ grad_log + (m - n) * np.asarray(spec.kappa(xi), dtype=float).reshape(m)
        hm = max(hm, float(math.sqrt(max(vec @ g @ vec, 0.0))))
        target = spec.target_metric(spec.project_in_chart(xi, c), c)[0]
        conf = max(conf, float(np.max(np.abs(jgj @ target / lam ** 2 - np.eye(n)))))
    return HMReport(hm_residual=hm, conformality_defect=conf, residual=max(hm, conf), dims=(m, n))


def _periodic_target(manifold):
    chart = manifold.chart(0)

    def to_target(q, chart_index=None):
        q = np.asarray(q, dtype=float)
        return chart.wrap(q), np.zeros(q.shape[:-1], dtype=int)

    def from_target(y, c):
        return np.asarray(y, dtype=float)

    return to_target, from_target, lambda y, c: manifold.metric(y, 0)


def identity_morphism(manifold):
    """Identity of a periodic manifold with lam = 1 (a trivial harmonic morphism)."""
    chart = manifold.chart(0)
    to_t, from_t, tmetric = _periodic_target(manifold)
    one = lambda x: np.ones(np.shape(x)[:-1])  # noqa: E731
    spec = LiftSpec(
        kind="harmonic-morphism", m=manifold.dim, n=manifold.dim, source_metric=lambda x: manifold.metric(x, 0),
        sample=lambda rng, s: chart.lo + (chart.hi - chart.lo) * rng.random((s, manifold.dim)),
        project=lambda x: np.asarray(x, dtype=float), to_target=to_t, from_target=from_t, target_metric=tmetric,
        periodic_target=True, lam=one, mu=lambda q: np.ones(np.shape(q)[:-1]),
        kappa=lambda x: np.zeros(np.shape(x)), name="identity",
    )
    spec.target_periods = chart.hi - chart.lo
    return spec


def _polar_target(radius=1.0):
    sphere = build_round_sphere(2, radius)

    def to_target(q, chart_index=None):
        q = np.asarray(q, dtype=float)
        th = np.arccos(np.clip(q[..., 2] / radius, -1, 1))
        return np.stack([th, np.arctan2(q[..., 1], q[..., 0])], axis=-1), np.full(q.shape[:-1], 2)

    return sphere, to_target, lambda y, c: sphere.chart(2).embed(np.asarray(y, float)), \
        lambda y, c: sphere.metric(y, 2)


def _fiber_target(fiber):
    """Ambient/chart plumbing for the fiber of a warped product (circle or polar S^2)."""
    if fiber.dim == 1:
        to_t, from_t, tmetric = _periodic_target(fiber)
        return to_t, from_t, tmetric, True, fiber.chart(0), fiber.chart(0).hi - fiber.chart(0).lo
    if fiber.dim == 2 and len(fiber.charts) > 2:
        _, to_t, from_t, tmetric = _polar_target(fiber.meta.get("radius", 1.0))
        return to_t, from_t, tmetric, False, fiber.chart(2), None
    raise InvalidParameter("fiber checks support S^1 and S^2 fibers")


def _warped_sampler(wp, fchart):
    bchart = wp.base.chart(0)
    flo = np.asarray(fchart.lo, float)
    fhi = np.asarray(fchart.hi, float)
    pad = np.array([0.0 if i in fchart.periodic else 0.15 * (fhi[i] - flo[i]) for i in range(wp.k)])

    def sample(rng, s):
        xb = bchart.lo + (bchart.hi - bchart.lo) * rng.random((s, wp.n))
        xf = flo + pad + (fhi - flo - 2 * pad) * rng.random((s, wp.k))
        return np.concatenate([xb, xf], axis=-1)

    return sample


def warped_projection_fiber(wp, dilation_power=1.0):
    """pi_N : M x_{f^2} N -> N with lam = f^-dilation_power (power 1 is the true dilation).

    The leaves M x {z} are totally geodesic, so kappa = 0.
    """
    to_t, from_t, tmetric, periodic, fchart, periods = _fiber_target(wp.fiber)
    fi = 2 if wp.k == 2 else 0

    def project(x):
        x = np.asarray(x, dtype=float)
        return from_t(x[..., wp.n:], fi)

    spec = LiftSpec(
        kind="harmonic-morphism", m=wp.dim, n=wp.k, source_metric=lambda x: wp.metric(x, fi),
        sample=_warped_sampler(wp, fchart), project=project, to_target=to_t, from_target=from_t,
        target_metric=tmetric, periodic_target=periodic,
        lam=lambda x: wp.f(np.asarray(x)[..., : wp.n]) ** (-dilation_power),
        kappa=lambda x: np.zeros(np.shape(x)), k=wp.k, name=f"warped_fiber_projection(power={dilation_power})",
    )
    spec.target_periods = periods
    return spec


def warped_projection_base(wp):
    """pi_M : M x_{f^2} N -> M, a Riemannian submersion (lam = 1) whose fibers have mean curvature -grad f / f."""
    to_t, from_t, tmetric = _periodic_target(wp.base)
    fchart = wp.fiber.chart(2 if wp.k == 2 else 0)
    fi = 2 if wp.k == 2 else 0

    def kappa(x):
        x = np.asarray(x, dtype=float)
        xb = x[..., : wp.n]
        grad = np.einsum("...ij,...j->...i", wp.base.inverse_metric(xb), wp.grad_f(xb)) / wp.f(xb)[..., None]
        return np.concatenate([-grad, np.zeros(x.shape[:-1] + (wp.k,))], axis=-1)

    spec = LiftSpec(
        kind="harmonic-morphism", m=wp.dim, n=wp.n, source_metric=lambda x: wp.metric(x, fi),
        sample=_warped_sampler(wp, fchart), project=lambda x: np.asarray(x, dtype=float)[..., : wp.n],
        to_target=to_t, from_target=from_t, target_metric=tmetric, periodic_target=True,
        lam=lambda x: np.ones(np.shape(x)[:-1]), mu=lambda q: np.ones(np.shape(q)[:-1]), kappa=kappa, k=wp.k,
        name="warped_base_projection",
    )
    spec.target_periods = wp.base.chart(0).hi - wp.base.chart(0).lo
    return spec


def _hopf(X):
    z1 = X[..., 0] + 1j * X[..., 1]
    z2 = X[..., 2] + 1j * X[..., 3]
    w = z1 * np.conj(z2)
    return np.stack([w.real, w.imag, 0.5 * (np.abs(z1) ** 2 - np.abs(z2) ** 2)], axis=-1)


def hopf_map():
    """Hopf fibration S^3 -> S^2(1/2), a Riemannian submersion with great-circle fibers (lam = 1, kappa = 0)."""
    s3 = build_round_sphere(3, 1.0)
    s2 = build_round_sphere(2, 0.5)
    rho = 0.5
    embed = s3.chart(0).embed

    def to_target(q, chart_index=None):
        q = np.asarray(q, dtype=float)
        if chart_index is None:
            charts = np.where(q[..., 2] >= 0, 0, 1)
        else:
            charts = np.full(q.shape[:-1], chart_index)
        sign = np.where(charts == 0, 1.0, -1.0)
        y = rho * q[..., :2] / (rho + sign * q[..., 2])[..., None]
        return y, charts

    def from_target(y, c):
        return s2.chart(c).embed(np.asarray(y, dtype=float))

    def sample(rng, s):
        # points of the northern stereographic ball |y| < 0.8 of S^3
        d = rng.normal(size=(s, 3))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return d * (0.8 * rng.random((s, 1)) ** (1 / 3))

    return LiftSpec(
        kind="harmonic-morphism", m=3, n=2, source_metric=lambda x: s3.metric(x, 0), sample=sample,
        project=lambda x: _hopf(embed(np.asarray(x, dtype=float))), to_target=to_target, from_target=from_target,
        target_metric=lambda y, c: s2.metric(y, c), periodic_target=False,
        lam=lambda x: np.ones(np.shape(x)[:-1]), mu=lambda q: np.ones(np.shape(q)[:-1]),
        kappa=lambda x: np.zeros(np.shape(x)), name="hopf",
    )


# ---------------------------------------------------------------------------
# surfaces of revolution


def exponent_bookkeeping(n, k, p):
    """Whether p is subcritical on the base (dim n) and critical/supercritical on the total space (dim n + k)."""
    return {"n": n, "k": k, "p": p, "base_critical": critical_exponent(n), "total_critical": critical_exponent(n + k),
            "subcritical_on_base": bool(2 < p < critical_exponent(n)),
            "supercritical_on_total": bool(p >= critical_exponent(n + k))}


def _extended_base(curve_base, length):
    """generating curve x flat circle of the given length: the n = 2 base used for the concentration landscape."""
    cchart = curve_base.chart(0)

    def metric(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = cchart.metric(x[..., :1])[..., 0, 0]
        out[..., 1, 1] = 1.0
        return out

    chart = Chart("curve_x_circle", np.array([cchart.lo[0], 0.0]), np.array([cchart.hi[0], length]), metric,
                  periodic=(0, 1), scale=cchart.scale)
    return ChartedManifold(dim=2, charts=(chart,), transitions={}, r_inj=min(curve_base.r_inj, 0.5 * length),
                           name="curve_x_circle", meta={"kind": "curve_x_circle", "circle_length": length})


@dataclass
class RevolutionScenario:
    warped: WarpedProduct
    p: float
    coeffs: CoefficientField
    landscape_axes: list
    gamma: np.ndarray
    critical: list
    degenerate: bool
    fibers: list
    extended: bool
    bookkeeping: dict

    def setup(self, profile, eps, nodes_per_eps=None):
        """PeakSetup for the weighted problem on the generating curve (n = 1)."""
        grid = PeriodicGrid.for_epsilon(self.warped.base, eps) if nodes_per_eps is None else \
            PeriodicGrid.for_epsilon(self.warped.base, eps, nodes_per_eps)
        return PeakSetup(profile, grid, self.coeffs, eps)

    def solve(self, profile, eps, t0=None, tol=1e-10):
        """Newton solve of the base problem seeded from the corrected ansatz at t0 (default: first critical point)."""
        setup = self.setup(profile, eps)
        if t0 is None:
            if not self.critical:
                raise InvalidParameter("no critical point of Gamma to seed from")
            t0 = self.critical[0].xi[0]
        seed, _ = corrected_ansatz(setup, np.array([t0]))
        return newton_solve(setup, seed, tol=tol)

    def lift(self, u, eps, **kw):
        return lift_warped(u, self.warped, eps, self.p, **kw)

    def as_dict(self):
        return {
            "kind": "surface_of_revolution_scenario",
            "manifold": self.warped.descriptor(),
            "coefficients": self.coeffs.recipe,
            "p": self.p,
            "extended_base": self.extended,
            "degenerate": self.degenerate,
            "critical_points": [c.as_dict() for c in self.critical],
            "predicted_fibers": self.fibers,
            "exponents": self.bookkeeping,
        }

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, default=float) + "\n", encoding="utf-8")


def revolution_scenario(t, curve, k=1, p=4.0, samples=64, extend=True, floor=1e-8):
    """Weighted problem a = b = c = f^k on a generating curve, its Gamma landscape and predicted fibers.

    With ``extend`` the landscape is evaluated on the curve times a flat
    circle (an n = 2 base) from the general Gamma formula; critical points
    are then degenerate along the circle factor and are reported by their
    curve parameter.
    """
    wp = build_surface_of_revolution(t, curve, k)
    n_land = 2 if extend else 1
    if not 2 < p < critical_exponent(n_land):
        raise InvalidParameter(f"p = {p} is not subcritical for the base dimension {n_land}")
    coeffs = warped_coefficients(wp)
    cchart = wp.base.chart(0)
    period = float(cchart.hi[0] - cchart.lo[0])
    t_axis = cchart.lo[0] + period * np.arange(samples) / samples
    if extend:
        base2 = _extended_base(wp.base, period)
        fk = lambda x: wp.f(np.asarray(x)[..., :1]) ** k  # noqa: E731
        gfk = lambda x: np.concatenate([(k * wp.f(np.asarray(x)[..., :1]) ** (k - 1))[..., None]  # noqa: E731
                                        * wp.grad_f(np.asarray(x)[..., :1]),
                                        np.zeros(np.shape(x)[:-1] + (1,))], axis=-1)
        c2 = CoefficientField(n=2, a=fk, b=fk, c=fk, grad_a=gfk, grad_b=gfk, grad_c=gfk, recipe=coeffs.recipe)
        axes = [t_axis, np.array([0.0])]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        gam = concentration_function(c2, 2, p, pts)
        periods = base2.chart(0).hi - base2.chart(0).lo
        lo = base2.chart(0).lo
    else:
        axes = [t_axis]
        pts = t_axis[:, None]
        gam = concentration_function(coeffs, 1, p, pts)
        periods, lo = np.array([period]), cchart.lo
    crit, flat = find_critical_points(gam, axes, periods, lo, floor=floor)
    crit = sorted(crit, key=lambda c: -c.value)
    fibers = []
    for c in crit:
        tc = np.array([c.xi[0]])
        point = cchart.embed(tc) if cchart.embed is not None else tc
        fibers.append({"t": float(tc[0]), "profile_point": np.atleast_1d(point).tolist(),
                       "fiber_radius": float(wp.f(tc)), "fiber_dim": k, "signature": c.signature})
    return RevolutionScenario(warped=wp, p=float(p), coeffs=coeffs, landscape_axes=axes, gamma=gam, critical=crit,
                              degenerate=bool(flat), fibers=fibers, extended=extend,
                              bookkeeping=exponent_bookkeeping(n_land, k, p))


def default_warped_product(k=1):
    """Flat 2-torus base with f = 2 + cos x1 + 0.5 sin x2 and a round S^k fiber."""
    fiber = build_circle(1.0) if k == 1 else build_round_sphere(k, 1.0)
    return warped_product_from_expression(build_flat_torus([2 * np.pi, 2 * np.pi]), fiber,
                                          "2 + cos(x1) + 0.5*sin(x2)")
