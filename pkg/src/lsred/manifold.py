"""Charted compact manifolds: metrics, Christoffel symbols, geodesics, exp/log maps.

Points are coordinate arrays in a named chart; the default chart is 0.  Charts
are coordinate boxes (with optionally periodic axes) and transition maps
between them.  Metric evaluators are vectorised over leading dimensions.
"""
import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, interpolate, sparse
from scipy.sparse import csgraph
from scipy.special import gamma as gamma_fn

from .errors import InvalidParameter, LeavesAtlas, NonConvergence

FD_STEP = 1e-5
GEODESIC_RTOL = 1e-12


def _fd4(fn, x, step, axis):
    """Fourth-order central difference of fn along coordinate ``axis``."""
    e = np.zeros(x.shape[-1])
    e[axis] = step
    return (-fn(x + 2 * e) + 8 * fn(x + e) - 8 * fn(x - e) + fn(x - 2 * e)) / (12 * step)


@dataclass(frozen=True)
class Chart:
    name: str
    lo: np.ndarray
    hi: np.ndarray
    metric: Callable
    metric_derivative: Callable | None = None
    periodic: tuple = ()
    embed: Callable | None = None
    scale: float = 1.0

    @property
    def dim(self):
        return len(self.lo)

    def contains(self, x, margin=0.0):
        x = np.asarray(x, dtype=float)
        ok = np.ones(x.shape[:-1], dtype=bool)
        for i in range(self.dim):
            if i in self.periodic:
                continue
            ok &= (x[..., i] >= self.lo[i] + margin) & (x[..., i] <= self.hi[i] - margin)
        return ok

    def margin(self, x):
        """Distance (in coordinates) to the nearest non-periodic box face."""
        vals = [min(x[i] - self.lo[i], self.hi[i] - x[i]) for i in range(self.dim) if i not in self.periodic]
        return min(vals) if vals else np.inf

    def wrap(self, x):
        x = np.array(x, dtype=float)
        for i in self.periodic:
            period = self.hi[i] - self.lo[i]
            x[..., i] = self.lo[i] + np.mod(x[..., i] - self.lo[i], period)
        return x

    def difference(self, x, y):
        """x - y with periodic axes wrapped into (-period/2, period/2]."""
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        for i in self.periodic:
            period = self.hi[i] - self.lo[i]
            d[..., i] = d[..., i] - period * np.round(d[..., i] / period)
        return d


@dataclass(frozen=True)
class ChartedManifold:
    """Compact manifold given by a chart atlas.

    ``transitions[(i, j)]`` maps chart-i coordinates to chart-j coordinates.
    ``flat`` marks the flat torus, for which exp/log have closed forms.
    """
    dim: int
    charts: tuple
    transitions: dict
    r_inj: float
    name: str = "manifold"
    meta: dict = field(default_factory=dict)
    flat: bool = False
    volume_fn: Callable | None = None

    def __post_init__(self):
        if not self.r_inj > 0:
            raise InvalidParameter("injectivity radius must be positive")

    def chart(self, index=0):
        return self.charts[index]

    def metric(self, x, chart=0):
        return self.charts[chart].metric(np.asarray(x, dtype=float))

    def inverse_metric(self, x, chart=0):
        return np.linalg.inv(self.metric(x, chart))

    def volume_element(self, x, chart=0):
        return np.sqrt(np.linalg.det(self.metric(x, chart)))

    def metric_derivative(self, x, chart=0):
        """dg[..., i, j, l] = d g_ij / d x_l (analytic if available, else 4th-order FD)."""
        ch = self.charts[chart]
        x = np.asarray(x, dtype=float)
        if ch.metric_derivative is not None:
            return ch.metric_derivative(x)
        h = FD_STEP * ch.scale
        return np.stack([_fd4(ch.metric, x, h, l) for l in range(self.dim)], axis=-1)

    def volume(self):
        if self.volume_fn is None:
            raise NotImplementedError(f"no volume quadrature for {self.name}")
        return self.volume_fn()

    def cutoff_radius(self, fraction=0.9):
        return fraction * self.r_inj

    def to_chart(self, x, src, dst):
        if src == dst:
            return np.asarray(x, dtype=float)
        return self.charts[dst].wrap(self.transitions[(src, dst)](np.asarray(x, dtype=float)))

    def descriptor(self):
        return {"name": self.name, "dim": self.dim, "r_inj": self.r_inj, **self.meta}


def christoffels(manifold, x, chart=0):
    """Gamma[..., k, i, j] = 1/2 g^{kl} (d_i g_jl + d_j g_il - d_l g_ij)."""
    x = np.asarray(x, dtype=float)
    ch = manifold.chart(chart)
    if not np.all(ch.contains(x)):
        raise LeavesAtlas(f"point outside chart {ch.name}")
    return _christoffels(manifold, x, chart)


def _christoffels(manifold, x, chart):
    dg = manifold.metric_derivative(x, chart)
    ginv = manifold.inverse_metric(x, chart)
    term = np.einsum("...jli->...ijl", dg) + np.einsum("...ilj->...ijl", dg) - dg
    return 0.5 * np.einsum("...kl,...ijl->...kij", ginv, term)


# ---------------------------------------------------------------------------
# geodesics


def _transition_jacobian(manifold, src, dst, x):
    h = FD_STEP * manifold.chart(src).scale
    fn = manifold.transitions[(src, dst)]
    return np.stack([_fd4(fn, x, h, l) for l in range(manifold.dim)], axis=-1)


def _switch_chart(manifold, chart, x, v):
    best = None
    for (src, dst), fn in manifold.transitions.items():
        if src != chart:
            continue
        y = fn(x)
        if not np.all(np.isfinite(y)):
            continue
        m = manifold.chart(dst).margin(manifold.chart(dst).wrap(y))
        if best is None or m > best[0]:
            best = (m, dst, y)
    if best is None or best[0] <= 0:
        raise LeavesAtlas("geodesic left every chart domain")
    _, dst, y = best
    w = _transition_jacobian(manifold, chart, dst, x) @ v
    return dst, manifold.chart(dst).wrap(y), w


def _flow(manifold, chart, x, v, t_span):
    """Integrate the geodesic equation, switching charts at box faces."""
    n = manifold.dim
    t0, t1 = t_span
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    for _ in range(64):
        ch = manifold.chart(chart)

        def rhs(_t, y, chart=chart):
            gam = _christoffels(manifold, y[:n], chart)
            return np.concatenate([y[n:], -np.einsum("kij,i,j->k", gam, y[n:], y[n:])])

        def leave(_t, y, ch=ch):
            return ch.margin(y[:n]) + 0.0
        leave.terminal = True
        leave.direction = -1

        events = [leave] if len(ch.periodic) < n else None
        sol = integrate.solve_ivp(rhs, (t0, t1), np.concatenate([x, v]), method="DOP853",
                                  rtol=GEODESIC_RTOL, atol=GEODESIC_RTOL * ch.scale, events=events)
        if sol.status < 0:
            raise NonConvergence(f"geodesic integration failed: {sol.message}")
        x, v = sol.y[:n, -1], sol.y[n:, -1]
        if sol.status == 0:
            return chart, ch.wrap(x), v
        # left the box: continue in the chart where the point is most interior
        t0 = sol.t[-1]
        chart, x, v = _switch_chart(manifold, chart, x, v)
    raise LeavesAtlas("too many chart switches along geodesic")


def geodesic(manifold, xi, v, times, chart=0):
    """Positions and velocities along the geodesic at increasing ``times``.

    Returns lists of (chart, x, v) triples.
    """
    out = []
    t_prev, c, x, w = 0.0, chart, np.asarray(xi, float), np.asarray(v, float)
    for t in times:
        if t > t_prev:
            c, x, w = _flow(manifold, c, x, w, (t_prev, t))
        out.append((c, x.copy(), w.copy()))
        t_prev = t
    return out


def exp_map(manifold, xi, v, chart=0):
    """exp_xi(v), returned in the coordinates of ``chart``."""
    xi = np.asarray(xi, dtype=float)
    v = np.asarray(v, dtype=float)
    if manifold.flat:
        return manifold.chart(chart).wrap(xi + v)
    if not np.any(v):
        return xi.copy()
    c, x, _ = _flow(manifold, chart, xi, v, (0.0, 1.0))
    if c != chart:
        x = manifold.to_chart(x, c, chart)
        if not np.all(np.isfinite(x)):
            raise LeavesAtlas("endpoint not representable in the requested chart")
    return x


def tangent_norm(manifold, x, v, chart=0):
    g = manifold.metric(x, chart)
    return float(np.sqrt(np.asarray(v) @ g @ np.asarray(v)))


def log_map(manifold, xi, x, chart=0, tol=1e-12):
    """Tangent vector v at xi with exp_xi(v) = x (damped Newton shooting).

    Shooting is tried in every chart holding both points, closest pair
    first.  If plain Newton fails everywhere, the target is moved along the
    coordinate segment from xi to x with each solve seeding the next.
    """
    xi = np.asarray(xi, dtype=float)
    x = np.asarray(x, dtype=float)
    ch = manifold.chart(chart)
    if manifold.flat:
        return ch.difference(x, xi)
    if manifold.dim == 1:
        return _log_1d(manifold, xi, x, chart)
    if not np.any(ch.difference(x, xi)):
        return np.zeros_like(xi)
    # try the charts holding both points, smallest coordinate separation first
    candidates = []
    for c in range(len(manifold.charts)):
        if c != chart and ((chart, c) not in manifold.transitions):
            continue
        xc, pc = manifold.to_chart(xi, chart, c), manifold.to_chart(x, chart, c)
        if not (np.all(np.isfinite(xc)) and np.all(np.isfinite(pc))):
            continue
        cc = manifold.chart(c)
        if c != chart and not (cc.contains(xc) and cc.contains(pc)):
            continue
        candidates.append((np.linalg.norm(cc.difference(pc, xc)) / cc.scale, c, xc, pc))
    candidates.sort(key=lambda item: item[0])
    for continuation in (False, True):
        for _, c, xc, pc in candidates:
            try:
                v = _log_in_chart(manifold, xc, pc, c, tol, continuation)
            except (NonConvergence, LeavesAtlas, np.linalg.LinAlgError):
                continue
            if c == chart:
                return v
            return _transition_jacobian(manifold, c, chart, xc) @ v
    raise NonConvergence("log map failed in every chart (target near the cut locus?)")


def _log_in_chart(manifold, xi, x, chart, tol, continuation):
    ch = manifold.chart(chart)
    d = ch.difference(x, xi)
    if not continuation:
        return _shoot(manifold, xi, x, d, chart, tol, 12)
    s, ds, v = 0.0, 0.25, None
    while s < 1.0:
        s_next = min(1.0, s + ds)
        seed = s_next * d if v is None else v * (s_next / s)
        try:
            v = _shoot(manifold, xi, ch.wrap(xi + s_next * d), seed, chart, tol, 12)
            s, ds = s_next, 2 * ds
        except (NonConvergence, LeavesAtlas, np.linalg.LinAlgError):
            ds *= 0.5
            if ds < 1e-3:
                raise NonConvergence("log map continuation failed")
    return v


def _shoot(manifold, xi, x, v, chart, tol, max_iter):
    ch = manifold.chart(chart)

    def miss(w):
        return ch.difference(exp_map(manifold, xi, w, chart), x)

    res = miss(v)
    scale = ch.scale
    for _ in range(max_iter):
        err = np.linalg.norm(res)
        if err < tol * scale:
            return v
        h = 1e-7 * scale * max(1.0, np.linalg.norm(v) / scale)
        jac = np.empty((manifold.dim, manifold.dim))
        for l in range(manifold.dim):
            e = np.zeros(manifold.dim)
            e[l] = h
            jac[:, l] = (miss(v + e) - miss(v - e)) / (2 * h)
        step = np.linalg.solve(jac, -res)
        t = 1.0
        g0 = manifold.metric(xi, chart)
        while t > 1e-4:
            trial = v + t * step
            if trial @ g0 @ trial > manifold.r_inj ** 2:
                t *= 0.5
                continue
            try:
                new = miss(trial)
            except LeavesAtlas:
                new = None
            if new is not None and np.linalg.norm(new) < err:
                break
            t *= 0.5
        else:
            if err < 1e3 * tol * scale:
                return v
            raise NonConvergence("log map line search failed (near the cut locus?)")
        v, res = trial, new
    if np.linalg.norm(res) < 1e3 * tol * scale:
        return v
    raise NonConvergence("log map Newton iteration did not converge")


def _log_1d(manifold, xi, x, chart):
    ch = manifold.chart(chart)
    d = float(ch.difference(x, xi)[0])

    def speed(s):
        return math.sqrt(float(manifold.metric(np.array([s]), chart)[0, 0]))

    length, _ = integrate.quad(speed, float(xi[0]), float(xi[0]) + d, epsabs=1e-14, epsrel=1e-13)
    return np.array([length / speed(float(xi[0]))])


def normal_frame(manifold, xi, chart=0):
    """E with E^T g(xi) E = I (symmetric inverse square root of g)."""
    w, q = np.linalg.eigh(manifold.metric(xi, chart))
    return (q / np.sqrt(w)) @ q.T


def normal_coordinates(manifold, xi, points, chart=0):
    """Normal coordinates y (orthonormal frame at xi) of a batch of points."""
    xi = np.asarray(xi, dtype=float)
    pts = np.asarray(points, dtype=float)
    ch = manifold.chart(chart)
    einv = np.linalg.inv(normal_frame(manifold, xi, chart))
    if manifold.flat:
        return ch.difference(pts, xi) @ einv.T
    if manifold.dim == 1:
        return _arclength_coordinates(manifold, xi, pts, chart)
    flat = pts.reshape(-1, manifold.dim)
    out = np.array([einv @ log_map(manifold, xi, q, chart) for q in flat])
    return out.reshape(pts.shape)


def _arclength_coordinates(manifold, xi, pts, chart, nodes=4097):
    """Signed arclength from xi on a one-dimensional (periodic) chart."""
    ch = manifold.chart(chart)
    d = ch.difference(pts, xi)[..., 0]
    period = ch.hi[0] - ch.lo[0] if 0 in ch.periodic else 2 * np.max(np.abs(d)) + 1.0
    s = np.linspace(-0.5 * period, 0.5 * period, nodes)
    speed = np.sqrt(manifold.metric((xi[0] + s)[:, None], chart)[:, 0, 0])
    cum = integrate.cumulative_simpson(speed, x=s, initial=0.0)
    cum -= np.interp(0.0, s, cum)
    spline = interpolate.CubicSpline(s, cum)
    return spline(d)[..., None]


def normal_chart_map(manifold, xi, chart=0):
    """y -> chart coordinates of exp_xi(E y)."""
    e = normal_frame(manifold, xi, chart)
    return lambda y: exp_map(manifold, xi, e @ np.asarray(y, dtype=float), chart)


def _jacobian(fn, y, h):
    cols = []
    for l in range(len(y)):
        cols.append(_fd4(lambda q: fn(q), y, h, l))
    return np.stack(cols, axis=-1)


def normal_metric(manifold, xi, y, chart=0, h=1e-3):
    """Metric components in normal coordinates at xi, evaluated at y."""
    phi = normal_chart_map(manifold, xi, chart)
    y = np.asarray(y, dtype=float)
    x = phi(y)
    jac = _jacobian(phi, y, h)
    return jac.T @ manifold.metric(x, chart) @ jac


# ---------------------------------------------------------------------------
# expansion checks


def _fit_powers(eps, values, degree=4):
    """Least-squares coefficients of eps^1..eps^degree (no constant term)."""
    eps = np.asarray(eps, dtype=float)
    basis = np.stack([eps ** d for d in range(1, degree + 1)], axis=1)
    vals = np.asarray(values, dtype=float).reshape(len(eps), -1)
    coef, *_ = np.linalg.lstsq(basis, vals, rcond=None)
    shape = np.asarray(values).shape[1:]
    return [c.reshape(shape) for c in coef]


def fitted_order(eps, errors, floor=1e-13):
    """Slope of log(error) against log(eps); +inf when every error is below floor."""
    errors = np.asarray(errors, dtype=float)
    if np.all(errors < floor):
        return math.inf
    return float(np.polyfit(np.log(eps), np.log(np.maximum(errors, floor)), 1)[0])


@dataclass
class ExpansionReport:
    direction: np.ndarray
    linear_inverse: np.ndarray
    quadratic_inverse: np.ndarray
    linear_volume: float
    quadratic_volume: float
    quadratic_metric: np.ndarray
    order_eps: tuple
    deviations: np.ndarray
    order: float

    @property
    def max_linear(self):
        return float(max(np.max(np.abs(self.linear_inverse)), abs(self.linear_volume)))

    def as_dict(self):
        return {
            "direction": self.direction.tolist(),
            "linear_inverse": self.linear_inverse.tolist(),
            "quadratic_inverse": self.quadratic_inverse.tolist(),
            "linear_volume": self.linear_volume,
            "quadratic_volume": self.quadratic_volume,
            "quadratic_metric": self.quadratic_metric.tolist(),
            "max_linear": self.max_linear,
            "order": self.order,
        }


def normal_expansion_check(manifold, xi, chart=0, direction=None,
                           fit_eps=None, order_eps=(0.2, 0.1, 0.05)):
    """Fit g^{ij}(eps z), |g(eps z)|^(1/2) and g_ij(eps z) in normal coordinates as polynomials in eps."""
    n = manifold.dim
    z = np.eye(n)[0] if direction is None else np.asarray(direction, dtype=float)
    fit_eps = np.geomspace(0.02, 0.3, 14) if fit_eps is None else np.asarray(fit_eps, float)
    eps_all = np.concatenate([fit_eps, order_eps])
    metrics = np.array([normal_metric(manifold, xi, e * z, chart) for e in eps_all])
    inv = np.linalg.inv(metrics) - np.eye(n)
    vol = np.sqrt(np.linalg.det(metrics)) - 1.0
    nf = len(fit_eps)
    c_inv = _fit_powers(fit_eps, inv[:nf], degree=6)
    c_vol = _fit_powers(fit_eps, vol[:nf], degree=6)
    c_met = _fit_powers(fit_eps, metrics[:nf] - np.eye(n), degree=6)
    dev = np.array([max(np.max(np.abs(inv[nf + i])), abs(vol[nf + i])) for i in range(len(order_eps))])
    return ExpansionReport(
        direction=z, linear_inverse=c_inv[0], quadratic_inverse=c_inv[1],
        linear_volume=float(c_vol[0]), quadratic_volume=float(c_vol[1]),
        quadratic_metric=c_met[1], order_eps=tuple(order_eps), deviations=dev,
        order=fitted_order(order_eps, dev, floor=1e-9),
    )


@dataclass
class ExpEReport:
    eps: tuple
    jacobians: list
    deviations: np.ndarray
    antisymmetric: np.ndarray
    order: float
    antisymmetric_order: float

    def as_dict(self):
        return {"eps": list(self.eps), "deviations": self.deviations.tolist(),
                "antisymmetric": self.antisymmetric.tolist(), "order": self.order,
                "antisymmetric_order": self.antisymmetric_order}


def expE_check(manifold, xi0, chart=0, direction=None, eps_list=(0.2, 0.1, 0.05), h=1e-3):
    """Jacobian in y of E(y, x) = log_{exp_xi0(y)}(x) at y = 0, for x = exp_xi0(eps z).

    Components of the log vector are expressed in the coordinate frame of the
    normal chart at xi0, so the flat answer is exactly -identity.
    """
    n = manifold.dim
    z = np.eye(n)[0] if direction is None else np.asarray(direction, dtype=float)
    phi = normal_chart_map(manifold, xi0, chart)

    def log_in_normal(y, x):
        base = phi(y)
        jac = _jacobian(phi, y, h)
        return np.linalg.solve(jac, log_map(manifold, base, x, chart))

    jacobians, dev, anti = [], [], []
    for eps in eps_list:
        x = phi(eps * z)
        jm = np.empty((n, n))
        for hh in range(n):
            jm[:, hh] = _fd4(lambda y: log_in_normal(y, x), np.zeros(n), h, hh)
        jacobians.append(jm)
        dev.append(np.max(np.abs(jm + np.eye(n))))
        anti.append(np.max(np.abs(0.5 * (jm - jm.T))))
    dev, anti = np.array(dev), np.array(anti)
    return ExpEReport(eps=tuple(eps_list), jacobians=jacobians, deviations=dev, antisymmetric=anti,
                      order=fitted_order(eps_list, dev, floor=1e-9),
                      antisymmetric_order=fitted_order(eps_list, anti, floor=1e-9))


def metric_compatibility_defect(manifold, x, chart=0):
    """max |d_k g_ij - g_lj Gamma^l_ik - g_il Gamma^l_jk|."""
    g = manifold.metric(x, chart)
    dg = manifold.metric_derivative(x, chart)
    gam = christoffels(manifold, x, chart)
    rhs = np.einsum("lj,lik->ijk", g, gam) + np.einsum("il,ljk->ijk", g, gam)
    return float(np.max(np.abs(dg - rhs)))


# ---------------------------------------------------------------------------
# discrete distance oracle


def dijkstra_distance(manifold, xi, x, chart=0, lo=None, hi=None, nodes=201, reach=5):
    """Graph distance on a chart grid with long-range stencil edges.

    Edge weights are midpoint-metric lengths; the target is reached through
    the surrounding grid nodes.  Intended only as an independent oracle.
    """
    ch = manifold.chart(chart)
    n = manifold.dim
    lo = ch.lo if lo is None else np.asarray(lo, float)
    hi = ch.hi if hi is None else np.asarray(hi, float)
    h = (hi - lo) / (nodes - 1)
    axes = [lo[i] + h[i] * np.arange(nodes) for i in range(n)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    idx = np.arange(nodes ** n).reshape((nodes,) * n)
    offsets = [o for o in itertools.product(range(-reach, reach + 1), repeat=n)
               if any(o) and math.gcd(*[abs(c) for c in o]) == 1]
    rows, cols, wts = [], [], []
    for off in offsets:
        src = tuple(slice(max(0, -o), nodes - max(0, o)) for o in off)
        dst = tuple(slice(max(0, o), nodes - max(0, -o)) for o in off)
        a, b = grid[src], grid[dst]
        d = b - a
        g = manifold.metric(0.5 * (a + b), chart)
        w = np.sqrt(np.einsum("...i,...ij,...j->...", d, g, d))
        rows.append(idx[src].ravel())
        cols.append(idx[dst].ravel())
        wts.append(w.ravel())
    mat = sparse.csr_matrix((np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(nodes ** n,) * 2)

    def nearest(pt):
        return tuple(int(np.clip(np.round((pt[i] - lo[i]) / h[i]), 0, nodes - 1)) for i in range(n))

    start = np.asarray(xi, float)
    dist = csgraph.dijkstra(mat, directed=True, indices=idx[nearest(start)])
    s0 = grid[nearest(start)]
    start_fix = math.sqrt(float((start - s0) @ manifold.metric(start, chart) @ (start - s0)))
    target = np.asarray(x, float)
    centre = nearest(target)
    best = np.inf
    for off in itertools.product(range(-reach, reach + 1), repeat=n):
        j = tuple(int(np.clip(c + o, 0, nodes - 1)) for c, o in zip(centre, off))
        d = target - grid[j]
        g = manifold.metric(0.5 * (target + grid[j]), chart)
        best = min(best, dist[idx[j]] + math.sqrt(float(d @ g @ d)))
    return float(best + start_fix)


# ---------------------------------------------------------------------------
# builders


def build_flat_torus(periods):
    periods = np.atleast_1d(np.asarray(periods, dtype=float))
    if np.any(~(periods > 0)):
        raise InvalidParameter("torus periods must be positive")
    n = len(periods)

    def metric(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()

    def dmetric(x):
        return np.zeros(np.asarray(x).shape[:-1] + (n, n, n))

    chart = Chart("torus", np.zeros(n), periods.copy(), metric, dmetric, periodic=tuple(range(n)),
                  scale=float(np.min(periods)) / (2 * np.pi))
    return ChartedManifold(
        dim=n, charts=(chart,), transitions={}, r_inj=0.5 * float(np.min(periods)), name="flat_torus",
        meta={"kind": "flat_torus", "periods": periods.tolist()}, flat=True,
        volume_fn=lambda: float(np.prod(periods)),
    )


def _stereo_metric(rho):
    def metric(x):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        phi = 4 * rho ** 4 / (rho ** 2 + np.sum(x * x, axis=-1)) ** 2
        return phi[..., None, None] * np.eye(n)

    def dmetric(x):
        x = np.asarray(x, dtype=float)
        n = x.shape[-1]
        dphi = -16 * rho ** 4 * x / ((rho ** 2 + np.sum(x * x, axis=-1)) ** 3)[..., None]
        return np.eye(n)[..., None] * dphi[..., None, None, :]

    return metric, dmetric


def build_round_sphere(n, radius=1.0):
    """Round n-sphere: stereographic charts from both poles (+ polar chart when n = 2)."""
    if int(n) != n or n < 2:
        raise InvalidParameter("sphere dimension must be an integer >= 2")
    if not radius > 0:
        raise InvalidParameter("sphere radius must be positive")
    n, rho = int(n), float(radius)
    metric, dmetric = _stereo_metric(rho)
    box = 2.0 * rho

    def embed_north(x):
        s = np.sum(x * x, axis=-1, keepdims=True) / rho ** 2
        return rho * np.concatenate([2 * x / rho, 1 - s], axis=-1) / (1 + s)

    def embed_south(x):
        s = np.sum(x * x, axis=-1, keepdims=True) / rho ** 2
        return rho * np.concatenate([2 * x / rho, s - 1], axis=-1) / (1 + s)

    def invert(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return rho ** 2 * x / np.sum(x * x, axis=-1, keepdims=True)

    charts = [
        Chart("stereo_north", -box * np.ones(n), box * np.ones(n), metric, dmetric, embed=embed_north, scale=rho),
        Chart("stereo_south", -box * np.ones(n), box * np.ones(n), metric, dmetric, embed=embed_south, scale=rho),
    ]
    transitions = {(0, 1): invert, (1, 0): invert}
    if n == 2:
        def pmetric(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros(x.shape[:-1] + (2, 2))
            out[..., 0, 0] = rho ** 2
            out[..., 1, 1] = (rho * np.sin(x[..., 0])) ** 2
            return out

        def pdmetric(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros(x.shape[:-1] + (2, 2, 2))
            out[..., 1, 1, 0] = 2 * rho ** 2 * np.sin(x[..., 0]) * np.cos(x[..., 0])
            return out

        def pembed(x):
            th, ph = x[..., 0], x[..., 1]
            return rho * np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)

        def polar_to_north(x):
            x = np.asarray(x, dtype=float)
            r = rho * np.tan(0.5 * x[..., 0])
            return np.stack([r * np.cos(x[..., 1]), r * np.sin(x[..., 1])], axis=-1)

        def north_to_polar(x):
            x = np.asarray(x, dtype=float)
            th = 2 * np.arctan(np.hypot(x[..., 0], x[..., 1]) / rho)
            return np.stack([th, np.arctan2(x[..., 1], x[..., 0])], axis=-1)

        charts.append(Chart("polar", np.array([0.02, -np.pi]), np.array([np.pi - 0.02, np.pi]),
                            pmetric, pdmetric, periodic=(1,), embed=pembed, scale=rho))
        transitions[(2, 0)] = polar_to_north
        transitions[(0, 2)] = north_to_polar

    def volume():
        # radial quadrature of the conformal factor over the northern chart
        area = 2 * np.pi ** (n / 2) / gamma_fn(n / 2)
        val, _ = integrate.quad(lambda r: (4 * rho ** 4 / (rho ** 2 + r * r) ** 2) ** (n / 2) * r ** (n - 1),
                                0, np.inf, epsabs=0, epsrel=1e-12, limit=200)
        return area * val

    return ChartedManifold(dim=n, charts=tuple(charts), transitions=transitions, r_inj=np.pi * rho,
                           name="round_sphere", meta={"kind": "round_sphere", "radius": rho},
                           volume_fn=volume)


def build_circle(radius=1.0):
    """Round circle S^1 of the given radius in the angle chart."""
    if not radius > 0:
        raise InvalidParameter("radius must be positive")
    rho = float(radius)

    def metric(x):
        return np.full(np.asarray(x).shape[:-1] + (1, 1), rho ** 2)

    def dmetric(x):
        return np.zeros(np.asarray(x).shape[:-1] + (1, 1, 1))

    chart = Chart("angle", np.array([0.0]), np.array([2 * np.pi]), metric, dmetric, periodic=(0,), scale=1.0)
    return ChartedManifold(dim=1, charts=(chart,), transitions={}, r_inj=np.pi * rho, name="circle",
                           meta={"kind": "circle", "radius": rho}, volume_fn=lambda: 2 * np.pi * rho)


def build_fiber_sphere(k):
    """Unit round S^k used as a warped-product fiber."""
    return build_circle(1.0) if k == 1 else build_round_sphere(k, 1.0)


@dataclass(frozen=True)
class WarpedProduct:
    """M x_{f^2} N with metric g + f^2 h, in product charts (base chart 0) x (fiber chart j)."""
    base: ChartedManifold
    fiber: ChartedManifold
    f: Callable
    grad_f: Callable
    meta: dict = field(default_factory=dict)

    @property
    def k(self):
        return self.fiber.dim

    @property
    def n(self):
        return self.base.dim

    @property
    def dim(self):
        return self.base.dim + self.fiber.dim

    def split(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., : self.n], x[..., self.n:]

    def metric(self, x, fiber_chart=0):
        xb, xf = self.split(x)
        g = self.base.metric(xb)
        hmat = self.fiber.metric(xf, fiber_chart)
        fval = self.f(xb)
        out = np.zeros(np.shape(x)[:-1] + (self.dim, self.dim))
        out[..., : self.n, : self.n] = g
        out[..., self.n:, self.n:] = (fval ** 2)[..., None, None] * hmat
        return out

    def total_manifold(self, fiber_chart=0):
        """The product chart as a ChartedManifold (no transitions; local computations only)."""
        bc, fc = self.base.chart(0), self.fiber.chart(fiber_chart)
        periodic = tuple(bc.periodic) + tuple(self.n + i for i in fc.periodic)
        chart = Chart("product", np.concatenate([bc.lo, fc.lo]), np.concatenate([bc.hi, fc.hi]),
                      lambda x: self.metric(x, fiber_chart), periodic=periodic,
                      scale=min(bc.scale, fc.scale))
        return ChartedManifold(dim=self.dim, charts=(chart,), transitions={},
                               r_inj=min(self.base.r_inj, self.fiber.r_inj), name="warped_product",
                               meta={"kind": "warped_product", **self.meta})

    def volume(self):
        """Fubini: Vol(S^k) times the integral of f^k over the base."""
        return self.fiber.volume() * self.meta["base_weighted_volume"](self.k)

    def descriptor(self):
        return {"base": self.base.descriptor(), "fiber": self.fiber.descriptor(), **{
            k: v for k, v in self.meta.items() if not callable(v)}}


def build_surface_of_revolution(t, curve, k=1):
    """Warped product over a closed generating curve t -> (y(t), rho(t)).

    ``curve`` has shape (m, l + 1) with the last column rho > 0.  If the
    final sample does not repeat the first, the curve is closed by appending
    the first sample one spacing after the last.
    """
    t = np.asarray(t, dtype=float)
    curve = np.asarray(curve, dtype=float)
    if curve.ndim != 2 or curve.shape[0] != t.size or curve.shape[1] < 2:
        raise InvalidParameter("curve must have shape (len(t), l + 1) with l >= 1")
    if np.any(curve[:, -1] <= 0):
        raise InvalidParameter("generating curve touches or crosses the axis (rho <= 0)")
    if int(k) != k or k < 1:
        raise InvalidParameter("fiber dimension k must be a positive integer")
    if not np.allclose(curve[0], curve[-1], atol=1e-12):
        t = np.append(t, t[-1] + (t[1] - t[0]))
        curve = np.vstack([curve, curve[:1]])
    spline = interpolate.CubicSpline(t, curve, bc_type="periodic")
    d1, d2 = spline.derivative(1), spline.derivative(2)
    t0, period = float(t[0]), float(t[-1] - t[0])

    def metric(x):
        s = np.asarray(x, dtype=float)[..., 0]
        return np.sum(d1(s) ** 2, axis=-1)[..., None, None]

    def dmetric(x):
        s = np.asarray(x, dtype=float)[..., 0]
        return (2 * np.sum(d1(s) * d2(s), axis=-1))[..., None, None, None]

    def f(x):
        return spline(np.asarray(x, dtype=float)[..., 0])[..., -1]

    def grad_f(x):
        return d1(np.asarray(x, dtype=float)[..., 0])[..., -1:]

    chart = Chart("curve", np.array([t0]), np.array([t0 + period]), metric, dmetric, periodic=(0,),
                  embed=lambda x: spline(np.asarray(x, float)[..., 0]), scale=period / (2 * np.pi))
    ss = np.linspace(t0, t0 + period, 4097)
    speed = np.sqrt(metric(ss[:, None])[:, 0, 0])
    length = float(integrate.simpson(speed, x=ss))
    base = ChartedManifold(dim=1, charts=(chart,), transitions={}, r_inj=0.5 * length, name="generating_curve",
                           meta={"kind": "generating_curve", "length": length},
                           volume_fn=lambda: length)

    def weighted(kk):
        return float(integrate.simpson(f(ss[:, None]) ** kk * speed, x=ss))

    return WarpedProduct(base=base, fiber=build_fiber_sphere(int(k)), f=f, grad_f=grad_f,
                         meta={"kind": "surface_of_revolution", "k": int(k),
                               "rho_range": [float(curve[:, -1].min()), float(curve[:, -1].max())],
                               "base_weighted_volume": weighted})


def load_generating_curve(path):
    """Read a generating curve CSV with columns t, y1..yl, rho (header row required)."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    if len(header) < 3 or header[0].strip() != "t" or header[-1].strip() != "rho":
        raise InvalidParameter("generating curve CSV needs columns t, y1..yl, rho")
    return data[:, 0], data[:, 1:]


def circle_curve(center=2.0, radius=1.0, samples=256):
    """Samples of t -> (radius sin t, center + radius cos t), a torus of revolution profile."""
    t = np.linspace(0.0, 2 * np.pi, samples + 1)
    return t, np.stack([radius * np.sin(t), center + radius * np.cos(t)], axis=1)
