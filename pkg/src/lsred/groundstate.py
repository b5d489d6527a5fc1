"""Radial ground state of -Delta U + U = U^(p-1) on R^n and its rescalings.

The profile is computed by shooting from the origin.  A bisection on the
central value U(0) first isolates the positive decaying solution (shots that
cross zero overshoot, shots whose slope turns positive undershoot).  The
central value is then polished together with the far-field amplitude by
matching a forward shot and a backward integration from the linear Bessel
tail at an intermediate radius, which avoids the exponential instability of
plain forward shooting.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, interpolate, optimize, special

from .errors import BracketNotFound, InvalidParameter, NonConvergence, NonpositiveCoefficient

DELTA0 = 1e-6
R_MAX = 30.0
MATCH_RADIUS = 6.0
_RTOL = 1e-13
_ATOL = 1e-22


def critical_exponent(n):
    """Critical Sobolev exponent 2n/(n-2); infinite for n <= 2."""
    if n <= 2:
        return math.inf
    return 2.0 * n / (n - 2.0)


def check_exponent(n, p):
    if int(n) != n or n < 1:
        raise InvalidParameter(f"dimension must be a positive integer, got {n}")
    crit = critical_exponent(n)
    if not (2.0 < p < crit):
        bound = "inf" if math.isinf(crit) else f"{crit:g}"
        raise InvalidParameter(
            f"exponent p={p:g} must lie in (2, 2*_n) = (2, {bound}) for n={int(n)}"
        )


def sphere_area(n):
    """Surface area of the unit sphere S^(n-1) in R^n (2 for n = 1)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


def _rhs(n, p):
    def f(r, y):
        u, du = y
        return [du, -(n - 1) / r * du + u - np.sign(u) * np.abs(u) ** (p - 1)]

    return f


def _tail(n, r):
    """Decaying solution r^(1-n/2) K_(n/2-1)(r) of the linearised far-field ODE."""
    nu = n / 2.0 - 1.0
    r = np.asarray(r, dtype=float)
    return r ** (-nu) * special.kve(nu, r) * np.exp(-r)


def _tail_log_derivative(n, r):
    # d/dr [r^-nu K_nu(r)] = -r^-nu K_(nu+1)(r)
    nu = n / 2.0 - 1.0
    return -special.kve(nu + 1.0, r) / special.kve(nu, r)


def _second_derivative_origin(s, p, n):
    return (s - s ** (p - 1)) / n


SERIES_RADIUS = 1e-2


def _series_coefficients(s, p, n):
    F0 = s - s ** (p - 1)
    F1 = 1.0 - (p - 1) * s ** (p - 2)
    F2 = -(p - 1) * (p - 2) * s ** (p - 3)
    c2 = F0 / (2 * n)
    c4 = F1 * c2 / (4 * (n + 2))
    c6 = (F1 * c4 + 0.5 * F2 * c2**2) / (6 * (n + 4))
    return c2, c4, c6


def series_radius(s, p, n):
    """Radius below which the r^6 Taylor polynomial is used instead of samples."""
    c2, c4, c6 = _series_coefficients(s, p, n)
    c8 = abs(c6) * abs(c6 / c4) if c4 else abs(c6)
    if c8 == 0:
        return SERIES_RADIUS
    return min(SERIES_RADIUS, (1e-13 / (56.0 * c8)) ** (1.0 / 6.0))


def _series(s, p, n, r):
    """Even Taylor expansion of U about r = 0 through r^6, with its r-derivative."""
    c2, c4, c6 = _series_coefficients(s, p, n)
    u = s + c2 * r**2 + c4 * r**4 + c6 * r**6
    du = 2 * c2 * r + 4 * c4 * r**3 + 6 * c6 * r**5
    return u, du


def _series_second(s, p, n, r):
    eps = 1e-4
    return (_series(s, p, n, r + eps)[1] - _series(s, p, n, r - eps)[1]) / (2 * eps)


def _shoot(n, p, s, r_end, rtol=1e-10, atol=1e-14, events=True, max_step=np.inf):
    u2 = _second_derivative_origin(s, p, n)
    y0 = [s + 0.5 * u2 * DELTA0**2, u2 * DELTA0]

    def crosses_zero(r, y):
        return y[0]

    crosses_zero.terminal = True
    crosses_zero.direction = -1

    def turns_up(r, y):
        return y[1]

    turns_up.terminal = True
    turns_up.direction = 1

    return integrate.solve_ivp(
        _rhs(n, p), (DELTA0, r_end), y0, method="DOP853", rtol=rtol, atol=atol,
        events=[crosses_zero, turns_up] if events else None, dense_output=True,
        max_step=max_step,
    )


def _classify(n, p, s, r_end=60.0):
    """+1 for an overshoot (crosses zero), -1 for an undershoot, 0 if undecided."""
    sol = _shoot(n, p, s, r_end)
    if sol.t_events[0].size:
        return 1
    if sol.t_events[1].size:
        return -1
    return 0


def _bracket(n, p, max_iter):
    lo = 1.0 + 1e-3
    if _classify(n, p, lo) != -1:
        raise BracketNotFound(f"s={lo} does not undershoot for n={n}, p={p}")
    hi = 2.0
    while _classify(n, p, hi) != 1:
        lo = hi
        hi *= 2.0
        if hi > 1e6:
            raise BracketNotFound(f"no overshooting central value below 1e6 for n={n}, p={p}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 1e-12 * hi:
            return lo, hi
        side = _classify(n, p, mid)
        if side == 1:
            hi = mid
        elif side == -1:
            lo = mid
        else:
            return mid, mid
    raise NonConvergence(f"bisection did not converge in {max_iter} iterations")


_MAX_STEP = 0.02


def _forward(n, p, s, r_m, max_step=_MAX_STEP):
    return _shoot(n, p, s, r_m, rtol=_RTOL, atol=_ATOL, events=False, max_step=max_step)


def _backward(n, p, amp, r_m, r_max, max_step=_MAX_STEP):
    y0 = [amp * _tail(n, r_max), amp * _tail(n, r_max) * _tail_log_derivative(n, r_max)]
    return integrate.solve_ivp(
        _rhs(n, p), (r_max, r_m), y0, method="DOP853", rtol=_RTOL, atol=_ATOL, dense_output=True,
        max_step=max_step,
    )


def _match(n, p, s0, r_m, r_max):
    """Polish (s, log amplitude) so that both integrations agree in value and slope."""
    fwd0 = _forward(n, p, s0, r_m)
    amp0 = fwd0.y[0, -1] / float(_tail(n, r_m))

    def mismatch(x):
        s, log_amp = x
        fw = _forward(n, p, s, r_m, max_step=np.inf)
        bw = _backward(n, p, math.exp(log_amp), r_m, r_max, max_step=np.inf)
        uf, duf = fw.y[:, -1]
        ub, dub = bw.y[:, -1]
        return [(uf - ub) / ub, (duf - dub) / ub]

    x, info, ier, msg = optimize.fsolve(
        mismatch, [s0, math.log(amp0)], full_output=True, xtol=1e-15
    )
    res = np.max(np.abs(mismatch(x)))
    if res > 1e-8:
        raise NonConvergence(f"shooting match failed at r={r_m}: {msg} (mismatch {res:.2e})")
    return float(x[0]), float(math.exp(x[1]))


def _radial_grid(r_max, s, p):
    """Geometric nodes near 0, a core spacing scaled to the peak width, then 0.01."""
    h_core = 0.01 * min(1.0, 2.0 / s ** ((p - 2.0) / 2.0))
    near = np.geomspace(1e-4, h_core, 16)[:-1]
    core = np.arange(h_core, 5.0, h_core)
    outer = np.arange(5.0, r_max + 5e-3, 1e-2)
    outer[-1] = r_max
    return np.concatenate([[0.0], near, core, outer])


def _fd_derivative(fn, r, h=1e-2):
    """Sixth-order central difference of a vectorised callable."""
    c = (-1.0 / 60, 3.0 / 20, -3.0 / 4, 0.0, 3.0 / 4, -3.0 / 20, 1.0 / 60)
    return sum(ck * fn(r + (k - 3) * h) for k, ck in enumerate(c) if ck) / h


@dataclass(frozen=True)
class GroundStateProfile:
    n: int
    p: float
    r: np.ndarray
    u: np.ndarray
    du: np.ndarray
    r_max: float
    tail_amplitude: float
    decay_fit: tuple
    residual_bound: float
    _spline: object = field(repr=False, compare=False, default=None)

    @property
    def center_value(self):
        return float(self.u[0])

    @property
    def series_radius(self):
        return series_radius(self.u[0], self.p, self.n)

    def _interp(self):
        if self._spline is None:
            d2 = self.second_derivative_nodes()
            spline = interpolate.BPoly.from_derivatives(
                self.r, np.column_stack([self.u, self.du, d2])
            )
            object.__setattr__(self, "_spline", spline)
        return self._spline

    def second_derivative_nodes(self):
        n, p = self.n, self.p
        d2 = np.empty_like(self.u)
        d2[0] = _second_derivative_origin(self.u[0], p, n)
        rr = self.r[1:]
        d2[1:] = -(n - 1) / rr * self.du[1:] + self.u[1:] - self.u[1:] ** (p - 1)
        return d2

    def __call__(self, r):
        """U(r) for r >= 0; the Bessel tail is used beyond r_max."""
        r = np.abs(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        near = r <= self.series_radius
        inside = (r <= self.r_max) & ~near
        out[near] = _series(self.u[0], self.p, self.n, r[near])[0]
        out[inside] = self._interp()(r[inside])
        far = r > self.r_max
        if np.any(far):
            out[far] = self.tail_amplitude * _tail(self.n, r[far])
        return out

    def derivative(self, r, order=1):
        r = np.abs(np.asarray(r, dtype=float))
        out = np.empty_like(r)
        near = r <= self.series_radius
        inside = (r <= self.r_max) & ~near
        if order == 1:
            out[near] = _series(self.u[0], self.p, self.n, r[near])[1]
        else:
            out[near] = _series_second(self.u[0], self.p, self.n, r[near])
        out[inside] = self._interp().derivative(order)(r[inside])
        far = r > self.r_max
        if np.any(far):
            step = 1e-3
            tail = lambda x: self.tail_amplitude * _tail(self.n, x)
            if order == 1:
                out[far] = _fd_derivative(tail, r[far], step)
            else:
                out[far] = _fd_derivative(lambda x: _fd_derivative(tail, x, step), r[far], step)
        return out

    def ode_residual(self, r, h=1e-2):
        """Cell-averaged residual of U'' + (n-1)/r U' - U + U^(p-1).

        On [r - h/2, r + h/2] the divergence form (rho^(n-1) U')' is integrated
        exactly, so the value equals the residual averaged against rho^(n-1)
        without differentiating the samples twice.
        """
        n, p = self.n, self.p
        r = np.asarray(r, dtype=float)
        lo = np.maximum(r - 0.5 * h, 0.0)
        hi = r + 0.5 * h
        nodes, weights = np.polynomial.legendre.leggauss(10)
        rr = 0.5 * (hi - lo)[..., None] * nodes + 0.5 * (hi + lo)[..., None]
        ww = 0.5 * (hi - lo)[..., None] * weights
        u = self(rr)
        source = np.sum(ww * (u ** (p - 1) - u) * rr ** (n - 1), axis=-1)
        flux = hi ** (n - 1) * self.derivative(hi) - np.where(lo > 0, lo ** (n - 1), 0.0) * self.derivative(lo)
        mass = np.sum(ww * rr ** (n - 1), axis=-1)
        return (flux + source) / mass

    def node_residuals(self, window=0.05):
        """Residual at each node, averaged over a window of about ``window`` width.

        The divergence form (r^(n-1) U')' is integrated exactly between nodes
        using the sampled slopes, and the source term by Gauss quadrature of U,
        so U is never differentiated twice.
        """
        n, p = self.n, self.p
        lo, hi = self.r[:-1], self.r[1:]
        nodes, weights = np.polynomial.legendre.leggauss(10)
        rr = 0.5 * (hi - lo)[:, None] * nodes + 0.5 * (hi + lo)[:, None]
        ww = 0.5 * (hi - lo)[:, None] * weights
        u = self(rr)
        src_cum = np.concatenate([[0.0], np.cumsum(np.sum(ww * (u ** (p - 1) - u) * rr ** (n - 1), axis=-1))])
        mass_cum = np.concatenate([[0.0], np.cumsum(np.sum(ww * rr ** (n - 1), axis=-1))])
        flux = self.r ** (n - 1) * self.du
        if n > 1:
            flux[0] = 0.0
        left = np.searchsorted(self.r, self.r - 0.5 * window, side="left")
        right = np.searchsorted(self.r, self.r + 0.5 * window, side="right") - 1
        right = np.maximum(right, np.minimum(left + 1, self.r.size - 1))
        left = np.minimum(left, right - 1)
        num = flux[right] - flux[left] + src_cum[right] - src_cum[left]
        return num / (mass_cum[right] - mass_cum[left])

    # -- serialisation -------------------------------------------------
    def header(self):
        return {
            "n": self.n,
            "p": self.p,
            "r_max": self.r_max,
            "residual_bound": self.residual_bound,
            "tail_amplitude": self.tail_amplitude,
            "decay_fit": {"amplitude": self.decay_fit[0], "rate": self.decay_fit[1]},
        }

    def to_files(self, csv_path, json_path):
        csv_path, json_path = Path(csv_path), Path(json_path)
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "U", "U'"])
            for row in zip(self.r, self.u, self.du):
                w.writerow([repr(float(x)) for x in row])
        json_path.write_text(json.dumps(self.header(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_files(cls, csv_path, json_path):
        head = json.loads(Path(json_path).read_text(encoding="utf-8"))
        data = np.loadtxt(csv_path, delimiter=",", skiprows=1)
        fit = head["decay_fit"]
        return cls(
            n=int(head["n"]), p=float(head["p"]), r=data[:, 0], u=data[:, 1], du=data[:, 2],
            r_max=float(head["r_max"]), tail_amplitude=float(head["tail_amplitude"]),
            decay_fit=(fit["amplitude"], fit["rate"]), residual_bound=float(head["residual_bound"]),
        )


def _fit_decay(n, r, u):
    """Least-squares fit of log U + (n-1)/2 log r = log(amp) - rate * r."""
    y = np.log(u) + 0.5 * (n - 1) * np.log(r)
    slope, intercept = np.polyfit(r, y, 1)
    return float(math.exp(intercept)), float(-slope)


def solve_ground_state(n, p, tol=1e-10, max_iter=200, r_max=R_MAX):
    """Positive radial solution of -U'' - (n-1)/r U' + U = U^(p-1).

    Raises ``InvalidParameter`` for p outside (2, 2*_n), ``BracketNotFound`` if
    no overshooting central value is found and ``NonConvergence`` when the
    bisection or the final residual check fails.
    """
    check_exponent(n, p)
    if not tol > 0:
        raise InvalidParameter("tol must be positive")
    n = int(n)
    lo, hi = _bracket(n, p, max_iter)
    r_m = min(MATCH_RADIUS, 0.5 * r_max)
    s, amp = _match(n, p, 0.5 * (lo + hi), r_m, r_max)
    fwd = _forward(n, p, s, r_m)
    bwd = _backward(n, p, amp, r_m, r_max)

    r = _radial_grid(r_max, s, p)
    u = np.empty_like(r)
    du = np.empty_like(r)
    u[0], du[0] = s, 0.0
    r_s = series_radius(s, p, n)
    small = (r > 0) & (r <= r_s)
    u[small], du[small] = _series(s, p, n, r[small])
    mid = (r > r_s) & (r <= r_m)
    u[mid], du[mid] = fwd.sol(r[mid])
    far = r > r_m
    u[far], du[far] = bwd.sol(r[far])

    if np.any(u <= 0) or np.any(np.diff(u) >= 0):
        raise NonConvergence("computed profile is not positive and strictly decreasing")
    band = r >= 0.5 * r_max
    decay = _fit_decay(n, r[band], u[band])
    prof = GroundStateProfile(
        n=n, p=float(p), r=r, u=u, du=du, r_max=float(r_max), tail_amplitude=amp,
        decay_fit=decay, residual_bound=0.0,
    )
    res = float(np.max(np.abs(prof.node_residuals())))
    # the ODE terms grow like s^(p-1) at the peak; roundoff in the residual scales with them
    scale = max(1.0, s ** (p - 2.0))
    if res > tol * scale:
        raise NonConvergence(f"ODE residual {res:.2e} exceeds tol {tol:.2e} (scale {scale:.3g})")
    object.__setattr__(prof, "residual_bound", max(res, np.finfo(float).eps))
    return prof


_COLLOCATION_STRETCH = 3.0


def collocation_ground_state(n, p, half_width=30.0, npts=400, guess_center=None):
    """Independent Chebyshev collocation solve used as a cross-check.

    U is represented as an even function on [-L, L] sampled at Chebyshev
    points of the first kind (none at r = 0); the even symmetry is imposed by
    folding the differentiation matrices onto the positive nodes, which also
    removes the translation mode.  The outermost node carries the decay
    condition U' + (1 + (n-1)/(2r)) U = 0.  Returns ``(center_value, evaluator)``.
    """
    check_exponent(n, p)
    if npts % 2:
        npts += 1
    L = half_width
    k = np.arange(npts)
    x = np.cos(np.pi * (2 * k + 1) / (2 * npts))
    # sinh map clusters nodes near the peak where the profile is sharpest
    beta = _COLLOCATION_STRETCH
    dr = L * beta * np.cosh(beta * x) / np.sinh(beta)
    D = _cheb_gauss_diff(x) / dr[:, None]
    D2 = D @ D
    half = npts // 2
    pos = np.arange(half)
    mirror = npts - 1 - pos

    def fold(mat):
        return mat[np.ix_(pos, pos)] + mat[np.ix_(pos, mirror)]

    r = L * np.sinh(beta * x[pos]) / np.sinh(beta)
    Df, D2f = fold(D), fold(D2)
    s_guess = (p / 2.0) ** (1.0 / (p - 2.0)) if guess_center is None else guess_center
    u = s_guess / np.cosh(0.5 * (p - 2.0) * r) ** (2.0 / (p - 2.0))
    # continuation in the (real) dimension parameter starting from the 1D soliton
    dims = [float(n)] if guess_center is not None else list(np.linspace(1.0, n, 4 * (n - 1) + 1))
    for dim in dims:
        op = D2f + (dim - 1) * Df / r[:, None] - np.eye(half)
        bc = Df[0] + (1.0 + (dim - 1) / (2.0 * r[0])) * np.eye(half)[0]
        u = _collocation_newton(op, bc, u, p)
    nodes = np.concatenate([x[pos], -x[pos][::-1]])
    vals = np.concatenate([u, u[::-1]])
    order = np.arange(npts)
    wts = (-1.0) ** order * np.sin((2 * order + 1) * np.pi / (2 * npts))
    bary = interpolate.BarycentricInterpolator(nodes, vals, wi=wts)
    center = float(bary(0.0))

    def evaluate(q):
        q = np.minimum(np.abs(np.asarray(q, dtype=float)), L)
        return bary(np.arcsinh(q * np.sinh(beta) / L) / beta)

    return center, evaluate


def _collocation_newton(op, bc, u, p, max_iter=100):
    def residual(v):
        res = op @ v + np.abs(v) ** (p - 2) * v
        res[0] = bc @ v
        return res

    res = residual(u)
    for _ in range(max_iter):
        jac = op + np.diag((p - 1) * np.abs(u) ** (p - 2))
        jac[0] = bc
        step = np.linalg.solve(jac, -res)
        t = 1.0
        while True:
            trial = u + t * step
            new = residual(trial)
            if np.linalg.norm(new) < (1 - 0.25 * t) * np.linalg.norm(res) or t < 1e-3:
                break
            t *= 0.5
        u, res = trial, new
        if np.max(np.abs(t * step)) < 1e-12 * np.max(np.abs(u)):
            return u
    raise NonConvergence("collocation Newton did not converge")


def _cheb_gauss_diff(x):
    """Differentiation matrix on Chebyshev points of the first kind."""
    n = x.size
    j = np.arange(n)
    w = (-1.0) ** j * np.sin((2 * j + 1) * np.pi / (2 * n))
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


# -- moments ---------------------------------------------------------------

def _radial_integral(profile, fn, panel):
    nodes, weights = np.polynomial.legendre.leggauss(16)
    edges = np.arange(0.0, profile.r_max + 0.5 * panel, panel)
    edges[-1] = profile.r_max
    a, b = edges[:-1, None], edges[1:, None]
    rr = 0.5 * (b - a) * nodes[None, :] + 0.5 * (a + b)
    ww = 0.5 * (b - a) * weights[None, :]
    return float(np.sum(ww * fn(rr)))


def profile_moment(profile, q, return_error=False):
    """Integral of U^q over R^n, radial quadrature plus the Bessel tail."""
    if not q > 0:
        raise InvalidParameter(f"moment order must be positive, got {q}")
    n = profile.n

    def integrand(rr):
        return profile(rr) ** q * rr ** (n - 1)

    fine = _radial_integral(profile, integrand, 0.25)
    coarse = _radial_integral(profile, integrand, 0.5)
    tail, _ = integrate.quad(
        lambda t: (profile.tail_amplitude * _tail(n, t)) ** q * t ** (n - 1),
        profile.r_max, np.inf, epsabs=0.0, epsrel=1e-12,
    )
    total = sphere_area(n) * (fine + tail)
    err = abs(fine - coarse) / max(abs(fine), 1e-300)
    if return_error:
        return total, err
    return total


def energy_constant(profile):
    """C_p = (p-2)/(2p) * integral of U^p."""
    p = profile.p
    return (p - 2.0) / (2.0 * p) * profile_moment(profile, p)


def gradient_moment(profile):
    """Integral of |grad U|^2 over R^n."""
    n = profile.n
    val = _radial_integral(profile, lambda rr: profile.derivative(rr) ** 2 * rr ** (n - 1), 0.25)
    return sphere_area(n) * val


# -- rescaled profile and kernel ------------------------------------------

@dataclass(frozen=True)
class RescaledProfile:
    """V(z) = gamma U(sqrt(A) z), the limit profile frozen at a point xi."""

    profile: GroundStateProfile
    xi: np.ndarray
    a: float
    b: float
    c: float

    @property
    def A(self):
        return self.a / self.c

    @property
    def B(self):
        return self.b / self.c

    @property
    def gamma(self):
        return (self.a / self.b) ** (1.0 / (self.profile.p - 2.0))

    @property
    def center_value(self):
        return self.gamma * self.profile.center_value

    def radial(self, rho):
        return self.gamma * self.profile(math.sqrt(self.A) * np.asarray(rho))

    def radial_derivative(self, rho):
        sA = math.sqrt(self.A)
        return self.gamma * sA * self.profile.derivative(sA * np.asarray(rho))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return self.radial(np.linalg.norm(z, axis=-1))

    def gradient(self, z):
        z = np.asarray(z, dtype=float)
        rho = np.linalg.norm(z, axis=-1)
        dv = self.radial_derivative(rho)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(rho[..., None] > 0, z / np.where(rho > 0, rho, 1.0)[..., None], 0.0)
        return dv[..., None] * unit


def rescale_profile(profile, coeffs, xi):
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    a, b, c = (float(fn(xi)) for fn in (coeffs.a, coeffs.b, coeffs.c))
    if min(a, b, c) <= 0:
        raise NonpositiveCoefficient(f"coefficients must be positive at xi, got a={a}, b={b}, c={c}")
    return RescaledProfile(profile=profile, xi=xi, a=a, b=b, c=c)


def linearized_kernel(rescaled, axis):
    """psi(eta) = d V / d eta_axis (axis is 0-based)."""
    n = rescaled.profile.n
    if not 0 <= axis < n:
        raise InvalidParameter(f"axis {axis} out of range for dimension {n}")

    def psi(eta):
        return rescaled.gradient(eta)[..., axis]

    return psi
