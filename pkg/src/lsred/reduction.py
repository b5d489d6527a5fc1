"""Lyapunov-Schmidt reduction on a periodic grid.

For a peak centre xi the correction phi orthogonal to span{Z^i} solves

    Pi_perp { W + phi - i*[b f(W + phi)] } = 0,     f(u) = (u+)^(p-1),

by the fixed point phi <- L^-1 (N(phi) + R).  Each L-solve is the saddle
system

    (K - diag(w b f'(W))) phi - sum_l alpha_l K Z^l = rhs,   Z^h . K phi = 0,

solved by MINRES with a block preconditioner, so no inner i* solve is needed.
"""
import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh, minres

from .coefficients import concentration_function, concentration_gradient
from .errors import InvalidParameter, NoContraction, NonConvergence
from .grid import DiscreteField
from .groundstate import energy_constant

CONTRACTION_GUARD = 0.95
EPS0 = 0.25


def f_plus(u, p):
    return np.maximum(u, 0.0) ** (p - 1)


def f_plus_prime(u, p):
    """(p-1) (u+)^(p-2), with the convention f'(0) = 0."""
    out = np.zeros_like(u)
    pos = u > 0
    out[pos] = (p - 1) * u[pos] ** (p - 2)
    return out


def adjoint_istar(w, op):
    """i*(w): solves -eps^2 div(c grad u) + a u = w, i.e. <u, v>_eps = eps^-n int w v."""
    vals = w.values if isinstance(w, DiscreteField) else np.asarray(w, dtype=float)
    return DiscreteField(op.grid, op.solve(op.grid.weights * vals))


def energy(op, u, p):
    """J_eps(u) = 1/2 ||u||_eps^2 - (1/p) eps^-n int b (u+)^p."""
    return 0.5 * op.inner(u, u) - op.scale * float(np.sum(op.wb * np.maximum(u, 0.0) ** p)) / p


def gamma(coeffs, n, p, xi):
    """Concentration function c^(n/2) a^(p/(p-2) - n/2) / b^(2/(p-2)) at xi."""
    return float(concentration_function(coeffs, n, p, np.atleast_1d(np.asarray(xi, dtype=float))))


@dataclass
class ReductionState:
    eps: float
    xi: np.ndarray
    phi: DiscreteField
    phi_norm: float
    steps: list
    contraction: list
    residual: float
    gram_condition: float
    orthogonality: float
    iterations: int
    sigma_min: float | None = None
    history: list = field(default_factory=list)

    @property
    def max_contraction(self):
        return max(self.contraction) if self.contraction else 0.0

    def summary(self):
        return {
            "eps": self.eps, "xi": self.xi.tolist(), "phi_norm": self.phi_norm, "iterations": self.iterations,
            "steps": self.steps, "contraction": self.contraction, "residual": self.residual,
            "gram_condition": self.gram_condition, "orthogonality": self.orthogonality,
            "sigma_min": self.sigma_min,
        }


class Reduction:
    """Reduction operators at a fixed (eps, xi)."""

    def __init__(self, setup, xi):
        self.setup = setup
        self.ans = setup.ansatz(xi)
        self.xi = self.ans.xi
        self.op = setup.op
        self.p = setup.p
        W = self.ans.W
        self.fW = f_plus(W, self.p)
        self.fpW = f_plus_prime(W, self.p)
        self.mass = self.op.wb * self.fpW  # diag of the linearised source
        self._schur = None

    # elementary operators ------------------------------------------------
    def istar(self, w_values):
        return self.op.solve(self.op.grid.weights * w_values)

    def remainder(self):
        """R = Pi_perp{ i*[b f(W)] - W } and its eps norm."""
        r = self.ans.project_orthogonal(self.op.solve(self.op.wb * self.fW) - self.ans.W)
        return DiscreteField(self.op.grid, r), self.op.norm(r)

    def apply_L(self, phi):
        """L(phi) = Pi_perp{ phi - i*[b f'(W) phi] }."""
        vals = phi.values if isinstance(phi, DiscreteField) else phi
        return DiscreteField(self.op.grid, self.ans.project_orthogonal(vals - self.op.solve(self.mass * vals)))

    def nonlinear_N(self, phi):
        """N(phi) = Pi_perp i*[ b (f(W+phi) - f(W) - f'(W) phi) ]."""
        vals = phi.values if isinstance(phi, DiscreteField) else phi
        src = self.op.wb * (f_plus(self.ans.W + vals, self.p) - self.fW - self.fpW * vals)
        return DiscreteField(self.op.grid, self.ans.project_orthogonal(self.op.solve(src)))

    def red1_residual(self, phi):
        """eps norm of Pi_perp{ W + phi - i*[b f(W + phi)] }."""
        u = self.ans.W + phi
        return self.op.norm(self.ans.project_orthogonal(u - self.op.solve(self.op.wb * f_plus(u, self.p))))

    def kernel_component(self, phi):
        """Coefficients C^l of the full residual W + phi - i*[b f(W + phi)] along Z^l."""
        u = self.ans.W + phi
        return self.ans.kernel_coefficients(u - self.op.solve(self.op.wb * f_plus(u, self.p)))

    # saddle-point solve ----------------------------------------------------
    def _saddle_operators(self):
        grid = self.op.grid
        size, m = grid.size, len(self.ans.Z)
        shape = grid.shape
        KZ = np.stack([kz.ravel() for kz in self.ans.KZ], axis=1)
        if self._schur is None:
            pkz = np.stack([self.op.precondition(kz).ravel() for kz in self.ans.KZ], axis=1)
            self._schur = np.linalg.inv(KZ.T @ pkz)
        schur_inv = self._schur

        def mv(x):
            phi, alpha = x[:size], x[size:]
            u = phi.reshape(shape)
            top = (self.op.apply(u) - self.mass * u).ravel() - KZ @ alpha
            return np.concatenate([top, -KZ.T @ phi])

        def pc(x):
            return np.concatenate([self.op.precondition(x[:size].reshape(shape)).ravel(), schur_inv @ x[size:]])

        A = LinearOperator((size + m, size + m), matvec=mv, rmatvec=mv, dtype=float)
        M = LinearOperator((size + m, size + m), matvec=pc, rmatvec=pc, dtype=float)
        return A, M

    def solve_L(self, rhs, x0=None, rtol=1e-11, maxiter=3000):
        """phi in K-perp with (K - M) phi - rhs in span{K Z^l} (weak-form right-hand side)."""
        A, M = self._saddle_operators()
        size = self.op.grid.size
        b = np.concatenate([np.asarray(rhs, dtype=float).ravel(), np.zeros(len(self.ans.Z))])
        guess = None if x0 is None else np.concatenate([x0.ravel(), np.zeros(len(self.ans.Z))])
        x, info = minres(A, b, x0=guess, rtol=rtol, maxiter=maxiter, M=M)
        if info != 0:
            raise NonConvergence(f"MINRES saddle solve failed (info={info})")
        phi = x[:size].reshape(self.op.grid.shape)
        return self.ans.project_orthogonal(phi)

    def invert_L(self, g):
        """L^-1 g for g in K-perp."""
        vals = g.values if isinstance(g, DiscreteField) else g
        return DiscreteField(self.op.grid, self.solve_L(self.op.apply(vals)))

    def fixed_point_phi(self, tol=1e-9, max_iter=50, phi0=None, guard=CONTRACTION_GUARD, eps0=EPS0):
        """Iterate phi <- L^-1 (N(phi) + R) from phi0 (default 0)."""
        if self.setup.eps > eps0:
            raise InvalidParameter(f"eps = {self.setup.eps} exceeds the configured eps0 = {eps0}")
        if not tol > 0:
            raise InvalidParameter("tol must be positive")
        W, op, p = self.ans.W, self.op, self.p
        phi = np.zeros_like(W) if phi0 is None else np.asarray(phi0, dtype=float)
        steps, ratios, history = [], [], [op.norm(phi)]
        for it in range(1, max_iter + 1):
            rhs = op.wb * (f_plus(W + phi, p) - self.fpW * phi) - self.ans.KW
            new = self.solve_L(rhs, x0=phi)
            step = op.norm(new - phi)
            phi = new
            steps.append(step)
            history.append(op.norm(phi))
            if len(steps) > 1 and steps[-2] > 0:
                ratios.append(step / steps[-2])
                if ratios[-1] > guard and step > tol:
                    raise NoContraction(f"contraction factor {ratios[-1]:.3f} exceeds {guard} at step {it}")
            if step < tol:
                break
        else:
            raise NonConvergence(f"fixed point not reached in {max_iter} iterations (last step {steps[-1]:.2e})")
        return ReductionState(
            eps=self.setup.eps, xi=self.xi, phi=DiscreteField(op.grid, phi), phi_norm=op.norm(phi),
            steps=steps, contraction=ratios, residual=self.red1_residual(phi),
            gram_condition=self.ans.gram_condition, orthogonality=self.ans.orthogonality_defect(phi),
            iterations=len(steps), history=history,
        )

    def reduced_energy(self, state):
        return energy(self.op, self.ans.W + state.phi.values, self.p)

    def ansatz_energy(self):
        return energy(self.op, self.ans.W, self.p)

    def sigma_min(self, k=8, tol=1e-8):
        """Smallest singular value of L restricted to K-perp.

        L is self-adjoint in the eps inner product, so its singular values are
        |1 - mu| for the generalised eigenvalues mu of (Q^T M Q, K) with Q the
        orthogonal projection.  Only the top eigenvalues can approach 1.
        """
        op, grid = self.op, self.op.grid
        size, shape = grid.size, grid.shape
        KZ = [kz.ravel() for kz in self.ans.KZ]
        Z = [z.ravel() for z in self.ans.Z]
        ginv = np.linalg.inv(self.ans.gram) * op.scale

        def proj(x):
            c = ginv @ np.array([kz @ x for kz in KZ])
            return x - sum(ci * z for ci, z in zip(c, Z))

        def proj_t(x):
            c = ginv @ np.array([z @ x for z in Z])
            return x - sum(ci * kz for ci, kz in zip(c, KZ))

        mflat = self.mass.ravel()
        A = LinearOperator((size, size), matvec=lambda x: proj_t(mflat * proj(x)), dtype=float)
        Kop = op.linear_operator()
        Kinv = LinearOperator((size, size), matvec=lambda x: op.solve(x.reshape(shape)).ravel(), dtype=float)
        while True:
            mu = eigsh(A, k=k, M=Kop, Minv=Kinv, which="LA", tol=tol, return_eigenvectors=False)
            if np.min(mu) < 1.0 or k >= 64:
                break
            k *= 2
        return float(min(np.min(np.abs(1.0 - mu)), 1.0))


def fixed_point_phi(setup, xi, tol=1e-9, max_iter=50, **kw):
    return Reduction(setup, xi).fixed_point_phi(tol=tol, max_iter=max_iter, **kw)


def reduced_energy(setup, xi, tol=1e-9, max_iter=50):
    """J~_eps(xi) = J_eps(W + phi) together with the reduction state."""
    red = Reduction(setup, xi)
    state = red.fixed_point_phi(tol=tol, max_iter=max_iter)
    return red.reduced_energy(state), state


# ---------------------------------------------------------------------------
# landscape


def _trig_interpolant(values, periods, lo):
    """Fourier interpolant of samples on a periodic tensor grid: value, gradient, Hessian."""
    coef = np.fft.fftn(values) / values.size
    ks = []
    for i, n in enumerate(values.shape):
        m = np.fft.fftfreq(n, 1.0 / n)
        if n % 2 == 0:
            # the Nyquist mode is unresolved for derivatives; drop it
            idx = [slice(None)] * values.ndim
            idx[i] = n // 2
            coef[tuple(idx)] = 0.0
        ks.append(2 * np.pi * m / periods[i])
    grids = np.meshgrid(*ks, indexing="ij")

    def evaluate(x):
        x = np.asarray(x, dtype=float) - lo
        term = coef * np.exp(1j * sum(g * x[i] for i, g in enumerate(grids)))
        val = float(np.real(np.sum(term)))
        grad = np.array([float(np.real(np.sum(1j * g * term))) for g in grids])
        hess = np.array([[float(np.real(np.sum(-gi * gj * term))) for gj in grids] for gi in grids])
        return val, grad, hess

    return evaluate


@dataclass
class CriticalPoint:
    xi: np.ndarray
    value: float
    gradient_norm: float
    hessian_eigenvalues: np.ndarray
    signature: str
    stable: bool

    def as_dict(self):
        return {"xi": self.xi.tolist(), "value": self.value, "gradient_norm": self.gradient_norm,
                "hessian_eigenvalues": self.hessian_eigenvalues.tolist(), "signature": self.signature,
                "stable": self.stable}


def find_critical_points(values, axes, periods, lo, floor=1e-6, grad_tol=1e-8):
    """Critical points of the Fourier interpolant of grid samples.

    Candidates are grid nodes that are discrete extrema or saddles along the
    resolved axes; each is polished by Newton on the interpolant gradient and
    duplicates closer than a grid cell are merged.
    """
    values = np.asarray(values, dtype=float)
    active = [i for i, n in enumerate(values.shape) if n > 1]
    if not active or np.ptp(values) <= floor * max(1.0, np.max(np.abs(values))):
        return [], True
    interp = _trig_interpolant(values, periods, lo)
    cells = np.array([periods[i] / values.shape[i] for i in range(values.ndim)])
    points = []
    for idx in np.ndindex(values.shape):
        v = values[idx]
        is_candidate = True
        for i in active:
            up = list(idx)
            dn = list(idx)
            up[i] = (idx[i] + 1) % values.shape[i]
            dn[i] = (idx[i] - 1) % values.shape[i]
            if not ((v >= values[tuple(up)] and v >= values[tuple(dn)]) or
                    (v <= values[tuple(up)] and v <= values[tuple(dn)])):
                is_candidate = False
        if not is_candidate:
            continue
        x = np.array([axes[i][idx[i]] for i in range(values.ndim)], dtype=float)
        for _ in range(50):
            val, grad, hess = interp(x)
            g, h = grad[active], hess[np.ix_(active, active)]
            if np.linalg.norm(g) < grad_tol:
                break
            try:
                step = np.linalg.solve(h, -g)
            except np.linalg.LinAlgError:
                break
            step = np.clip(step, -cells[active], cells[active])
            x[active] += step
        val, grad, hess = interp(x)
        if np.linalg.norm(grad[active]) > 1e3 * grad_tol:
            continue
        x = lo + np.mod(x - lo, periods)
        if any(np.all(np.abs((x - q.xi + periods / 2) % periods - periods / 2) < cells) for q in points):
            continue
        eig = np.linalg.eigvalsh(hess)
        scale = max(1.0, np.max(np.abs(values)))
        neg, pos = int(np.sum(eig < -floor * scale)), int(np.sum(eig > floor * scale))
        zero = len(eig) - neg - pos
        kind = "max" if pos == 0 and zero == 0 else "min" if neg == 0 and zero == 0 else "saddle"
        if zero:
            kind = "degenerate"
        points.append(CriticalPoint(xi=x, value=val, gradient_norm=float(np.linalg.norm(grad[active])),
                                    hessian_eigenvalues=eig, signature=f"{kind} (+{pos}/-{neg}/0:{zero})",
                                    stable=zero == 0))
    return points, False


def torus_distance(x, y, periods):
    d = np.asarray(x, float) - np.asarray(y, float)
    d = d - periods * np.round(d / periods)
    return float(np.linalg.norm(d))


@dataclass
class ReducedEnergyLandscape:
    eps: float
    axes: list
    xi_points: np.ndarray
    jtilde: np.ndarray
    gamma: np.ndarray
    cp: float
    converged: np.ndarray
    phi_norm: np.ndarray
    iterations: np.ndarray
    critical_jtilde: list
    critical_gamma: list
    degenerate: bool
    pairing: list
    periods: np.ndarray

    def fit_summary(self):
        ok = self.converged
        diff = np.abs(self.jtilde[ok] - self.cp * self.gamma[ok])
        return {"eps": self.eps, "max_abs_jtilde_minus_cp_gamma": float(np.max(diff)) if diff.size else None,
                "degenerate": self.degenerate, "failed_nodes": int(np.sum(~ok))}

    def to_csv(self, path):
        n = self.xi_points.shape[-1]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"xi{i + 1}" for i in range(n)] + ["Gamma", "Jtilde", "converged", "phi_norm", "iterations"])
            for idx in np.ndindex(self.jtilde.shape):
                w.writerow([repr(float(c)) for c in self.xi_points[idx]] + [
                    repr(float(self.gamma[idx])), repr(float(self.jtilde[idx])), int(self.converged[idx]),
                    repr(float(self.phi_norm[idx])), int(self.iterations[idx])])

    def critical_json(self):
        return {"eps": self.eps, "C_p": self.cp, "degenerate": self.degenerate,
                "jtilde": [c.as_dict() for c in self.critical_jtilde],
                "gamma": [c.as_dict() for c in self.critical_gamma], "pairing": self.pairing}

    def write(self, csv_path, json_path):
        self.to_csv(csv_path)
        Path(json_path).write_text(json.dumps(self.critical_json(), indent=2) + "\n", encoding="utf-8")


def xi_grid(manifold, counts, offset=None):
    """Tensor grid of centres on the periodic chart; ``counts[i] == 1`` pins axis i at ``offset[i]``."""
    chart = manifold.chart(0)
    periods = chart.hi - chart.lo
    offset = np.zeros(manifold.dim) if offset is None else np.asarray(offset, dtype=float)
    axes = [chart.lo[i] + offset[i] + periods[i] * np.arange(c) / c for i, c in enumerate(counts)]
    return axes


def landscape(setup, axes, tol=1e-9, max_iter=50, floor=1e-6, progress=None):
    """Sample J~_eps and C_p Gamma on a tensor grid of centres and locate their critical points."""
    manifold = setup.grid.manifold
    chart = manifold.chart(0)
    periods, lo = chart.hi - chart.lo, chart.lo
    shape = tuple(len(a) for a in axes)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    jt = np.full(shape, np.nan)
    conv = np.zeros(shape, dtype=bool)
    pn = np.full(shape, np.nan)
    its = np.zeros(shape, dtype=int)
    gam = concentration_function(setup.coeffs, setup.n, setup.p, pts)
    cp = energy_constant(setup.profile)
    for idx in np.ndindex(shape):
        try:
            val, state = reduced_energy(setup, pts[idx], tol=tol, max_iter=max_iter)
        except (NonConvergence, InvalidParameter) as exc:
            if progress:
                progress(f"node {idx}: {exc}")
            continue
        jt[idx], conv[idx], pn[idx], its[idx] = val, True, state.phi_norm, state.iterations
        if progress:
            progress(f"node {idx}: J~ = {val:.10g}")
    filled = np.where(conv, jt, np.nanmean(jt) if conv.any() else 0.0)
    crit_j, flat_j = find_critical_points(filled, axes, periods, lo, floor=floor)
    crit_g, flat_g = find_critical_points(cp * gam, axes, periods, lo, floor=floor)
    pairing = []
    for cj in crit_j:
        if not crit_g:
            break
        dists = [torus_distance(cj.xi, cg.xi, periods) for cg in crit_g]
        j = int(np.argmin(dists))
        pairing.append({"jtilde_xi": cj.xi.tolist(), "gamma_xi": crit_g[j].xi.tolist(), "distance": dists[j],
                        "jtilde_signature": cj.signature, "gamma_signature": crit_g[j].signature})
    return ReducedEnergyLandscape(
        eps=setup.eps, axes=[np.asarray(a) for a in axes], xi_points=pts, jtilde=jt, gamma=gam, cp=cp,
        converged=conv, phi_norm=pn, iterations=its, critical_jtilde=crit_j, critical_gamma=crit_g,
        degenerate=bool(flat_j and flat_g), pairing=pairing, periods=np.asarray(periods),
    )


def gamma_gradient(coeffs, n, p, xi):
    return concentration_gradient(coeffs, n, p, np.atleast_1d(np.asarray(xi, dtype=float)))


def loglog_slope(eps, values):
    eps, values = np.asarray(eps, float), np.asarray(values, float)
    return float(np.polyfit(np.log(eps), np.log(values), 1)[0])


__all__ = [
    "adjoint_istar", "energy", "gamma", "Reduction", "ReductionState", "fixed_point_phi", "reduced_energy",
    "landscape", "ReducedEnergyLandscape", "find_critical_points", "xi_grid", "loglog_slope", "f_plus",
    "f_plus_prime", "gamma_gradient", "torus_distance",
]
