"""Newton solves of -eps^2 div(c grad u) + a u = b (u+)^(p-1) on a periodic grid."""
import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from .errors import CollapseToZero, Divergence, InvalidParameter
from .grid import DiscreteField, resample
from .coefficients import concentration_function
from .reduction import Reduction, energy, f_plus, f_plus_prime, find_critical_points

ARMIJO = 1e-4
MAX_HALVINGS = 20
COLLAPSE_FRACTION = 0.1
# negative ripple tolerated by the positivity flag, relative to max u; at four
# nodes per eps the resolved solution undershoots by about 1e-4 far from the peak
POSITIVITY_TOL = 1e-3


@dataclass
class PeakInfo:
    point: np.ndarray
    height: float
    ambiguous: bool
    node: tuple


def _local_maxima(values):
    mask = np.ones(values.shape, dtype=bool)
    for offset in np.ndindex((3,) * values.ndim):
        shift = tuple(o - 1 for o in offset)
        if not any(shift):
            continue
        mask &= values >= np.roll(values, shift, axis=tuple(range(values.ndim)))
    return mask


def peak_location(u, separation=0.1):
    """Argmax node refined by a per-axis parabola through the neighbouring nodes.

    ``ambiguous`` is set when another local maximum reaches within
    ``separation`` (relative) of the global one, e.g. for constant fields.
    """
    vals = u.values
    grid = u.grid
    node = np.unravel_index(int(np.argmax(vals)), vals.shape)
    top = float(vals[node])
    maxima = _local_maxima(vals)
    maxima[node] = False
    others = vals[maxima]
    ambiguous = bool(others.size and np.max(others) >= (1 - separation) * top)
    point = grid.points[node].astype(float).copy()
    height = top
    for i in range(grid.n):
        up, dn = list(node), list(node)
        up[i] = (node[i] + 1) % vals.shape[i]
        dn[i] = (node[i] - 1) % vals.shape[i]
        fm, fp = float(vals[tuple(dn)]), float(vals[tuple(up)])
        curv = fm - 2 * top + fp
        if curv < 0:
            shift = 0.5 * (fm - fp) / curv
            point[i] += shift * grid.h[i]
            height -= 0.125 * (fm - fp) ** 2 / curv
    chart = grid.manifold.chart(0)
    point = chart.wrap(point)
    # fold round-off just below the upper period end back onto the lower end
    span = chart.hi - chart.lo
    point = np.where(chart.hi - point < 1e-12 * span, chart.lo, point)
    return PeakInfo(point=point, height=height, ambiguous=ambiguous, node=tuple(int(k) for k in node))


@dataclass
class SolveReport:
    eps: float
    seed_xi: list
    status: str
    iterations: int
    residual_history: list
    final_residual: float
    peak: list
    peak_height: float
    peak_ambiguous: bool
    distance_to_ansatz: float
    energy: float
    positive: bool
    min_value: float
    wall_time: float
    merit_history: list = field(default_factory=list)
    linear_iterations: list = field(default_factory=list)
    grid_shape: list = field(default_factory=list)
    message: str = ""

    @property
    def converged(self):
        return self.status == "converged"

    def to_json(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")


def strong_residual(op, u, p):
    """Nodal -eps^2 div(c grad u) + a u - b (u+)^(p-1)."""
    return op.strong(u) - op.b * f_plus(u, p)


def _weak_residual(op, u, p):
    return op.apply(u) - op.wb * f_plus(u, p)


def _merit(op, F):
    # L2 quadrature norm of the nodal residual
    return math.sqrt(float(np.sum(F * F / op.grid.weights)))


def newton_solve(setup, seed, tol=1e-8, max_iter=30, linear_rtol=1e-10, raise_on_failure=False):
    """Newton's method with MINRES inner solves and Armijo halving on the residual norm.

    Returns ``(u, report)``.  Status is ``converged``, ``diverged`` or
    ``collapse``; with ``raise_on_failure`` the latter two raise instead.
    """
    t0 = time.perf_counter()
    op, p = setup.op, setup.p
    grid = setup.grid
    u = np.array(seed.values if isinstance(seed, DiscreteField) else seed, dtype=float)
    if u.shape != grid.shape:
        raise InvalidParameter("seed does not live on the setup grid")
    gmin = float(np.min(setup.coeffs.gamma(grid.points, p)))
    collapse_level = COLLAPSE_FRACTION * gmin * setup.profile.center_value
    F = _weak_residual(op, u, p)
    history = [float(np.max(np.abs(F / grid.weights)))]
    merits = [_merit(op, F)]
    lin_its = []
    status, message, steps = "diverged", "", 0
    size, shape = grid.size, grid.shape
    prec = op.preconditioner()
    for _ in range(max_iter):
        if np.max(np.abs(u)) < collapse_level:
            status, message = "collapse", "iterate fell onto the trivial solution"
            break
        mass = op.wb * f_plus_prime(u, p)
        jac = LinearOperator((size, size), dtype=float,
                             matvec=lambda x, m=mass: (op.apply(x.reshape(shape)) - m * x.reshape(shape)).ravel())
        count = [0]
        step, info = minres(jac, -F.ravel(), rtol=linear_rtol, maxiter=2000, M=prec,
                            callback=lambda _x, c=count: c.__setitem__(0, c[0] + 1))
        lin_its.append(count[0])
        if info != 0:
            message = f"MINRES returned info={info}"
        step = step.reshape(shape)
        merit0 = merits[-1]
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            trial = u + t * step
            F_trial = _weak_residual(op, trial, p)
            if _merit(op, F_trial) <= (1 - ARMIJO * t) * merit0:
                break
            t *= 0.5
        else:
            status, message = "diverged", "line search exhausted"
            break
        u, F, steps = trial, F_trial, steps + 1
        merits.append(_merit(op, F))
        history.append(float(np.max(np.abs(F / grid.weights))))
        if np.max(np.abs(u)) < collapse_level:
            status, message = "collapse", "iterate fell onto the trivial solution"
            break
        if history[-1] <= tol:
            status = "converged"
            break
    else:
        message = message or f"no convergence in {max_iter} iterations"
    peak = peak_location(DiscreteField(grid, u))
    dist = float("nan")
    if status == "converged":
        try:
            w_peak = setup.ansatz(peak.point).W
            dist = op.norm(u - w_peak)
        except Exception:  # noqa: BLE001 - diagnostic only
            dist = float("nan")
    report = SolveReport(
        eps=setup.eps, seed_xi=[], status=status, iterations=steps, residual_history=history,
        final_residual=history[-1], peak=peak.point.tolist(), peak_height=peak.height,
        peak_ambiguous=peak.ambiguous, distance_to_ansatz=dist, energy=energy(op, u, p),
        positive=bool(np.min(u) > -POSITIVITY_TOL * np.max(u)), min_value=float(np.min(u)), wall_time=time.perf_counter() - t0,
        merit_history=merits, linear_iterations=lin_its, grid_shape=list(grid.shape), message=message,
    )
    if raise_on_failure and status == "collapse":
        raise CollapseToZero(message)
    if raise_on_failure and status != "converged":
        raise Divergence(message)
    return DiscreteField(grid, u), report


def corrected_ansatz(setup, xi, tol=1e-9):
    """W + phi at xi from the reduction, with the reduction state."""
    red = Reduction(setup, xi)
    state = red.fixed_point_phi(tol=tol)
    return DiscreteField(setup.grid, red.ans.W + state.phi.values), state


def continuation(make_setup, schedule, xi0, tol=1e-8, max_iter=30, reseed="recentered", progress=None,
                 first_seed=None):
    """Solve along a decreasing eps schedule; stops at the first failed stage.

    ``make_setup(eps)`` returns a PeakSetup.  The first stage starts from
    ``first_seed`` when given (e.g. a stored solution), else from the
    corrected ansatz at xi0.  Stage k > 0 is seeded from the corrected ansatz
    re-centred at the previous peak (``recentered``) or from the previous
    solution resampled onto the new grid (``previous``).
    """
    schedule = [float(e) for e in schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise InvalidParameter("eps schedule must be strictly decreasing")
    if reseed not in ("recentered", "previous"):
        raise InvalidParameter("reseed must be 'recentered' or 'previous'")
    reports, solutions = [], []
    centre = np.asarray(xi0, dtype=float)
    prev = None
    for k, eps in enumerate(schedule):
        setup = make_setup(eps)
        if k == 0 and first_seed is not None:
            seed = resample(first_seed, setup.grid)
        elif k == 0 or reseed == "recentered":
            seed, _ = corrected_ansatz(setup, centre)
        else:
            seed = resample(prev, setup.grid)
        u, rep = newton_solve(setup, seed, tol=tol, max_iter=max_iter)
        rep.seed_xi = centre.tolist()
        reports.append(rep)
        solutions.append(u)
        if progress:
            progress(f"eps={eps}: {rep.status} after {rep.iterations} its, peak {rep.peak}, height {rep.peak_height:.6g}")
        if not rep.converged:
            break
        centre, prev = np.asarray(rep.peak), u
    return reports, solutions


def write_continuation_csv(reports, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        n = len(reports[0].peak) if reports else 0
        w.writerow(["epsilon"] + [f"peak{i + 1}" for i in range(n)] + ["peak_height", "residual", "status"])
        for r in reports:
            w.writerow([repr(r.eps)] + [repr(float(c)) for c in r.peak]
                       + [repr(float(r.peak_height)), repr(float(r.final_residual)), r.status])


def maximum_principle_bound(setup, u):
    """Lower bound at the argmax from a u <= b u^(p-1): u_max^(p-2) >= a/b there (flat, constant c)."""
    node = np.unravel_index(int(np.argmax(u.values)), u.values.shape)
    a, b = setup.op.a[node], setup.op.b[node]
    return float(u.values[node]), float((a / b) ** (1.0 / (setup.p - 2.0)))


def gamma_maximum(coeffs, manifold, p, samples=64):
    """Location of the largest Gamma critical point on a periodic chart (chart origin if Gamma is flat)."""
    chart = manifold.chart(0)
    periods, lo = chart.hi - chart.lo, chart.lo
    axes = [lo[i] + periods[i] * np.arange(samples) / samples for i in range(manifold.dim)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    values = concentration_function(coeffs, manifold.dim, p, pts)
    crit, flat = find_critical_points(values, axes, periods, lo)
    if flat or not crit:
        return np.array(lo, dtype=float), True
    best = max(crit, key=lambda c: c.value)
    return best.xi, False


def limit_peak_height(setup, xi):
    return float(setup.coeffs.gamma(np.atleast_1d(np.asarray(xi, float)), setup.p) * setup.profile.center_value)


__all__ = [
    "PeakInfo", "SolveReport", "peak_location", "newton_solve", "corrected_ansatz", "continuation",
    "strong_residual", "write_continuation_csv", "maximum_principle_bound", "limit_peak_height",
    "gamma_maximum",
]
