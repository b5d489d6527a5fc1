"""Invariant suite across all modules, with injectable faults for negative controls.

Each check returns (passed, detail).  ``run_suite`` collects them into a table;
faults deliberately corrupt one ingredient so that at least one check must fail.
"""
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .ansatz import PeakSetup
from .coefficients import CoefficientField, concentration_function
from .fullsolve import corrected_ansatz, maximum_principle_bound, newton_solve, peak_location
from .grid import NODES_PER_EPS, PeriodicGrid, ResolutionWarning
from .groundstate import energy_constant, gradient_moment, profile_moment, solve_ground_state
from .lift import (default_warped_product, hm_condition_check, hopf_map, morphism_commutation_check,
                   random_test_fields, revolution_scenario, warped_identity_check, warped_projection_fiber)
from .manifold import (build_flat_torus, build_round_sphere, circle_curve, exp_map, log_map,
                       metric_compatibility_defect, normal_expansion_check)
from .reduction import Reduction, torus_distance

FAULTS = {
    "gamma_exponent": "concentration function uses the exponent p/(p-2) - n/2 + 1 on a",
    "profile_scale": "ground state values scaled by 1.01",
    "warped_weight": "warped identity drops the k g(grad f / f, grad u) term",
    "dilation": "warped fiber projection uses lam = 1/f^2",
}


@dataclass
class CheckResult:
    module: str
    name: str
    passed: bool
    detail: str
    seconds: float


@dataclass
class SuiteContext:
    faults: frozenset = frozenset()
    mesh_factor: float = 1.0
    seed: int = 0
    cache: dict = field(default_factory=dict)

    def nodes_per_eps(self):
        return max(1, int(round(NODES_PER_EPS * self.mesh_factor)))

    def profile(self, n, p):
        key = ("profile", n, p)
        if key not in self.cache:
            prof = solve_ground_state(n, p)
            if "profile_scale" in self.faults:
                prof = _scaled_profile(prof, 1.01)
            self.cache[key] = prof
        return self.cache[key]

    def gamma(self, coeffs, n, p, x):
        val = concentration_function(coeffs, n, p, x)
        if "gamma_exponent" in self.faults:
            val = val * coeffs.a(np.asarray(x, dtype=float))
        return val

    def torus_setup(self, eps):
        key = ("torus", eps, self.mesh_factor)
        if key not in self.cache:
            manifold = build_flat_torus([2 * math.pi, 2 * math.pi])
            coeffs = CoefficientField.from_expressions(2, a="1 + 0.5*cos(x1)")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ResolutionWarning)
                grid = PeriodicGrid.for_epsilon(manifold, eps, self.nodes_per_eps())
                setup = PeakSetup(self.profile(2, 4.0), grid, coeffs, eps)
                _ = setup.op
            self.cache[key] = setup
        return self.cache[key]


def _scaled_profile(prof, factor):
    from dataclasses import replace
    return replace(prof, u=prof.u * factor, du=prof.du * factor, _spline=None)


# ---------------------------------------------------------------------------
# checks


def check_closed_forms(ctx):
    prof = ctx.profile(1, 4.0)
    # C_4 = (2/8) * (16/3) = 4/3 from the definition (p-2)/(2p) int U^p
    errs = [abs(prof.center_value - math.sqrt(2)), abs(profile_moment(prof, 4) - 16 / 3),
            abs(energy_constant(prof) - 4 / 3)]
    return max(errs) < 1e-6, f"max error {max(errs):.2e} (U(0), int U^4, C_4)"


def check_nehari(ctx):
    prof = ctx.profile(2, 4.0)
    lhs = gradient_moment(prof) + profile_moment(prof, 2)
    rhs = profile_moment(prof, 4)
    rel = abs(lhs - rhs) / rhs
    return rel < 1e-6, f"int |grad U|^2 + U^2 vs int U^4: relative gap {rel:.2e}"


def check_profile_shape(ctx):
    prof = ctx.profile(2, 4.0)
    ok = bool(np.all(prof.u > 0) and np.all(np.diff(prof.u) < 0))
    return ok, "positive and strictly decreasing" if ok else "profile not positive/decreasing"


def check_exp_log(ctx):
    sphere = build_round_sphere(2)
    rng = np.random.default_rng(ctx.seed)
    worst = 0.0
    for _ in range(5):
        xi = rng.uniform(-0.8, 0.8, 2)
        v = rng.normal(size=2)
        v *= rng.uniform(0.2, 2.0) / math.sqrt(float(v @ sphere.metric(xi) @ v))
        x = exp_map(sphere, xi, v)
        worst = max(worst, float(np.linalg.norm(log_map(sphere, xi, x) - v)))
    return worst < 1e-8, f"max |log(exp v) - v| = {worst:.2e}"


def check_normal_expansion(ctx):
    rep = normal_expansion_check(build_round_sphere(2), np.array([0.3, -0.2]))
    # transverse metric entry along the expansion direction carries -K/3
    coef = float(rep.quadratic_metric[1, 1])
    ok = rep.max_linear < 1e-6 and abs(coef + 1 / 3) < 0.02 / 3
    return ok, f"linear {rep.max_linear:.1e}, curvature coefficient {coef:.6f}"


def check_metric_compatibility(ctx):
    defect = metric_compatibility_defect(build_round_sphere(2), np.array([0.4, 0.1]))
    return defect < 1e-6, f"nabla g defect {defect:.1e}"


def check_gram(ctx):
    setup = ctx.torus_setup(0.1)
    gram = setup.ansatz(np.array([1.0, 0.5])).gram
    ratio = abs(gram[0, 1]) / min(gram[0, 0], gram[1, 1])
    return ratio <= 0.05, f"off-diagonal/diagonal {ratio:.2e}"


def check_projection(ctx):
    setup = ctx.torus_setup(0.2)
    ans = setup.ansatz(np.array([1.0, 0.5]))
    rng = np.random.default_rng(ctx.seed)
    phi = ans.project_orthogonal(rng.normal(size=setup.grid.shape) * ans.chi)
    again = ans.project_orthogonal(phi)
    idem = float(np.max(np.abs(again - phi)) / np.max(np.abs(phi)))
    orth = ans.orthogonality_defect(phi)
    return idem < 1e-10 and orth < 1e-10, f"idempotence {idem:.1e}, orthogonality {orth:.1e}"


def check_contraction(ctx):
    setup = ctx.torus_setup(0.2)
    state = Reduction(setup, np.array([1.0, 0.5])).fixed_point_phi()
    worst = state.max_contraction
    ok = worst < 0.95 and state.orthogonality < 1e-8
    return ok, f"max contraction {worst:.3f}, orthogonality {state.orthogonality:.1e}"


def check_reduced_energy(ctx):
    xi = np.array([1.0, 0.5])
    cp = energy_constant(ctx.profile(2, 4.0))
    gaps = []
    for eps in (0.2, 0.1):
        setup = ctx.torus_setup(eps)
        red = Reduction(setup, xi)
        jt = red.reduced_energy(red.fixed_point_phi())
        gaps.append(abs(jt - cp * float(ctx.gamma(setup.coeffs, 2, 4.0, xi))))
    rate = math.log(gaps[0] / gaps[1], 2) if gaps[1] > 0 else math.inf
    ok = gaps[1] < 0.02 * cp and rate >= 0.9
    return ok, f"|J~ - C_p Gamma| = {gaps[0]:.2e}, {gaps[1]:.2e} (rate {rate:.2f})"


def _torus_solution(ctx, eps):
    key = ("solution", eps, ctx.mesh_factor)
    if key not in ctx.cache:
        setup = ctx.torus_setup(eps)
        seed, _ = corrected_ansatz(setup, np.array([0.0, math.pi]))
        ctx.cache[key] = (setup, *newton_solve(setup, seed))
    return ctx.cache[key]


def check_concentration(ctx):
    eps = 0.1
    setup, u, rep = _torus_solution(ctx, eps)
    if not rep.converged:
        return False, f"Newton {rep.status}"
    xi_star = np.array([0.0, math.pi])
    dist = torus_distance(rep.peak, xi_star, setup.grid.periods)
    target = float((setup.coeffs.a(xi_star) / setup.coeffs.b(xi_star)) ** (1 / (setup.p - 2))) \
        * setup.profile.center_value
    rel = abs(rep.peak_height - target) / target
    ok = dist <= 2 * eps and rel <= 0.02 and rep.positive
    return ok, f"{rep.iterations} its, peak distance {dist:.2e}, height error {rel:.2%}"


def check_newton_monotone(ctx):
    setup = ctx.torus_setup(0.2)
    seed, _ = corrected_ansatz(setup, np.array([0.0, math.pi]))
    perturbed = seed.values * (1 + 0.05 * np.cos(setup.grid.points[..., 1]))
    _, rep = newton_solve(setup, perturbed)
    merits = np.array(rep.merit_history)
    ok = rep.converged and bool(np.all(np.diff(merits) <= 0))
    return ok, f"{rep.status} in {rep.iterations} its; merit history non-increasing: {bool(np.all(np.diff(merits) <= 0))}"


def check_max_principle(ctx):
    setup, u, rep = _torus_solution(ctx, 0.1)
    top, bound = maximum_principle_bound(setup, u)
    return top >= bound, f"u_max = {top:.4f} >= (a/b)^(1/(p-2)) = {bound:.4f}"


def check_peak_unique(ctx):
    setup, u, rep = _torus_solution(ctx, 0.1)
    info = peak_location(u)
    return not info.ambiguous, "single dominant peak" if not info.ambiguous else "ambiguous peak"


def check_warped_identity(ctx):
    wp = default_warped_product(1)
    fn = random_test_fields(np.random.default_rng(ctx.seed), 2, 1, True)[0]
    if "warped_weight" in ctx.faults:
        wp = _drop_weight(wp)
    rep = warped_identity_check(fn, wp, h=0.2)
    return rep.order >= 2 and rep.deviations[-1] < 1e-2, \
        f"deviations {rep.deviations[0]:.2e} -> {rep.deviations[1]:.2e}, order {rep.order:.2f}"


def _drop_weight(wp):
    # inconsistent pair: the weight f^k is kept but its gradient is reported as zero
    from dataclasses import replace
    return replace(wp, grad_f=lambda x: np.zeros(np.shape(x)))


def check_hopf(ctx):
    rep = morphism_commutation_check(hopf_map(), h=0.05, seed=ctx.seed)
    return rep.order >= 3.5, f"deviation {rep.deviations[0]:.2e} -> {rep.deviations[1]:.2e}, order {rep.order:.2f}"


def check_hm(ctx):
    power = 2.0 if "dilation" in ctx.faults else 1.0
    wp = default_warped_product(1)
    tg = hm_condition_check(hopf_map(), seed=ctx.seed)
    warped = hm_condition_check(warped_projection_fiber(wp, power), seed=ctx.seed)
    wrong = hm_condition_check(warped_projection_fiber(wp, 2.0), seed=ctx.seed)
    ok = tg.hm_residual == 0 and tg.conformality_defect < 1e-8 and warped.residual <= 1e-6 and wrong.residual >= 0.1
    return ok, (f"totally geodesic {tg.residual:.1e}, warped {warped.residual:.1e}, "
                f"wrong dilation {wrong.residual:.2f}")


def check_lift(ctx):
    t, curve = circle_curve()
    scen = revolution_scenario(t, curve, k=1, p=4.0)
    eps = 0.1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ResolutionWarning)
        grid = PeriodicGrid.for_epsilon(scen.warped.base, eps, ctx.nodes_per_eps())
        setup = PeakSetup(ctx.profile(1, 4.0), grid, scen.coeffs, eps)
        seed, _ = corrected_ansatz(setup, np.array([scen.critical[0].xi[0]]))
        u, rep = newton_solve(setup, seed, tol=1e-10)
        if not rep.converged:
            return False, f"base Newton {rep.status}"
        _, _, lr = scen.lift(u, eps, samples=300, seed=ctx.seed)
    ok = lr.ratio <= 3 and lr.fiber_derivative_max < 1e-10
    return ok, f"lifted/source residual {lr.ratio:.3f}, fiber derivative {lr.fiber_derivative_max:.1e}"


CHECKS = [
    ("ground-state", "closed forms n=1, p=4", check_closed_forms),
    ("ground-state", "Nehari identity n=2", check_nehari),
    ("ground-state", "positive decreasing profile", check_profile_shape),
    ("manifold-kit", "exp/log round trip on S^2", check_exp_log),
    ("manifold-kit", "normal-coordinate expansion on S^2", check_normal_expansion),
    ("manifold-kit", "metric compatibility on S^2", check_metric_compatibility),
    ("ansatz", "Gram matrix near diagonal", check_gram),
    ("ansatz", "orthogonal projection", check_projection),
    ("reduction", "contraction and orthogonality", check_contraction),
    ("reduction", "reduced energy approaches C_p Gamma", check_reduced_energy),
    ("fullsolve", "concentration at the Gamma maximum", check_concentration),
    ("fullsolve", "Newton merit non-increasing", check_newton_monotone),
    ("fullsolve", "maximum-principle bound at the peak", check_max_principle),
    ("fullsolve", "single peak", check_peak_unique),
    ("lift", "warped identity order", check_warped_identity),
    ("lift", "Hopf commutation order", check_hopf),
    ("lift", "harmonic-morphism condition", check_hm),
    ("lift", "torus-of-revolution lift", check_lift),
]


def run_suite(faults=(), mesh_factor=1.0, seed=0, progress=None, only=None):
    """Run every check; returns a list of CheckResult."""
    unknown = set(faults) - set(FAULTS)
    if unknown:
        from .errors import InvalidParameter
        raise InvalidParameter(f"unknown fault(s) {sorted(unknown)}; choose from {sorted(FAULTS)}")
    ctx = SuiteContext(faults=frozenset(faults), mesh_factor=mesh_factor, seed=seed)
    results = []
    for module, name, fn in CHECKS:
        if only and module not in only:
            continue
        t0 = time.perf_counter()
        try:
            passed, detail = fn(ctx)
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failed check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        res = CheckResult(module, name, bool(passed), detail, time.perf_counter() - t0)
        results.append(res)
        if progress:
            progress(format_result(res))
    return results


def format_result(res):
    return f"{'PASS' if res.passed else 'FAIL'}  {res.module:<13} {res.name:<40} {res.detail}"
