"""Quadrature-based verification of the analytic identities behind the
regularizer, on 1D Gaussian-mixture test distributions.

Trapezoid quadrature on a wide interval is spectrally accurate for these
smooth decaying integrands, which is what pushes residuals to the 1e-10
level the checks assert.  Every check returns a machine-readable
:class:`CheckResult`; :func:`run_checks` drives the whole suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .divergences import FDivergence, js_fdivergence, sigmoid, softplus

NOISE_FLOOR = 1e-14


class GridCoverageError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianMixture1D:
    """Closed-form 1D Gaussian mixture with derivative and convolution rules."""

    weights: tuple
    means: tuple
    variances: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if abs(w.sum() - 1.0) > 1e-12 or np.any(w <= 0.0):
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(np.asarray(self.variances) <= 0.0):
            raise ValueError("variances must be positive")

    def _arrays(self):
        return (np.asarray(self.weights)[:, None],
                np.asarray(self.means)[:, None],
                np.asarray(self.variances)[:, None])

    def pdf(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        w, mu, var = self._arrays()
        comp = np.exp(-0.5 * (x[None, :] - mu) ** 2 / var) / np.sqrt(2.0 * np.pi * var)
        return (w * comp).sum(axis=0)

    def dpdf(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        w, mu, var = self._arrays()
        comp = np.exp(-0.5 * (x[None, :] - mu) ** 2 / var) / np.sqrt(2.0 * np.pi * var)
        return (w * comp * (-(x[None, :] - mu) / var)).sum(axis=0)

    def d2pdf(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        w, mu, var = self._arrays()
        comp = np.exp(-0.5 * (x[None, :] - mu) ** 2 / var) / np.sqrt(2.0 * np.pi * var)
        term = ((x[None, :] - mu) ** 2 / var**2) - 1.0 / var
        return (w * comp * term).sum(axis=0)

    def mean(self) -> float:
        w, mu, _ = self._arrays()
        return float((w * mu).sum())

    def std(self) -> float:
        w, mu, var = self._arrays()
        m = self.mean()
        second = (w * (var + mu**2)).sum()
        return float(np.sqrt(second - m**2))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(self.weights), size=n, p=np.asarray(self.weights))
        mu = np.asarray(self.means)[idx]
        sd = np.sqrt(np.asarray(self.variances)[idx])
        return mu + sd * rng.standard_normal(n)


def gaussian(mean: float, var: float) -> GaussianMixture1D:
    return GaussianMixture1D((1.0,), (float(mean),), (float(var),))


def gaussian_convolve(dist: GaussianMixture1D, gamma: float) -> GaussianMixture1D:
    """Convolution with N(0, gamma): component variances increase by gamma."""
    if gamma < 0.0:
        raise ValueError("noise variance must be >= 0")
    return GaussianMixture1D(dist.weights, dist.means,
                             tuple(v + gamma for v in dist.variances))


@dataclass(frozen=True)
class QuadGrid:
    lo: float = -12.0
    hi: float = 12.0
    n: int = 20001
    rule: str = "trapezoid"

    def __post_init__(self):
        if self.hi <= self.lo or self.n < 2:
            raise ValueError("invalid quadrature grid")
        if self.rule not in ("trapezoid", "gauss-legendre"):
            raise ValueError(f"unknown rule {self.rule!r}")

    def points(self):
        if self.rule == "trapezoid":
            x = np.linspace(self.lo, self.hi, self.n)
            w = np.full(self.n, (self.hi - self.lo) / (self.n - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
            return x, w
        x, w = np.polynomial.legendre.leggauss(self.n)
        half = 0.5 * (self.hi - self.lo)
        return self.lo + half * (x + 1.0), half * w

    def integrate(self, values) -> float:
        _, w = self.points()
        return float(np.dot(w, np.asarray(values, dtype=np.float64)))

    def check_coverage(self, dist: GaussianMixture1D, k: float = 8.0) -> None:
        lo_need = dist.mean() - k * dist.std()
        hi_need = dist.mean() + k * dist.std()
        if self.lo > lo_need or self.hi < hi_need:
            raise GridCoverageError(
                f"grid [{self.lo}, {self.hi}] covers less than {k} standard "
                f"deviations of a density centred at {dist.mean():.3g}"
            )


@dataclass
class CheckResult:
    check: str
    parameter: str
    residual: float
    threshold: float
    passed: bool

    def row(self) -> str:
        return (f"{self.check},{self.parameter},{self.residual!r},"
                f"{self.threshold!r},{str(self.passed).lower()}")


def write_report(results, path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("check,parameter,residual,threshold,pass\n")
        for r in results:
            fh.write(r.row() + "\n")


@dataclass(frozen=True)
class PsiBundle:
    """A statistic with closed-form derivatives; ``conj_comp_d2``, when
    present, is an independently derived second derivative of f* o psi used
    as the left side of the chain-rule check."""

    name: str
    f: Callable
    d1: Callable
    d2: Callable
    conj_comp_d2: Callable | None = None


def psi_neg_softplus() -> PsiBundle:
    # for JS: f*(psi(x)) = softplus(-x), whose second derivative is
    # sigma(x) * sigma(-x)
    return PsiBundle(
        name="neg-softplus",
        f=lambda x: -softplus(x),
        d1=lambda x: -sigmoid(x),
        d2=lambda x: -sigmoid(x) * sigmoid(-x),
        conj_comp_d2=lambda x: sigmoid(x) * sigmoid(-x),
    )


def psi_linear(slope: float = 0.1, offset: float = -1.0) -> PsiBundle:
    div = js_fdivergence()

    def comp_d2(x):
        u = slope * np.asarray(x, dtype=np.float64) + offset
        return slope**2 * div.conj_d2(u)

    return PsiBundle(
        name="linear",
        f=lambda x: slope * np.asarray(x, dtype=np.float64) + offset,
        d1=lambda x: np.full_like(np.asarray(x, dtype=np.float64), slope),
        d2=lambda x: np.zeros_like(np.asarray(x, dtype=np.float64)),
        conj_comp_d2=comp_d2,
    )


def js_optimal_statistic_bundle(p: GaussianMixture1D,
                                q: GaussianMixture1D) -> PsiBundle:
    """psi* = ln(p/(p+q)) with closed-form derivatives via the log-ratio."""

    def parts(x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        pv, qv = p.pdf(x), q.pdf(x)
        r = np.log(pv) - np.log(qv)
        rp = p.dpdf(x) / pv - q.dpdf(x) / qv
        rpp = (p.d2pdf(x) / pv - (p.dpdf(x) / pv) ** 2
               - q.d2pdf(x) / qv + (q.dpdf(x) / qv) ** 2)
        return r, rp, rpp

    def f(x):
        r, _, _ = parts(x)
        return -softplus(-r)

    def d1(x):
        r, rp, _ = parts(x)
        return sigmoid(-r) * rp

    def d2(x):
        r, rp, rpp = parts(x)
        s = sigmoid(-r)
        return -s * sigmoid(r) * rp**2 + s * rpp

    return PsiBundle("js-optimal", f, d1, d2)


def perturb_bundle(base: PsiBundle, amp: float = 0.05) -> PsiBundle:
    """Add amp * exp(-x^2), keeping the statistic inside the JS domain for
    small amplitudes."""

    def f(x):
        x = np.asarray(x, dtype=np.float64)
        return base.f(x) + amp * np.exp(-(x**2))

    def d1(x):
        x = np.asarray(x, dtype=np.float64)
        return base.d1(x) + amp * (-2.0 * x) * np.exp(-(x**2))

    def d2(x):
        x = np.asarray(x, dtype=np.float64)
        return base.d2(x) + amp * (4.0 * x**2 - 2.0) * np.exp(-(x**2))

    return PsiBundle(base.name + "-perturbed", f, d1, d2)


# ---------------------------------------------------------------------------
# identity checks
# ---------------------------------------------------------------------------

def density_norm_residual(dist: GaussianMixture1D, grid: QuadGrid) -> float:
    x, _ = grid.points()
    return abs(grid.integrate(dist.pdf(x)) - 1.0)


def refinement_gain(var: float = 1.0, lo: float = -2.0, hi: float = 2.0,
                    n: int = 101) -> float:
    """Error ratio of int x^2 N(0, var) when doubling the node count.

    The short interval keeps the endpoint terms alive so the trapezoid rule
    shows its h^2 order (exact value via the normal cdf).
    """
    sd = math.sqrt(var)

    def exact():
        def cdf(t):
            return 0.5 * (1.0 + math.erf(t / (sd * math.sqrt(2.0))))

        def pdf(t):
            return math.exp(-0.5 * (t / sd) ** 2) / (sd * math.sqrt(2.0 * math.pi))

        # int_a^b x^2 N(x) dx = var * (F(b) - F(a)) - var * (b N(b) - a N(a))
        return var * (cdf(hi) - cdf(lo)) - var * (hi * pdf(hi) - lo * pdf(lo))

    ref = exact()
    dist = gaussian(0.0, var)
    errs = []
    for nodes in (n, 2 * n - 1):
        g = QuadGrid(lo, hi, nodes)
        x, _ = g.points()
        errs.append(abs(g.integrate(x**2 * dist.pdf(x)) - ref))
    return errs[0] / max(errs[1], 1e-300)


def conjugate_derivative_residual(div: FDivergence, t_lo: float, t_hi: float,
                                  n: int = 1000, step: float = 1e-6) -> float:
    """Max relative FD error of f*' against f* and f*'' against f*'."""
    t = np.linspace(t_lo, t_hi, n)
    fd1 = (div.conj(t + step) - div.conj(t - step)) / (2.0 * step)
    fd2 = (div.conj_d1(t + step) - div.conj_d1(t - step)) / (2.0 * step)
    r1 = np.abs(div.conj_d1(t) - fd1) / np.maximum(np.abs(fd1), 1e-8)
    r2 = np.abs(div.conj_d2(t) - fd2) / np.maximum(np.abs(fd2), 1e-8)
    return float(max(r1.max(), r2.max()))


def conjugate_sup_gap(div: FDivergence, t_lo: float, t_hi: float,
                      n_t: int = 200, u_lo: float = 1e-6, u_hi: float = 1e4,
                      n_u: int = 400001) -> float:
    """Gap between f*(t) and the grid supremum of u*t - f(u)."""
    t = np.linspace(t_lo, t_hi, n_t)
    u = np.exp(np.linspace(np.log(u_lo), np.log(u_hi), n_u))
    fu = div.gen(u)
    gaps = np.empty(n_t)
    for i, ti in enumerate(t):
        gaps[i] = div.conj(ti) - np.max(u * ti - fu)
    return float(np.max(np.abs(gaps)))


def verify_convolution_identity(dist: GaussianMixture1D, psi: Callable,
                                gamma: float, grid: QuadGrid, n_mc: int,
                                rng: np.random.Generator):
    """E_{P*Lambda}[psi] by quadrature vs the Monte-Carlo double expectation.

    Returns (quad value, mc value, mc standard error).
    """
    conv = gaussian_convolve(dist, gamma)
    grid.check_coverage(conv)
    x, _ = grid.points()
    quad = grid.integrate(psi(x) * conv.pdf(x))
    draws = psi(dist.sample(n_mc, rng)
                + math.sqrt(gamma) * rng.standard_normal(n_mc))
    mc = float(np.mean(draws))
    se = float(np.std(draws, ddof=1) / math.sqrt(n_mc))
    return quad, mc, se


def verify_chain_rule(div: FDivergence, bundle: PsiBundle,
                      grid: QuadGrid) -> float:
    """Max pointwise residual of
    (f* o psi)'' = (f*'' o psi) psi'^2 + (f*' o psi) psi''."""
    if bundle.conj_comp_d2 is None:
        raise ValueError("bundle lacks an independent composite second derivative")
    x, _ = grid.points()
    psi = bundle.f(x)
    div.check_domain(psi)
    lhs = bundle.conj_comp_d2(x)
    rhs = div.conj_d2(psi) * bundle.d1(x) ** 2 + div.conj_d1(psi) * bundle.d2(x)
    return float(np.max(np.abs(lhs - rhs)))


DEFAULT_TEST_FUNCTIONS = (
    ("1", lambda x: np.ones_like(x)),
    ("x", lambda x: x),
    ("x^2", lambda x: x**2),
    ("sin", np.sin),
)


def verify_optimality(div: FDivergence, p: GaussianMixture1D,
                      q: GaussianMixture1D, grid: QuadGrid,
                      test_functions=DEFAULT_TEST_FUNCTIONS):
    """Max violation of E_P[h] = E_Q[(f*' o psi*) h] over the test functions."""
    grid.check_coverage(p)
    grid.check_coverage(q)
    x, _ = grid.points()
    pv, qv = p.pdf(x), q.pdf(x)
    psi_star = div.gen_d1(pv / qv)
    weight = div.conj_d1(psi_star)
    rows = {}
    for name, h in test_functions:
        hv = h(x)
        rows[name] = abs(grid.integrate(hv * pv) - grid.integrate(weight * hv * qv))
    return max(rows.values()), rows


def _fgan_value(div: FDivergence, p, q, psi_vals, grid: QuadGrid, x) -> float:
    return grid.integrate(psi_vals * p.pdf(x)) - grid.integrate(
        div.conj(psi_vals) * q.pdf(x))


def omega_value(div: FDivergence, q: GaussianMixture1D, bundle: PsiBundle,
                grid: QuadGrid) -> float:
    x, _ = grid.points()
    psi = bundle.f(x)
    return grid.integrate(div.conj_d2(psi) * bundle.d1(x) ** 2 * q.pdf(x))


def residual_slope(div: FDivergence, p: GaussianMixture1D,
                   q: GaussianMixture1D, bundle: PsiBundle, gammas,
                   grid: QuadGrid, form: str = "omega"):
    """Least-squares slope of log|R(gamma)| against log gamma.

    forms: "omega" subtracts the gradient-norm correction (expected slope 2
    at psi*), "negative-control" subtracts nothing (slope 1), "laplacian"
    subtracts the full Laplacian correction, valid for any smooth statistic
    (slope 2).  Points whose residual sits at the quadrature noise floor are
    dropped.  Returns (slope, kept gammas, residuals).
    """
    if form not in ("omega", "negative-control", "laplacian"):
        raise ValueError(f"unknown form {form!r}")
    gammas = np.asarray(sorted(gammas), dtype=np.float64)
    if len(gammas) < 3:
        raise ValueError("need at least 3 gamma points for a slope")
    x, _ = grid.points()
    psi = bundle.f(x)
    div.check_domain(psi)
    base = _fgan_value(div, p, q, psi, grid, x)
    if form == "omega":
        correction = omega_value(div, q, bundle, grid)
    elif form == "laplacian":
        lap_p = grid.integrate(bundle.d2(x) * p.pdf(x))
        lap_conj_q = grid.integrate(
            (div.conj_d2(psi) * bundle.d1(x) ** 2
             + div.conj_d1(psi) * bundle.d2(x)) * q.pdf(x))
        correction = None  # handled per gamma below
    else:
        correction = 0.0
    residuals = []
    kept = []
    for g in gammas:
        pg = gaussian_convolve(p, g)
        qg = gaussian_convolve(q, g)
        f_gamma = _fgan_value(div, pg, qg, psi, grid, x)
        if form == "laplacian":
            r = f_gamma - base - 0.5 * g * (lap_p - lap_conj_q)
        else:
            r = f_gamma - (base - 0.5 * g * correction)
        if abs(r) < NOISE_FLOOR:
            continue
        residuals.append(abs(r))
        kept.append(g)
    if len(kept) < 3:
        raise ValueError("too few residuals above the quadrature noise floor")
    slope = float(np.polyfit(np.log(kept), np.log(residuals), 1)[0])
    return slope, np.asarray(kept), np.asarray(residuals)


def verify_parametrization_equivalence(p: GaussianMixture1D,
                                       q: GaussianMixture1D,
                                       grid: QuadGrid) -> float:
    """Pointwise residual of the Fenchel-vs-logit regularizer identity at the
    optimal discriminator phi* = p/(p+q) (densities included)."""
    div = js_fdivergence()
    x, _ = grid.points()
    pv, qv = p.pdf(x), q.pdf(x)
    tot = pv + qv
    dp, dq = p.dpdf(x), q.dpdf(x)
    dlog_phi = dp / pv - (dp + dq) / tot          # (ln phi*)'
    dlog_1mphi = dq / qv - (dp + dq) / tot        # (ln (1-phi*))'
    log_phi = np.log(pv) - np.log(tot)
    lhs = div.conj_d2(log_phi) * dlog_phi**2 * qv
    rhs = dlog_phi**2 * pv + dlog_1mphi**2 * qv
    return float(np.max(np.abs(lhs - rhs)))


def verify_regularizer_limit(div: FDivergence, q: GaussianMixture1D,
                             bundle: PsiBundle, eps_list, grid: QuadGrid):
    """Omega_f(Q * N(0, eps); psi) converges to Omega_f(Q; psi) as eps -> 0.

    Returns (omega_0, {eps: |Omega_eps - Omega_0| / |Omega_0|}).
    """
    omega_0 = omega_value(div, q, bundle, grid)
    diffs = {}
    for eps in sorted(eps_list, reverse=True):
        if eps < 0.0:
            raise ValueError("eps must be >= 0")
        q_eps = gaussian_convolve(q, eps) if eps > 0.0 else q
        diffs[eps] = abs(omega_value(div, q_eps, bundle, grid) - omega_0) / abs(omega_0)
    return omega_0, diffs


# ---------------------------------------------------------------------------
# the named check suite
# ---------------------------------------------------------------------------

DEFAULT_P = gaussian(0.0, 1.0)
DEFAULT_Q = gaussian(0.5, 1.44)
SLOPE_GAMMAS = tuple(np.geomspace(1e-4, 1e-1, 5))
EPS_LIST = (1e-2, 3e-3, 1e-3, 3e-4, 1e-4)


def _check_quadrature_norm(grid, mc_draws, seed):
    out = []
    for name, dist in (("P", DEFAULT_P), ("Q", DEFAULT_Q)):
        res = density_norm_residual(dist, grid)
        out.append(CheckResult("quadrature-norm", name, res, 1e-10, res < 1e-10))
    return out

def _check_quadrature_refinement(grid, mc_draws, seed):
    gain = refinement_gain()
    return [CheckResult("quadrature-refinement", "gain", gain, 4.0, gain >= 4.0)]

def _check_conjugate_derivatives(grid, mc_draws, seed):
    res = conjugate_derivative_residual(js_fdivergence(), -6.0, -0.05)
    return [CheckResult("conjugate-derivatives", "js", res, 1e-7, res < 1e-7)]

def _check_conjugate_sup(grid, mc_draws, seed):
    gap = conjugate_sup_gap(js_fdivergence(), -5.0, -0.1)
    return [CheckResult("conjugate-sup", "js", gap, 1e-6, gap < 1e-6)]

def _check_convolution(grid, mc_draws, seed):
    rng = np.random.default_rng(seed)
    quad, mc, se = verify_convolution_identity(
        DEFAULT_P, lambda x: x**2, 0.1, grid, mc_draws, rng)
    res = abs(quad - mc)
    return [CheckResult("convolution-identity", "psi=x^2,gamma=0.1",
                        res, 3.0 * se, res < 3.0 * se)]

def _check_chain_rule(grid, mc_draws, seed):
    sub = QuadGrid(-5.0, 5.0, grid.n, grid.rule)
    res = verify_chain_rule(js_fdivergence(), psi_neg_softplus(), sub)
    return [CheckResult("chain-rule", "neg-softplus", res, 1e-8, res < 1e-8)]

def _check_optimality(grid, mc_draws, seed):
    worst, _ = verify_optimality(js_fdivergence(), DEFAULT_P, DEFAULT_Q, grid)
    return [CheckResult("optimality", "h in {1,x,x^2,sin}", worst, 1e-6,
                        worst < 1e-6)]

def _check_parametrization(grid, mc_draws, seed):
    res = verify_parametrization_equivalence(gaussian(0.0, 1.0),
                                             gaussian(1.0, 1.0), grid)
    return [CheckResult("parametrization-equivalence", "N(0,1)/N(1,1)",
                        res, 1e-10, res < 1e-10)]

def _check_residual_slope(grid, mc_draws, seed):
    bundle = js_optimal_statistic_bundle(DEFAULT_P, DEFAULT_Q)
    slope, _, _ = residual_slope(js_fdivergence(), DEFAULT_P, DEFAULT_Q,
                                 bundle, SLOPE_GAMMAS, grid, "omega")
    return [CheckResult("residual-slope", f"slope={slope:.4f}",
                        abs(slope - 2.0), 0.2, 1.8 <= slope <= 2.2)]

def _check_residual_slope_negctl(grid, mc_draws, seed):
    bundle = js_optimal_statistic_bundle(DEFAULT_P, DEFAULT_Q)
    slope, _, _ = residual_slope(js_fdivergence(), DEFAULT_P, DEFAULT_Q,
                                 bundle, SLOPE_GAMMAS, grid, "negative-control")
    return [CheckResult("residual-slope-negctl", f"slope={slope:.4f}",
                        abs(slope - 1.0), 0.15, abs(slope - 1.0) <= 0.15)]

def _check_residual_slope_laplacian(grid, mc_draws, seed):
    base = js_optimal_statistic_bundle(DEFAULT_P, DEFAULT_Q)
    bundle = perturb_bundle(base, 0.05)
    slope, _, _ = residual_slope(js_fdivergence(), DEFAULT_P, DEFAULT_Q,
                                 bundle, SLOPE_GAMMAS, grid, "laplacian")
    return [CheckResult("residual-slope-laplacian", f"slope={slope:.4f}",
                        abs(slope - 2.0), 0.2, 1.8 <= slope <= 2.2)]

def _check_regularizer_limit(grid, mc_draws, seed):
    # asymmetric Q: for symmetric ones E_Q[(f*'' o psi) psi'^2] is invariant
    # under the convolution (the integrand reduces to sigma(-x)), which
    # would make the convergence sequence degenerate
    _, diffs = verify_regularizer_limit(js_fdivergence(), DEFAULT_Q,
                                        psi_neg_softplus(), EPS_LIST, grid)
    eps_sorted = sorted(diffs, reverse=True)
    vals = [diffs[e] for e in eps_sorted]
    monotone = all(vals[i] > vals[i + 1] for i in range(len(vals) - 1))
    final = diffs[min(diffs)]
    return [CheckResult("regularizer-limit", "eps=1e-4", final, 0.01,
                        monotone and final < 0.01)]


CHECKS = {
    "quadrature-norm": _check_quadrature_norm,
    "quadrature-refinement": _check_quadrature_refinement,
    "conjugate-derivatives": _check_conjugate_derivatives,
    "conjugate-sup": _check_conjugate_sup,
    "convolution-identity": _check_convolution,
    "chain-rule": _check_chain_rule,
    "optimality": _check_optimality,
    "parametrization-equivalence": _check_parametrization,
    "residual-slope": _check_residual_slope,
    "residual-slope-negctl": _check_residual_slope_negctl,
    "residual-slope-laplacian": _check_residual_slope_laplacian,
    "regularizer-limit": _check_regularizer_limit,
}


def run_checks(names=None, grid: QuadGrid | None = None,
               mc_draws: int = 1_000_000, seed: int = 0):
    """Run the named checks (all by default); returns a list of CheckResult."""
    if grid is None:
        grid = QuadGrid()
    if names is None:
        names = list(CHECKS)
    results = []
    for name in names:
        if name not in CHECKS:
            raise KeyError(f"unknown check {name!r}")
        results.extend(CHECKS[name](grid, mc_draws, seed))
    return results
