"""f-divergence catalog, GAN objectives and the gradient-norm regularizers.

Every divergence bundles its convex conjugate with first/second derivatives
and the derivative of the primal generator, which gives the optimal
statistic as a function of the density ratio.  The JS case is also provided
in the logit parametrization used by the training loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class DomainError(ValueError):
    """Statistic value outside the admissible domain of the conjugate."""


def sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    e = np.exp(-np.abs(t))
    return np.where(t >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(t):
    t = np.asarray(t, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(t))) + np.maximum(t, 0.0)


def log_sigmoid(t):
    return -softplus(-np.asarray(t, dtype=np.float64))


@dataclass(frozen=True)
class FDivergence:
    """A divergence D_f described through its Fenchel conjugate.

    ``conj`` is f*, ``conj_d1``/``conj_d2`` its derivatives, ``gen`` the
    primal generator f (used for the numeric sup-check) and ``gen_d1`` = f',
    which maps a density ratio to the optimal statistic.
    ``statistic_domain`` is the open interval of admissible statistic values.
    """

    name: str
    conj: Callable
    conj_d1: Callable
    conj_d2: Callable
    gen: Callable
    gen_d1: Callable
    statistic_domain: tuple[float, float] = (-np.inf, np.inf)

    def in_domain(self, t) -> bool:
        t = np.asarray(t)
        lo, hi = self.statistic_domain
        return bool(np.all(t > lo) and np.all(t < hi))

    def check_domain(self, t) -> None:
        if not self.in_domain(t):
            raise DomainError(
                f"statistic outside domain {self.statistic_domain} of {self.name}"
            )


@dataclass
class Batch:
    """A batch of points tagged with its origin distribution."""

    points: np.ndarray
    origin: str  # "data" or "generated"

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ValueError("batch must be a non-empty n x d matrix")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("batch contains non-finite entries")
        if self.origin not in ("data", "generated"):
            raise ValueError(f"unknown batch origin {self.origin!r}")

    def __len__(self):
        return self.points.shape[0]


def _js_conj(t):
    # -ln(1 - e^t) for t < 0, via expm1 to stay accurate near t = 0-
    return -np.log(-np.expm1(t))


def _js_conj_d1(t):
    # e^t / (1 - e^t) = 1 / (e^-t - 1)
    return 1.0 / np.expm1(-t)


def _js_conj_d2(t):
    d1 = _js_conj_d1(t)
    return d1 * (1.0 + d1)


def js_fdivergence() -> FDivergence:
    """Jensen-Shannon divergence in its Fenchel parametrization.

    The optimal statistic is ln(p/(p+q)); as a probability that is the
    Bayes-optimal discriminator p/(p+q).
    """
    return FDivergence(
        name="js",
        conj=_js_conj,
        conj_d1=_js_conj_d1,
        conj_d2=_js_conj_d2,
        gen=lambda u: u * np.log(u) - (1.0 + u) * np.log1p(u),
        gen_d1=lambda u: np.log(u) - np.log1p(u),
        statistic_domain=(-np.inf, 0.0),
    )


def kl_fdivergence() -> FDivergence:
    return FDivergence(
        name="kl",
        conj=lambda t: np.exp(t - 1.0),
        conj_d1=lambda t: np.exp(t - 1.0),
        conj_d2=lambda t: np.exp(t - 1.0),
        gen=lambda u: u * np.log(u),
        gen_d1=lambda u: np.log(u) + 1.0,
    )


def reverse_kl_fdivergence() -> FDivergence:
    return FDivergence(
        name="reverse-kl",
        conj=lambda t: -1.0 - np.log(-t),
        conj_d1=lambda t: -1.0 / t,
        conj_d2=lambda t: 1.0 / (t * t),
        gen=lambda u: -np.log(u),
        gen_d1=lambda u: -1.0 / u,
        statistic_domain=(-np.inf, 0.0),
    )


def pearson_chi2_fdivergence() -> FDivergence:
    # t > -2 keeps the maximizing ratio u = 1 + t/2 non-negative, where the
    # smooth closed form coincides with the Fenchel dual over ratios
    return FDivergence(
        name="pearson-chi2",
        conj=lambda t: t + 0.25 * t * t,
        conj_d1=lambda t: 1.0 + 0.5 * t,
        conj_d2=lambda t: np.full_like(np.asarray(t, dtype=np.float64), 0.5),
        gen=lambda u: (u - 1.0) ** 2,
        gen_d1=lambda u: 2.0 * (u - 1.0),
        statistic_domain=(-2.0, np.inf),
    )


def squared_hellinger_fdivergence() -> FDivergence:
    return FDivergence(
        name="squared-hellinger",
        conj=lambda t: t / (1.0 - t),
        conj_d1=lambda t: 1.0 / (1.0 - t) ** 2,
        conj_d2=lambda t: 2.0 / (1.0 - t) ** 3,
        gen=lambda u: (np.sqrt(u) - 1.0) ** 2,
        gen_d1=lambda u: 1.0 - 1.0 / np.sqrt(u),
        statistic_domain=(-np.inf, 1.0),
    )


def catalog() -> dict[str, FDivergence]:
    divs = [
        js_fdivergence(),
        kl_fdivergence(),
        reverse_kl_fdivergence(),
        pearson_chi2_fdivergence(),
        squared_hellinger_fdivergence(),
    ]
    return {d.name: d for d in divs}


def fgan_objective(psi_p, psi_q, div: FDivergence) -> float:
    """Variational objective  mean(psi on P) - mean(f* o psi on Q)."""
    psi_p = np.asarray(psi_p, dtype=np.float64)
    psi_q = np.asarray(psi_q, dtype=np.float64)
    div.check_domain(psi_q)
    return float(np.mean(psi_p) - np.mean(div.conj(psi_q)))


def omega_f(psi_q, gradsq_q, div: FDivergence) -> float:
    """Gradient-norm regularizer  mean over Q of (f*'' o psi) * ||grad psi||^2."""
    psi_q = np.asarray(psi_q, dtype=np.float64)
    gradsq_q = np.asarray(gradsq_q, dtype=np.float64)
    if psi_q.shape != gradsq_q.shape:
        raise ValueError("psi and gradient-norm batches differ in length")
    if np.any(gradsq_q < 0.0):
        raise ValueError("squared gradient norms must be non-negative")
    div.check_domain(psi_q)
    return float(np.mean(div.conj_d2(psi_q) * gradsq_q))


def js_objective(logits_p, logits_q) -> float:
    """JS-GAN objective  E_P[ln phi] + E_Q[ln(1-phi)]  in stable logit form."""
    logits_p = np.asarray(logits_p, dtype=np.float64)
    logits_q = np.asarray(logits_q, dtype=np.float64)
    return float(np.mean(log_sigmoid(logits_p)) + np.mean(log_sigmoid(-logits_q)))


def omega_js(logits_p, gradsq_p, logits_q, gradsq_q) -> float:
    """JS regularizer  E_P[(1-phi)^2 g] + E_Q[phi^2 g], g = ||grad logit||^2."""
    logits_p = np.asarray(logits_p, dtype=np.float64)
    logits_q = np.asarray(logits_q, dtype=np.float64)
    gradsq_p = np.asarray(gradsq_p, dtype=np.float64)
    gradsq_q = np.asarray(gradsq_q, dtype=np.float64)
    if logits_p.shape != gradsq_p.shape or logits_q.shape != gradsq_q.shape:
        raise ValueError("logit and gradient-norm batches differ in length")
    if np.any(gradsq_p < 0.0) or np.any(gradsq_q < 0.0):
        raise ValueError("squared gradient norms must be non-negative")
    wp = sigmoid(-logits_p) ** 2
    wq = sigmoid(logits_q) ** 2
    return float(np.mean(wp * gradsq_p) + np.mean(wq * gradsq_q))


def optimal_statistic(p_density, q_density, div: FDivergence):
    """psi*(x) = f'(p(x)/q(x)), the maximizer of the variational bound."""

    def psi_star(x):
        x = np.asarray(x, dtype=np.float64)
        p = np.asarray(p_density(x), dtype=np.float64)
        q = np.asarray(q_density(x), dtype=np.float64)
        if np.any(p <= 0.0) or np.any(q <= 0.0):
            raise ValueError("densities must be strictly positive")
        return div.gen_d1(p / q)

    return psi_star


def optimal_logit(log_p, log_q):
    """Bayes-optimal discriminator logit  ln p(x) - ln q(x)  (phi* = p/(p+q))."""

    def logit_star(x):
        x = np.asarray(x, dtype=np.float64)
        return np.asarray(log_p(x), dtype=np.float64) - np.asarray(log_q(x), dtype=np.float64)

    return logit_star


def js_output_map(t, eps: float = 1e-6):
    """Map a raw network output into the JS conjugate domain t < 0."""
    return -softplus(-np.asarray(t, dtype=np.float64)) - eps
