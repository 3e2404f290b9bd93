"""Divergence-based test statistics, nested testing, and chi-square numerics.

Goodness of fit of a constrained loglinear model uses the statistic
``(2 / phi1''(1)) * D_phi1(n, m_hat)`` where ``m_hat`` comes from a fit
with a possibly different generator ``phi2``; the classical deviance and
Pearson statistics are the ``lam1 = 0`` and ``lam1 = 1`` members with
maximum likelihood fits.  Under the null the statistic is asymptotically
chi-squared with ``k - t + r`` degrees of freedom, the trace of the
idempotent covariance projector of the standardized residual vector
(computed here as :func:`tstar`); for unconstrained models this reduces
to the familiar ``k - t``.

Nested models are compared either through the divergence between the
two fitted mean vectors (the ``T`` form, the default) or through the
difference of the two goodness-of-fit divergences (the ``S`` form); the
two agree for the Kullback generator and differ otherwise.  Degrees of
freedom are ``t_b - t_{b+1} - r_b + r_{b+1}``.

The chi-square distribution functions are implemented from scratch via
the regularized lower incomplete gamma function (series expansion below
``s + 1``, continued fraction above) so the package has no runtime
dependency on a statistics library; tests cross-check them against an
independent oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .divergence import PhiFunction, divergence
from .errors import DomainError, InternalConsistencyError
from .estimate import FitOptions, FitResult, asymptotics, fit
from .model import LmlcSpec, _as_counts_vector, is_nested

# ---------------------------------------------------------------------------
# chi-square numerics


def _gamma_p_series(s: float, x: float) -> float:
    # lower regularized gamma by power series, for x < s + 1
    term = 1.0 / s
    total = term
    for n in range(1, 10000):
        term *= x / (s + n)
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + s * math.log(x) - math.lgamma(s))


def _gamma_q_continued_fraction(s: float, x: float) -> float:
    # upper regularized gamma by Lentz's continued fraction, for x >= s + 1
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + s * math.log(x) - math.lgamma(s))


def regularized_gamma_p(s: float, x: float) -> float:
    """Regularized lower incomplete gamma P(s, x) for s > 0, x >= 0."""
    if s <= 0:
        raise DomainError("shape parameter must be positive")
    if x < 0:
        raise DomainError("x must be nonnegative")
    if x == 0.0:
        return 0.0
    if x < s + 1.0:
        return min(1.0, _gamma_p_series(s, x))
    return max(0.0, 1.0 - _gamma_q_continued_fraction(s, x))


def chisq_cdf(x: float, df: int) -> float:
    """Chi-square CDF with ``df`` degrees of freedom."""
    if df <= 0:
        raise DomainError("degrees of freedom must be positive")
    if x < 0:
        raise DomainError("x must be nonnegative")
    return regularized_gamma_p(df / 2.0, x / 2.0)


def _chisq_pdf(x: float, df: int) -> float:
    if x <= 0:
        return 0.0
    half = df / 2.0
    return math.exp((half - 1.0) * math.log(x) - x / 2.0
                    - half * math.log(2.0) - math.lgamma(half))


def chisq_quantile(p: float, df: int) -> float:
    """Inverse chi-square CDF, accurate to |cdf(q) - p| <= 1e-10.

    Bracketed bisection followed by two Newton polish steps.
    """
    if df <= 0:
        raise DomainError("degrees of freedom must be positive")
    if not 0.0 < p < 1.0:
        raise DomainError("p must lie strictly between 0 and 1")
    lo, hi = 0.0, df + 10.0 * math.sqrt(2.0 * df) + 10.0
    while chisq_cdf(hi, df) < p:
        hi *= 2.0
        if hi > 1e300:
            raise DomainError("quantile bracket overflow")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chisq_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    q = 0.5 * (lo + hi)
    for _ in range(2):
        density = _chisq_pdf(q, df)
        if density <= 0:
            break
        q -= (chisq_cdf(q, df) - p) / density
        q = min(max(q, lo - 1.0), hi + 1.0)
        q = max(q, 0.0)
    return q


# ---------------------------------------------------------------------------
# reports


@dataclass(frozen=True)
class TestReport:
    """One hypothesis test: statistic, reference distribution, decision."""

    kind: str
    statistic: float
    df: int
    p_value: float
    level_used: float
    reject: bool
    lambda1: float
    lambda2: float
    infinite_statistic: bool = False

    def summary(self) -> str:
        stat = "inf" if self.infinite_statistic else f"{self.statistic:.4f}"
        return (f"{self.kind}: statistic={stat} df={self.df} "
                f"p={self.p_value:.4f} "
                f"{'rejected' if self.reject else 'not rejected'} "
                f"at level {self.level_used:.4g}")


@dataclass(frozen=True)
class SequenceResult:
    """Outcome of sequentially testing a decreasing chain of models.

    Testing proceeds while nulls are accepted; ``b_star`` is the 1-based
    index of the first rejected test, or the chain length ``B`` when no
    test rejects.  Each executed test ran at level
    ``1 - (1 - alpha)**(1/(B-1))`` so the chain has overall size alpha.
    """

    per_test: list[TestReport]
    b_star: int
    per_test_level: float


@dataclass(frozen=True)
class ProjectorBundle:
    """Projector matrices behind the chi-square limits.

    ``tstar`` is the asymptotic covariance of the standardized residual
    (or fitted-mean difference) vector; it is symmetric and idempotent
    and its trace equals the degrees of freedom.  ``a0`` is the
    projector onto the scaled sampling-constraint columns.  For nested
    pairs, ``k_b`` and ``k_b1`` are the two per-model projections whose
    difference is ``tstar``.
    """

    a0: np.ndarray
    tstar: np.ndarray
    k_b: Optional[np.ndarray] = None
    k_b1: Optional[np.ndarray] = None


def _phi_lambda(phi: PhiFunction) -> float:
    return float("nan") if phi.lam is None else float(phi.lam)


# ---------------------------------------------------------------------------
# statistics

def gof_statistic(n, fit_result: FitResult, phi1: PhiFunction) -> float:
    """Goodness-of-fit statistic (2/phi1''(1)) * D_phi1(n, m_hat)."""
    if not fit_result.converged:
        raise DomainError("goodness of fit requires a converged fit")
    nvec = _as_counts_vector(n, fit_result.spec.k)
    return (2.0 / phi1.curvature_at_one) * divergence(nvec, fit_result.m_hat, phi1)


def nested_statistic_T(fit_b: FitResult, fit_b1: FitResult,
                       phi1: PhiFunction) -> float:
    """Nested-test statistic (2/phi1''(1)) * D_phi1(m_hat_outer, m_hat_inner)."""
    if not (fit_b.converged and fit_b1.converged):
        raise DomainError("nested testing requires converged fits")
    if not is_nested(fit_b1.spec, fit_b.spec):
        raise DomainError("the second fit's model is not nested in the first's")
    return (2.0 / phi1.curvature_at_one) * divergence(fit_b.m_hat, fit_b1.m_hat, phi1)


def nested_statistic_S(n, fit_b: FitResult, fit_b1: FitResult,
                       phi: PhiFunction) -> float:
    """Difference-of-divergences form, requiring both fits to use ``phi``."""
    if not (fit_b.converged and fit_b1.converged):
        raise DomainError("nested testing requires converged fits")
    if not is_nested(fit_b1.spec, fit_b.spec):
        raise DomainError("the second fit's model is not nested in the first's")
    for used in (fit_b.phi, fit_b1.phi):
        same = (used is phi) or (used.lam is not None and phi.lam is not None
                                 and used.lam == phi.lam)
        if not same:
            raise DomainError("the S form requires both fits to use the "
                              "same generator as the statistic")
    nvec = _as_counts_vector(n, fit_b.spec.k)
    return (2.0 / phi.curvature_at_one) * (
        divergence(nvec, fit_b1.m_hat, phi) - divergence(nvec, fit_b.m_hat, phi))


# ---------------------------------------------------------------------------
# projector algebra

def _k_matrix(X: np.ndarray, L: np.ndarray, m_star: np.ndarray) -> np.ndarray:
    """D^(1/2) X H X' D^(1/2) for the model (X, L) at normalized means m_star."""
    root = np.sqrt(m_star)
    weighted = m_star[:, None] * X
    fisher = X.T @ weighted
    fisher_inv = np.linalg.inv(fisher)
    if L.shape[1]:
        b = X.T @ (m_star[:, None] * L)
        h = fisher_inv - fisher_inv @ b @ np.linalg.solve(
            b.T @ fisher_inv @ b, b.T @ fisher_inv)
    else:
        h = fisher_inv
    scaled = root[:, None] * X
    out = scaled @ h @ scaled.T
    return (out + out.T) / 2.0


def _a0_matrix(spec: LmlcSpec, m_star: np.ndarray) -> np.ndarray:
    x0 = spec.sampling.x0_matrix(spec.k)
    if x0.shape[1] == 0:
        return np.zeros((spec.k, spec.k))
    root = np.sqrt(m_star)
    scaled = root[:, None] * x0
    out = scaled @ np.linalg.solve(scaled.T @ scaled, scaled.T)
    return (out + out.T) / 2.0


def tstar(spec: LmlcSpec, theta, N: float) -> ProjectorBundle:
    """Residual covariance projector of the goodness-of-fit statistic.

    ``tstar = I - A0 - D^(1/2) X H X' D^(1/2)``; its trace equals the
    degrees of freedom ``k - t + r``.
    """
    info = asymptotics(spec, theta, N)
    a0 = _a0_matrix(spec, info.m_star)
    root = np.sqrt(info.m_star)
    scaled = root[:, None] * spec.X
    core = scaled @ info.h_matrix @ scaled.T
    mat = np.eye(spec.k) - a0 - core
    return ProjectorBundle(a0=a0, tstar=(mat + mat.T) / 2.0)


def tstar_nested(spec_b: LmlcSpec, spec_b1: LmlcSpec, theta,
                 N: float) -> ProjectorBundle:
    """Projector for a nested pair, evaluated at the inner model's ``theta``.

    ``tstar = K_b - K_{b+1}`` where each ``K`` projects onto the scaled
    design columns orthogonal to the scaled constraint columns.
    """
    if not is_nested(spec_b1, spec_b):
        raise DomainError("second model must be nested within the first")
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != spec_b1.t:
        raise DomainError("theta must parameterize the inner model")
    m_star = np.exp(spec_b1.X @ theta) / N
    k_b = _k_matrix(spec_b.X, spec_b.L, m_star)
    k_b1 = _k_matrix(spec_b1.X, spec_b1.L, m_star)
    mat = k_b - k_b1
    a0 = _a0_matrix(spec_b1, m_star)
    return ProjectorBundle(a0=a0, tstar=(mat + mat.T) / 2.0, k_b=k_b, k_b1=k_b1)


# ---------------------------------------------------------------------------
# tests

def gof_df(spec: LmlcSpec) -> int:
    """Degrees of freedom of the goodness-of-fit test: k - t + r."""
    return spec.k - spec.t + spec.r


def _check_df_against_trace(spec: LmlcSpec, fit_result: FitResult, df: int):
    # the analytic df must match the trace of the residual projector; skip
    # at boundary fits (zero fitted cells), where the projector is undefined
    if np.any(fit_result.m_hat <= 0) or not np.all(np.isfinite(fit_result.theta_hat)):
        return
    if np.min(fit_result.m_hat) < 1e-12 * np.max(fit_result.m_hat):
        return
    bundle = tstar(spec, fit_result.theta_hat, float(np.sum(fit_result.m_hat)))
    trace = float(np.trace(bundle.tstar))
    if abs(trace - df) > 1e-6:
        raise InternalConsistencyError(
            f"analytic df {df} does not match projector trace {trace:.8f}")


def _decision(kind: str, statistic: float, df: int, level: float,
              phi1: PhiFunction, phi2: PhiFunction) -> TestReport:
    infinite = not np.isfinite(statistic)
    if infinite:
        p_value, reject = 0.0, True
    else:
        p_value = 1.0 - chisq_cdf(statistic, df)
        reject = statistic > chisq_quantile(1.0 - level, df)
    return TestReport(kind=kind, statistic=statistic, df=df, p_value=p_value,
                      level_used=level, reject=reject,
                      lambda1=_phi_lambda(phi1), lambda2=_phi_lambda(phi2),
                      infinite_statistic=infinite)


def gof_test(spec: LmlcSpec, n, phi1: PhiFunction, phi2: PhiFunction,
             alpha: float = 0.05, options: Optional[FitOptions] = None,
             check_trace: bool = True) -> TestReport:
    """Goodness-of-fit test of ``spec`` against the unrestricted alternative.

    Fits with ``phi2``, evaluates the statistic with ``phi1``, and
    refers it to chi-square with ``k - t + r`` degrees of freedom.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError("alpha must lie in (0, 1)")
    fit_result = fit(spec, n, phi2, options)
    if not fit_result.converged:
        raise DomainError("model fit did not converge")
    statistic = gof_statistic(n, fit_result, phi1)
    df = gof_df(spec)
    if check_trace:
        _check_df_against_trace(spec, fit_result, df)
    return _decision("goodness_of_fit", statistic, df, alpha, phi1, phi2)


def nested_df(spec_b: LmlcSpec, spec_b1: LmlcSpec) -> int:
    """Degrees of freedom for testing the inner model within the outer."""
    return spec_b.t - spec_b1.t - spec_b.r + spec_b1.r


def nested_test(spec_b: LmlcSpec, spec_b1: LmlcSpec, n,
                phi1: PhiFunction, phi2: PhiFunction, level: float = 0.05,
                statistic: str = "T",
                options: Optional[FitOptions] = None) -> TestReport:
    """Test the inner model ``spec_b1`` within the outer model ``spec_b``.

    ``statistic="T"`` (default) uses the divergence between the fitted
    means; ``statistic="S"`` uses the difference of goodness-of-fit
    divergences and requires ``phi1`` and ``phi2`` to coincide.
    """
    if not 0.0 < level < 1.0:
        raise DomainError("level must lie in (0, 1)")
    if not is_nested(spec_b1, spec_b):
        raise DomainError("second model must be nested within the first")
    fit_b = fit(spec_b, n, phi2, options)
    fit_b1 = fit(spec_b1, n, phi2, options)
    if not (fit_b.converged and fit_b1.converged):
        raise DomainError("model fit did not converge")
    if statistic == "T":
        value = nested_statistic_T(fit_b, fit_b1, phi1)
        kind = "nested_T"
    elif statistic == "S":
        value = nested_statistic_S(n, fit_b, fit_b1, phi1)
        kind = "nested_S"
    else:
        raise DomainError("statistic must be 'T' or 'S'")
    return _decision(kind, value, nested_df(spec_b, spec_b1), level, phi1, phi2)


def sequential_test(chain: list[LmlcSpec], n, phi1: PhiFunction,
                    phi2: PhiFunction, alpha: float = 0.05,
                    statistic: str = "T",
                    options: Optional[FitOptions] = None) -> SequenceResult:
    """Sequentially test a decreasing chain ``chain[b+1] within chain[b]``.

    Each test runs at level ``1 - (1-alpha)**(1/(B-1))``, which gives the
    whole sequence overall size ``alpha``; testing stops at the first
    rejection.  The executed reports are returned in order.
    """
    B = len(chain)
    if B < 2:
        raise DomainError("a chain needs at least two models")
    for outer, inner in zip(chain, chain[1:]):
        if not is_nested(inner, outer):
            raise DomainError("chain is not nested in decreasing order")
    per_test_level = 1.0 - (1.0 - alpha) ** (1.0 / (B - 1))
    reports: list[TestReport] = []
    b_star = B
    for b in range(B - 1):
        report = nested_test(chain[b], chain[b + 1], n, phi1, phi2,
                             level=per_test_level, statistic=statistic,
                             options=options)
        reports.append(report)
        if report.reject:
            b_star = b + 1
            break
    return SequenceResult(per_test=reports, b_star=b_star,
                          per_test_level=per_test_level)
