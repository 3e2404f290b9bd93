"""Minimum phi-divergence estimation under linear constraints.

The estimator minimizes ``D_phi(n, m(theta))`` over ``theta`` subject to
``L.T @ m(theta) = d``, where ``m(theta) = exp(X @ theta)``.  Two solver
paths are used:

* a damped Newton iteration on the KKT system of the Lagrangian, with
  exact first derivatives, a curvature-based Hessian block and
  step-halving on the residual norm (the generic path), and
* for saturated designs (``t == k``) with a power-family generator, a
  dual Newton iteration: cellwise stationarity inverts in closed form,
  ``m_i = n_i * (1 + (lam+1) * s_i) ** (-1/(lam+1))`` with
  ``s = L @ mu``, leaving a small strictly concave maximization in the
  multipliers alone.  This path is both faster and markedly more robust
  for marginal models; when it fails to converge the generic path is
  tried before giving up.

Zero observed cells are admissible whenever ``phi(0)`` is finite (for
the power family, ``lam > -1``); otherwise the objective is infinite for
every parameter value and the fit raises ``InfeasibleObjectiveError``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .divergence import LAMBDA_SWITCH, PhiFunction, divergence
from .errors import (DegenerateConstraintsError, DomainError,
                     InfeasibleObjectiveError, SpecValidationError)
from .model import LmlcSpec, _as_counts_vector, matrix_rank, validate_spec

_ETA_CLIP = 500.0
_TINY_MEAN = 1e-300


@dataclass(frozen=True)
class FitOptions:
    """Solver controls; the defaults suit tables with tens of cells."""

    max_iterations: int = 100
    kkt_tolerance: float = 1e-8
    step_halving_max: int = 30
    zero_cell_smoothing: float = 0.5

    def __post_init__(self):
        if (self.max_iterations <= 0 or self.kkt_tolerance <= 0
                or self.step_halving_max <= 0 or self.zero_cell_smoothing <= 0):
            raise DomainError("all fit options must be positive")


@dataclass(frozen=True)
class FitResult:
    """Outcome of a constrained minimum phi-divergence fit.

    ``m_hat`` is ``exp(X @ theta_hat)`` by construction.  ``converged``
    is False whenever the solver exhausted its iterations; such results
    are never silently passed off as successes.
    """

    spec: LmlcSpec
    phi: PhiFunction
    theta_hat: np.ndarray
    m_hat: np.ndarray
    multipliers: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float


@dataclass(frozen=True)
class AsymptoticInfo:
    """Large-sample matrices of the constrained estimator at a parameter point.

    ``fisher`` is ``X' D X`` with ``D = diag(m*)``, ``b_matrix`` is
    ``X' D L``, ``h_matrix`` the asymptotic covariance of the scaled
    parameter estimate, and ``sigma = D X H X' D`` that of the scaled
    fitted means.  ``m_star`` holds the normalized means used for ``D``.
    """

    fisher: np.ndarray
    b_matrix: np.ndarray
    h_matrix: np.ndarray
    sigma: np.ndarray
    m_star: np.ndarray


def _psi_power(lam: float, u: np.ndarray) -> np.ndarray:
    """phi(u) - u*phi'(u) for the power family: (1 - u**(lam+1)) / (lam+1)."""
    if abs(lam + 1.0) < LAMBDA_SWITCH:
        with np.errstate(divide="ignore"):
            return -np.log(u)
    with np.errstate(over="ignore"):
        return (1.0 - u ** (lam + 1.0)) / (lam + 1.0)


def _psi_generic(phi: PhiFunction, u: np.ndarray) -> np.ndarray:
    zero = u == 0.0
    safe = np.where(zero, 1.0, u)
    out = phi.fn(safe) - safe * phi.deriv(safe)
    return np.where(zero, float(phi.fn(0.0)), out)


def _curvature_weight(phi: PhiFunction, u: np.ndarray) -> np.ndarray:
    """u**2 * phi''(u), the Gauss-Newton weight; u**(lam+1) for the power family."""
    if phi.lam is not None:
        with np.errstate(over="ignore"):
            return u ** (phi.lam + 1.0)
    if phi.second_deriv is not None:
        return u * u * phi.second_deriv(u)
    return np.full_like(u, phi.curvature_at_one)


def _psi(phi: PhiFunction, u: np.ndarray) -> np.ndarray:
    if phi.lam is not None:
        return _psi_power(phi.lam, u)
    return _psi_generic(phi, u)


class _Problem:
    """Precomputed pieces shared by the solver paths for one fit."""

    def __init__(self, spec: LmlcSpec, nvec: np.ndarray, phi: PhiFunction):
        self.X = spec.X
        self.L = spec.L
        self.d = spec.d(nvec)
        self.n = nvec
        self.phi = phi
        self.k, self.t = spec.X.shape
        self.ncon = self.L.shape[1]
        self.d_scale = 1.0 + (np.max(np.abs(self.d)) if self.d.size else 0.0)

    def residual(self, theta, mu):
        # far-out trial points can overflow; the caller's line search
        # rejects non-finite residuals, so arithmetic warnings are muted
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            m = np.exp(np.clip(self.X @ theta, -_ETA_CLIP, _ETA_CLIP))
            u = np.where(m > 0, self.n / m, 0.0)
            v = _psi(self.phi, u)
            if self.ncon:
                v = v + self.L @ mu
                r_mu = self.L.T @ m - self.d
            else:
                r_mu = np.zeros(0)
            return self.X.T @ (m * v), r_mu, m, u, v

    def scaled_norm(self, r_theta, r_mu):
        feas = np.max(np.abs(r_mu)) / self.d_scale if r_mu.size else 0.0
        return max(np.max(np.abs(r_theta)), feas)


def _solve_kkt(problem: _Problem, options: FitOptions):
    """Damped Newton on the stationarity/feasibility system."""
    X, L, n = problem.X, problem.L, problem.n
    t, ncon = problem.t, problem.ncon
    theta = np.linalg.lstsq(
        X, np.log(n + options.zero_cell_smoothing * (n == 0)), rcond=None)[0]
    mu = np.zeros(ncon)
    r_theta, r_mu, m, u, v = problem.residual(theta, mu)
    for iteration in range(options.max_iterations):
        if problem.scaled_norm(r_theta, r_mu) <= options.kkt_tolerance:
            return theta, mu, iteration, True
        with np.errstate(over="ignore", invalid="ignore"):
            w_curv = _curvature_weight(problem.phi, u)
        w_curv = np.where(np.isfinite(w_curv), w_curv, 0.0)
        rhs = -np.concatenate([r_theta, r_mu])
        delta = None
        # weight fallback: exact Jacobian block, then Gauss-Newton, then
        # Fisher scoring; escalating ridge inside each
        for weights in (m * (w_curv + v), m * w_curv, m):
            if not np.all(np.isfinite(weights)):
                continue
            blocks = X.T @ (weights[:, None] * X)
            if ncon:
                cross = X.T @ (m[:, None] * L)
                kkt = np.block([[blocks, cross],
                                [cross.T, np.zeros((ncon, ncon))]])
            else:
                kkt = blocks
            ridge = 0.0
            for _ in range(6):
                try:
                    candidate = np.linalg.solve(
                        kkt + ridge * np.eye(kkt.shape[0]), rhs)
                except np.linalg.LinAlgError:
                    candidate = None
                if candidate is not None and np.all(np.isfinite(candidate)):
                    delta = candidate
                    break
                ridge = max(ridge * 100.0, 1e-10 * max(1.0, np.max(np.abs(kkt))))
            if delta is not None:
                break
        if delta is None:
            return theta, mu, iteration, False
        base = np.sqrt(np.sum(r_theta ** 2) + np.sum(r_mu ** 2))
        step = 1.0
        accepted = False
        for _ in range(options.step_halving_max):
            trial_theta = theta + step * delta[:t]
            trial_mu = mu + step * delta[t:]
            r_theta2, r_mu2, m2, u2, v2 = problem.residual(trial_theta, trial_mu)
            with np.errstate(over="ignore", invalid="ignore"):
                trial = np.sqrt(np.sum(r_theta2 ** 2) + np.sum(r_mu2 ** 2))
            if np.isfinite(trial) and trial < (1.0 - 1e-4 * step) * base:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return theta, mu, iteration, False
        theta, mu = trial_theta, trial_mu
        r_theta, r_mu, m, u, v = r_theta2, r_mu2, m2, u2, v2
    return theta, mu, options.max_iterations, \
        problem.scaled_norm(r_theta, r_mu) <= options.kkt_tolerance


def _solve_saturated_dual(problem: _Problem, options: FitOptions):
    """Concave dual maximization for saturated designs with a power generator.

    Returns ``(m, mu, iterations, converged)`` or ``None`` when the line
    search stalls (boundary-degenerate zero-cell configurations); the
    caller then falls back to the generic path.
    """
    lam = problem.phi.lam
    L, d, n = problem.L, problem.d, problem.n
    ncon = problem.ncon
    lp1 = lam + 1.0
    pos = n > 0

    def evaluate(mu):
        s = L @ mu
        if abs(lp1) < LAMBDA_SWITCH:
            m = np.where(pos, n * np.exp(-s), 0.0)
            dual = np.sum(n[pos] * (1.0 - np.exp(-s[pos]))) - mu @ d
            return dual, m, -m
        z = 1.0 + lp1 * s
        if np.any(z[pos] <= 0.0):
            return None, None, None
        zp = np.where(pos, z, 1.0)
        m = np.where(pos, n * zp ** (-1.0 / lp1), 0.0)
        dm = np.where(pos, -n * zp ** (-1.0 / lp1 - 1.0), 0.0)
        if abs(lam) < LAMBDA_SWITCH:
            dual = np.sum(n[pos] * np.log(zp[pos])) - mu @ d
        else:
            dual = np.sum(n[pos] * (zp[pos] ** (lam / lp1) - 1.0)) / lam - mu @ d
        return dual, m, dm

    def zero_cells_optimal(mu):
        # keeping a zero fitted cell at zero is optimal only while its
        # reduced cost 1 + (lam+1) * s_i stays nonnegative; otherwise the
        # true optimum carries mass there and the generic path must decide
        if np.all(pos) or abs(lp1) < LAMBDA_SWITCH:
            return True
        slack = 1.0 + lp1 * (L @ mu)[~pos]
        return bool(np.all(slack >= -1e-9))

    mu = np.zeros(ncon)
    dual, m, dm = evaluate(mu)
    for iteration in range(options.max_iterations):
        gradient = L.T @ m - d
        if np.max(np.abs(gradient)) <= options.kkt_tolerance * problem.d_scale:
            if not zero_cells_optimal(mu):
                return None
            return m, mu, iteration, True
        hessian = L.T @ (dm[:, None] * L)       # negative semidefinite
        ridge = 1e-12 * max(1.0, np.max(np.abs(hessian)))
        delta = None
        for _ in range(8):
            try:
                candidate = np.linalg.solve(hessian - ridge * np.eye(ncon), -gradient)
            except np.linalg.LinAlgError:
                candidate = None
            if (candidate is not None and np.all(np.isfinite(candidate))
                    and gradient @ candidate > 0.0):
                delta = candidate
                break
            ridge *= 1e3
        if delta is None:
            delta = gradient.copy()             # steepest ascent
        ascent = gradient @ delta
        step = 1.0
        if abs(lp1) >= LAMBDA_SWITCH:
            # fraction-to-boundary: keep 1 + (lam+1) * s positive on support
            z_cur = 1.0 + lp1 * (L @ mu)
            dz = lp1 * (L @ delta)
            shrinking = pos & (dz < 0)
            if np.any(shrinking):
                step = min(1.0, 0.99 * np.min(-z_cur[shrinking] / dz[shrinking]))
        accepted = False
        for _ in range(60):
            trial = evaluate(mu + step * delta)
            if trial[0] is not None and trial[0] >= dual + 1e-4 * step * ascent:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            return None
        mu = mu + step * delta
        dual, m, dm = trial
    gradient = L.T @ m - d
    if (np.max(np.abs(gradient)) <= options.kkt_tolerance * problem.d_scale
            and zero_cells_optimal(mu)):
        return m, mu, options.max_iterations, True
    return None


def fit_core(spec: LmlcSpec, nvec: np.ndarray, phi: PhiFunction,
             options: FitOptions) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, bool]:
    """Solver dispatch without validation; returns (theta, m, mu, iters, ok).

    Used directly by the simulation harness, which validates its model
    specs once up front rather than per replicate.
    """
    problem = _Problem(spec, nvec, phi)
    if problem.t == problem.k and phi.lam is not None and problem.ncon:
        dual = _solve_saturated_dual(problem, options)
        if dual is not None:
            m, mu, iterations, ok = dual
            theta = np.linalg.solve(spec.X, np.log(np.maximum(m, _TINY_MEAN)))
            return theta, np.exp(spec.X @ theta), mu, iterations, ok
    theta, mu, iterations, ok = _solve_kkt(problem, options)
    m = np.exp(np.clip(spec.X @ theta, -_ETA_CLIP, _ETA_CLIP))
    return theta, m, mu, iterations, ok


def fit(spec: LmlcSpec, n, phi: PhiFunction,
        options: Optional[FitOptions] = None) -> FitResult:
    """Constrained minimum phi-divergence fit of ``spec`` to counts ``n``.

    Raises ``SpecValidationError`` for invalid specs, ``DomainError`` for
    empty fixed strata, and ``InfeasibleObjectiveError`` when the
    objective is identically infinite (``phi(0) = inf`` with a zero
    observed cell).  Non-convergence is reported through the
    ``converged`` flag, never masked.
    """
    options = options or FitOptions()
    nvec = _as_counts_vector(n, spec.k)
    if np.any(nvec < 0):
        raise DomainError("counts must be nonnegative")
    violations = validate_spec(spec, nvec)
    if violations:
        raise SpecValidationError("; ".join(violations))
    if spec.c >= 1 and np.any(spec.sampling.fixed_totals(nvec) <= 0):
        raise DomainError("every fixed subtable total must be positive")
    if np.any(nvec == 0) and not np.isfinite(phi(0.0)):
        raise InfeasibleObjectiveError(
            "phi(0) is infinite and the table has zero cells: the objective "
            "is infinite for every parameter value")
    theta, m, mu, iterations, converged = fit_core(spec, nvec, phi, options)
    problem = _Problem(spec, nvec, phi)
    r_theta, r_mu, *_ = problem.residual(theta, mu)
    return FitResult(
        spec=spec,
        phi=phi,
        theta_hat=theta,
        m_hat=m,
        multipliers=mu,
        objective=divergence(nvec, m, phi),
        iterations=iterations,
        converged=converged,
        kkt_residual=problem.scaled_norm(r_theta, r_mu),
    )


def asymptotics(spec: LmlcSpec, theta, N: float) -> AsymptoticInfo:
    """Large-sample matrices at ``theta`` with normalization ``N``.

    ``m_star`` is ``exp(X @ theta) / N``.  Without constraints the
    covariance of the scaled estimator is the inverse weighted Gram
    matrix; each constraint column removes variance along its direction,
    so ``h_matrix @ b_matrix`` vanishes.
    """
    if N <= 0:
        raise DomainError("N must be positive")
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != spec.t or not np.all(np.isfinite(theta)):
        raise DomainError("theta must be finite with the design's width")
    m_star = np.exp(spec.X @ theta) / N
    weighted = m_star[:, None] * spec.X
    fisher = spec.X.T @ weighted
    fisher_inv = np.linalg.inv(fisher)
    L = spec.L
    b_matrix = spec.X.T @ (m_star[:, None] * L)
    if L.shape[1] == 0:
        h_matrix = fisher_inv
    else:
        middle = b_matrix.T @ fisher_inv @ b_matrix
        if matrix_rank(middle) < L.shape[1]:
            raise DegenerateConstraintsError(
                "constraint directions are degenerate at this parameter point")
        correction = fisher_inv @ b_matrix @ np.linalg.solve(
            middle, b_matrix.T @ fisher_inv)
        h_matrix = fisher_inv - correction
    h_matrix = (h_matrix + h_matrix.T) / 2.0
    scaled = m_star[:, None] * spec.X
    sigma = scaled @ h_matrix @ scaled.T
    sigma = (sigma + sigma.T) / 2.0
    return AsymptoticInfo(fisher=fisher, b_matrix=b_matrix,
                          h_matrix=h_matrix, sigma=sigma, m_star=m_star)


def h_matrix_partitioned(spec: LmlcSpec, theta, N: float) -> np.ndarray:
    """Covariance of the scaled estimator when the design leads with ``L``.

    Requires ``X[:, :c+r] == L`` exactly; the result is
    ``inv(X' D X)`` minus ``inv(L' D L)`` embedded in the leading block,
    and must agree with :func:`asymptotics` to tight tolerance.
    """
    L = spec.L
    ncon = L.shape[1]
    if spec.X.shape[1] < ncon or not np.allclose(spec.X[:, :ncon], L, atol=1e-12):
        raise DomainError("design matrix is not arranged as (L, W)")
    if N <= 0:
        raise DomainError("N must be positive")
    theta = np.asarray(theta, dtype=float).reshape(-1)
    m_star = np.exp(spec.X @ theta) / N
    h_matrix = np.linalg.inv(spec.X.T @ (m_star[:, None] * spec.X))
    if ncon:
        h_matrix[:ncon, :ncon] -= np.linalg.inv(L.T @ (m_star[:, None] * L))
    return (h_matrix + h_matrix.T) / 2.0
