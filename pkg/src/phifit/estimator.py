"""Scikit-learn style front end for constrained minimum phi-divergence fits.

``MinimumPhiDivergence`` wraps :func:`phifit.estimate.fit` behind the
familiar ``fit`` / ``predict`` / ``get_params`` protocol so a model can
be cloned, grid-searched, or dropped into pipeline-style tooling.  The
"X" of ``fit`` is the observed table (a ``ContingencyTable``, a flat
count vector, or a count array matching the model's cell layout); there
is no ``y``.
"""

from __future__ import annotations

from typing import Optional, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .divergence import PhiFunction
from .errors import DomainError
from .estimate import FitOptions, asymptotics, fit
from .model import LmlcSpec
from .table import ContingencyTable


def as_count_vector(X, k: Optional[int] = None) -> np.ndarray:
    """Validation helper: coerce table-like input to a flat float vector.

    Accepts a ``ContingencyTable``, a flat sequence, or a count array of
    any shape; checks finiteness and nonnegativity, and the cell count
    when ``k`` is given.
    """
    if isinstance(X, ContingencyTable):
        vec = X.as_float()
    else:
        vec = np.asarray(X, dtype=float).reshape(-1)
    if vec.size == 0:
        raise DomainError("empty table")
    if not np.all(np.isfinite(vec)):
        raise DomainError("counts must be finite")
    if np.any(vec < 0):
        raise DomainError("counts must be nonnegative")
    if k is not None and vec.size != k:
        raise DomainError(f"expected {k} cells, got {vec.size}")
    return vec


class MinimumPhiDivergence(BaseEstimator):
    """Minimum phi-divergence estimator of a constrained loglinear model.

    Parameters
    ----------
    model : LmlcSpec
        The loglinear-with-linear-constraints model to fit.
    power : float or PhiFunction, default 0.0
        Index of the power-family generator (0 gives maximum
        likelihood), or a custom generator.
    max_iter, tol, step_halving_max, zero_cell_smoothing :
        Solver controls, see ``FitOptions``.

    Attributes (after ``fit``)
    --------------------------
    theta_ : fitted parameter vector.
    fitted_means_ : fitted expected cell counts, ``exp(X @ theta_)``.
    multipliers_ : Lagrange multipliers of the linear constraints.
    objective_ : attained divergence value.
    n_iter_ : iterations used.
    converged_ : whether the solver met its tolerance.
    """

    def __init__(self, model: Optional[LmlcSpec] = None,
                 power: Union[float, PhiFunction] = 0.0,
                 max_iter: int = 100, tol: float = 1e-8,
                 step_halving_max: int = 30,
                 zero_cell_smoothing: float = 0.5):
        self.model = model
        self.power = power
        self.max_iter = max_iter
        self.tol = tol
        self.step_halving_max = step_halving_max
        self.zero_cell_smoothing = zero_cell_smoothing

    def _phi(self) -> PhiFunction:
        if isinstance(self.power, PhiFunction):
            return self.power
        return PhiFunction.power(float(self.power))

    def _options(self) -> FitOptions:
        return FitOptions(max_iterations=self.max_iter,
                          kkt_tolerance=self.tol,
                          step_halving_max=self.step_halving_max,
                          zero_cell_smoothing=self.zero_cell_smoothing)

    def fit(self, X, y=None) -> "MinimumPhiDivergence":
        """Fit the model to the observed table ``X``; ``y`` is ignored."""
        if self.model is None:
            raise DomainError("a model spec is required")
        counts = as_count_vector(X, self.model.k)
        result = fit(self.model, counts, self._phi(), self._options())
        self.result_ = result
        self.theta_ = result.theta_hat
        self.fitted_means_ = result.m_hat
        self.multipliers_ = result.multipliers
        self.objective_ = result.objective
        self.n_iter_ = result.iterations
        self.converged_ = result.converged
        return self

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError("this estimator has not been fitted yet")

    def predict(self, X=None) -> np.ndarray:
        """Fitted expected cell counts (``X`` is accepted for API symmetry)."""
        self._check_fitted()
        return self.fitted_means_.copy()

    def score(self, X, y=None) -> float:
        """Negative scaled divergence between ``X`` and the fitted means."""
        self._check_fitted()
        from .inference import gof_statistic
        return -gof_statistic(as_count_vector(X, self.model.k),
                              self.result_, self._phi())

    def asymptotic_info(self, N: Optional[float] = None):
        """Large-sample matrices at the fitted parameter."""
        self._check_fitted()
        total = float(np.sum(self.fitted_means_)) if N is None else float(N)
        return asymptotics(self.model, self.theta_, total)
