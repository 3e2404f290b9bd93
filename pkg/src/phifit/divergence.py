"""Phi-divergences between nonnegative vectors.

A divergence generator is a convex differentiable function phi on
[0, inf) with phi(1) = phi'(1) = 0 and phi''(1) > 0.  The divergence
between nonnegative vectors ``a`` and ``b`` is ``sum(b_i * phi(a_i/b_i))``
with the boundary conventions

    0 * phi(0/0) == 0
    0 * phi(p/0) == p * lim_{u->inf} phi(u)/u

so a zero reference cell contributes nothing when the corresponding
``a`` entry is zero, and otherwise contributes through the slope of phi
at infinity (possibly +inf).  Infinities propagate as floating-point
``inf``; they are never raised as exceptions, so optimizers can treat
them as infeasible objective values.

The package ships the one-parameter power family indexed by ``lam``;
``lam = 0`` is the Kullback divergence and ``lam = 1`` half the Pearson
discrepancy.  Arbitrary generators can be supplied through
:class:`PhiFunction`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DomainError

# Switch to the analytic-limit branch this close to the removable
# singularities lam in {0, -1}; avoids catastrophic cancellation in the
# generic closed form.
LAMBDA_SWITCH = 1e-8


def phi_power(lam: float, x) -> float | np.ndarray:
    """Power-family generator ``phi_lam`` evaluated elementwise at ``x >= 0``.

    The generic closed form is ``(x**(lam+1) - x - lam*(x-1)) / (lam*(lam+1))``
    with the analytic limits ``x*log(x) - x + 1`` at ``lam = 0`` and
    ``-log(x) + x - 1`` at ``lam = -1``.  At ``x = 0`` the value is
    ``1/(lam+1)`` for ``lam > -1`` and ``+inf`` otherwise.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise DomainError("phi_power requires x >= 0")
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    zero = arr == 0.0
    safe = np.where(zero, 1.0, arr)
    if abs(lam) < LAMBDA_SWITCH:
        out = safe * np.log(safe) - safe + 1.0
        out[zero] = 1.0
    elif abs(lam + 1.0) < LAMBDA_SWITCH:
        out = -np.log(safe) + safe - 1.0
        out[zero] = np.inf
    else:
        out = (safe ** (lam + 1.0) - safe - lam * (safe - 1.0)) / (lam * (lam + 1.0))
        out[zero] = 1.0 / (lam + 1.0) if lam > -1.0 else np.inf
    return float(out[0]) if scalar else out


def phi_power_deriv(lam: float, x) -> float | np.ndarray:
    """First derivative of the power generator: ``(x**lam - 1)/lam`` (log at 0)."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    scalar = np.asarray(x).ndim == 0
    with np.errstate(divide="ignore"):
        if abs(lam) < LAMBDA_SWITCH:
            out = np.log(arr)
        else:
            out = (arr ** lam - 1.0) / lam
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class PhiFunction:
    """A divergence generator together with the data the fitter needs.

    Attributes
    ----------
    fn : callable
        Vectorized evaluation of phi on [0, inf).
    deriv : callable
        Vectorized first derivative phi'.
    curvature_at_one : float
        phi''(1), used to normalize test statistics; must be positive.
    ratio_slope : float
        lim_{u->inf} phi(u)/u, possibly ``inf``; drives the 0-denominator
        convention of the divergence.
    lam : float or None
        Power-family index when this generator belongs to the family,
        ``None`` for user-supplied generators.
    second_deriv : callable or None
        Vectorized phi'' when available; the fitter falls back to the
        constant curvature at 1 otherwise.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    curvature_at_one: float
    ratio_slope: float
    lam: Optional[float] = None
    second_deriv: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if not self.curvature_at_one > 0:
            raise DomainError("phi''(1) must be positive")

    @classmethod
    def power(cls, lam: float) -> "PhiFunction":
        """The power-family member with index ``lam``."""
        lam = float(lam)
        return cls(
            fn=lambda x, _l=lam: phi_power(_l, x),
            deriv=lambda x, _l=lam: phi_power_deriv(_l, x),
            curvature_at_one=1.0,
            ratio_slope=np.inf if lam >= 0 else -1.0 / lam,
            lam=lam,
            second_deriv=lambda x, _l=lam: np.asarray(x, dtype=float) ** (_l - 1.0),
        )

    def __call__(self, x):
        return self.fn(x)


def kullback_phi() -> PhiFunction:
    """The Kullback generator, i.e. the power family at ``lam = 0``."""
    return PhiFunction.power(0.0)


def _check_pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("divergence requires two 1-d vectors of equal length")
    if np.any(a < 0) or np.any(b < 0):
        raise DomainError("divergence requires nonnegative entries")
    return a, b


def divergence(a, b, phi: PhiFunction) -> float:
    """Phi-divergence ``sum(b_i * phi(a_i / b_i))`` with boundary conventions.

    Returns ``inf`` (never raises) when a zero entry of ``b`` meets a
    positive entry of ``a`` and phi grows superlinearly.
    """
    a, b = _check_pair(a, b)
    pos = b > 0
    out = 0.0
    if not np.all(pos):
        extra = a[~pos]
        mass = extra.sum()
        if mass > 0:
            if not np.isfinite(phi.ratio_slope):
                return float("inf")
            out += mass * phi.ratio_slope
    vals = b[pos] * phi(a[pos] / b[pos])
    return float(out + vals.sum())


def kullback(a, b) -> float:
    """Kullback divergence ``sum(a*log(a/b)) - sum(a) + sum(b)``.

    Equals :func:`divergence` with the power generator at ``lam = 0``;
    implemented directly to avoid evaluating ``0*log(0)`` terms.
    """
    a, b = _check_pair(a, b)
    if np.any((b == 0) & (a > 0)):
        return float("inf")
    pos = a > 0
    return float(np.sum(a[pos] * np.log(a[pos] / b[pos])) - a.sum() + b.sum())
