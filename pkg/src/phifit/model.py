"""Loglinear models with linear constraints on expected cell counts.

A model couples a loglinear pattern ``log m = X @ theta`` with linear
restrictions ``L.T @ m = d``.  The constraint block ``L`` stacks the
sampling-scheme columns (fixed subtable totals) with any extra
user-supplied constraint columns ``C``; the right-hand side of the
sampling part is read off the observed table at fit time.

Builders for the classical square-table models (symmetry and its
relatives, plus marginal homogeneity) are provided; these are the
models exercised by the bundled simulation harness.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, SpecValidationError
from .table import ContingencyTable

# Relative singular-value cutoff for all rank and column-space-inclusion
# decisions.  The matrices involved are small with integer-ish entries, so
# a generous margin is safe.
RANK_TOL = 1e-9


def _as_counts_vector(n, k: int) -> np.ndarray:
    if isinstance(n, ContingencyTable):
        vec = n.as_float()
    else:
        vec = np.asarray(n, dtype=float).reshape(-1)
    if vec.size != k:
        raise DomainError(f"expected {k} cells, got {vec.size}")
    return vec


def matrix_rank(a: np.ndarray) -> int:
    """Numerical rank with the package-wide relative tolerance."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return 0
    s = np.linalg.svd(a, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > RANK_TOL * s[0]))


def column_space_contains(outer: np.ndarray, inner: np.ndarray) -> bool:
    """True when every column of ``inner`` lies in the column space of ``outer``."""
    outer = np.atleast_2d(np.asarray(outer, dtype=float))
    inner = np.atleast_2d(np.asarray(inner, dtype=float))
    if inner.size == 0:
        return True
    if outer.size == 0:
        return matrix_rank(inner) == 0
    return matrix_rank(np.hstack([outer, inner])) == matrix_rank(outer)


@dataclass(frozen=True)
class SamplingScheme:
    """Number and layout of fixed multinomial strata.

    ``c = 0`` is Poisson sampling (no fixed totals), ``c = 1`` multinomial,
    ``c >= 2`` product-multinomial with ``subtable_sizes[h]`` cells in
    stratum ``h``.
    """

    c: int
    subtable_sizes: tuple[int, ...] = ()

    def __post_init__(self):
        if self.c < 0:
            raise DomainError("c must be nonnegative")
        sizes = tuple(int(s) for s in self.subtable_sizes)
        if self.c == 0 and sizes:
            raise DomainError("Poisson sampling takes no subtable sizes")
        if self.c >= 1:
            if len(sizes) != self.c:
                raise DomainError(f"expected {self.c} subtable sizes, got {len(sizes)}")
            if any(s < 1 for s in sizes):
                raise DomainError("subtable sizes must be positive")
        object.__setattr__(self, "subtable_sizes", sizes)

    @classmethod
    def poisson(cls) -> "SamplingScheme":
        return cls(0)

    @classmethod
    def multinomial(cls, k: int) -> "SamplingScheme":
        return cls(1, (k,))

    @classmethod
    def product_multinomial(cls, sizes: Sequence[int]) -> "SamplingScheme":
        return cls(len(tuple(sizes)), tuple(sizes))

    @property
    def k(self) -> int:
        return sum(self.subtable_sizes)

    def x0_matrix(self, k: int) -> np.ndarray:
        """Block matrix of stratum indicators; shape (k, c); empty for c = 0."""
        if self.c == 0:
            return np.zeros((k, 0))
        if self.k != k:
            raise DomainError(f"subtable sizes sum to {self.k}, table has {k} cells")
        x0 = np.zeros((k, self.c))
        start = 0
        for h, size in enumerate(self.subtable_sizes):
            x0[start:start + size, h] = 1.0
            start += size
        return x0

    def fixed_totals(self, n) -> np.ndarray:
        """Observed stratum totals X0.T @ n; empty for Poisson sampling."""
        if self.c == 0:
            return np.zeros(0)
        vec = _as_counts_vector(n, self.k)
        return self.x0_matrix(self.k).T @ vec


class ModelKind(enum.Enum):
    SATURATED = "saturated"
    SYMMETRY = "symmetry"
    QUASI_SYMMETRY = "quasi_symmetry"
    ORDINAL_QUASI_SYMMETRY = "ordinal_quasi_symmetry"
    MARGINAL_HOMOGENEITY = "marginal_homogeneity"
    CUSTOM = "custom"


@dataclass(frozen=True)
class LmlcSpec:
    """A loglinear model with linear constraints (LMLC).

    Fields
    ------
    X : (k, t) design matrix, full column rank.
    sampling : the sampling scheme, contributing ``c`` constraint columns.
    C : (k, r) extra constraint matrix (``r = 0`` allowed).
    d_star : (r,) right-hand side of the extra constraints, usually zeros.
    name : optional human-readable label.
    kind : the builder that produced the spec, if any.
    """

    X: np.ndarray
    sampling: SamplingScheme
    C: np.ndarray = None
    d_star: np.ndarray = None
    name: str = ""
    kind: ModelKind = ModelKind.CUSTOM

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        if X.ndim != 2:
            raise SpecValidationError("X must be a matrix")
        k = X.shape[0]
        C = self.C
        if C is None:
            C = np.zeros((k, 0))
        C = np.asarray(C, dtype=float).reshape(k, -1)
        d_star = self.d_star
        if d_star is None:
            d_star = np.zeros(C.shape[1])
        d_star = np.asarray(d_star, dtype=float).reshape(-1)
        if d_star.size != C.shape[1]:
            raise SpecValidationError(
                f"d_star has {d_star.size} entries, C has {C.shape[1]} columns"
            )
        X.flags.writeable = False
        C.flags.writeable = False
        d_star.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "d_star", d_star)

    @property
    def k(self) -> int:
        return self.X.shape[0]

    @property
    def t(self) -> int:
        return self.X.shape[1]

    @property
    def r(self) -> int:
        return self.C.shape[1]

    @property
    def c(self) -> int:
        return self.sampling.c

    @property
    def L(self) -> np.ndarray:
        """Constraint block (X0, C); equals C alone under Poisson sampling."""
        return np.hstack([self.sampling.x0_matrix(self.k), self.C])

    def d(self, n=None) -> np.ndarray:
        """Constraint right-hand side; the sampling part is read from ``n``."""
        if self.c == 0:
            return self.d_star.copy()
        if n is None:
            raise DomainError("observed counts are required when c >= 1")
        return np.concatenate([self.sampling.fixed_totals(n), self.d_star])


def ordinal_weights(I: int) -> np.ndarray:
    """Centered, unit-norm equally spaced category scores.

    w_j = (2j - (I+1)) / sqrt(I(I-1)(I+1)/3), j = 1..I; the weights sum
    to zero and have unit sum of squares.
    """
    if I < 2:
        raise DomainError("need at least two categories")
    j = np.arange(1, I + 1, dtype=float)
    return (2.0 * j - (I + 1)) / np.sqrt(I * (I - 1) * (I + 1) / 3.0)


def _square_cells(I: int) -> list[tuple[int, int]]:
    return [(a, b) for a in range(1, I + 1) for b in range(1, I + 1)]


def _symmetric_interaction_columns(I: int) -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Columns of the free symmetric-interaction parameters.

    The symmetric interaction array theta[i, j] = theta[j, i] is
    identified by forcing each column (equivalently row) to sum to zero.
    One dependent cell is eliminated per column-sum identity: the
    anti-diagonal pair (j, I+1-j) for the first floor(I/2) columns and
    the diagonal cell (j, j) for the remaining ones.  This makes the
    elimination triangular, hence uniquely solvable.  Free diagonal
    cells are ordered before free off-diagonal ones.
    """
    pairs = [(a, b) for a in range(1, I + 1) for b in range(a, I + 1)]
    pair_index = {p: i for i, p in enumerate(pairs)}
    dependent = set()
    for j in range(1, I + 1):
        other = I + 1 - j
        dependent.add((j, other) if j < other else (j, j))
    free = [p for p in pairs if p not in dependent]
    free = [p for p in free if p[0] == p[1]] + [p for p in free if p[0] != p[1]]
    # column-sum identities: for each column j, sum_i theta[min(i,j), max(i,j)] = 0
    A = np.zeros((I, len(pairs)))
    for j in range(1, I + 1):
        for i in range(1, I + 1):
            A[j - 1, pair_index[(min(i, j), max(i, j))]] += 1.0
    dep_list = sorted(dependent)
    coeff = np.zeros((len(pairs), len(free)))
    for col, p in enumerate(free):
        coeff[pair_index[p], col] = 1.0
    solve = -np.linalg.solve(A[:, [pair_index[p] for p in dep_list]],
                             A[:, [pair_index[p] for p in free]])
    for row, p in enumerate(dep_list):
        coeff[pair_index[p], :] = solve[row, :]
    cols = np.zeros((I * I, len(free)))
    for ci, (a, b) in enumerate(_square_cells(I)):
        cols[ci, :] = coeff[pair_index[(min(a, b), max(a, b))], :]
    return cols, free


def _symmetry_design(I: int) -> np.ndarray:
    """Intercept, joint row+column main-effect contrasts, symmetric interactions."""
    k = I * I
    cols = [np.ones(k)]
    for a in range(1, I):
        col = np.zeros(k)
        for ci, (i, j) in enumerate(_square_cells(I)):
            col[ci] = ((i == a) - (i == I)) + ((j == a) - (j == I))
        cols.append(col)
    inter, _ = _symmetric_interaction_columns(I)
    return np.column_stack([np.column_stack(cols), inter])


def _column_contrast_design(I: int) -> np.ndarray:
    """Sum-to-zero contrasts in the column index only; shape (k, I-1)."""
    k = I * I
    cols = np.zeros((k, I - 1))
    for a in range(1, I):
        for ci, (_, j) in enumerate(_square_cells(I)):
            cols[ci, a - 1] = (j == a) - (j == I)
    return cols


def reference_cell_design(I: int) -> np.ndarray:
    """Saturated design: intercept plus an indicator per cell except (1, 1).

    Under this coding ``theta[0]`` is ``log m[1,1]`` and the remaining
    entries are ``log(m[i,j] / m[1,1])`` in lexicographic cell order.
    """
    k = I * I
    X = np.zeros((k, k))
    X[:, 0] = 1.0
    col = 1
    for ci, cell in enumerate(_square_cells(I)):
        if cell == (1, 1):
            continue
        X[ci, col] = 1.0
        col += 1
    return X


def _margin_difference_constraints(I: int) -> np.ndarray:
    """Columns encoding row-sum minus column-sum for categories 1..I-1."""
    k = I * I
    C = np.zeros((k, I - 1))
    for target in range(1, I):
        for ci, (a, b) in enumerate(_square_cells(I)):
            C[ci, target - 1] = (a == target) - (b == target)
    return C


def build_square_model(kind: ModelKind, I: int,
                       sampling: Optional[SamplingScheme] = None) -> LmlcSpec:
    """Construct one of the square-table models for an I x I table.

    ``sampling`` defaults to multinomial.  Parameter counts for I = 4:
    symmetry 10, ordinal quasi-symmetry 11, quasi-symmetry 13, saturated
    and marginal homogeneity 16 (the latter with I-1 extra constraints).
    """
    if I < 2:
        raise DomainError("I must be at least 2")
    k = I * I
    if sampling is None:
        sampling = SamplingScheme.multinomial(k)
    if sampling.c >= 1 and sampling.k != k:
        raise DomainError("sampling subtable sizes do not match the table")
    if kind == ModelKind.SYMMETRY:
        X, C = _symmetry_design(I), None
    elif kind == ModelKind.ORDINAL_QUASI_SYMMETRY:
        base = _symmetry_design(I)
        w = ordinal_weights(I)
        wcol = np.array([w[j - 1] for (_, j) in _square_cells(I)])
        X, C = np.column_stack([base, wcol]), None
    elif kind == ModelKind.QUASI_SYMMETRY:
        X = np.column_stack([_symmetry_design(I), _column_contrast_design(I)])
        C = None
    elif kind == ModelKind.SATURATED:
        X, C = reference_cell_design(I), None
    elif kind == ModelKind.MARGINAL_HOMOGENEITY:
        X = reference_cell_design(I)
        C = _margin_difference_constraints(I)
    else:
        raise DomainError(f"no builder for kind {kind}")
    spec = LmlcSpec(X=X, sampling=sampling, C=C, name=kind.value, kind=kind)
    if matrix_rank(spec.X) != spec.t:
        raise SpecValidationError(f"builder produced rank-deficient design for {kind}")
    return spec


def mean_vector(spec: LmlcSpec, theta) -> np.ndarray:
    """Expected cell counts exp(X @ theta); overflow propagates as inf."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.size != spec.t:
        raise DomainError(f"theta has {theta.size} entries, expected {spec.t}")
    if not np.all(np.isfinite(theta)):
        raise DomainError("theta must be finite")
    with np.errstate(over="ignore"):
        m = np.exp(spec.X @ theta)
    if not np.all(np.isfinite(m)):
        warnings.warn("mean_vector overflowed to inf", RuntimeWarning, stacklevel=2)
    return m


def solve_intercept(spec: LmlcSpec, theta_rest, total: float) -> np.ndarray:
    """Complete a parameter vector whose intercept is fixed by the total.

    Requires the first design column to be all ones; returns the full
    theta with ``theta[0] = log(total) - log(sum(exp(X_rest @ theta_rest)))``
    so that the means sum to ``total``.
    """
    if not np.allclose(spec.X[:, 0], 1.0):
        raise DomainError("first design column must be the intercept")
    if total <= 0:
        raise DomainError("total must be positive")
    theta_rest = np.asarray(theta_rest, dtype=float).reshape(-1)
    if theta_rest.size != spec.t - 1:
        raise DomainError(f"expected {spec.t - 1} non-intercept entries")
    eta = spec.X[:, 1:] @ theta_rest
    shift = eta.max()
    log_sum = shift + np.log(np.sum(np.exp(eta - shift)))
    return np.concatenate([[np.log(total) - log_sum], theta_rest])


def constraint_residual(spec: LmlcSpec, theta, n) -> np.ndarray:
    """Residual ``L.T @ m(theta) - d(n)``; zero exactly on the parameter space."""
    vec = _as_counts_vector(n, spec.k)
    return spec.L.T @ mean_vector(spec, theta) - spec.d(vec)


def is_nested(inner: LmlcSpec, outer: LmlcSpec) -> bool:
    """Whether ``inner`` is nested within ``outer``.

    Nesting requires the inner design space to be contained in the outer
    one and the outer constraint space to be contained in the inner one,
    with ``t_inner <= t_outer`` and ``r_inner >= r_outer``, at least one
    strictly.
    """
    if inner.k != outer.k:
        raise DomainError("models must describe tables of the same size")
    if inner.t > outer.t or inner.r < outer.r:
        return False
    if inner.t == outer.t and inner.r == outer.r:
        return False
    return (column_space_contains(outer.X, inner.X)
            and column_space_contains(inner.L, outer.L))


def validate_spec(spec: LmlcSpec, n=None) -> list[str]:
    """Check the structural invariants; returns a list of violations.

    An empty list means the spec is valid.  When ``n`` is supplied the
    consistency of the constraint right-hand side (``rank(L) ==
    rank([L, d])``) is checked as well.
    """
    violations: list[str] = []
    k, t, c, r = spec.k, spec.t, spec.c, spec.r
    if not np.all(np.isfinite(spec.X)):
        violations.append("design matrix has non-finite entries")
        return violations
    if matrix_rank(spec.X) != t:
        violations.append(f"design matrix rank {matrix_rank(spec.X)} < t = {t}")
    if k < t - c - r:
        violations.append(f"k = {k} < t - c - r = {t - c - r}")
    if not column_space_contains(spec.X, np.ones((k, 1))):
        violations.append("the all-ones vector is not in the design column space")
    if c >= 2 and not column_space_contains(spec.X, spec.sampling.x0_matrix(k)):
        violations.append("stratum indicators are not in the design column space")
    L = spec.L
    if L.shape[1] != c + r:
        violations.append(f"L has {L.shape[1]} columns, expected c + r = {c + r}")
    elif L.shape[1] and matrix_rank(L) != c + r:
        violations.append(f"rank(L) = {matrix_rank(L)} != c + r = {c + r}")
    if n is not None and L.shape[1]:
        vec = _as_counts_vector(n, k)
        d = spec.d(vec)
        augmented = np.hstack([L.T, d[:, None]])
        if matrix_rank(augmented) != matrix_rank(L):
            violations.append("constraint right-hand side is inconsistent with L")
    return violations
