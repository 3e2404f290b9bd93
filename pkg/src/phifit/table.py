"""Contingency tables in single-index form.

Cells of a multiway table are stored in one flat vector in lexicographic
order of the axis indices.  All indices at the public interface are
1-based; the flat storage is ordinary 0-based row-major underneath.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Sequence

import numpy as np

from .errors import DomainError

MAX_AXES = 4


def index_of(multi_index: Sequence[int], shape: Sequence[int]) -> int:
    """Map a 1-based multi-index to its 1-based flat lexicographic index.

    For a two-way I x J table the cell (a, b) maps to (a-1)*J + b; for a
    three-way I x J x K table, (a, b, c) maps to (a-1)*J*K + (b-1)*K + c,
    and analogously for more axes.
    """
    if len(multi_index) != len(shape):
        raise DomainError(
            f"multi-index has {len(multi_index)} axes, shape has {len(shape)}"
        )
    flat = 0
    for axis, (idx, length) in enumerate(zip(multi_index, shape)):
        if not 1 <= idx <= length:
            raise DomainError(
                f"axis {axis + 1} index {idx} outside [1, {length}]"
            )
        flat = flat * length + (idx - 1)
    return flat + 1


def multi_of(index: int, shape: Sequence[int]) -> tuple[int, ...]:
    """Inverse of :func:`index_of`: 1-based flat index to 1-based multi-index."""
    k = prod(shape)
    if not 1 <= index <= k:
        raise DomainError(f"flat index {index} outside [1, {k}]")
    rest = index - 1
    out = []
    for length in reversed(shape):
        out.append(rest % length + 1)
        rest //= length
    return tuple(reversed(out))


@dataclass(frozen=True)
class ContingencyTable:
    """Observed counts of a contingency table with shape metadata.

    Counts are nonnegative integers stored flat in lexicographic order.
    Instances are immutable after construction and safe to share across
    threads.
    """

    counts: np.ndarray
    shape: tuple[int, ...]
    k: int = field(init=False)
    N: int = field(init=False)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1:
            raise DomainError("counts must be one-dimensional")
        if counts.size == 0:
            raise DomainError("counts must be nonempty")
        if not np.issubdtype(counts.dtype, np.integer):
            rounded = np.rint(np.asarray(counts, dtype=float))
            if not np.allclose(counts, rounded, atol=1e-9, rtol=0):
                raise DomainError("counts must be integers")
            counts = rounded.astype(np.int64)
        else:
            counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise DomainError("counts must be nonnegative")
        shape = tuple(int(s) for s in self.shape)
        if not shape or any(s < 1 for s in shape):
            raise DomainError("shape entries must be positive")
        if len(shape) > MAX_AXES:
            raise DomainError(f"at most {MAX_AXES} axes are supported")
        if prod(shape) != counts.size:
            raise DomainError(
                f"shape {shape} implies {prod(shape)} cells, got {counts.size}"
            )
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "k", counts.size)
        object.__setattr__(self, "N", int(counts.sum()))

    @classmethod
    def from_array(cls, array) -> "ContingencyTable":
        """Build a table from a (possibly multiway) array of counts."""
        arr = np.asarray(array)
        if arr.ndim == 1:
            return cls(arr, (arr.size,))
        return cls(arr.reshape(-1), arr.shape)

    def as_array(self) -> np.ndarray:
        """Counts reshaped to the table's axes."""
        return self.counts.reshape(self.shape)

    def as_float(self) -> np.ndarray:
        """Flat real-valued copy of the counts."""
        return self.counts.astype(float)


def total(table: ContingencyTable) -> int:
    """Total count N of the table."""
    return table.N


def margins(table: ContingencyTable) -> tuple[np.ndarray, np.ndarray]:
    """Row and column sums of a square two-way table.

    Raises DomainError for non-square or non-two-way shapes.
    """
    if len(table.shape) != 2 or table.shape[0] != table.shape[1]:
        raise DomainError(f"margins requires a square two-way table, got {table.shape}")
    arr = table.as_array()
    return arr.sum(axis=1).astype(float), arr.sum(axis=0).astype(float)
