"""Total-degree multi-index sets for multivariate SNP expansions."""
from dataclasses import dataclass, field
from math import comb, factorial, prod

import numpy as np

#: Orders above this would overflow int64 factorial weights in pathological cases.
MAX_ORDER = 20


@dataclass(frozen=True, eq=False)
class MultiIndexSet:
    """Ordered set of multi-indices ``alpha`` with ``2 <= |alpha| <= K``.

    Attributes
    ----------
    dimension : int
        Number of coordinates ``d``.
    order : int
        Maximum total degree ``K``.
    indices : ndarray of int64, shape (M, d)
        Multi-indices in graded lexicographic order.
    weights : ndarray of int64, shape (M,)
        Factorial weights ``alpha! = prod_j alpha_j!``; the diagonal of the
        normalization matrix.
    """

    dimension: int
    order: int
    indices: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __len__(self):
        return self.indices.shape[0]

    def __iter__(self):
        return (tuple(int(a) for a in row) for row in self.indices)

    def __eq__(self, other):
        if not isinstance(other, MultiIndexSet):
            return NotImplemented
        return (
            self.dimension == other.dimension
            and self.order == other.order
            and np.array_equal(self.indices, other.indices)
        )

    def __hash__(self):
        return hash((self.dimension, self.order, self.indices.tobytes()))

    @property
    def degrees(self):
        return self.indices.sum(axis=1)


def _compositions(total, parts):
    """All ``parts``-tuples of nonnegative ints summing to ``total``, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def build_index_set(d, K):
    """Build the multi-index set for dimension ``d`` and order ``K``.

    Indices are sorted by ascending total degree, lexicographically within
    a degree, so coefficient vectors line up across fits and files.

    Raises
    ------
    ValueError
        If ``d < 1``, ``K < 2`` or ``K`` exceeds :data:`MAX_ORDER`.
    """
    d, K = int(d), int(K)
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if K < 2:
        raise ValueError(
            f"order must be >= 2 (orders 0 and 1 are fixed by whitening), got {K}"
        )
    if K > MAX_ORDER:
        raise ValueError(f"order must be <= {MAX_ORDER}, got {K}")
    rows = [alpha for degree in range(2, K + 1) for alpha in _compositions(degree, d)]
    indices = np.array(rows, dtype=np.int64).reshape(-1, d)
    weights = np.array(
        [prod(factorial(a) for a in alpha) for alpha in rows], dtype=np.int64
    )
    indices.setflags(write=False)
    weights.setflags(write=False)
    return MultiIndexSet(dimension=d, order=K, indices=indices, weights=weights)


def index_set_from_list(d, K, rows):
    """Rebuild a set from an explicit index list, checking it is the canonical one."""
    expected = build_index_set(d, K)
    given = np.asarray(rows, dtype=np.int64).reshape(-1, d)
    if not np.array_equal(given, expected.indices):
        raise ValueError(
            "index list does not match the graded-lexicographic set "
            f"for d={d}, K={K}"
        )
    return expected


def coefficient_count(d, K):
    """Number of SNP coefficients ``C(d + K, K) - 1 - d``."""
    if d < 1 or K < 2:
        raise ValueError(f"need d >= 1 and K >= 2, got d={d}, K={K}")
    return comb(d + K, K) - 1 - d
