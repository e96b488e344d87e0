"""K-periodic coefficient blocks and their fundamental products.

A coefficient path stores one period ``a_0, ..., a_{K-1}`` of ``d x d`` blocks
(``1 x 1`` in the scalar case). The fundamental product from time ``k`` to
time ``n`` is the ordered product of the one-step factors ``I + a_i``::

    b(k, n) = (I + a_{n-1}) ... (I + a_{k+1}) (I + a_k),    b(n, n) = I

with later factors multiplying on the left, so ``b(k, n) @ x_k`` transports a
noise-free column state from time ``k`` to time ``n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NonScalarProductError

__all__ = [
    "CoefficientPath",
    "fundamental_product",
    "multiplier",
    "window_bound",
]

SCALAR_TOL = 1e-9


@dataclass(frozen=True)
class CoefficientPath:
    """One realized period of coefficient blocks.

    ``blocks`` has shape ``(K, d, d)``; it is copied and made read-only on
    construction. Use :meth:`from_scalars` for the scalar case.
    """

    blocks: np.ndarray
    factors: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        blocks = np.array(self.blocks, dtype=np.float64)
        if blocks.ndim == 1:
            blocks = blocks.reshape(-1, 1, 1)
        if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2] or blocks.shape[0] < 1:
            raise DimensionError(f"blocks must have shape (K, d, d), got {blocks.shape}")
        if not np.all(np.isfinite(blocks)):
            raise ValueError("coefficient blocks must be finite")
        blocks.setflags(write=False)
        factors = np.eye(blocks.shape[1]) + blocks
        factors.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "factors", factors)

    @classmethod
    def from_scalars(cls, values) -> CoefficientPath:
        return cls(np.asarray(values, dtype=np.float64).reshape(-1, 1, 1))

    @property
    def period(self) -> int:
        return self.blocks.shape[0]

    @property
    def dim(self) -> int:
        return self.blocks.shape[1]

    def a(self, n: int) -> np.ndarray:
        """Coefficient block at time ``n``, read modulo the period."""
        if n < 0:
            raise IndexError("time index must be non-negative")
        return self.blocks[n % self.period]

    def factor(self, n: int) -> np.ndarray:
        return self.factors[n % self.period]

    def is_singular(self) -> bool:
        """True if some one-step factor ``I + a_i`` is not invertible."""
        if self.dim == 1:
            return bool(np.any(self.factors[:, 0, 0] == 0.0))
        return any(np.linalg.matrix_rank(f) < self.dim for f in self.factors)

    def __eq__(self, other):
        if not isinstance(other, CoefficientPath):
            return NotImplemented
        return np.array_equal(self.blocks, other.blocks)

    def __hash__(self):
        return hash(self.blocks.tobytes())


def _product(path: CoefficientPath, k: int, n: int) -> np.ndarray:
    if k > n:
        raise ValueError(f"fundamental product needs k <= n, got k={k}, n={n}")
    if k < 0:
        raise ValueError("time indices must be non-negative")
    b = np.eye(path.dim)
    for i in range(k, n):
        b = path.factors[i % path.period] @ b
    return b


def fundamental_product(path: CoefficientPath, k: int, n: int):
    """Return ``b(k, n)``; a float for scalar paths, a ``(d, d)`` array otherwise.

    Computed by sequential multiplication, one factor at a time.
    """
    b = _product(path, k, n)
    if path.dim == 1:
        return float(b[0, 0])
    return b


def multiplier(path: CoefficientPath, tol: float = SCALAR_TOL) -> float:
    """Per-period growth factor ``L`` with ``b(0, K) = L * I``.

    For d > 1 the period product must lie within ``tol`` (max-abs entry) of a
    scalar multiple of the identity.
    """
    prod = _product(path, 0, path.period)
    if path.dim == 1:
        return float(prod[0, 0])
    lam = float(np.trace(prod)) / path.dim
    if np.max(np.abs(prod - lam * np.eye(path.dim))) > tol:
        raise NonScalarProductError("non-scalar period product")
    return lam


def window_bound(path: CoefficientPath) -> float:
    """Largest operator norm of ``b(k, k + j)`` over windows with ``0 <= j <= K``.

    By periodicity this bounds every fundamental product spanning at most one
    period, which is what tail estimates of the noise sums need.
    """
    best = 1.0
    for start in range(path.period):
        b = np.eye(path.dim)
        for j in range(path.period):
            b = path.factors[(start + j) % path.period] @ b
            best = max(best, float(np.linalg.norm(b, 2)))
    return best
