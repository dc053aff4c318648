"""Dense subspace primitives.

A linear subspace ``H`` of R^d is stored through an orthonormal basis ``Q``
(shape ``(k, d)``, one basis vector per row) of its orthogonal complement.
The projection onto ``H`` is then ``P x = x - Q^T (Q x)``, which costs
``O(kd)`` instead of the ``O(d^2)`` of an explicit matrix.  The explicit
matrix is available from :func:`dense_oracle` for tests only.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ORTHO_TOL = 1e-10
DEPENDENCE_TOL = 1e-8
ON_SUBSPACE_TOL = 1e-9


class DimensionError(ValueError):
    pass


class LinearDependenceError(ValueError):
    """Raised when a vector lies (numerically) in the span of its predecessors."""

    def __init__(self, index: int, residual: float):
        super().__init__(
            f"vector {index} is linearly dependent on vectors 0..{index - 1} "
            f"(residual norm {residual:.3e} < {DEPENDENCE_TOL:g})"
        )
        self.index = index
        self.residual = residual


class ContractError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ComplementBasis:
    """Orthonormal basis of the orthogonal complement of a subspace ``H``.

    Also serves as the projection operator onto ``H``; see :func:`project`.
    """

    vectors: np.ndarray

    def __post_init__(self):
        q = np.array(self.vectors, dtype=float, copy=True)
        if q.ndim == 1:
            q = q[None, :]
        if q.ndim != 2 or q.shape[0] == 0:
            raise ContractError("a complement basis needs at least one vector")
        if q.shape[0] > q.shape[1]:
            raise ContractError(f"{q.shape[0]} basis vectors cannot be orthonormal in R^{q.shape[1]}")
        q.setflags(write=False)
        object.__setattr__(self, "vectors", q)

    @property
    def rank(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def orthonormality_error(self) -> float:
        q = self.vectors
        return float(np.max(np.abs(q @ q.T - np.eye(q.shape[0]))))


def gram_schmidt(vectors: Sequence[np.ndarray] | np.ndarray) -> ComplementBasis:
    """Orthonormalize ``vectors`` in order (modified Gram-Schmidt, two passes).

    The span of every prefix ``vectors[:i]`` is preserved.

    Raises
    ------
    LinearDependenceError
        If some vector's residual after orthogonalization has norm below 1e-8.
    """
    a = np.array(vectors, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or a.shape[0] == 0:
        raise ContractError("gram_schmidt needs a non-empty list of vectors")
    k, d = a.shape
    if k > d:
        raise LinearDependenceError(d, 0.0)
    q = np.empty_like(a)
    for i in range(k):
        v = a[i].copy()
        # second pass recovers the orthogonality lost to cancellation
        for _ in range(2):
            for j in range(i):
                v -= (q[j] @ v) * q[j]
        norm = float(np.linalg.norm(v))
        if norm < DEPENDENCE_TOL:
            raise LinearDependenceError(i, norm)
        q[i] = v / norm
    return ComplementBasis(q)


def _check_dim(basis: ComplementBasis, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != basis.dim:
        raise DimensionError(f"vector of dimension {x.shape[-1]} does not match basis dimension {basis.dim}")
    return x


def residual(basis: ComplementBasis, x: np.ndarray) -> np.ndarray:
    """Component of ``x`` in the complement, ``Q^T Q x``.  Works row-wise on 2-D input."""
    x = _check_dim(basis, x)
    q = basis.vectors
    return (x @ q.T) @ q


def project(basis: ComplementBasis, x: np.ndarray) -> np.ndarray:
    """Orthogonal projection of ``x`` onto ``H``.  Works row-wise on 2-D input."""
    x = _check_dim(basis, x)
    return x - residual(basis, x)


def sol_eps_contains(basis: ComplementBasis, r: np.ndarray, v: np.ndarray, eps: float) -> bool:
    """Whether ``||P v - r|| < eps``, i.e. ``v`` lies in the eps-band around ``Sol(P, r)``."""
    if eps < 0:
        raise ContractError("eps must be non-negative")
    r = _check_dim(basis, r)
    v = _check_dim(basis, v)
    off = float(np.linalg.norm(residual(basis, r)))
    if off > ON_SUBSPACE_TOL:
        raise ContractError(f"translation vector is not on the subspace (distance {off:.3e})")
    return bool(np.linalg.norm(project(basis, v) - r) < eps)


def principal_angles(b1: ComplementBasis, b2: ComplementBasis) -> np.ndarray:
    """Principal angles in degrees, ascending, between the spans of two bases."""
    if b1.dim != b2.dim:
        raise DimensionError(f"bases live in R^{b1.dim} and R^{b2.dim}")
    a, b = (b1.vectors, b2.vectors) if b1.rank <= b2.rank else (b2.vectors, b1.vectors)
    u, cos, _ = np.linalg.svd(a @ b.T, full_matrices=False)
    # sines from the residual of the principal vectors keep small angles accurate
    principal = u.T @ a
    sin = np.linalg.norm(principal - (principal @ b.T) @ b, axis=1)
    return np.sort(np.degrees(np.arctan2(sin, cos)))


def inclusion_gap(inner: ComplementBasis, outer: ComplementBasis) -> float:
    """Largest distance from a unit vector of span(inner) to span(outer).

    Zero iff span(inner) is contained in span(outer); this is the sine of the
    largest principal angle when ``inner.rank <= outer.rank``.
    """
    if inner.dim != outer.dim:
        raise DimensionError(f"bases live in R^{inner.dim} and R^{outer.dim}")
    q = inner.vectors
    outside = q - (q @ outer.vectors.T) @ outer.vectors
    return float(np.linalg.norm(outside, ord=2))


def dense_oracle(basis: ComplementBasis) -> np.ndarray:
    """Explicit ``d x d`` projection matrix ``I - Q^T Q``.  Test use only."""
    q = basis.vectors
    return np.eye(basis.dim) - q.T @ q
