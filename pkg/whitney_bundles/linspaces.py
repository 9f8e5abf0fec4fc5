"""Linear and affine subspaces of the coefficient space of (P_{m,n})^d.

Vectors are flat coefficient arrays in the component-major layout of
:class:`whitney_bundles.jets.JetVec` (component j occupies ``[j*N, (j+1)*N)``).
The module structure over the jet ring R^x_{m,n} only needs the n degree-one
generators (xhat_i - x_i): a space is a submodule iff it is stable under them.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.linalg

from .exceptions import InvalidInputError
from .jets import Jet, JetVec, block_diagonal, dim_poly, multiplication_matrix, same_point

logger = logging.getLogger(__name__)

# Relative singular value threshold for every rank decision.
RANK_RTOL = 1e-9
# Absolute floor so that round-off sized matrices have rank zero.
RANK_ATOL = 1e-12
CONTAINMENT_TOL = 1e-8
ORTHONORMAL_TOL = 1e-10


def _threshold(singular_values, rtol, atol):
    top = singular_values[0] if singular_values.size else 0.0
    return max(atol, rtol * top)


def orthonormal_rows(vectors, ambient_dim, rtol=RANK_RTOL, atol=RANK_ATOL):
    """Orthonormal basis (as rows) of the span of ``vectors``."""
    A = np.asarray(vectors, dtype=float).reshape(-1, ambient_dim)
    if A.shape[0] == 0:
        return np.zeros((0, ambient_dim))
    _, s, vh = scipy.linalg.svd(A, full_matrices=False)
    rank = int(np.sum(s > _threshold(s, rtol, atol)))
    return vh[:rank]


def null_space(A, rtol=RANK_RTOL, atol=RANK_ATOL):
    """Orthonormal basis (as columns) of the null space of A.

    Singular values below ``max(atol, rtol * s_max)`` count as zero.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] == 0:
        return np.eye(A.shape[1])
    _, s, vh = scipy.linalg.svd(A, full_matrices=True)
    rank = int(np.sum(s > _threshold(s, rtol, atol)))
    return vh[rank:].T


@dataclass(frozen=True, eq=False)
class LinSubspace:
    """A linear subspace given by orthonormal basis rows."""

    ambient_dim: int
    basis: np.ndarray

    def __post_init__(self):
        ambient_dim = int(self.ambient_dim)
        basis = np.array(self.basis, dtype=float).reshape(-1, ambient_dim)
        if basis.shape[0] > ambient_dim:
            raise InvalidInputError(
                f"{basis.shape[0]} basis vectors cannot be independent in dimension {ambient_dim}"
            )
        if basis.shape[0] and not np.allclose(
            basis @ basis.T, np.eye(basis.shape[0]), atol=ORTHONORMAL_TOL
        ):
            raise InvalidInputError("basis rows are not orthonormal")
        basis.setflags(write=False)
        object.__setattr__(self, "ambient_dim", ambient_dim)
        object.__setattr__(self, "basis", basis)

    @classmethod
    def span(cls, vectors, ambient_dim, rtol=RANK_RTOL):
        return cls(ambient_dim, orthonormal_rows(vectors, ambient_dim, rtol=rtol))

    @classmethod
    def zero(cls, ambient_dim):
        return cls(ambient_dim, np.zeros((0, ambient_dim)))

    @classmethod
    def full(cls, ambient_dim):
        return cls(ambient_dim, np.eye(ambient_dim))

    @property
    def dim(self):
        return self.basis.shape[0]

    def _check(self, other):
        if other.ambient_dim != self.ambient_dim:
            raise InvalidInputError(
                f"ambient dimensions differ: {self.ambient_dim} vs {other.ambient_dim}"
            )

    def project(self, v):
        v = np.asarray(v, dtype=float)
        return self.basis.T @ (self.basis @ v)

    def residual(self, v):
        v = np.asarray(v, dtype=float)
        return float(np.linalg.norm(v - self.project(v)))

    def contains(self, v, tol=CONTAINMENT_TOL):
        v = np.asarray(v, dtype=float)
        return self.residual(v) <= tol * max(1.0, float(np.linalg.norm(v)))

    def contains_space(self, other, tol=CONTAINMENT_TOL):
        self._check(other)
        return all(self.residual(row) <= tol for row in other.basis)

    def complement(self):
        if self.dim == 0:
            return LinSubspace.full(self.ambient_dim)
        return LinSubspace(self.ambient_dim, null_space(self.basis).T)

    def sum(self, other, rtol=RANK_RTOL):
        self._check(other)
        return LinSubspace.span(np.vstack([self.basis, other.basis]), self.ambient_dim, rtol)

    def intersect(self, other):
        self._check(other)
        return self.complement().sum(other.complement()).complement()

    def angle_to(self, other):
        """Largest principal angle; +inf when the dimensions differ."""
        self._check(other)
        if self.dim != other.dim:
            return np.inf
        if self.dim == 0:
            return 0.0
        return float(np.max(scipy.linalg.subspace_angles(self.basis.T, other.basis.T)))

    def equals(self, other, tol=1e-6):
        return self.angle_to(other) <= tol

    def __repr__(self):
        return f"LinSubspace(ambient_dim={self.ambient_dim}, dim={self.dim})"


class FiberStatus(str, Enum):
    EMPTY = "EMPTY"
    NONEMPTY = "NONEMPTY"


@dataclass(frozen=True, eq=False)
class AffineFiber:
    """A possibly empty affine subspace base + directions of (P_{m,n})^d at a point.

    ``base`` is a flat coefficient vector about ``basepoint``; it is None for
    EMPTY fibers. ``dim`` is -1 for EMPTY, so dimensions stay comparable.
    """

    basepoint: np.ndarray
    order: int
    d: int
    status: FiberStatus
    base: np.ndarray = None
    directions: LinSubspace = None

    def __post_init__(self):
        basepoint = np.array(self.basepoint, dtype=float).reshape(-1)
        basepoint.setflags(write=False)
        object.__setattr__(self, "basepoint", basepoint)
        ambient = self.ambient_dim
        if self.status is FiberStatus.EMPTY:
            object.__setattr__(self, "base", None)
            object.__setattr__(self, "directions", LinSubspace.zero(ambient))
            return
        base = np.array(self.base, dtype=float).reshape(-1)
        if base.size != ambient:
            raise InvalidInputError(f"fiber base has {base.size} coefficients, expected {ambient}")
        if self.directions is None or self.directions.ambient_dim != ambient:
            raise InvalidInputError(f"fiber directions must live in dimension {ambient}")
        base.setflags(write=False)
        object.__setattr__(self, "base", base)

    @property
    def n(self):
        return self.basepoint.size

    @property
    def ambient_dim(self):
        return self.d * dim_poly(self.n, self.order)

    @property
    def is_empty(self):
        return self.status is FiberStatus.EMPTY

    @property
    def dim(self):
        return -1 if self.is_empty else self.directions.dim

    @property
    def base_jet(self):
        if self.is_empty:
            return None
        return JetVec.from_vector(self.base, self.basepoint, self.order, self.d)

    @classmethod
    def empty(cls, basepoint, order, d):
        return cls(basepoint, order, d, FiberStatus.EMPTY)

    @classmethod
    def full(cls, basepoint, order, d):
        ambient = d * dim_poly(np.size(basepoint), order)
        return cls(basepoint, order, d, FiberStatus.NONEMPTY, np.zeros(ambient), LinSubspace.full(ambient))

    @classmethod
    def point(cls, jetvec):
        ambient = jetvec.coeffs.size
        return cls(
            jetvec.basepoint, jetvec.order, jetvec.d, FiberStatus.NONEMPTY,
            jetvec.to_vector(), LinSubspace.zero(ambient),
        )

    @classmethod
    def from_base_and_directions(cls, base, directions, basepoint, order, d):
        return cls(basepoint, order, d, FiberStatus.NONEMPTY, base, directions)

    @classmethod
    def from_constraints(cls, A, b, basepoint, order, d, tol=CONTAINMENT_TOL, rtol=RANK_RTOL):
        """Solution set of A p = b, EMPTY when the system is inconsistent."""
        ambient = d * dim_poly(np.size(basepoint), order)
        A = np.asarray(A, dtype=float).reshape(-1, ambient)
        b = np.asarray(b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise InvalidInputError(f"{A.shape[0]} constraint rows but {b.size} right-hand sides")
        if A.shape[0] == 0:
            return cls.full(basepoint, order, d)
        solution = scipy.linalg.lstsq(A, b)[0]
        if np.linalg.norm(A @ solution - b) > tol * (1.0 + np.linalg.norm(b)):
            return cls.empty(basepoint, order, d)
        directions = LinSubspace(ambient, null_space(A, rtol=rtol).T)
        return cls(basepoint, order, d, FiberStatus.NONEMPTY, solution, directions)

    def constraints(self):
        """(C, c) with this fiber = {p : C p = c}; None for EMPTY."""
        if self.is_empty:
            return None
        normals = self.directions.complement().basis
        return normals, normals @ self.base

    def residual(self, p):
        if self.is_empty:
            return np.inf
        return self.directions.residual(np.asarray(p, dtype=float) - self.base)

    def contains(self, p, tol=CONTAINMENT_TOL):
        if self.is_empty:
            return False
        p = np.asarray(p, dtype=float).reshape(-1)
        return self.residual(p) <= tol * max(1.0, float(np.linalg.norm(p)))

    def contains_fiber(self, other, tol=CONTAINMENT_TOL):
        """True when ``other`` is a subset of this fiber."""
        if other.is_empty:
            return True
        return self.contains(other.base, tol) and self.directions.contains_space(other.directions, tol)

    def sample(self, rng, scale=1.0):
        if self.is_empty:
            return None
        t = rng.standard_normal(self.directions.dim) * scale
        return self.base + self.directions.basis.T @ t

    def __repr__(self):
        return f"AffineFiber(basepoint={self.basepoint.tolist()}, status={self.status.value}, dim={self.dim})"


def _check_same_ambient(A, B):
    if A.order != B.order or A.d != B.d or not same_point(A.basepoint, B.basepoint):
        raise InvalidInputError("fibers live in different ambient spaces")


def affine_intersect(A, B, tol=CONTAINMENT_TOL):
    """Intersection of two fibers at the same point."""
    _check_same_ambient(A, B)
    if A.is_empty or B.is_empty:
        return AffineFiber.empty(A.basepoint, A.order, A.d)
    CA, ca = A.constraints()
    CB, cb = B.constraints()
    return AffineFiber.from_constraints(
        np.vstack([CA, CB]), np.concatenate([ca, cb]), A.basepoint, A.order, A.d, tol=tol
    )


# --- Module structure over the jet ring ---

def module_generators(x, order, d):
    """Matrices of multiplication by (xhat_i - x_i) on (P_{m,n})^d at x."""
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.size
    generators = []
    for i in range(n):
        alpha = tuple(1 if k == i else 0 for k in range(n))
        if order == 0:
            # the degree-one monomial truncates to zero
            generators.append(np.zeros((d, d)))
            continue
        generators.append(block_diagonal(multiplication_matrix(Jet.monomial(alpha, x, order)), d))
    return generators


def _check_ambient(V, x, order, d):
    expected = d * dim_poly(np.size(x), order)
    if V.ambient_dim != expected:
        raise InvalidInputError(
            f"subspace of dimension {V.ambient_dim} does not live in (P_{{{order},{np.size(x)}}})^{d}"
        )


def submodule_closure(V, x, order, d=1, rtol=RANK_RTOL):
    """Smallest submodule containing V."""
    _check_ambient(V, x, order, d)
    generators = module_generators(x, order, d)
    W = V
    while 0 < W.dim < W.ambient_dim:
        images = [W.basis @ G.T for G in generators]
        grown = LinSubspace.span(np.vstack([W.basis, *images]), W.ambient_dim, rtol)
        if grown.dim == W.dim:
            break
        W = grown
    return W


def submodule_core(V, x, order, d=1, rtol=RANK_RTOL):
    """Largest submodule contained in V.

    Iterates V_{t+1} = {p in V_t : g p in V_t for every generator g}.
    """
    _check_ambient(V, x, order, d)
    generators = module_generators(x, order, d)
    eye = np.eye(V.ambient_dim)
    W = V
    while W.dim:
        B = W.basis
        outside = eye - B.T @ B
        stacked = np.vstack([outside @ G @ B.T for G in generators])
        kept = null_space(stacked, rtol=rtol)
        if kept.shape[1] == W.dim:
            break
        W = LinSubspace(W.ambient_dim, (B.T @ kept).T)
    return W


def is_submodule(V, x, order, d=1, tol=CONTAINMENT_TOL):
    _check_ambient(V, x, order, d)
    for G in module_generators(x, order, d):
        for row in V.basis:
            if V.residual(G @ row) > tol:
                return False
    return True
