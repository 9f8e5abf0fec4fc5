"""Jets: truncated Taylor polynomials at a basepoint and the ring they form.

A jet of order m at x in n variables is stored by its Taylor coefficients,
``coeffs[k] = (1/alpha!) * d^alpha P(x)`` for the k-th multi-index alpha with
|alpha| <= m. Multi-indices are enumerated in graded-lex order: total degree
ascending, and within one degree the exponent tuples in descending
lexicographic order (x1^2, x1*x2, x2^2, ...). The order is global, so every
matrix built from it is reproducible run to run.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial

import numpy as np

from .exceptions import InvalidInputError

logger = logging.getLogger(__name__)

# Basepoints closer than this are treated as the same point.
BASEPOINT_ATOL = 1e-12


# --- Multi-index bookkeeping ---

def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def multi_indices(n, m):
    """All exponent tuples in n variables with total degree <= m, graded-lex."""
    if n < 1 or m < 0:
        raise InvalidInputError(f"need n >= 1 and m >= 0, got n={n}, m={m}")
    indices = []
    for degree in range(m + 1):
        indices.extend(sorted(_compositions(degree, n), reverse=True))
    return tuple(indices)


def dim_poly(n, m):
    """dim P_{m,n} = C(m+n, n)."""
    return comb(m + n, n)


@lru_cache(maxsize=None)
def index_map(n, m):
    return {alpha: k for k, alpha in enumerate(multi_indices(n, m))}


def index_of(alpha, m):
    alpha = tuple(int(a) for a in alpha)
    if any(a < 0 for a in alpha):
        raise InvalidInputError(f"negative exponent in {alpha}")
    if sum(alpha) > m:
        raise InvalidInputError(f"|alpha| = {sum(alpha)} exceeds the jet order {m}")
    return index_map(len(alpha), m)[alpha]


@lru_cache(maxsize=None)
def exponents(n, m):
    table = np.array(multi_indices(n, m), dtype=int).reshape(-1, n)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def degrees(n, m):
    table = exponents(n, m).sum(axis=1)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def factorials(n, m):
    """alpha! for every multi-index; maps Taylor coefficients to derivatives."""
    table = np.array(
        [np.prod([factorial(a) for a in alpha]) for alpha in multi_indices(n, m)],
        dtype=float,
    )
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def _product_table(n, m):
    """Index triples (i, j, k) with alpha_i + alpha_j = alpha_k and |alpha_k| <= m."""
    lookup = index_map(n, m)
    rows, cols, targets = [], [], []
    indices = multi_indices(n, m)
    for i, a in enumerate(indices):
        for j, b in enumerate(indices):
            if sum(a) + sum(b) > m:
                continue
            rows.append(i)
            cols.append(j)
            targets.append(lookup[tuple(x + y for x, y in zip(a, b))])
    return np.array(rows, dtype=int), np.array(cols, dtype=int), np.array(targets, dtype=int)


@lru_cache(maxsize=None)
def _shift_table(n, m):
    """Pairs beta <= alpha with the binomial products C(alpha, beta)."""
    indices = multi_indices(n, m)
    rows, cols, binomials, gaps = [], [], [], []
    for k, alpha in enumerate(indices):
        for j, beta in enumerate(indices):
            if all(b <= a for a, b in zip(alpha, beta)):
                rows.append(j)
                cols.append(k)
                binomials.append(np.prod([comb(a, b) for a, b in zip(alpha, beta)]))
                gaps.append([a - b for a, b in zip(alpha, beta)])
    return (
        np.array(rows, dtype=int),
        np.array(cols, dtype=int),
        np.array(binomials, dtype=float),
        np.array(gaps, dtype=int).reshape(-1, n),
    )


def monomial_values(h, m):
    """Values h^alpha for every multi-index of order <= m.

    ``h`` may be a single displacement (n,) or a batch (k, n).
    """
    h = np.asarray(h, dtype=float)
    n = h.shape[-1]
    table = exponents(n, m)
    if h.ndim == 1:
        return np.prod(h[None, :] ** table, axis=1)
    return np.prod(h[:, None, :] ** table[None, :, :], axis=2)


def recenter_matrix(n, m, h):
    """Matrix taking Taylor coefficients about x to coefficients about x + h."""
    h = np.asarray(h, dtype=float).reshape(n)
    rows, cols, binomials, gaps = _shift_table(n, m)
    size = dim_poly(n, m)
    matrix = np.zeros((size, size))
    matrix[rows, cols] = binomials * np.prod(h[None, :] ** gaps, axis=1)
    return matrix


def block_diagonal(matrix, d):
    """The action of a scalar coefficient map on (P_{m,n})^d, component-major."""
    return np.kron(np.eye(d), matrix)


def _as_point(point):
    point = np.array(point, dtype=float).reshape(-1)
    if point.size == 0:
        raise InvalidInputError("a basepoint needs at least one coordinate")
    return point


def same_point(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return x.shape == y.shape and np.allclose(x, y, rtol=0.0, atol=BASEPOINT_ATOL)


# --- Jets ---

@dataclass(frozen=True, eq=False)
class Jet:
    """A scalar m-jet at ``basepoint``; immutable."""

    basepoint: np.ndarray
    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        basepoint = _as_point(self.basepoint)
        order = int(self.order)
        if order < 0:
            raise InvalidInputError(f"jet order must be >= 0, got {order}")
        coeffs = np.array(self.coeffs, dtype=float).reshape(-1)
        expected = dim_poly(basepoint.size, order)
        if coeffs.size != expected:
            raise InvalidInputError(
                f"a jet of order {order} in {basepoint.size} variables has {expected} "
                f"coefficients, got {coeffs.size}"
            )
        basepoint.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "basepoint", basepoint)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def n(self):
        return self.basepoint.size

    @classmethod
    def zero(cls, basepoint, order):
        basepoint = _as_point(basepoint)
        return cls(basepoint, order, np.zeros(dim_poly(basepoint.size, order)))

    @classmethod
    def constant(cls, value, basepoint, order):
        jet = cls.zero(basepoint, order)
        coeffs = jet.coeffs.copy()
        coeffs[0] = value
        return cls(jet.basepoint, order, coeffs)

    @classmethod
    def monomial(cls, alpha, basepoint, order, coeff=1.0):
        """coeff * (xhat - basepoint)^alpha as a jet at basepoint."""
        basepoint = _as_point(basepoint)
        if len(alpha) != basepoint.size:
            raise InvalidInputError(f"multi-index {alpha} does not match n={basepoint.size}")
        coeffs = np.zeros(dim_poly(basepoint.size, order))
        coeffs[index_of(alpha, order)] = coeff
        return cls(basepoint, order, coeffs)

    @classmethod
    def from_terms(cls, terms, n, order=None):
        """The polynomial sum(c * x^alpha) as a jet at the origin.

        ``terms`` is an iterable of ``(exponents, coefficient)``. The order
        defaults to the degree of the polynomial, so the jet is exact.
        """
        terms = [(tuple(int(a) for a in alpha), float(c)) for alpha, c in terms]
        for alpha, _ in terms:
            if len(alpha) != n:
                raise InvalidInputError(f"term exponents {alpha} do not match n={n}")
        degree = max((sum(alpha) for alpha, _ in terms), default=0)
        order = degree if order is None else int(order)
        if degree > order:
            raise InvalidInputError(f"polynomial of degree {degree} exceeds order {order}")
        coeffs = np.zeros(dim_poly(n, order))
        for alpha, c in terms:
            coeffs[index_of(alpha, order)] += c
        return cls(np.zeros(n), order, coeffs)

    def derivatives(self):
        """d^alpha P(basepoint) for every multi-index."""
        return self.coeffs * factorials(self.n, self.order)

    def __call__(self, y):
        return jet_eval(self, y)

    def _combine(self, other, sign):
        _check_compatible(self, other)
        return Jet(self.basepoint, self.order, self.coeffs + sign * other.coeffs)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __neg__(self):
        return Jet(self.basepoint, self.order, -self.coeffs)

    def __mul__(self, scalar):
        return Jet(self.basepoint, self.order, float(scalar) * self.coeffs)

    __rmul__ = __mul__

    def __repr__(self):
        return f"Jet(basepoint={self.basepoint.tolist()}, order={self.order}, coeffs={self.coeffs.tolist()})"


def _check_compatible(P, Q):
    if P.order != Q.order:
        raise InvalidInputError(f"jet orders differ: {P.order} vs {Q.order}")
    if not same_point(P.basepoint, Q.basepoint):
        raise InvalidInputError(
            f"jets live at different basepoints: {P.basepoint.tolist()} vs {Q.basepoint.tolist()}"
        )


def jet_eval(P, y):
    """Value of the polynomial represented by P at y."""
    y = np.asarray(y, dtype=float).reshape(P.n)
    return float(monomial_values(y - P.basepoint, P.order) @ P.coeffs)


def jet_multiply(P, Q):
    """P (.) Q = J^m_x(PQ), the truncated product at the common basepoint."""
    _check_compatible(P, Q)
    rows, cols, targets = _product_table(P.n, P.order)
    coeffs = np.bincount(
        targets, weights=P.coeffs[rows] * Q.coeffs[cols], minlength=P.coeffs.size
    )
    return Jet(P.basepoint, P.order, coeffs)


def multiplication_matrix(P):
    """Matrix M with coeffs(P (.) Q) = M @ coeffs(Q)."""
    rows, cols, targets = _product_table(P.n, P.order)
    size = P.coeffs.size
    matrix = np.zeros((size, size))
    np.add.at(matrix, (targets, cols), P.coeffs[rows])
    return matrix


def jet_recenter(P, y):
    """The same polynomial with coefficients about y."""
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != P.n:
        raise InvalidInputError(f"point {y.tolist()} does not live in R^{P.n}")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("cannot recenter at a non-finite point")
    matrix = recenter_matrix(P.n, P.order, y - P.basepoint)
    return Jet(y, P.order, matrix @ P.coeffs)


def jet_deriv_eval(P, alpha, y):
    """d^alpha P(y), exact for the represented polynomial."""
    alpha = tuple(int(a) for a in alpha)
    if len(alpha) != P.n:
        raise InvalidInputError(f"multi-index {alpha} does not match n={P.n}")
    k = index_of(alpha, P.order)
    shifted = jet_recenter(P, y)
    return float(shifted.coeffs[k] * factorials(P.n, P.order)[k])


def jet_project(P, order):
    """Drop the coefficients of degree > order (the natural projection)."""
    order = int(order)
    if order > P.order:
        raise InvalidInputError(f"cannot project a jet of order {P.order} to order {order}")
    if order < 0:
        raise InvalidInputError(f"projection order must be >= 0, got {order}")
    return Jet(P.basepoint, order, P.coeffs[: dim_poly(P.n, order)])


def jet_with_order(P, order):
    """Project down, or pad with zero coefficients up to the requested order."""
    if order <= P.order:
        return jet_project(P, order)
    coeffs = np.zeros(dim_poly(P.n, order))
    coeffs[: P.coeffs.size] = P.coeffs
    return Jet(P.basepoint, order, coeffs)


def jet_of_polynomial(poly, x, order):
    """J^order_x of the polynomial represented (exactly) by ``poly``."""
    return jet_with_order(jet_recenter(poly, x), order)


def jet_inverse(P):
    """Multiplicative inverse in the jet ring; needs P(basepoint) != 0."""
    c0 = P.coeffs[0]
    if abs(c0) < 1e-300:
        raise InvalidInputError("a jet with zero constant term is not invertible")
    one = Jet.constant(1.0, P.basepoint, P.order)
    nilpotent = P * (1.0 / c0) - one
    result = one
    for _ in range(P.order):
        result = one - jet_multiply(nilpotent, result)
    return result * (1.0 / c0)


# --- Vector-valued jets ---

@dataclass(frozen=True, eq=False)
class JetVec:
    """A d-tuple of m-jets at one basepoint, an element of (P_{m,n})^d.

    ``coeffs`` has shape (d, N); row j holds the Taylor coefficients of P_j.
    """

    basepoint: np.ndarray
    order: int
    coeffs: np.ndarray

    def __post_init__(self):
        basepoint = _as_point(self.basepoint)
        order = int(self.order)
        size = dim_poly(basepoint.size, order)
        coeffs = np.array(self.coeffs, dtype=float)
        if coeffs.ndim == 1:
            coeffs = coeffs.reshape(1, -1)
        if coeffs.ndim != 2 or coeffs.shape[1] != size or coeffs.shape[0] < 1:
            raise InvalidInputError(
                f"expected a (d, {size}) coefficient array, got shape {coeffs.shape}"
            )
        basepoint.setflags(write=False)
        coeffs.setflags(write=False)
        object.__setattr__(self, "basepoint", basepoint)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def n(self):
        return self.basepoint.size

    @property
    def d(self):
        return self.coeffs.shape[0]

    @property
    def components(self):
        return tuple(Jet(self.basepoint, self.order, row) for row in self.coeffs)

    @classmethod
    def from_jets(cls, jets):
        jets = list(jets)
        if not jets:
            raise InvalidInputError("a JetVec needs at least one component")
        for other in jets[1:]:
            _check_compatible(jets[0], other)
        return cls(jets[0].basepoint, jets[0].order, np.vstack([j.coeffs for j in jets]))

    @classmethod
    def from_vector(cls, vector, basepoint, order, d):
        basepoint = _as_point(basepoint)
        vector = np.asarray(vector, dtype=float).reshape(d, dim_poly(basepoint.size, order))
        return cls(basepoint, order, vector)

    @classmethod
    def zero(cls, basepoint, order, d):
        basepoint = _as_point(basepoint)
        return cls(basepoint, order, np.zeros((d, dim_poly(basepoint.size, order))))

    @classmethod
    def from_polynomials(cls, polys, x, order):
        """(J^order_x F_1, ..., J^order_x F_d) for polynomial jets F_j."""
        return cls.from_jets(jet_of_polynomial(p, x, order) for p in polys)

    def to_vector(self):
        return self.coeffs.reshape(-1).copy()

    def derivatives(self):
        return self.coeffs * factorials(self.n, self.order)[None, :]

    def recenter(self, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self.n:
            raise InvalidInputError(f"point {y.tolist()} does not live in R^{self.n}")
        matrix = recenter_matrix(self.n, self.order, y - self.basepoint)
        return JetVec(y, self.order, self.coeffs @ matrix.T)

    def project(self, order):
        return JetVec.from_jets(jet_project(j, order) for j in self.components)

    def __add__(self, other):
        _check_compatible(self, other)
        return JetVec(self.basepoint, self.order, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_compatible(self, other)
        return JetVec(self.basepoint, self.order, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return JetVec(self.basepoint, self.order, float(scalar) * self.coeffs)

    __rmul__ = __mul__

    def __repr__(self):
        return f"JetVec(basepoint={self.basepoint.tolist()}, order={self.order}, coeffs={self.coeffs.tolist()})"
