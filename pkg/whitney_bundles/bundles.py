"""Bundles over finite point sets: one affine fiber of (P_{m,n})^d per point."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .exceptions import InvalidInputError
from .jets import BASEPOINT_ATOL, dim_poly, jet_eval
from .linspaces import AffineFiber

logger = logging.getLogger(__name__)

# Data values at or below this size count as zero when classifying fibers.
ZERO_TOL = 1e-14


def as_point_array(points, n=None):
    points = np.array(points, dtype=float)
    if points.ndim == 1:
        points = points.reshape(-1, 1) if n in (None, 1) else points.reshape(1, -1)
    if points.ndim != 2 or points.shape[0] == 0:
        raise InvalidInputError("expected a non-empty (|E|, n) array of points")
    if n is not None and points.shape[1] != n:
        raise InvalidInputError(f"points live in R^{points.shape[1]}, expected R^{n}")
    if not np.all(np.isfinite(points)):
        raise InvalidInputError("points must be finite")
    return points


def check_distinct(points):
    """Raise InvalidInputError naming the first repeated point."""
    if len(points) < 2:
        return
    if pdist(points).min() > BASEPOINT_ATOL:
        return
    pairs = sorted(cKDTree(points).query_pairs(BASEPOINT_ATOL))
    if not pairs:
        raise InvalidInputError("duplicate points")
    i, j = pairs[0]
    raise InvalidInputError(f"duplicate points: #{i} and #{j} are both {points[i].tolist()}")


def multiscale_points(center, directions, levels, include_center=True):
    """Center plus center +- 2^-s * direction for every direction and level s.

    ``levels`` is an iterable of integers. The result is sorted so that the
    point order does not depend on how the directions were listed.
    """
    center = np.asarray(center, dtype=float).reshape(-1)
    directions = np.asarray(directions, dtype=float).reshape(-1, center.size)
    points = [center] if include_center else []
    for s in levels:
        for v in directions:
            for sign in (1.0, -1.0):
                points.append(center + sign * 2.0 ** (-s) * v)
    points = np.unique(np.round(np.array(points), 15), axis=0)
    return points


@dataclass(frozen=True, eq=False)
class BhkInstance:
    """Data of sum_i phi_i f_i = phi on a finite set E.

    ``f_values`` has shape (d, |E|). Polynomial definitions (jets at the
    origin, exact for their degree) are kept when given so the instance can
    be resampled on other points.
    """

    points: np.ndarray
    f_values: np.ndarray
    phi_values: np.ndarray
    f_polynomials: tuple = None
    phi_polynomial: object = None

    def __post_init__(self):
        points = as_point_array(self.points)
        f_values = np.array(self.f_values, dtype=float)
        if f_values.ndim == 1:
            f_values = f_values.reshape(1, -1)
        phi_values = np.array(self.phi_values, dtype=float).reshape(-1)
        if f_values.ndim != 2 or f_values.shape[1] != len(points):
            raise InvalidInputError(
                f"f_values must have shape (d, {len(points)}), got {f_values.shape}"
            )
        if phi_values.size != len(points):
            raise InvalidInputError(
                f"phi_values must have {len(points)} entries, got {phi_values.size}"
            )
        check_distinct(points)
        for array in (points, f_values, phi_values):
            array.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "f_values", f_values)
        object.__setattr__(self, "phi_values", phi_values)
        if self.f_polynomials is not None:
            object.__setattr__(self, "f_polynomials", tuple(self.f_polynomials))

    @property
    def n(self):
        return self.points.shape[1]

    @property
    def d(self):
        return self.f_values.shape[0]

    @property
    def size(self):
        return len(self.points)

    @classmethod
    def from_polynomials(cls, points, f_polynomials, phi_polynomial):
        points = as_point_array(points)
        f_values = [[jet_eval(f, x) for x in points] for f in f_polynomials]
        phi_values = [jet_eval(phi_polynomial, x) for x in points]
        return cls(points, f_values, phi_values, tuple(f_polynomials), phi_polynomial)

    def resample(self, points):
        if self.f_polynomials is None or self.phi_polynomial is None:
            raise InvalidInputError("resampling needs polynomial definitions of f and phi")
        return BhkInstance.from_polynomials(points, self.f_polynomials, self.phi_polynomial)


@dataclass(frozen=True, eq=False)
class Bundle:
    points: np.ndarray
    fibers: tuple
    m: int
    d: int

    def __post_init__(self):
        points = as_point_array(self.points)
        fibers = tuple(self.fibers)
        if len(fibers) != len(points):
            raise InvalidInputError(f"{len(points)} points but {len(fibers)} fibers")
        check_distinct(points)
        for x, fiber in zip(points, fibers):
            if fiber.order != self.m or fiber.d != self.d:
                raise InvalidInputError(
                    f"fiber at {x.tolist()} has order {fiber.order} and d={fiber.d}, "
                    f"expected order {self.m} and d={self.d}"
                )
            if not np.allclose(fiber.basepoint, x, rtol=0.0, atol=BASEPOINT_ATOL):
                raise InvalidInputError(f"fiber based at {fiber.basepoint.tolist()} stored at {x.tolist()}")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "fibers", fibers)
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "d", int(self.d))

    @property
    def n(self):
        return self.points.shape[1]

    @property
    def size(self):
        return len(self.points)

    @property
    def ambient_dim(self):
        return self.d * dim_poly(self.n, self.m)

    def index_of(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.n:
            raise InvalidInputError(f"point {x.tolist()} does not live in R^{self.n}")
        gaps = np.max(np.abs(self.points - x[None, :]), axis=1)
        k = int(np.argmin(gaps))
        if gaps[k] > BASEPOINT_ATOL:
            raise InvalidInputError(f"{x.tolist()} is not a point of the bundle")
        return k

    def fiber(self, x):
        return self.fibers[self.index_of(x)]

    def dimensions(self):
        return [fiber.dim for fiber in self.fibers]

    def total_dimension(self):
        return sum(fiber.dim for fiber in self.fibers if not fiber.is_empty)

    @property
    def has_empty(self):
        return any(fiber.is_empty for fiber in self.fibers)

    def first_empty_index(self):
        for k, fiber in enumerate(self.fibers):
            if fiber.is_empty:
                return k
        return None

    def with_fibers(self, fibers):
        return Bundle(self.points, tuple(fibers), self.m, self.d)

    def nearest_neighbor_distances(self):
        if self.size < 2:
            return np.full(self.size, np.inf)
        distances, _ = cKDTree(self.points).query(self.points, k=2)
        return distances[:, 1]


def bhk_fiber(x, f_at_x, phi_at_x, m):
    """Solution set of sum_j P_j(x) f_j(x) = phi(x) in (P_{m,n})^d."""
    x = np.asarray(x, dtype=float).reshape(-1)
    f_at_x = np.asarray(f_at_x, dtype=float).reshape(-1)
    d = f_at_x.size
    size = dim_poly(x.size, m)
    if np.all(np.abs(f_at_x) <= ZERO_TOL):
        if abs(phi_at_x) <= ZERO_TOL:
            return AffineFiber.full(x, m, d)
        return AffineFiber.empty(x, m, d)
    row = np.zeros(d * size)
    row[np.arange(d) * size] = f_at_x
    return AffineFiber.from_constraints(row[None, :], [phi_at_x], x, m, d)


def bundle_from_bhk(inst, m):
    fibers = [
        bhk_fiber(x, inst.f_values[:, k], inst.phi_values[k], m)
        for k, x in enumerate(inst.points)
    ]
    bundle = Bundle(inst.points, fibers, m, inst.d)
    logger.debug(f"BHK bundle over {bundle.size} points, {sum(f.is_empty for f in fibers)} empty fibers")
    return bundle


def bundle_from_interpolation(points, values, m):
    points = as_point_array(points)
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size != len(points):
        raise InvalidInputError(f"{len(points)} points but {values.size} values")
    check_distinct(points)
    size = dim_poly(points.shape[1], m)
    row = np.zeros(size)
    row[0] = 1.0
    fibers = [
        AffineFiber.from_constraints(row[None, :], [value], x, m, 1)
        for x, value in zip(points, values)
    ]
    return Bundle(points, fibers, m, 1)


def bundle_from_fibers(points, fibers, m, d):
    return Bundle(as_point_array(points), tuple(fibers), m, d)


def bundle_fiber(bundle, x):
    return bundle.fiber(x)
