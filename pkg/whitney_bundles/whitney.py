"""Whitney extension of a jet field on a finite set.

The complement of E inside the bounding cube of the domain box is covered by
dyadic Whitney cubes: the maximal dyadic cubes Q with
``ADMISSIBLE_FACTOR * diam(Q) <= dist(Q, E)``. Cubes are found lazily around
each evaluation point instead of being enumerated up front. Every cube carries
a tensor-product polynomial bump supported on the cube dilated by
``BUMP_REACH`` and the jet of its source point, the point of E nearest to the
cube's center. Normalizing the bumps gives a partition of unity and

    F = sum_Q (theta_Q / sum theta) * P_src(Q)

which is C^m off E. At points of E the stored jets are returned as is.
"""

import logging
from dataclasses import dataclass
from itertools import product
from math import factorial

import numpy as np
from numpy.polynomial import Polynomial
from scipy.spatial import cKDTree

from .bundles import as_point_array, check_distinct
from .exceptions import InvalidInputError
from .jets import (
    BASEPOINT_ATOL,
    Jet,
    JetVec,
    degrees,
    index_of,
    jet_inverse,
    jet_multiply,
    same_point,
)

logger = logging.getLogger(__name__)

ADMISSIBLE_FACTOR = 4.0
# Bump support half-width in units of the cube's half side.
BUMP_REACH = 1.25
MAX_LEVEL = 60
# Neighbouring Whitney cubes differ by at most this many dyadic levels.
LEVEL_SPREAD = 2


@dataclass(frozen=True, eq=False)
class JetField:
    """One m-jet (a JetVec) per point of a finite set E."""

    points: np.ndarray
    jets: tuple

    def __post_init__(self):
        points = as_point_array(self.points)
        jets = tuple(self.jets)
        if len(jets) != len(points):
            raise InvalidInputError(f"{len(points)} points but {len(jets)} jets")
        check_distinct(points)
        for x, jet in zip(points, jets):
            if jet.order != jets[0].order or jet.d != jets[0].d:
                raise InvalidInputError("every jet of a field must share order and d")
            if not same_point(jet.basepoint, x):
                raise InvalidInputError(f"jet based at {jet.basepoint.tolist()} stored at {x.tolist()}")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "jets", jets)

    @property
    def m(self):
        return self.jets[0].order

    @property
    def n(self):
        return self.points.shape[1]

    @property
    def d(self):
        return self.jets[0].d

    @classmethod
    def from_polynomials(cls, points, polys, m):
        points = as_point_array(points)
        return cls(points, tuple(JetVec.from_polynomials(polys, x, m) for x in points))

    def scaled(self, factor):
        return JetField(self.points, tuple(jet * factor for jet in self.jets))


@dataclass(frozen=True)
class WhitneyCube:
    level: int
    index: tuple
    lower: tuple
    side: float

    @property
    def center(self):
        return np.asarray(self.lower) + 0.5 * self.side

    @property
    def diameter(self):
        return self.side * np.sqrt(len(self.index))


class ExtensionFunction:
    """The Whitney extension of a jet field over a box; evaluation is pure."""

    def __init__(self, field, lower, upper):
        self.field = field
        self.lower = np.asarray(lower, dtype=float).reshape(field.n)
        self.upper = np.asarray(upper, dtype=float).reshape(field.n)
        self._root_side = float(np.max(self.upper - self.lower)) or 1.0
        self._tree = cKDTree(field.points)
        self._admissible = {}
        m = field.m
        self._bump_derivatives = [
            (Polynomial([1.0, 0.0, -1.0 / BUMP_REACH**2]) ** (m + 2)).deriv(k) for k in range(m + 1)
        ]

    @property
    def m(self):
        return self.field.m

    def _cube(self, level, index):
        side = self._root_side / 2**level
        lower = tuple(float(v) for v in self.lower + side * np.asarray(index))
        return WhitneyCube(level, tuple(index), lower, side)

    def _distance_to_data(self, cube):
        center = cube.center
        half_diagonal = 0.5 * cube.diameter
        nearest, _ = self._tree.query(center)
        candidates = self._tree.query_ball_point(center, r=nearest + half_diagonal)
        pts = self.field.points[candidates]
        lo = np.asarray(cube.lower)
        gap = np.maximum(np.maximum(lo[None, :] - pts, 0.0), pts - (lo[None, :] + cube.side))
        return float(np.min(np.linalg.norm(gap, axis=1)))

    def _is_admissible(self, level, index):
        key = (level, tuple(index))
        if key not in self._admissible:
            cube = self._cube(level, index)
            self._admissible[key] = ADMISSIBLE_FACTOR * cube.diameter <= self._distance_to_data(cube)
        return self._admissible[key]

    def _is_whitney(self, level, index):
        if any(i < 0 or i >= 2**level for i in index):
            return False
        if not self._is_admissible(level, index):
            return False
        return level == 0 or not self._is_admissible(level - 1, tuple(i // 2 for i in index))

    def _on_data(self, y):
        distance, k = self._tree.query(y)
        return int(k) if distance <= BASEPOINT_ATOL else None

    def _check_domain(self, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        if y.size != self.field.n:
            raise InvalidInputError(f"point {y.tolist()} does not live in R^{self.field.n}")
        if np.any(y < self.lower - 1e-12) or np.any(y > self.lower + self._root_side + 1e-12):
            raise InvalidInputError(f"{y.tolist()} lies outside the extension domain")
        return y

    def whitney_cube(self, y):
        """The Whitney cube containing y (y must be off E)."""
        y = self._check_domain(y)
        if self._on_data(y) is not None:
            raise InvalidInputError(f"{y.tolist()} is a point of E and lies in no Whitney cube")
        for level in range(MAX_LEVEL):
            side = self._root_side / 2**level
            index = tuple(np.clip(np.floor((y - self.lower) / side).astype(int), 0, 2**level - 1))
            if self._is_admissible(level, index):
                return self._cube(level, index)
        raise InvalidInputError(f"{y.tolist()} is too close to E to resolve its Whitney cube")

    def _cubes_near(self, y, level):
        """Whitney cubes whose dilated bump support contains y."""
        spread = 0.5 * (BUMP_REACH - 1.0)
        found = []
        for lv in range(max(0, level - LEVEL_SPREAD), level + LEVEL_SPREAD + 1):
            side = self._root_side / 2**lv
            u = (y - self.lower) / side
            ranges = [range(int(np.ceil(ui - 1.0 - spread)), int(np.floor(ui + spread)) + 1) for ui in u]
            for index in product(*ranges):
                if self._is_whitney(lv, index):
                    found.append(self._cube(lv, index))
        return found

    def _bump_jet(self, cube, y):
        """The m-jet at y of the bump of ``cube``."""
        m, n = self.m, self.field.n
        half = 0.5 * cube.side
        u = (y - cube.center) / half
        if np.any(np.abs(u) >= BUMP_REACH):
            return None
        jet = Jet.constant(1.0, y, m)
        for i in range(n):
            coeffs = np.zeros(jet.coeffs.size)
            for k in range(m + 1):
                alpha = tuple(k if j == i else 0 for j in range(n))
                coeffs[index_of(alpha, m)] = self._bump_derivatives[k](u[i]) / (factorial(k) * half**k)
            jet = jet_multiply(jet, Jet(y, m, coeffs))
        return jet

    def _contributions(self, y):
        cube = self.whitney_cube(y)
        out = []
        for near in self._cubes_near(y, cube.level):
            bump = self._bump_jet(near, y)
            if bump is not None and bump.coeffs[0] > 0.0:
                out.append((near, bump))
        return out

    def weights(self, y):
        """(cube, weight) pairs of the partition of unity at y."""
        y = np.asarray(y, dtype=float).reshape(-1)
        contributions = self._contributions(y)
        total = sum(bump.coeffs[0] for _, bump in contributions)
        return [(cube, bump.coeffs[0] / total) for cube, bump in contributions]

    def source_index(self, cube):
        _, k = self._tree.query(cube.center)
        return int(k)

    def jet_at(self, y):
        """J^m_y F as a JetVec at y."""
        y = self._check_domain(y)
        k = self._on_data(y)
        if k is not None:
            return self.field.jets[k]
        contributions = self._contributions(y)
        total = contributions[0][1]
        for _, bump in contributions[1:]:
            total = total + bump
        inverse = jet_inverse(total)
        result = np.zeros((self.field.d, total.coeffs.size))
        for cube, bump in contributions:
            weight = jet_multiply(bump, inverse)
            source = self.field.jets[self.source_index(cube)].recenter(y)
            for j, component in enumerate(source.components):
                result[j] += jet_multiply(weight, component).coeffs
        return JetVec(y, self.m, result)

    def evaluate(self, y, alpha=None):
        """d^alpha F(y) for every component, as an array of length d."""
        jet = self.jet_at(y)
        if alpha is None:
            return jet.coeffs[:, 0].copy()
        alpha = tuple(int(a) for a in alpha)
        k = index_of(alpha, self.m)
        return jet.derivatives()[:, k].copy()

    def __call__(self, y, alpha=None):
        return self.evaluate(y, alpha)


def extend(field, box):
    """Whitney extension of ``field`` on ``box = (lower, upper)``."""
    if field is None or len(field.points) == 0:
        raise InvalidInputError("cannot extend from an empty set")
    lower, upper = (np.asarray(b, dtype=float).reshape(field.n) for b in box)
    if np.any(upper < lower):
        raise InvalidInputError("box upper corner lies below its lower corner")
    if np.any(field.points < lower - 1e-12) or np.any(field.points > upper + 1e-12):
        raise InvalidInputError("E must lie inside the extension box")
    logger.debug(f"extending a field on {len(field.points)} points over [{lower.tolist()}, {upper.tolist()}]")
    return ExtensionFunction(field, lower, upper)


@dataclass(frozen=True)
class WhitneySeminorm:
    pair_part: float
    jet_part: float

    @property
    def value(self):
        return max(self.pair_part, self.jet_part)


def whitney_seminorm(field, omega):
    """Compatibility of a jet field at the modulus ``omega``.

    ``pair_part`` is the largest |d^alpha(P_x - P_y)(x)| / (omega(|x-y|) |x-y|^(m-|alpha|))
    over ordered pairs at distance at most 1; ``jet_part`` the largest
    |d^alpha P_x(x)|.
    """
    m = field.m
    jet_part = max(float(np.max(np.abs(jet.derivatives()))) for jet in field.jets)
    pair_part = 0.0
    for i, x in enumerate(field.points):
        for j, y in enumerate(field.points):
            distance = float(np.linalg.norm(x - y))
            if i == j or distance == 0.0 or distance > 1.0:
                continue
            gap = (field.jets[i] - field.jets[j].recenter(x)).derivatives()
            scale = float(omega(distance)) * distance ** (m - degrees(field.n, m))
            pair_part = max(pair_part, float(np.max(np.abs(gap) / scale[None, :])))
    return WhitneySeminorm(pair_part, jet_part)
