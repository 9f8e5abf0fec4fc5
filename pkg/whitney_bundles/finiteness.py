"""The C^{m,omega} side: regular moduli, Whitney omega-convex sets, and the
finite-subset feasibility scan.

For a subset S of E the feasibility problem asks for jets P_k at the points
x_k of S satisfying the linear data constraints while keeping

    sum_{k, j, alpha} |d^alpha P_k^j(x_k)|^2
    + sum_{k < k', j, alpha} |d^alpha (P_k^j - P_{k'}^j)(x_k)
                              / (omega(|x_k - x_k'|) |x_k - x_k'|^(m - |alpha|))|^2

small. The constraints are eliminated first: a least-squares particular
solution plus the null space of the constraint matrix, so that the
objective is minimized by an unconstrained least-squares solve. M_S is the
square root of the optimal value.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from math import comb
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from .bundles import BhkInstance, Bundle
from .exceptions import InvalidInputError, ModulusError
from .glaeser import map_points
from .jets import (
    Jet,
    JetVec,
    block_diagonal,
    degrees,
    dim_poly,
    factorials,
    multiplication_matrix,
    recenter_matrix,
)
from .linspaces import CONTAINMENT_TOL, LinSubspace, is_submodule

logger = logging.getLogger(__name__)

MODULUS_GRID = 2001
MODULUS_TOL = 1e-12
CONSTRAINT_TOL = 1e-8
CONVEXITY_DELTAS = (1.0, 0.5, 0.25)


# --- Regular moduli of continuity ---

class ModulusKind(str, Enum):
    POWER = "power"
    TABULATED = "tabulated"


@dataclass(frozen=True, eq=False)
class RegularModulus:
    kind: ModulusKind
    gamma: Optional[float] = None
    table: Optional[np.ndarray] = None

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind is ModulusKind.POWER:
            return t**self.gamma
        return np.interp(t, self.table[:, 0], self.table[:, 1])

    def to_dict(self):
        if self.kind is ModulusKind.POWER:
            return {"kind": self.kind.value, "gamma": float(self.gamma)}
        return {"kind": self.kind.value, "table": self.table.tolist()}


def _validate_modulus(omega):
    t = np.linspace(0.0, 1.0, MODULUS_GRID)
    if omega.kind is ModulusKind.TABULATED:
        t = np.union1d(t, omega.table[:, 0])
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.asarray(omega(t), dtype=float)
    if not np.all(np.isfinite(w)) or abs(w[0]) > MODULUS_TOL:
        raise ModulusError("omega(0) = 0")
    if abs(w[-1] - 1.0) > MODULUS_TOL:
        raise ModulusError("omega(1) = 1")
    if np.any(np.diff(w) < -MODULUS_TOL):
        raise ModulusError("omega increasing")
    ratio = w[1:] / t[1:]
    if np.any(np.diff(ratio) > MODULUS_TOL * np.maximum(1.0, ratio[1:])):
        raise ModulusError("omega(t)/t decreasing")


def modulus_make(kind, gamma=None, table=None):
    """A validated regular modulus.

    ``kind`` is "power" (omega(t) = t^gamma) or "tabulated" (piecewise
    linear through ``table``, a list of (t, omega(t)) pairs covering [0, 1]).
    """
    try:
        kind = ModulusKind(kind)
    except ValueError:
        raise InvalidInputError(f"unknown modulus kind {kind!r}")
    if kind is ModulusKind.POWER:
        if gamma is None:
            raise InvalidInputError("a power modulus needs gamma")
        gamma = float(gamma)
        if gamma <= 0.0:
            raise ModulusError("omega(0) = 0", f"not a regular modulus: omega(0) = 0 violated (gamma = {gamma})")
        omega = RegularModulus(kind, gamma=gamma)
    else:
        if table is None:
            raise InvalidInputError("a tabulated modulus needs a table")
        table = np.asarray(table, dtype=float)
        if table.ndim != 2 or table.shape[1] != 2 or len(table) < 2:
            raise InvalidInputError("a modulus table is a list of (t, omega(t)) pairs")
        if np.any(np.diff(table[:, 0]) <= 0.0):
            raise InvalidInputError("modulus table abscissae must be strictly increasing")
        if table[0, 0] != 0.0 or table[-1, 0] != 1.0:
            raise InvalidInputError("modulus table must start at t = 0 and end at t = 1")
        table.setflags(write=False)
        omega = RegularModulus(kind, table=table)
    _validate_modulus(omega)
    return omega


def modulus_from_dict(data):
    return modulus_make(data.get("kind"), gamma=data.get("gamma"), table=data.get("table"))


# --- Whitney omega-convex sets ---

class ConvexKind(str, Enum):
    SUBMODULE = "SUBMODULE"
    CAPPED = "CAPPED"


@dataclass(frozen=True, eq=False)
class WhitneyConvexSet:
    """A symmetric convex set of jet tuples at one point.

    SUBMODULE sets are linear subspaces. CAPPED sets are core + an ellipsoid
    with semi-axes ``radii`` along the orthogonal complement of the core;
    ``offset`` translates the set and makes it non-symmetric.
    """

    kind: ConvexKind
    basepoint: np.ndarray
    order: int
    d: int
    core: LinSubspace
    radii: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None
    whitney_constant: float = 1.0

    def __post_init__(self):
        basepoint = np.array(self.basepoint, dtype=float).reshape(-1)
        object.__setattr__(self, "basepoint", basepoint)
        if self.core.ambient_dim != self.ambient_dim:
            raise InvalidInputError("core subspace does not live in (P_{m,n})^d")
        if self.kind is ConvexKind.CAPPED:
            count = self.ambient_dim - self.core.dim
            radii = np.broadcast_to(np.asarray(self.radii, dtype=float), (count,)).copy()
            if np.any(radii <= 0.0):
                raise InvalidInputError("ellipsoid radii must be positive")
            object.__setattr__(self, "radii", radii)
        if self.offset is not None:
            object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float).reshape(-1))

    @property
    def n(self):
        return self.basepoint.size

    @property
    def ambient_dim(self):
        return self.d * dim_poly(self.n, self.order)

    @property
    def axes(self):
        return self.core.complement().basis

    @classmethod
    def submodule(cls, space, basepoint, order, d=1):
        return cls(ConvexKind.SUBMODULE, basepoint, order, d, space)

    @classmethod
    def capped(cls, core, radii, basepoint, order, d=1, offset=None, whitney_constant=1.0):
        return cls(ConvexKind.CAPPED, basepoint, order, d, core, radii, offset, whitney_constant)

    def is_symmetric(self):
        return self.offset is None or float(np.linalg.norm(self.offset)) <= MODULUS_TOL

    def contains(self, p, scale=1.0, tol=CONTAINMENT_TOL):
        """Membership of p in scale * sigma."""
        v = np.asarray(p, dtype=float).reshape(-1) / scale
        if self.offset is not None:
            v = v - self.offset
        if self.kind is ConvexKind.SUBMODULE:
            return self.core.contains(v, tol)
        u = self.axes @ v
        return float(np.sum((u / self.radii) ** 2)) <= 1.0 + tol

    def sample(self, rng):
        v = self.core.basis.T @ rng.standard_normal(self.core.dim)
        if self.kind is ConvexKind.CAPPED:
            direction = rng.standard_normal(self.radii.size)
            direction *= rng.uniform() ** (1.0 / max(1, direction.size)) / max(np.linalg.norm(direction), 1e-300)
            v = v + self.axes.T @ (self.radii * direction)
        if self.offset is not None:
            v = v + self.offset
        return v


@dataclass(frozen=True)
class ConvexityResult:
    passed: bool
    reason: str = ""
    counterexample: Optional[dict] = None
    trials: int = 0


def _derivative_bounds(n, m, d, delta, omega_delta):
    """Per-coefficient bounds omega(delta) delta^(m-|alpha|) / alpha!."""
    return np.tile(omega_delta * delta ** (m - degrees(n, m)) / factorials(n, m), d)


def convexity_check(sigma, omega, trials, seed=0, whitney_constant=None):
    """Sample (P, Q, delta) under the two bound families and test P (.) Q in A sigma.

    Jets P are taken on the boundary of the bound box (scaled so that the
    worst derivative bound is tight) and Q uniformly inside its box.
    """
    if trials < 1:
        raise InvalidInputError("convexity_check needs at least one trial")
    if not sigma.is_symmetric():
        return ConvexityResult(False, "symmetry")
    A = sigma.whitney_constant if whitney_constant is None else whitney_constant
    n, m, d = sigma.n, sigma.order, sigma.d
    if sigma.kind is ConvexKind.SUBMODULE and not is_submodule(sigma.core, sigma.basepoint, m, d):
        return ConvexityResult(False, "not a submodule")
    rng = np.random.default_rng(seed)
    fact = factorials(n, m)
    deg = degrees(n, m)
    for trial in range(1, trials + 1):
        delta = float(rng.choice(CONVEXITY_DELTAS))
        bound = _derivative_bounds(n, m, d, delta, float(omega(delta)))
        p = sigma.sample(rng)
        ratio = float(np.max(np.abs(p) / bound))
        if ratio == 0.0:
            continue
        p = p / ratio if sigma.kind is ConvexKind.SUBMODULE else p / max(ratio, 1.0)
        q = rng.uniform(-1.0, 1.0, size=fact.size) * delta ** (-deg.astype(float)) / fact
        Q = Jet(sigma.basepoint, m, q)
        product = block_diagonal(multiplication_matrix(Q), d) @ p
        if not sigma.contains(product, scale=A):
            logger.debug(f"convexity counterexample at trial {trial}, delta {delta}")
            return ConvexityResult(
                False,
                "product outside A sigma",
                {"delta": delta, "p": p.tolist(), "q": q.tolist(), "product": product.tolist()},
                trial,
            )
    return ConvexityResult(True, "", None, trials)


# --- Subset feasibility ---

@dataclass(frozen=True, eq=False)
class SubsetCertificate:
    subset: Tuple[int, ...]
    value: float
    witness: Tuple[JetVec, ...] = field(default_factory=tuple)
    residual: float = 0.0

    @property
    def is_finite(self):
        return bool(np.isfinite(self.value))


def _problem_constraints(problem, k, m):
    """Rows (C, c) of the data constraints at point k; None when inconsistent."""
    if isinstance(problem, BhkInstance):
        size = dim_poly(problem.n, m)
        row = np.zeros(problem.d * size)
        row[np.arange(problem.d) * size] = problem.f_values[:, k]
        return row[None, :], np.array([problem.phi_values[k]])
    fiber = problem.fibers[k]
    if fiber.is_empty:
        return None
    return fiber.constraints()


def _resolve_subset(subset, points):
    indices = []
    for item in subset:
        if np.ndim(item) == 0:
            k = int(item)
            if not 0 <= k < len(points):
                raise InvalidInputError(f"subset index {k} out of range")
        else:
            gaps = np.max(np.abs(points - np.asarray(item, dtype=float)[None, :]), axis=1)
            k = int(np.argmin(gaps))
            if gaps[k] > 1e-12:
                raise InvalidInputError(f"{list(item)} is not a point of E")
        indices.append(k)
    if len(set(indices)) != len(indices):
        raise InvalidInputError("subset repeats a point")
    return tuple(indices)


def _problem_shape(problem, m):
    if isinstance(problem, Bundle):
        return problem.m, problem.d
    if isinstance(problem, BhkInstance):
        if m is None:
            raise InvalidInputError("a BHK instance needs the order m")
        return int(m), problem.d
    raise InvalidInputError("expected a Bundle or a BhkInstance")


def subset_feasibility(subset, problem, omega, m=None, tol=CONSTRAINT_TOL):
    """M_S for one subset S of E (indices, or points of E)."""
    m, d = _problem_shape(problem, m)
    points = problem.points
    subset = _resolve_subset(subset, points)
    if not subset:
        raise InvalidInputError("the subset must not be empty")
    n = points.shape[1]
    size = d * dim_poly(n, m)
    count = len(subset)
    rows, rhs = [], []
    for slot, k in enumerate(subset):
        constraint = _problem_constraints(problem, k, m)
        if constraint is None:
            return SubsetCertificate(subset, np.inf, (), np.inf)
        C, c = constraint
        block = np.zeros((C.shape[0], size * count))
        block[:, slot * size:(slot + 1) * size] = C
        rows.append(block)
        rhs.append(c)
    C = np.vstack(rows)
    c = np.concatenate(rhs)
    fact = np.tile(factorials(n, m), d)
    objective = [np.kron(np.eye(count), np.diag(fact))]
    for a, b in combinations(range(count), 2):
        xa, xb = points[subset[a]], points[subset[b]]
        distance = float(np.linalg.norm(xa - xb))
        if distance > 1.0 or distance == 0.0:
            continue
        weights = fact / (float(omega(distance)) * np.tile(distance ** (m - degrees(n, m)), d))
        block = np.zeros((size, size * count))
        block[:, a * size:(a + 1) * size] = np.diag(weights)
        block[:, b * size:(b + 1) * size] = -weights[:, None] * block_diagonal(
            recenter_matrix(n, m, xa - xb), d
        )
        objective.append(block)
    G = np.vstack(objective)
    particular = scipy.linalg.lstsq(C, c)[0]
    residual = float(np.linalg.norm(C @ particular - c))
    if residual > tol * (1.0 + float(np.linalg.norm(c))):
        return SubsetCertificate(subset, np.inf, (), residual)
    free = scipy.linalg.null_space(C)
    z = particular
    if free.shape[1]:
        t = scipy.linalg.lstsq(G @ free, -(G @ particular))[0]
        z = particular + free @ t
    residual = float(np.linalg.norm(C @ z - c))
    value = float(np.linalg.norm(G @ z))
    witness = tuple(
        JetVec.from_vector(z[slot * size:(slot + 1) * size], points[k], m, d)
        for slot, k in enumerate(subset)
    )
    return SubsetCertificate(subset, value, witness, residual)


@dataclass(frozen=True, eq=False)
class ScanResult:
    sup: float
    certificate: Optional[SubsetCertificate]
    examined: int
    exhaustive: bool


def _subsets(size, k_sharp, budget, rng):
    top = min(int(k_sharp), size)
    total = sum(comb(size, r) for r in range(1, top + 1))
    if total <= budget:
        return [s for r in range(1, top + 1) for s in combinations(range(size), r)], True
    picked = {(k,) for k in range(size)}
    attempts = 0
    while len(picked) < budget and attempts < 20 * budget and top >= 2:
        attempts += 1
        r = int(rng.integers(2, top + 1))
        picked.add(tuple(sorted(int(k) for k in rng.choice(size, size=r, replace=False))))
    return sorted(picked, key=lambda s: (len(s), s)), False


def finiteness_scan(problem, omega, k_sharp, budget=10000, m=None, seed=0, threads=1):
    """sup of M_S over subsets of at most k_sharp points.

    Exhaustive when the subset count fits the budget, otherwise every
    singleton plus seeded random larger subsets. Ties go to the first subset
    in (size, lexicographic) order.
    """
    if int(k_sharp) < 1:
        raise InvalidInputError(f"k_sharp must be >= 1, got {k_sharp}")
    m, _ = _problem_shape(problem, m)
    rng = np.random.default_rng(seed)
    subsets, exhaustive = _subsets(len(problem.points), k_sharp, budget, rng)
    certificates = map_points(lambda s: subset_feasibility(s, problem, omega, m), subsets, threads)
    best = None
    for certificate in certificates:
        if best is None or certificate.value > best.value:
            best = certificate
    logger.info(
        f"scanned {len(subsets)} subsets ({'exhaustive' if exhaustive else 'sampled'}), "
        f"sup M_S = {best.value:.6g}"
    )
    return ScanResult(best.value, best, len(subsets), exhaustive)


def default_k_sharp(m, n, d=1, sigma_dim=None):
    """The classical sufficient subset sizes.

    3 * 2^(n-1) for m = 1 and scalar data, 2^dim P_{m,n} otherwise. With
    ``sigma_dim``, the largest fiber dimension of a Whitney omega-convex
    sigma, the size is 2^min(sigma_dim + 1, dim P_{m,n}).
    """
    if sigma_dim is not None:
        if int(sigma_dim) < 0:
            raise InvalidInputError(f"sigma_dim must be >= 0, got {sigma_dim}")
        return 2 ** min(int(sigma_dim) + 1, dim_poly(n, m))
    if m == 1 and d == 1:
        return 3 * 2 ** (n - 1)
    return 2 ** dim_poly(n, m)
