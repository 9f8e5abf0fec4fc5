"""Glaeser refinement of bundles and the solvability decision.

For a point x0 and a tuple T of nearby points the quadratic form Q compares
jets pairwise, derivative by derivative, weighted by the distance. MIN fixes
the jet at x0 and minimizes Q over the fibers at the points of T; as a
function of the jet at x0 this is a positive semidefinite quadratic q_T. A
refinement pass sums q_T over all tuples at the finest populated scale of
each point and keeps the (numerically) null directions of the sum.

A fiber is emptied when the minimum per tuple exceeds the tolerance of its
scale and does not shrink from the coarsest neighbourhood of the point to
the finest. A point above tolerance whose residual does shrink is refined
as usual and left unresolved; unresolved points make the verdict
INCONCLUSIVE.

Coefficient vectors are stacked component-major, see :mod:`whitney_bundles.jets`.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from math import comb
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from .bundles import Bundle
from .exceptions import InvalidInputError
from .jets import JetVec, block_diagonal, degrees, dim_poly, factorials, recenter_matrix
from .linspaces import AffineFiber, LinSubspace, orthonormal_rows, submodule_core
from .whitney import JetField

logger = logging.getLogger(__name__)

# Default scales are these multiples of the smallest nearest-neighbour distance.
DEFAULT_SCALE_FACTORS = (4.0, 2.0, 1.0)
# Closed balls: a point at exactly the scale distance is inside.
SCALE_SLACK = 1e-9
SUBSPACE_ANGLE_TOL = 1e-6
# Above tolerance, a residual shrinking at least like scale^DECAY_EXPONENT is not grounds for EMPTY.
DECAY_EXPONENT = 1.0


def stabilization_bound(m, n, d):
    """L = 2 dim[(P_{m,n})^d] + 1 refinement rounds always reach a fixpoint."""
    return 2 * d * dim_poly(n, m) + 1


def default_scales(points):
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return ()
    distances, _ = cKDTree(points).query(points, k=2)
    rho = float(distances[:, 1].min())
    return tuple(f * rho * (1.0 + SCALE_SLACK) for f in DEFAULT_SCALE_FACTORS)


@dataclass(frozen=True)
class RefinementConfig:
    k_sharp: int = 2
    scales: Optional[Tuple[float, ...]] = None
    null_threshold: float = 1e-6
    tol_min: float = 1e-6
    snap_to_submodule: bool = True
    tuple_budget: int = 2000
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if int(self.k_sharp) < 1:
            raise InvalidInputError(f"k_sharp must be >= 1, got {self.k_sharp}")
        if not 0.0 < self.null_threshold < 1.0:
            raise InvalidInputError(f"null_threshold must lie in (0, 1), got {self.null_threshold}")
        if self.tol_min <= 0.0:
            raise InvalidInputError(f"tol_min must be positive, got {self.tol_min}")
        if int(self.tuple_budget) < 1:
            raise InvalidInputError(f"tuple_budget must be >= 1, got {self.tuple_budget}")
        if int(self.threads) < 1:
            raise InvalidInputError(f"threads must be >= 1, got {self.threads}")
        if self.scales is not None:
            scales = tuple(float(s) for s in self.scales)
            if not scales or any(s <= 0.0 for s in scales):
                raise InvalidInputError("scales must be a non-empty list of positive radii")
            if any(a <= b for a, b in zip(scales, scales[1:])):
                raise InvalidInputError(f"scales must be strictly decreasing, got {list(scales)}")
            object.__setattr__(self, "scales", scales)

    def resolve_scales(self, bundle):
        if self.scales is not None:
            return self.scales
        return default_scales(bundle.points)


class Status(str, Enum):
    SOLVABLE = "SOLVABLE"
    UNSOLVABLE = "UNSOLVABLE"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class ScaleResidual:
    """Largest per-point minimum per tuple at one scale, and the tolerance there."""

    scale: float
    residual: float
    points: int
    tolerance: float


@dataclass(frozen=True)
class RoundRecord:
    round: int
    dimensions: Tuple[int, ...]

    @property
    def empty_count(self):
        return sum(1 for dim in self.dimensions if dim < 0)

    @property
    def total_dimension(self):
        return sum(dim for dim in self.dimensions if dim >= 0)


@dataclass(frozen=True, eq=False)
class StabilizationResult:
    bundle: Bundle
    iterations: int
    converged: bool
    rounds: Tuple[RoundRecord, ...] = field(default_factory=tuple)


@dataclass(frozen=True, eq=False)
class Verdict:
    status: Status
    stabilized_bundle: Bundle
    iterations: int
    first_empty_point: Optional[np.ndarray]
    scale_report: Tuple[ScaleResidual, ...]
    rounds: Tuple[RoundRecord, ...]
    converged: bool
    unresolved_points: Tuple[np.ndarray, ...] = ()

    @property
    def finest_scale(self):
        return self.scale_report[-1].scale if self.scale_report else None


# --- The quadratic form Q ---

def pair_weights(n, m, d, distance):
    """alpha! / distance^(m - |alpha|), tiled over the d components."""
    weights = factorials(n, m) / distance ** (m - degrees(n, m))
    return np.tile(weights, d)


def _pair_terms(xa, xb, n, m, d):
    """Blocks (on the jet at xa, on the jet at xb) of one ordered pair."""
    weights = pair_weights(n, m, d, float(np.linalg.norm(xa - xb)))
    shift = block_diagonal(recenter_matrix(n, m, xa - xb), d)
    return np.diag(weights), -weights[:, None] * shift


def _operator_for_pairs(xs, pairs, m, d):
    n = xs[0].size
    size = d * dim_poly(n, m)
    blocks = []
    for a, b in pairs:
        block = np.zeros((size, size * len(xs)))
        own, other = _pair_terms(xs[a], xs[b], n, m, d)
        block[:, a * size:(a + 1) * size] = own
        block[:, b * size:(b + 1) * size] = other
        blocks.append(block)
    if not blocks:
        return np.zeros((0, size * len(xs)))
    return np.vstack(blocks)


def pair_operator(xs, m, d):
    """Matrix L with Q = |L z|^2 for stacked coefficient vectors z.

    Block k of z holds the jet at xs[k] in coefficients about xs[k]. Each
    ordered pair (i, i') with xs[i] != xs[i'] contributes the weighted
    derivative differences at xs[i].
    """
    xs = [np.asarray(x, dtype=float).reshape(-1) for x in xs]
    pairs = [
        (i, j)
        for i in range(len(xs))
        for j in range(len(xs))
        if i != j and np.any(xs[i] != xs[j])
    ]
    return _operator_for_pairs(xs, pairs, m, d)


def _stack_about(jets, xs):
    return np.concatenate([jet.recenter(x).to_vector() for jet, x in zip(jets, xs)])


def q_form(jets, xs):
    jets, xs = list(jets), [np.asarray(x, dtype=float) for x in xs]
    if len(jets) != len(xs):
        raise InvalidInputError(f"{len(jets)} jets but {len(xs)} points")
    if not jets:
        return 0.0
    order, d = jets[0].order, jets[0].d
    if any(jet.order != order or jet.d != d for jet in jets):
        raise InvalidInputError("jets passed to Q must share order and d")
    residual = pair_operator(xs, order, d) @ _stack_about(jets, xs)
    return float(residual @ residual)


def _block_columns(blocks, rows):
    """Block-diagonal arrangement of (rows, r_k) column blocks."""
    total = sum(block.shape[1] for block in blocks)
    out = np.zeros((rows * len(blocks), total))
    col = 0
    for k, block in enumerate(blocks):
        out[k * rows:(k + 1) * rows, col:col + block.shape[1]] = block
        col += block.shape[1]
    return out


def _least_squares_residual(A, c):
    """min over t of |A t + c|^2 and the minimum-norm minimizer."""
    if A.shape[1] == 0:
        return float(c @ c), np.zeros(0)
    t = scipy.linalg.lstsq(A, -c)[0]
    residual = A @ t + c
    return float(residual @ residual), t


def min_over_fibers(x0, P0, tuple_):
    """MIN(x0, P0; T): Q minimized over jets in the fibers of T."""
    tuple_ = list(tuple_)
    if any(fiber.is_empty for _, fiber in tuple_):
        return np.inf
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    P0 = P0.recenter(x0)
    if not tuple_:
        return 0.0
    size = P0.coeffs.size
    xs = [x0] + [np.asarray(x, dtype=float).reshape(-1) for x, _ in tuple_]
    L = pair_operator(xs, P0.order, P0.d)
    bases = np.concatenate([fiber.base for _, fiber in tuple_])
    directions = _block_columns([fiber.directions.basis.T for _, fiber in tuple_], size)
    c = L[:, :size] @ P0.to_vector() + L[:, size:] @ bases
    value, _ = _least_squares_residual(L[:, size:] @ directions, c)
    return value


# --- One refinement pass ---

def _scale_units(n, m, d, scale):
    return np.tile(scale ** (m - degrees(n, m)).astype(float), d)


def _scaled_directions(fiber, units):
    """Directions of the fiber, orthonormal in scale-normalized coordinates."""
    raw = fiber.directions.basis.T
    if raw.shape[1] == 0:
        return raw
    q = scipy.linalg.qr(raw / units[:, None], mode="economic")[0]
    return units[:, None] * q


def enumerate_tuples(neighbors, k_sharp, budget, rng):
    """Tuples of at most k_sharp neighbours; sampled beyond the budget.

    Every singleton is always kept. Larger tuples are drawn with ``rng`` when
    the exhaustive count exceeds ``budget``.
    """
    neighbors = sorted(int(j) for j in neighbors)
    top = min(int(k_sharp), len(neighbors))
    total = sum(comb(len(neighbors), r) for r in range(1, top + 1))
    if total <= budget:
        return [t for r in range(1, top + 1) for t in combinations(neighbors, r)]
    tuples = [(j,) for j in neighbors]
    if top < 2:
        return tuples
    seen = set(tuples)
    attempts = 0
    while len(tuples) < budget and attempts < 20 * budget:
        attempts += 1
        r = int(rng.integers(2, top + 1))
        pick = tuple(sorted(int(j) for j in rng.choice(neighbors, size=r, replace=False)))
        if pick not in seen:
            seen.add(pick)
            tuples.append(pick)
    return tuples


def _neighbors(tree, points, k, scale):
    found = tree.query_ball_point(points[k], r=scale)
    return sorted(j for j in found if j != k)


def _point_system(bundle, k, scale, neighbors, cfg, rng):
    """Stacked (A, c) with q_agg(s) = |A s + c|^2 over the fiber at point k.

    The fiber is parametrized as base + D s with D orthonormal in
    scale-normalized coordinates. Returns None if a neighbour fiber is EMPTY.
    """
    if any(bundle.fibers[j].is_empty for j in neighbors):
        return None
    n, m, d = bundle.n, bundle.m, bundle.d
    size = bundle.ambient_dim
    units = _scale_units(n, m, d, scale)
    fiber = bundle.fibers[k]
    own = _scaled_directions(fiber, units)
    scaled = {j: _scaled_directions(bundle.fibers[j], units) for j in neighbors}
    tuples = enumerate_tuples(neighbors, cfg.k_sharp, cfg.tuple_budget, rng)
    A_parts, c_parts = [], []
    for members in tuples:
        xs = [bundle.points[k]] + [bundle.points[j] for j in members]
        L = pair_operator(xs, m, d)
        L0, rest = L[:, :size], L[:, size:]
        bases = np.concatenate([bundle.fibers[j].base for j in members])
        free = rest @ _block_columns([scaled[j] for j in members], size)
        A = L0 @ own
        c = L0 @ fiber.base + rest @ bases
        if free.shape[1]:
            U = orthonormal_rows(free.T, free.shape[0]).T
            A = A - U @ (U.T @ A)
            c = c - U @ (U.T @ c)
        A_parts.append(A)
        c_parts.append(c)
    return np.vstack(A_parts), np.concatenate(c_parts), own, len(tuples)


def neighborhoods(tree, points, k, scales):
    """(scale, neighbours) for every scale with a new neighbour set, coarse to fine.

    Each distinct set is listed once, at the finest scale that carries it.
    """
    out = []
    for scale in scales:
        neighbors = _neighbors(tree, points, k, scale)
        if not neighbors:
            continue
        if out and out[-1][1] == neighbors:
            out[-1] = (scale, neighbors)
        else:
            out.append((scale, neighbors))
    return out


def scale_tolerance(cfg, scale, finest):
    """tol_min at the finest scale, times (scale / finest)^2 above it."""
    return cfg.tol_min * max(1.0, (scale / finest) ** 2)


def _point_minimum(bundle, k, scale, neighbors, cfg):
    """Minimum of the aggregated quadratic divided by the tuple count."""
    system = _point_system(bundle, k, scale, neighbors, cfg, np.random.default_rng([cfg.seed, k]))
    if system is None:
        return np.inf
    A, c, _, count = system
    return _least_squares_residual(A, c)[0] / count


def _diverges(bundle, k, found, residual, cfg):
    """Whether the finest residual fails to shrink against the coarsest neighbourhood."""
    if len(found) < 2:
        return False
    fine_scale = found[-1][0]
    coarse_scale, coarse_neighbors = found[0]
    coarse = _point_minimum(bundle, k, coarse_scale, coarse_neighbors, cfg)
    if not np.isfinite(coarse):
        return True
    return residual > coarse * (fine_scale / coarse_scale) ** DECAY_EXPONENT


def _refine_point(bundle, k, scales, cfg, tree):
    fiber = bundle.fibers[k]
    x0 = bundle.points[k]
    if fiber.is_empty:
        return fiber
    found = neighborhoods(tree, bundle.points, k, scales)
    if not found:
        logger.debug(f"point {x0.tolist()}: isolated at every scale, fiber kept")
        return fiber
    scale, neighbors = found[-1]
    rng = np.random.default_rng([cfg.seed, k])
    system = _point_system(bundle, k, scale, neighbors, cfg, rng)
    if system is None:
        logger.debug(f"point {x0.tolist()}: neighbour fiber EMPTY at scale {scale:g}")
        return AffineFiber.empty(x0, bundle.m, bundle.d)
    A, c, own, count = system
    value, s_star = _least_squares_residual(A, c)
    residual = value / count
    logger.debug(
        f"point {x0.tolist()}: scale {scale:g}, {len(neighbors)} neighbours, "
        f"{count} tuples, residual {residual:.3e}"
    )
    if residual > scale_tolerance(cfg, scale, scales[-1]):
        if _diverges(bundle, k, found, residual, cfg):
            return AffineFiber.empty(x0, bundle.m, bundle.d)
        logger.debug(f"point {x0.tolist()}: above tolerance but shrinking across scales, left unresolved")
    if own.shape[1] == 0:
        return fiber
    eigenvalues, vectors = scipy.linalg.eigh(A.T @ A)
    cut = cfg.null_threshold * (1.0 + float(eigenvalues.max()))
    kept = vectors[:, eigenvalues <= cut]
    base = fiber.base + own @ s_star
    directions = LinSubspace.span((own @ kept).T, bundle.ambient_dim)
    if cfg.snap_to_submodule:
        directions = submodule_core(directions, x0, bundle.m, bundle.d)
    return AffineFiber.from_base_and_directions(base, directions, x0, bundle.m, bundle.d)


def map_points(func, items, threads):
    """Ordered map, threaded when ``threads`` > 1."""
    items = list(items)
    if threads <= 1 or len(items) < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def refine_bundle(bundle, cfg=None):
    """One Glaeser refinement pass; the result is a subbundle of the input."""
    cfg = cfg or RefinementConfig()
    scales = cfg.resolve_scales(bundle)
    tree = cKDTree(bundle.points)
    fibers = map_points(
        lambda k: _refine_point(bundle, k, scales, cfg, tree), range(bundle.size), cfg.threads
    )
    return bundle.with_fibers(fibers)


def fixpoint_reached(before, after, tol=SUBSPACE_ANGLE_TOL):
    """Every fiber kept its dimension, its directions and its position."""
    for old, new in zip(before.fibers, after.fibers):
        if old.dim != new.dim:
            return False
        if old.is_empty:
            continue
        if old.directions.angle_to(new.directions) > tol:
            return False
        if new.residual(old.base) > tol * max(1.0, float(np.linalg.norm(old.base))):
            return False
    return True


def stabilize(bundle, cfg=None):
    """Refine until a fixpoint, an EMPTY fiber, or the stabilization bound."""
    cfg = cfg or RefinementConfig()
    cap = stabilization_bound(bundle.m, bundle.n, bundle.d)
    rounds = [RoundRecord(0, tuple(bundle.dimensions()))]
    current = bundle
    if current.has_empty:
        logger.info("round 0: EMPTY fiber in the input bundle")
        return StabilizationResult(current, 0, True, tuple(rounds))
    for iteration in range(1, cap + 1):
        refined = refine_bundle(current, cfg)
        record = RoundRecord(iteration, tuple(refined.dimensions()))
        rounds.append(record)
        logger.info(
            f"round {iteration}: total dimension {record.total_dimension}, "
            f"{record.empty_count} empty fibers"
        )
        if refined.has_empty or fixpoint_reached(current, refined):
            return StabilizationResult(refined, iteration, True, tuple(rounds))
        current = refined
    logger.info(f"no fixpoint within {cap} rounds")
    return StabilizationResult(current, cap, False, tuple(rounds))


def unresolved_points(bundle, cfg=None):
    """Indices of non-empty fibers whose finest-scale residual is above tolerance."""
    cfg = cfg or RefinementConfig()
    scales = cfg.resolve_scales(bundle)
    tree = cKDTree(bundle.points)

    def above(k):
        if bundle.fibers[k].is_empty:
            return False
        found = neighborhoods(tree, bundle.points, k, scales)
        if not found:
            return False
        scale, neighbors = found[-1]
        return _point_minimum(bundle, k, scale, neighbors, cfg) > scale_tolerance(cfg, scale, scales[-1])

    flags = map_points(above, range(bundle.size), cfg.threads)
    return [k for k, flag in enumerate(flags) if flag]


def audit_scales(bundle, cfg=None):
    """Per-scale residual trace, coarse to fine.

    At each scale, the minimum per tuple is computed for every non-empty
    fiber with a neighbour in its ball; the entry reports the largest of
    these minima next to the tolerance of the scale.
    """
    cfg = cfg or RefinementConfig()
    scales = cfg.resolve_scales(bundle)
    tree = cKDTree(bundle.points)
    report = []
    for scale in scales:
        jobs = []
        for k, fiber in enumerate(bundle.fibers):
            if fiber.is_empty:
                continue
            neighbors = _neighbors(tree, bundle.points, k, scale)
            if neighbors:
                jobs.append((k, neighbors))
        minima = map_points(
            lambda job, scale=scale: _point_minimum(bundle, job[0], scale, job[1], cfg),
            jobs,
            cfg.threads,
        )
        residual = float(max(minima)) if minima else 0.0
        tolerance = scale_tolerance(cfg, scale, scales[-1])
        report.append(ScaleResidual(float(scale), residual, len(jobs), tolerance))
    return tuple(report)


def decide(bundle, cfg=None):
    """SOLVABLE, UNSOLVABLE or INCONCLUSIVE for the stabilized bundle.

    UNSOLVABLE iff a fiber became EMPTY. INCONCLUSIVE when the cap was hit
    without a fixpoint or some point stayed above the tolerance of its
    finest scale without diverging.
    """
    cfg = cfg or RefinementConfig()
    result = stabilize(bundle, cfg)
    stabilized = result.bundle
    if stabilized.has_empty:
        point = stabilized.points[stabilized.first_empty_index()].copy()
        logger.info(f"UNSOLVABLE: EMPTY fiber at {point.tolist()}")
        return Verdict(
            Status.UNSOLVABLE, stabilized, result.iterations, point, (), result.rounds, True
        )
    report = audit_scales(stabilized, cfg)
    unresolved = tuple(stabilized.points[k].copy() for k in unresolved_points(stabilized, cfg))
    if not result.converged or unresolved:
        status = Status.INCONCLUSIVE
    else:
        status = Status.SOLVABLE
    if unresolved:
        logger.info(f"{len(unresolved)} points above tolerance at their finest scale")
    logger.info(f"{status.value} after {result.iterations} rounds")
    return Verdict(
        status, stabilized, result.iterations, None, report, result.rounds, result.converged, unresolved
    )


# --- Section selection ---

def select_section(bundle, neighbors=None):
    """One jet per point, chosen from the fibers to minimize Q over neighbour pairs.

    Each point is paired with its ``neighbors`` nearest points (default
    2n + 2); the minimum-norm least-squares solution is returned as a field.
    """
    if bundle.has_empty:
        raise InvalidInputError("cannot select a section of a bundle with an EMPTY fiber")
    n, m, d = bundle.n, bundle.m, bundle.d
    size = bundle.ambient_dim
    points = bundle.points
    count = bundle.size
    bases = np.concatenate([fiber.base for fiber in bundle.fibers])
    directions = _block_columns([fiber.directions.basis.T for fiber in bundle.fibers], size)
    if count > 1 and directions.shape[1]:
        reach = min(count - 1, neighbors or 2 * n + 2)
        _, nearest = cKDTree(points).query(points, k=reach + 1)
        edges = sorted({(min(i, int(j)), max(i, int(j))) for i in range(count) for j in nearest[i][1:]})
        pairs = [pair for i, j in edges for pair in ((i, j), (j, i))]
        L = _operator_for_pairs(list(points), pairs, m, d)
        _, t = _least_squares_residual(L @ directions, L @ bases)
        coeffs = bases + directions @ t
    else:
        coeffs = bases
    jets = [
        JetVec.from_vector(coeffs[k * size:(k + 1) * size], points[k], m, d) for k in range(count)
    ]
    return JetField(points, tuple(jets))
