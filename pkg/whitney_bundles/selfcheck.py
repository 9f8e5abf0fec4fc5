"""Randomized checks of the algebra the decision procedure relies on.

Each check returns a ``CheckResult`` with the largest residual seen; the
``selfcheck`` command runs all of them.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .finiteness import WhitneyConvexSet, convexity_check, modulus_make
from .jets import Jet, degrees, dim_poly, jet_multiply, multi_indices
from .lift import lift_sigma, lift_submodule, lifted_point
from .linspaces import LinSubspace, submodule_closure

logger = logging.getLogger(__name__)

RING_TOL = 1e-11
IDEAL_TOL = 1e-10


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    cases: int
    max_residual: float

    def to_dict(self):
        return {"passed": self.passed, "cases": self.cases, "max_residual": self.max_residual}


def random_jet(rng, n, m, basepoint=None):
    x = rng.uniform(-1.0, 1.0, n) if basepoint is None else basepoint
    return Jet(x, m, rng.uniform(-1.0, 1.0, dim_poly(n, m)))


def naive_product(P, Q):
    """Full product of the two polynomials in powers of (xhat - x), then truncation."""
    full = {}
    for a, ca in zip(multi_indices(P.n, P.order), P.coeffs):
        for b, cb in zip(multi_indices(Q.n, Q.order), Q.coeffs):
            gamma = tuple(i + j for i, j in zip(a, b))
            full[gamma] = full.get(gamma, 0.0) + ca * cb
    coeffs = [full.get(alpha, 0.0) for alpha in multi_indices(P.n, P.order)]
    return Jet(P.basepoint, P.order, coeffs)


def check_ring_laws(trials=10000, seed=0, max_n=3, max_m=3):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, max_n + 1))
        m = int(rng.integers(0, max_m + 1))
        P = random_jet(rng, n, m)
        Q = random_jet(rng, n, m, P.basepoint)
        R = random_jet(rng, n, m, P.basepoint)
        PQ = jet_multiply(P, Q)
        worst = max(
            worst,
            float(np.max(np.abs(PQ.coeffs - jet_multiply(Q, P).coeffs))),
            float(np.max(np.abs(jet_multiply(PQ, R).coeffs - jet_multiply(P, jet_multiply(Q, R)).coeffs))),
            float(np.max(np.abs(PQ.coeffs - naive_product(P, Q).coeffs))),
        )
    return CheckResult("ring_laws", worst <= RING_TOL, trials, worst)


def random_submodule(rng, x, m, d):
    """Closure of a few random vectors supported in degrees >= a random floor."""
    n = np.size(x)
    size = dim_poly(n, m)
    floor = int(rng.integers(0, m + 2))
    mask = np.tile(degrees(n, m) >= floor, d)
    count = int(rng.integers(0, 3))
    vectors = rng.standard_normal((count, d * size)) * mask[None, :]
    return submodule_closure(LinSubspace.span(vectors, d * size), x, m, d)


def check_lifted_ideals(trials=1000, seed=0):
    """Products with members of a lifted submodule stay in it."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 3))
        d = int(rng.integers(1, 3))
        m = int(rng.integers(0, 3))
        x = rng.uniform(-1.0, 1.0, n)
        ideal = lift_submodule(random_submodule(rng, x, m, d), x, m, d)
        point = lifted_point(x, d)
        member = Jet(point, m + 1, ideal.basis.T @ rng.standard_normal(ideal.dim))
        product = jet_multiply(member, random_jet(rng, n + d, m + 1, point))
        worst = max(worst, ideal.residual(product.coeffs) / max(1.0, float(np.linalg.norm(product.coeffs))))
    return CheckResult("lifted_ideals", worst <= IDEAL_TOL, trials, worst)


def check_lifted_convexity(sets=20, trials=50, seed=0):
    """Lifted submodule sets are Whitney convex with constant 1."""
    rng = np.random.default_rng(seed)
    omega = modulus_make("power", gamma=0.5)
    failures = 0
    for k in range(sets):
        n = int(rng.integers(1, 3))
        d = int(rng.integers(1, 3))
        m = int(rng.integers(0, 2))
        x = rng.uniform(-1.0, 1.0, n)
        sigma = WhitneyConvexSet.submodule(random_submodule(rng, x, m, d), x, m, d)
        result = convexity_check(lift_sigma(sigma), omega, trials, seed=seed + k, whitney_constant=1.0)
        if not result.passed:
            logger.warning(f"lifted convexity failed: {result.reason}")
            failures += 1
    return CheckResult("lifted_convexity", failures == 0, sets, float(failures))


def run_all(seed=0, trials=None):
    """Every check; ``trials`` scales the case counts down for quick runs."""
    scale = 1.0 if trials is None else trials / 1000.0
    results = [
        check_ring_laws(max(1, int(10000 * scale)), seed),
        check_lifted_ideals(max(1, int(1000 * scale)), seed),
        check_lifted_convexity(max(1, int(20 * scale)), 50, seed),
    ]
    for result in results:
        status = "pass" if result.passed else "FAIL"
        logger.info(f"{result.name}: {status} ({result.cases} cases, max residual {result.max_residual:.3e})")
    return results
