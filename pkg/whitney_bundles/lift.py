"""Scalar reduction: vector jets at x become scalar jets at (x, 0).

A d-tuple of m-jets (P_1, ..., P_d) at x in R^n lifts to the scalar
(m+1)-jet sum_j vhat_j P_j(xhat) at (x, 0) in R^{n+d}, with variables ordered
(xhat_1, ..., xhat_n, vhat_1, ..., vhat_d). Lifted jets, submodules and
bundles are ordinary objects of the jets/linspaces/bundles modules with
parameters (n + d, m + 1, d = 1).
"""

import logging
from functools import lru_cache

import numpy as np

from .bundles import Bundle
from .exceptions import InvalidInputError
from .finiteness import ConvexKind, WhitneyConvexSet
from .jets import Jet, JetVec, dim_poly, index_map, multi_indices
from .linspaces import AffineFiber, LinSubspace, is_submodule
from .whitney import JetField

logger = logging.getLogger(__name__)

# A lifted jet is a Jet of order m+1 in n+d variables.
LiftedJet = Jet


@lru_cache(maxsize=None)
def _lift_positions(n, d, m):
    """pos[j, a]: lifted index of the monomial xhat^alpha_a * vhat_j."""
    lookup = index_map(n + d, m + 1)
    positions = np.zeros((d, dim_poly(n, m)), dtype=int)
    for a, alpha in enumerate(multi_indices(n, m)):
        for j in range(d):
            beta = tuple(1 if k == j else 0 for k in range(d))
            positions[j, a] = lookup[tuple(alpha) + beta]
    positions.setflags(write=False)
    return positions


@lru_cache(maxsize=None)
def _v_degrees(n, d, m):
    table = np.array([sum(g[n:]) for g in multi_indices(n + d, m + 1)], dtype=int)
    table.setflags(write=False)
    return table


def lifted_point(x, d):
    return np.concatenate([np.asarray(x, dtype=float).reshape(-1), np.zeros(d)])


def lift_jet(P):
    """sum_j vhat_j P_j as an (m+1)-jet at (x, 0)."""
    n, d, m = P.n, P.d, P.order
    coeffs = np.zeros(dim_poly(n + d, m + 1))
    coeffs[_lift_positions(n, d, m)] = P.coeffs
    return Jet(lifted_point(P.basepoint, d), m + 1, coeffs)


def _split(G, d):
    if isinstance(G, JetVec):
        if G.d != 1:
            raise InvalidInputError("a lifted jet is scalar")
        G = G.components[0]
    n = G.n - d
    if n < 1 or G.order < 1:
        raise InvalidInputError(f"not a lifted jet for d={d}: n+d={G.n}, order {G.order}")
    if np.any(G.basepoint[n:] != 0.0):
        raise InvalidInputError("lifted jets live at basepoints (x, 0)")
    return G, n


def unlift(G, d):
    """((d/dvhat_j) G restricted to vhat = 0)_j as a d-tuple of m-jets at x."""
    G, n = _split(G, d)
    coeffs = G.coeffs[_lift_positions(n, d, G.order - 1)]
    return JetVec(G.basepoint[:n], G.order - 1, coeffs)


def restrict_to_zero(G, d):
    """G(xhat, 0) as an (m+1)-jet at x."""
    G, n = _split(G, d)
    mask = _v_degrees(n, d, G.order - 1) == 0
    return Jet(G.basepoint[:n], G.order, G.coeffs[mask])


def unlift_field(field, d):
    points = field.points[:, : field.n - d]
    return JetField(points, tuple(unlift(jet, d) for jet in field.jets))


def lift_submodule(space, x, m, d):
    """The ideal of lifted jets vanishing on vhat = 0 whose vhat-derivatives lie in ``space``.

    Spanned by the lifts of a basis of ``space`` and every monomial of
    vhat-degree >= 2.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if not is_submodule(space, x, m, d):
        raise InvalidInputError("only submodules lift to ideals")
    n = x.size
    ambient = dim_poly(n + d, m + 1)
    positions = _lift_positions(n, d, m).reshape(-1)
    rows = np.zeros((space.dim, ambient))
    rows[:, positions] = space.basis
    high = np.flatnonzero(_v_degrees(n, d, m) >= 2)
    units = np.zeros((high.size, ambient))
    units[np.arange(high.size), high] = 1.0
    return LinSubspace(ambient, np.vstack([rows, units]))


def lift_sigma(sigma):
    """The lifted set as a submodule set at (x, 0); only submodule sets lift linearly."""
    if sigma.kind is not ConvexKind.SUBMODULE:
        raise InvalidInputError("only SUBMODULE sets have a linear lift")
    core = lift_submodule(sigma.core, sigma.basepoint, sigma.order, sigma.d)
    return WhitneyConvexSet.submodule(core, lifted_point(sigma.basepoint, sigma.d), sigma.order + 1, 1)


def lift_sigma_membership(sigma, G, tol=1e-8):
    """G restricts to 0 on vhat = 0 and its vhat-derivatives lie in sigma."""
    G, _ = _split(G, sigma.d)
    restriction = restrict_to_zero(G, sigma.d)
    if np.max(np.abs(restriction.coeffs), initial=0.0) > tol * max(1.0, float(np.linalg.norm(G.coeffs))):
        return False
    return sigma.contains(unlift(G, sigma.d).to_vector(), tol=tol)


def lift_bundle(bundle):
    """The scalar bundle lift(base) + lifted ideal over E x {0} in R^{n+d}."""
    n, m, d = bundle.n, bundle.m, bundle.d
    points = np.hstack([bundle.points, np.zeros((bundle.size, d))])
    fibers = []
    for x, lifted, fiber in zip(bundle.points, points, bundle.fibers):
        if fiber.is_empty:
            fibers.append(AffineFiber.empty(lifted, m + 1, 1))
            continue
        base = lift_jet(fiber.base_jet).coeffs
        directions = lift_submodule(fiber.directions, x, m, d)
        fibers.append(AffineFiber.from_base_and_directions(base, directions, lifted, m + 1, 1))
    logger.debug(f"lifted a bundle over {bundle.size} points to R^{n + d}, order {m + 1}")
    return Bundle(points, tuple(fibers), m + 1, 1)
