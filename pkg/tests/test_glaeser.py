from itertools import combinations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from whitney_bundles.bundles import (
    BhkInstance,
    bundle_from_bhk,
    bundle_from_fibers,
    bundle_from_interpolation,
    multiscale_points,
)
from whitney_bundles.exceptions import InvalidInputError
from whitney_bundles.glaeser import (
    RefinementConfig,
    Status,
    audit_scales,
    decide,
    default_scales,
    enumerate_tuples,
    fixpoint_reached,
    map_points,
    min_over_fibers,
    pair_operator,
    q_form,
    refine_bundle,
    scale_tolerance,
    select_section,
    stabilization_bound,
    stabilize,
    unresolved_points,
)
from whitney_bundles.jets import Jet, JetVec, degrees, dim_poly
from whitney_bundles.linspaces import AffineFiber, LinSubspace


def test_stabilization_bound():
    assert stabilization_bound(1, 1, 1) == 5
    assert stabilization_bound(2, 2, 2) == 25


def test_default_scales():
    scales = default_scales([[0.0], [1.0], [3.0]])
    assert_allclose(scales, [4.0, 2.0, 1.0], rtol=1e-8)
    assert scales[-1] > 1.0
    assert default_scales([[0.0]]) == ()


@pytest.mark.parametrize(
    "options",
    [{"k_sharp": 0}, {"null_threshold": 1.0}, {"tol_min": 0.0}, {"scales": (1.0, 2.0)}, {"scales": ()}],
)
def test_config_validation(options):
    with pytest.raises(InvalidInputError):
        RefinementConfig(**options)


def test_pair_operator_shape():
    L = pair_operator([[0.0], [1.0], [2.0]], 1, 1)
    assert L.shape == (12, 6)


def test_q_form_vanishes_on_polynomial_jets(line_1d):
    xs = [[0.0], [0.5], [2.0]]
    jets = [JetVec.from_polynomials([line_1d], x, 1) for x in xs]
    assert q_form(jets, xs) == pytest.approx(0.0, abs=1e-24)


def test_q_form_constants():
    jets = [JetVec([0.0], 0, [[0.0]]), JetVec([1.0], 0, [[1.0]])]
    assert q_form(jets, [[0.0], [1.0]]) == pytest.approx(2.0)


def test_min_over_fibers():
    P0 = JetVec([0.0], 0, [[0.0]])
    point = AffineFiber.point(JetVec([1.0], 0, [[1.0]]))
    assert min_over_fibers([0.0], P0, [([1.0], point)]) == pytest.approx(2.0)
    assert min_over_fibers([0.0], P0, [([1.0], AffineFiber.full([1.0], 0, 1))]) == pytest.approx(0.0, abs=1e-20)
    assert min_over_fibers([0.0], P0, [([1.0], AffineFiber.empty([1.0], 0, 1))]) == np.inf
    assert min_over_fibers([0.0], P0, []) == 0.0


def test_enumerate_tuples():
    rng = np.random.default_rng(0)
    assert enumerate_tuples([3, 1, 2], 2, 100, rng) == [(1,), (2,), (3,), (1, 2), (1, 3), (2, 3)]
    sampled = enumerate_tuples(range(10), 3, 20, rng)
    assert len(sampled) == 20
    assert sampled[:10] == [(j,) for j in range(10)]
    assert len(set(sampled)) == 20


def test_map_points_keeps_order():
    assert map_points(lambda k: k * k, range(6), 3) == [0, 1, 4, 9, 16, 25]


def test_zero_data_reaches_fixpoint_fast():
    points = multiscale_points([0.0], [[1.0]], range(5))
    bundle = bundle_from_interpolation(points, np.zeros(len(points)), 1)
    verdict = decide(bundle, RefinementConfig())
    assert verdict.status is Status.SOLVABLE
    assert verdict.converged
    assert verdict.iterations <= 2


def test_abs_is_unsolvable(abs_points):
    bundle = bundle_from_interpolation(abs_points, np.abs(abs_points), 1)
    verdict = decide(bundle)
    assert verdict.status is Status.UNSOLVABLE
    assert_allclose(verdict.first_empty_point, [0.0])
    assert verdict.iterations == 1
    zero = verdict.stabilized_bundle.index_of([0.0])
    assert verdict.stabilized_bundle.fibers[zero].is_empty


def test_x_abs_x_is_solvable(abs_points):
    values = abs_points * np.abs(abs_points)
    bundle = bundle_from_interpolation(abs_points, values, 1)
    verdict = decide(bundle)
    assert verdict.status is Status.SOLVABLE
    assert verdict.converged
    assert verdict.unresolved_points == ()
    assert verdict.iterations <= 3
    field = select_section(verdict.stabilized_bundle)
    for value, jet in zip(values, field.jets):
        assert jet.coeffs[0, 0] == pytest.approx(value, abs=1e-8)


def test_bhk_unit_is_solvable():
    points = multiscale_points([0.0], [[1.0]], range(6))
    one = Jet.from_terms([((0,), 1.0)], 1)
    x = Jet.from_terms([((1,), 1.0)], 1)
    bundle = bundle_from_bhk(BhkInstance.from_polynomials(points, [one], x), 1)
    verdict = decide(bundle)
    assert verdict.status is Status.SOLVABLE
    field = select_section(verdict.stabilized_bundle)
    for y, jet in zip(field.points, field.jets):
        assert jet.coeffs[0, 0] == pytest.approx(y[0], abs=1e-8)


def test_bhk_empty_in_round_zero():
    points = multiscale_points([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], range(3))
    x = Jet.from_terms([((1, 0), 1.0)], 2)
    y = Jet.from_terms([((0, 1), 1.0)], 2)
    one = Jet.from_terms([((0, 0), 1.0)], 2)
    verdict = decide(bundle_from_bhk(BhkInstance.from_polynomials(points, [x, y], one), 1))
    assert verdict.status is Status.UNSOLVABLE
    assert verdict.iterations == 0
    assert_allclose(verdict.first_empty_point, [0.0, 0.0])


def _squares_against_product(points):
    x2 = Jet.from_terms([((2, 0), 1.0)], 2)
    y2 = Jet.from_terms([((0, 2), 1.0)], 2)
    xy = Jet.from_terms([((1, 1), 1.0)], 2)
    return bundle_from_bhk(BhkInstance.from_polynomials(points, [x2, y2], xy), 0)


def test_squares_against_product_empties_the_origin():
    # phi1 x^2 + phi2 y^2 = xy: phi1 = 0 on the x-axis, phi2 = 0 on the y-axis, phi1 + phi2 = 1 on the diagonal
    base = multiscale_points([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], range(2, 5))
    twins = base[np.any(base != 0.0, axis=1)] * (1.0 + 1.0 / 64.0)
    bundle = _squares_against_product(np.vstack([base, twins]))
    verdict = decide(bundle, RefinementConfig(scales=(0.2, 0.1, 0.006)))
    assert verdict.status is Status.UNSOLVABLE
    assert_allclose(verdict.first_empty_point, [0.0, 0.0])
    assert verdict.iterations == 1
    stabilized = verdict.stabilized_bundle
    assert [k for k, fiber in enumerate(stabilized.fibers) if fiber.is_empty] == [stabilized.index_of([0.0, 0.0])]


def test_three_point_obstruction_at_the_origin():
    # unknowns (p, q, a, b, c): origin (p, q), x-axis (0, a), diagonal (b, 1 - b), y-axis (c, 0)
    jets = {
        "origin": ([1, 0, 0, 0, 0], [0, 1, 0, 0, 0], [0.0, 0.0]),
        "x": ([0, 0, 0, 0, 0], [0, 0, 1, 0, 0], [0.0, 0.0]),
        "diagonal": ([0, 0, 0, 1, 0], [0, 0, 0, -1, 0], [0.0, 1.0]),
        "y": ([0, 0, 0, 0, 1], [0, 0, 0, 0, 0], [0.0, 0.0]),
    }
    rows, rhs = [], []
    for a, b in combinations(jets, 2):
        for component in range(2):
            # both orders of the pair count at order zero
            row = np.subtract(jets[a][component], jets[b][component]) * np.sqrt(2.0)
            rows.append(row)
            rhs.append((jets[b][2][component] - jets[a][2][component]) * np.sqrt(2.0))
    solution, residual = np.linalg.lstsq(np.array(rows, dtype=float), np.array(rhs), rcond=None)[:2]
    assert float(residual[0]) == pytest.approx(2.0)
    assert_allclose(solution[:2], [0.25, 0.25], atol=1e-12)

    for k in range(2, 12):
        t = 2.0 ** -k
        bundle = _squares_against_product(np.array([[0.0, 0.0], [t, 0.0], [t, t], [0.0, t]]))
        tuple_ = [(bundle.points[j], bundle.fibers[j]) for j in range(4) if j != bundle.index_of([0.0, 0.0])]
        P0 = JetVec([0.0, 0.0], 0, [[0.25], [0.25]])
        assert min_over_fibers([0.0, 0.0], P0, tuple_) == pytest.approx(2.0, rel=1e-9)
        assert min_over_fibers([0.0, 0.0], JetVec([0.0, 0.0], 0, [[0.0], [0.0]]), tuple_) > 2.0


def test_coarse_line_is_inconclusive():
    # continuous data seen only at unit spacing: the order-zero residual stays flat
    bundle = bundle_from_interpolation([0.0, 1.0, 2.0], [0.0, 1.0, 2.0], 0)
    verdict = decide(bundle)
    assert verdict.status is Status.INCONCLUSIVE
    assert verdict.converged
    assert verdict.iterations == 1
    assert len(verdict.unresolved_points) == 3
    assert not verdict.stabilized_bundle.has_empty
    assert unresolved_points(verdict.stabilized_bundle) == [0, 1, 2]


def test_scale_tolerance_grows_with_the_scale():
    cfg = RefinementConfig(tol_min=1e-6)
    assert scale_tolerance(cfg, 0.5, 0.5) == pytest.approx(1e-6)
    assert scale_tolerance(cfg, 2.0, 0.5) == pytest.approx(16e-6)
    assert scale_tolerance(cfg, 0.25, 0.5) == pytest.approx(1e-6)


def test_fixpoint_needs_the_same_base():
    bundle = bundle_from_interpolation([0.0, 1.0], [0.0, 1.0], 1)
    assert fixpoint_reached(bundle, bundle)
    first = bundle.fibers[0]

    def shifted(offset):
        fiber = AffineFiber.from_base_and_directions(first.base + offset, first.directions, [0.0], 1, 1)
        return bundle.with_fibers([fiber, bundle.fibers[1]])

    assert not fixpoint_reached(bundle, shifted(np.array([0.5, 0.0])))
    assert fixpoint_reached(bundle, shifted(5.0 * first.directions.basis[0]))


def test_polynomial_jets_survive_refinement(rng):
    points = rng.uniform(-1.0, 1.0, (12, 2))
    p = Jet.from_terms([((0, 0), 1.0), ((1, 0), 2.0), ((0, 1), -3.0)], 2)
    bundle = bundle_from_interpolation(points, [p(x) for x in points], 1)
    for _ in range(3):
        bundle = refine_bundle(bundle)
        for x, fiber in zip(bundle.points, bundle.fibers):
            target = JetVec.from_polynomials([p], x, 1).to_vector()
            assert not fiber.is_empty
            assert fiber.residual(target) <= 1e-8


def _random_bundle(rng, max_m=1, max_size=6):
    n = int(rng.integers(1, 3))
    m = int(rng.integers(0, max_m + 1))
    d = int(rng.integers(1, 3))
    ambient = d * dim_poly(n, m)
    points = rng.uniform(-1.0, 1.0, (int(rng.integers(2, max_size + 1)), n))
    fibers = []
    for x in points:
        directions = LinSubspace.span(rng.standard_normal((int(rng.integers(0, ambient + 1)), ambient)), ambient)
        fibers.append(AffineFiber.from_base_and_directions(rng.standard_normal(ambient), directions, x, m, d))
    return bundle_from_fibers(points, fibers, m, d)


def test_dimensions_never_grow(rng):
    for _ in range(200):
        bundle = _random_bundle(rng, max_m=2, max_size=12)
        result = stabilize(bundle)
        assert result.iterations <= stabilization_bound(bundle.m, bundle.n, bundle.d)
        for before, after in zip(result.rounds, result.rounds[1:]):
            assert all(b >= a for b, a in zip(before.dimensions, after.dimensions))


def test_refinement_gives_subbundle(rng):
    bundle = _random_bundle(rng)
    refined = refine_bundle(bundle)
    for old, new in zip(bundle.fibers, refined.fibers):
        assert old.contains_fiber(new, tol=1e-6)


def test_threads_do_not_change_results(abs_points):
    bundle = bundle_from_interpolation(abs_points, abs_points * np.abs(abs_points), 1)
    one = refine_bundle(bundle, RefinementConfig(threads=1))
    many = refine_bundle(bundle, RefinementConfig(threads=4))
    for a, b in zip(one.fibers, many.fibers):
        assert a.dim == b.dim
        if not a.is_empty:
            assert_allclose(a.base, b.base, rtol=0.0, atol=0.0)


def test_audit_scales_reports_every_scale(abs_points):
    bundle = bundle_from_interpolation(abs_points, np.zeros(len(abs_points)), 1)
    report = audit_scales(bundle, RefinementConfig(scales=(0.5, 0.01, 1e-6)))
    assert [entry.scale for entry in report] == [0.5, 0.01, 1e-6]
    assert report[-1].points == 0
    assert report[0].points == len(abs_points)


def test_select_section_refuses_empty():
    bundle = bundle_from_interpolation([0.0, 1.0], [0.0, 1.0], 1)
    bundle = bundle.with_fibers([AffineFiber.empty([0.0], 1, 1), bundle.fibers[1]])
    with pytest.raises(InvalidInputError):
        select_section(bundle)


def test_select_section_reproduces_lines(line_1d):
    points = np.linspace(-1.0, 1.0, 7)
    bundle = bundle_from_interpolation(points, [line_1d(x) for x in points], 1)
    field = select_section(bundle)
    for jet in field.jets:
        assert jet.coeffs[0, 1] == pytest.approx(2.0, abs=1e-8)


def test_q_form_scales_with_the_points(rng):
    # F(y / lam) has Taylor coefficients c_alpha * lam^-|alpha| at lam * x
    n, m, d, lam = 2, 2, 2, 3.0
    xs = rng.uniform(-1.0, 1.0, (4, n))
    jets = [JetVec(x, m, rng.standard_normal((d, dim_poly(n, m)))) for x in xs]
    powers = lam ** -degrees(n, m).astype(float)
    scaled = [JetVec(lam * x, m, jet.coeffs * powers[None, :]) for x, jet in zip(xs, jets)]
    assert q_form(scaled, lam * xs) == pytest.approx(lam ** (-2 * m) * q_form(jets, xs), rel=1e-9)
