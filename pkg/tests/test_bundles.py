import numpy as np
import pytest
from numpy.testing import assert_allclose

from whitney_bundles.bundles import (
    BhkInstance,
    Bundle,
    bhk_fiber,
    bundle_fiber,
    bundle_from_bhk,
    bundle_from_fibers,
    bundle_from_interpolation,
    check_distinct,
    multiscale_points,
)
from whitney_bundles.exceptions import InvalidInputError
from whitney_bundles.jets import Jet
from whitney_bundles.linspaces import AffineFiber


def test_bhk_fiber_cases():
    x = [0.5]
    assert bhk_fiber(x, [0.0], 0.0, 1).dim == 2
    assert bhk_fiber(x, [0.0], 1.0, 1).is_empty
    fiber = bhk_fiber(x, [1.0], 2.0, 1)
    assert fiber.dim == 1
    assert fiber.contains([2.0, 7.0])
    assert not fiber.contains([1.0, 7.0])


def test_bhk_fiber_vector_valued():
    fiber = bhk_fiber([0.0, 0.0], [1.0, 2.0], 3.0, 0)
    assert fiber.d == 2
    assert fiber.dim == 1
    assert fiber.contains([1.0, 1.0])
    assert fiber.contains([3.0, 0.0])


def test_bundle_from_bhk_marks_origin_empty():
    points = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    inst = BhkInstance(points, [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [1.0, 1.0, 1.0])
    bundle = bundle_from_bhk(inst, 1)
    assert bundle.has_empty
    assert bundle.first_empty_index() == 0
    assert bundle.dimensions() == [-1, 5, 5]
    assert bundle.total_dimension() == 10


def test_bhk_instance_shapes():
    with pytest.raises(InvalidInputError):
        BhkInstance([[0.0], [1.0]], [[1.0, 1.0, 1.0]], [1.0, 1.0])
    with pytest.raises(InvalidInputError):
        BhkInstance([[0.0], [1.0]], [[1.0, 1.0]], [1.0])


def test_bhk_from_polynomials_and_resample():
    x = Jet.from_terms([((1,), 1.0)], 1)
    one = Jet.from_terms([((0,), 1.0)], 1)
    inst = BhkInstance.from_polynomials([[0.5], [2.0]], [x], one)
    assert_allclose(inst.f_values, [[0.5, 2.0]])
    assert_allclose(inst.phi_values, [1.0, 1.0])
    moved = inst.resample([[3.0]])
    assert_allclose(moved.f_values, [[3.0]])
    with pytest.raises(InvalidInputError):
        BhkInstance([[0.0]], [[1.0]], [1.0]).resample([[1.0]])


def test_interpolation_bundle():
    bundle = bundle_from_interpolation([0.0, 1.0, 3.0], [1.0, 2.0, 4.0], 1)
    assert bundle.n == 1 and bundle.d == 1 and bundle.m == 1
    assert bundle.dimensions() == [0 + 1] * 3
    assert bundle.fiber([1.0]).contains([2.0, -9.0])
    assert bundle_fiber(bundle, [3.0]) is bundle.fibers[2]
    assert_allclose(bundle.nearest_neighbor_distances(), [1.0, 1.0, 2.0])


def test_duplicate_points_rejected():
    with pytest.raises(InvalidInputError, match="#0 and #2"):
        bundle_from_interpolation([0.0, 1.0, 0.0], [1.0, 2.0, 3.0], 1)
    check_distinct(np.array([[0.0], [1.0]]))


def test_unknown_point():
    bundle = bundle_from_interpolation([0.0, 1.0], [1.0, 2.0], 0)
    with pytest.raises(InvalidInputError):
        bundle.fiber([0.5])


def test_fiber_must_match_order_and_point():
    fiber = AffineFiber.full([0.0], 1, 1)
    with pytest.raises(InvalidInputError):
        Bundle(np.array([[0.0]]), (fiber,), 2, 1)
    with pytest.raises(InvalidInputError):
        bundle_from_fibers([[1.0]], [fiber], 1, 1)


def test_with_fibers_keeps_points():
    bundle = bundle_from_interpolation([0.0, 1.0], [1.0, 2.0], 1)
    empty = bundle.with_fibers([AffineFiber.empty([0.0], 1, 1), bundle.fibers[1]])
    assert empty.first_empty_index() == 0
    assert bundle.first_empty_index() is None


def test_multiscale_points():
    points = multiscale_points([0.0], [[1.0]], [0, 1])
    assert_allclose(points[:, 0], [-1.0, -0.5, 0.0, 0.5, 1.0])
    no_center = multiscale_points([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], [2], include_center=False)
    assert len(no_center) == 4


def test_bhk_fiber_points_solve_the_equation(rng):
    points = rng.uniform(-1.0, 1.0, (5, 2))
    inst = BhkInstance(points, rng.uniform(-1.0, 1.0, (2, 5)), rng.uniform(-1.0, 1.0, 5))
    bundle = bundle_from_bhk(inst, 1)
    size = 3
    assert bundle.dimensions() == [2 * size - 1] * 5
    for k, fiber in enumerate(bundle.fibers):
        p = fiber.sample(rng)
        total = p[0] * inst.f_values[0, k] + p[size] * inst.f_values[1, k]
        assert abs(total - inst.phi_values[k]) <= 1e-10
