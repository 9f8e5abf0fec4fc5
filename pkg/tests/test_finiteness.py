from itertools import combinations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from whitney_bundles.bundles import BhkInstance, bundle_from_interpolation
from whitney_bundles.exceptions import InvalidInputError, ModulusError
from whitney_bundles.finiteness import (
    ConvexKind,
    WhitneyConvexSet,
    convexity_check,
    default_k_sharp,
    finiteness_scan,
    modulus_from_dict,
    modulus_make,
    subset_feasibility,
)
from whitney_bundles.jets import Jet
from whitney_bundles.linspaces import LinSubspace


@pytest.fixture
def omega():
    return modulus_make("power", gamma=0.5)


def test_power_modulus(omega):
    assert omega(0.25) == pytest.approx(0.5)
    assert omega.to_dict() == {"kind": "power", "gamma": 0.5}
    assert modulus_from_dict(omega.to_dict())(0.25) == pytest.approx(0.5)


def test_tabulated_modulus():
    omega = modulus_make("tabulated", table=[[0.0, 0.0], [0.5, 0.8], [1.0, 1.0]])
    assert omega(0.25) == pytest.approx(0.4)
    assert omega(0.75) == pytest.approx(0.9)


@pytest.mark.parametrize(
    "kwargs, condition",
    [
        ({"kind": "power", "gamma": 1.5}, "omega(t)/t decreasing"),
        ({"kind": "power", "gamma": -1.0}, "omega(0) = 0"),
        ({"kind": "tabulated", "table": [[0.0, 0.1], [1.0, 1.0]]}, "omega(0) = 0"),
        ({"kind": "tabulated", "table": [[0.0, 0.0], [1.0, 0.9]]}, "omega(1) = 1"),
        ({"kind": "tabulated", "table": [[0.0, 0.0], [0.5, 1.2], [1.0, 1.0]]}, "omega increasing"),
        ({"kind": "tabulated", "table": [[0.0, 0.0], [0.5, 0.2], [1.0, 1.0]]}, "omega(t)/t decreasing"),
    ],
)
def test_irregular_moduli_name_the_condition(kwargs, condition):
    with pytest.raises(ModulusError) as info:
        modulus_make(**kwargs)
    assert info.value.condition == condition
    assert condition in str(info.value)


def test_modulus_argument_errors():
    with pytest.raises(InvalidInputError):
        modulus_make("log")
    with pytest.raises(InvalidInputError):
        modulus_make("power")
    with pytest.raises(InvalidInputError):
        modulus_make("tabulated", table=[[0.1, 0.0], [1.0, 1.0]])


def _bhk(points, f, phi):
    points = np.asarray(points, dtype=float).reshape(len(points), -1)
    return BhkInstance(points, f, phi)


def test_zero_phi_has_zero_sup(omega):
    inst = _bhk([[0.0], [0.3], [0.7]], [[1.0, 2.0, 3.0]], [0.0, 0.0, 0.0])
    result = finiteness_scan(inst, omega, 2, m=1)
    assert result.sup == pytest.approx(0.0, abs=1e-12)
    assert result.exhaustive
    assert result.examined == 6


def test_inconsistent_point_is_the_witness(omega):
    inst = _bhk([[0.0], [0.3], [0.7]], [[1.0, 0.0, 3.0]], [0.0, 1.0, 0.0])
    result = finiteness_scan(inst, omega, 2, m=1)
    assert result.sup == np.inf
    assert result.certificate.subset == (1,)
    assert result.certificate.witness == ()
    assert not result.certificate.is_finite


def test_singleton_value():
    omega = modulus_make("power", gamma=1.0)
    inst = _bhk([[0.2]], [[2.0]], [3.0])
    certificate = subset_feasibility([0], inst, omega, m=1)
    assert certificate.value == pytest.approx(1.5)
    assert_allclose(certificate.witness[0].coeffs, [[1.5, 0.0]], atol=1e-12)


def test_subset_by_points(omega):
    bundle = bundle_from_interpolation([0.0, 0.5, 0.9], [0.0, 1.0, 0.0], 1)
    by_index = subset_feasibility([0, 2], bundle, omega)
    by_point = subset_feasibility([[0.0], [0.9]], bundle, omega)
    assert by_point.subset == (0, 2)
    assert by_point.value == pytest.approx(by_index.value)
    with pytest.raises(InvalidInputError):
        subset_feasibility([[0.1]], bundle, omega)
    with pytest.raises(InvalidInputError):
        subset_feasibility([0, 0], bundle, omega)


def test_bhk_needs_order(omega):
    with pytest.raises(InvalidInputError):
        subset_feasibility([0], _bhk([[0.0]], [[1.0]], [1.0]), omega)


def _random_bhk(rng, size, n=1, d=1):
    points = rng.uniform(-0.5, 0.5, (size, n))
    return BhkInstance(points, rng.uniform(-1.0, 1.0, (d, size)), rng.uniform(-1.0, 1.0, size))


def test_full_scan_equals_whole_set(rng, omega):
    for size in range(1, 7):
        inst = _random_bhk(rng, size, n=2, d=2)
        scan = finiteness_scan(inst, omega, size, m=1)
        whole = subset_feasibility(range(size), inst, omega, m=1)
        assert scan.sup == pytest.approx(whole.value, rel=1e-8, abs=1e-8)


def test_subsets_are_monotone(rng, omega):
    for _ in range(100):
        inst = _random_bhk(rng, 4)
        values = {
            s: subset_feasibility(s, inst, omega, m=1).value
            for r in range(1, 5)
            for s in combinations(range(4), r)
        }
        for s, value in values.items():
            for t, bigger in values.items():
                if set(s) < set(t):
                    assert value <= bigger * (1 + 1e-6) + 1e-9


def test_sampled_scan_respects_budget(rng, omega):
    inst = _random_bhk(rng, 12)
    result = finiteness_scan(inst, omega, 3, budget=30, m=1, seed=5)
    assert not result.exhaustive
    assert result.examined == 30
    again = finiteness_scan(inst, omega, 3, budget=30, m=1, seed=5, threads=4)
    assert again.sup == result.sup
    assert again.certificate.subset == result.certificate.subset


def test_submodule_set_is_convex(omega):
    slopes = LinSubspace.span([[0.0, 1.0]], 2)
    sigma = WhitneyConvexSet.submodule(slopes, [0.0], 1)
    assert sigma.kind is ConvexKind.SUBMODULE
    assert convexity_check(sigma, omega, 50).passed


def test_non_submodule_is_reported(omega):
    constants = LinSubspace.span([[1.0, 0.0]], 2)
    result = convexity_check(WhitneyConvexSet.submodule(constants, [0.0], 1), omega, 10)
    assert not result.passed
    assert result.reason == "not a submodule"


def test_offset_breaks_symmetry(omega):
    sigma = WhitneyConvexSet.capped(LinSubspace.zero(2), 1.0, [0.0], 1, offset=[1.0, 0.0])
    assert not sigma.is_symmetric()
    assert convexity_check(sigma, omega, 10).reason == "symmetry"


def test_small_cap_fails_with_counterexample(omega):
    sigma = WhitneyConvexSet.capped(LinSubspace.zero(2), [1.0, 1e-6], [0.0], 1)
    result = convexity_check(sigma, omega, 200, whitney_constant=1.0)
    assert not result.passed
    assert result.reason == "product outside A sigma"
    assert set(result.counterexample) == {"delta", "p", "q", "product"}


def test_capped_membership(rng):
    sigma = WhitneyConvexSet.capped(LinSubspace.span([[1.0, 0.0]], 2), 2.0, [0.0], 1)
    assert sigma.contains([100.0, 1.9])
    assert not sigma.contains([0.0, 2.1])
    assert sigma.contains([0.0, 4.0], scale=2.0)
    for _ in range(20):
        assert sigma.contains(sigma.sample(rng))


def test_default_k_sharp():
    assert default_k_sharp(1, 2) == 6
    assert default_k_sharp(2, 1) == 8
    assert default_k_sharp(1, 1, d=2) == 4


def test_default_k_sharp_for_convex_sigma():
    assert default_k_sharp(2, 1, sigma_dim=0) == 2
    assert default_k_sharp(2, 1, sigma_dim=1) == 4
    assert default_k_sharp(2, 1, sigma_dim=5) == 8
    assert default_k_sharp(1, 2, sigma_dim=2) == 8
    with pytest.raises(InvalidInputError):
        default_k_sharp(1, 1, sigma_dim=-1)


def test_close_points_keep_a_finite_value():
    # phi = x with f = 1: P = x at every point; pair weights reach 2^24
    omega = modulus_make("power", gamma=1.0)
    points = [[0.0], [2.0**-12], [2.0**-11]]
    inst = _bhk(points, [[1.0, 1.0, 1.0]], [p[0] for p in points])
    certificate = subset_feasibility(range(3), inst, omega, m=1)
    assert certificate.is_finite
    assert certificate.residual <= 1e-8
    assert certificate.value == pytest.approx(np.sqrt(3.0), rel=1e-6)
    for point, jet in zip(points, certificate.witness):
        assert jet.coeffs[0, 0] == pytest.approx(point[0], abs=1e-12)
        assert jet.coeffs[0, 1] == pytest.approx(1.0, abs=1e-6)


def test_constraint_rows_from_bundle(omega):
    p = Jet.from_terms([((1,), 1.0)], 1)
    bundle = bundle_from_interpolation([0.0, 0.5], [p([0.0]), p([0.5])], 1)
    certificate = subset_feasibility([0, 1], bundle, omega)
    assert certificate.is_finite
    assert_allclose([jet.coeffs[0, 0] for jet in certificate.witness], [0.0, 0.5], atol=1e-10)


def test_witness_satisfies_the_constraints(rng, omega):
    for _ in range(20):
        inst = _random_bhk(rng, 3, n=2, d=2)
        certificate = subset_feasibility(range(3), inst, omega, m=1)
        assert certificate.is_finite
        assert certificate.residual <= 1e-8
        for k, jet in zip(certificate.subset, certificate.witness):
            total = jet.coeffs[0, 0] * inst.f_values[0, k] + jet.coeffs[1, 0] * inst.f_values[1, k]
            assert total == pytest.approx(inst.phi_values[k], abs=1e-8)
