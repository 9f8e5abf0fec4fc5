import json

import numpy as np
import pytest

from whitney_bundles.jets import Jet


def linear_terms(*coeffs):
    """Terms of c0 + c1 x1 + ... + cn xn for instance files."""
    n = len(coeffs) - 1
    terms = [{"exponents": [0] * n, "coeff": coeffs[0]}]
    for i, c in enumerate(coeffs[1:]):
        terms.append({"exponents": [1 if k == i else 0 for k in range(n)], "coeff": c})
    return terms


@pytest.fixture
def write_spec(tmp_path):
    """Write an instance dict (or raw text) to a file and return its path."""

    def _write(spec, name="instance.json"):
        path = tmp_path / name
        path.write_text(spec if isinstance(spec, str) else json.dumps(spec, indent=2))
        return str(path)

    return _write


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def abs_points():
    """0 and +-2^-s for s = 0..12, where |x| has no C^1 extension."""
    levels = np.arange(13)
    return np.sort(np.concatenate([[0.0], 2.0 ** -levels, -(2.0 ** -levels)]))


@pytest.fixture
def line_1d():
    """The polynomial 1 + 2x as a jet at the origin."""
    return Jet.from_terms([((0,), 1.0), ((1,), 2.0)], 1)
