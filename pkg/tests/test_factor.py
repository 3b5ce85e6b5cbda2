import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optswitch.factor import FactorGrid, FactorSpec


@settings(max_examples=30, deadline=None)
@given(st.floats(-1.0, 1.0), st.floats(0.0, 0.6), st.integers(11, 41))
def test_rows_are_probabilities(mu, sigma, n_x):
    fg = FactorGrid(FactorSpec.polynomial([mu], [sigma], -1.0, 1.0, n_x, 0.0), 0.01, 10)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        K = fg.kernel(0)
    assert np.all(K >= 0)
    assert np.allclose(K.sum(axis=1), 1.0, atol=1e-14)


def test_interior_moments_match():
    fg = FactorGrid(FactorSpec.polynomial([0.2, -0.5], [0.6], -2.0, 2.0, 41, 0.0), 0.01, 10)
    dm, dv = fg.consistency_errors()
    interior = ~fg.clipped[0]
    assert interior[1:-1].all()
    assert np.max(dm[interior]) < 1e-14 and np.max(dv[interior]) < 1e-14


def test_negative_probabilities_warn_and_flag():
    fg = FactorGrid(FactorSpec.polynomial([5.0], [0.01], 0.0, 1.0, 101, 0.5), 0.1, 1)
    with pytest.warns(RuntimeWarning, match="clipped"):
        K = fg.kernel(0)
    assert fg.clipped[0].any()
    assert np.allclose(K.sum(axis=1), 1.0)


def test_inert_factor_is_identity():
    fg = FactorGrid(FactorSpec.polynomial([0.0], [0.0], -1.0, 1.0, 9, 0.0), 0.01, 5)
    assert np.array_equal(fg.kernel(0), np.eye(9))
    assert list(fg.locate([-1.0, 0.01, 5.0])) == [0, 4, 8]


def test_bad_grid():
    with pytest.raises(ValueError):
        FactorGrid(FactorSpec.polynomial([0.0], [0.0], 1.0, 1.0, 9, 1.0), 0.01, 5)
