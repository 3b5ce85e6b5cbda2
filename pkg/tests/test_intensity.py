import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optswitch.intensity import (CappedAffineRate, ConstantRate, PerPlantIntensity, PiecewiseConstantRate,
                                 TabularIntensity, rate_function_from_dict)
from optswitch.modes import build_tables


def test_rate_families():
    assert np.allclose(ConstantRate(2.0)(np.array([0.0, 1.0])), 2.0)
    pc = PiecewiseConstantRate([0.0, 0.5], [1.0, 3.0])
    assert pc(0.2) == 1.0 and pc(0.5) == 3.0 and pc(-1.0) == 1.0
    assert pc.bound == 3.0 and pc.lipschitz == np.inf
    ca = CappedAffineRate(0.5, 2.0, 1.5)
    assert np.allclose(ca(np.array([0.0, 0.25, 10.0])), [0.5, 1.0, 1.5])
    assert ca.lipschitz == 2.0 and ca.bound == 1.5
    assert isinstance(rate_function_from_dict(1.0), ConstantRate)
    with pytest.raises(ValueError):
        rate_function_from_dict({"form": "cubic"})
    with pytest.raises(ValueError):
        PiecewiseConstantRate([0.1, 0.5], [1.0, 2.0])
    with pytest.raises(ValueError):
        ConstantRate(-1.0)


def test_per_plant_example_rates():
    model = PerPlantIntensity([CappedAffineRate(0.0, 1.0, 2.0), 1.0], [0.5, 0.25])
    tb = model.tables
    a, b = (0, 1), (1, 1)
    r = model.rates(a, b, 0.7, 0.0, np.array([0.2, 0.0]))
    rates = dict(zip(tb.targets(a, b), r.tolist()))
    assert rates[(1, 1)] == pytest.approx(0.5)      # plant 0 starts at rate 0.7 - 0.2
    assert rates[(0, -1)] == pytest.approx(0.25)    # plant 1 fails
    assert rates[(1, -1)] == 0.0                     # simultaneous moves have rate zero
    assert model.rate_bound == 2.0 and model.lipschitz_nu == 1.0


def test_tabular_rejects_disallowed_moves():
    with pytest.raises(ValueError):
        TabularIntensity(1, entries={((1,), (0,)): 1.0})
    with pytest.raises(ValueError):
        TabularIntensity(1, entries={((0,), (1,)): -1.0})
    with pytest.raises(ValueError):
        TabularIntensity(1, fn=lambda *a: 0.0)


rates = st.floats(0.0, 5.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(rates, min_size=2, max_size=2), st.lists(rates, min_size=2, max_size=2),
       st.floats(0.0, 2.0), st.floats(0.0, 1.0))
def test_generator_rows_sum_to_zero(start, fail, s, frac):
    model = PerPlantIntensity(start, fail)
    tb = build_tables(2)
    for a, b in tb.all_pairs:
        states, Q = model.generator(a, b, s, 0.0, np.array(b, float) * s * frac)
        assert np.allclose(Q.sum(axis=-1), 0.0, atol=1e-12)
        off = Q - np.diag(np.diag(Q))
        assert np.all(off >= 0) and np.all(off <= model.rate_bound)
        if tb.is_absorbing(a, b):
            assert np.all(Q[states.index(a)] == 0)
        for i, c in enumerate(states):
            for j, c2 in enumerate(states):
                if c2 != c and c2 not in tb.targets(c, b):
                    assert Q[i, j] == 0
