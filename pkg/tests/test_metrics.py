import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from causal_bench.errors import LengthMismatch, MissingPotentialOutcomes
from causal_bench.metrics import EffectEstimates, eps_ate, ite_from_factual, pehe, root_pehe, true_effects


class _DS:
    def __init__(self, y0, y1):
        self.y0, self.y1 = np.asarray(y0, float), np.asarray(y1, float)


def test_true_effects_examples():
    ite, ate = true_effects(_DS([1, 2, 3], [1, 2, 3]))
    assert np.all(ite == 0) and ate == 0
    assert true_effects(_DS([1, 2, 3], [3, 4, 5]))[1] == 2.0
    with pytest.raises(MissingPotentialOutcomes):
        true_effects(_DS([1], [1]).__class__.__new__(_DS))


def test_factual_form_on_four_rows():
    y0 = np.array([1.0, 2.0, 0.5, -1.0])
    y1 = np.array([2.0, 2.5, 0.0, 3.0])
    t = np.array([1, 0, 1, 0])
    y_f = np.where(t == 1, y1, y0)
    y_cf = np.where(t == 1, y0, y1)
    assert np.array_equal(ite_from_factual(t, y_f, y_cf), y1 - y0)


def test_pehe_by_hand():
    assert pehe([1, 2, 3], [1, 2, 3]) == 0
    assert pehe([0, 0], [1, -1]) == 1
    assert pehe([1, 2, 3], [1, 1, 1]) == pytest.approx(5 / 3, abs=1e-15)
    assert root_pehe([1, 2, 3], [1, 1, 1]) == pytest.approx(np.sqrt(5 / 3))
    with pytest.raises(LengthMismatch):
        pehe([1, 2], [1])


def test_eps_ate_by_hand():
    assert eps_ate(0.4, 0.4) == 0
    assert eps_ate(1.0, 0.89) == pytest.approx(0.11, abs=1e-15)
    assert eps_ate(0.3, -0.2) == eps_ate(-0.2, 0.3) == 0.5


def test_effect_estimates_flag():
    EffectEstimates(ate_hat=2.0, ite_hat=np.array([1.0, 3.0]), ate_from_ite=True)
    with pytest.raises(ValueError):
        EffectEstimates(ate_hat=2.5, ite_hat=np.array([1.0, 3.0]), ate_from_ite=True)


vec = arrays(float, st.integers(1, 30), elements=st.floats(-1e3, 1e3))


@given(vec, st.randoms())
def test_metric_properties(a, rnd):
    b = a + np.array([rnd.choice([0.0, 0.5, -1.0]) for _ in a])
    perm = np.array(rnd.sample(range(a.size), a.size))
    assert pehe(a, a) == 0
    assert pehe(a, b) >= 0
    assert (pehe(a, b) == 0) == bool(np.all(a == b))
    assert pehe(a[perm], b[perm]) == pytest.approx(pehe(a, b), rel=1e-12)
    assert eps_ate(a.mean(), b.mean()) >= 0
