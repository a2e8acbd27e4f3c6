import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robust_procurement.isotonic import decreasing_projection


def minmax_oracle(y, w):
    """Decreasing least-squares fit via the min-max formula over block averages."""
    n = len(y)
    out = np.empty(n)
    for i in range(n):
        best = np.inf
        for j in range(i + 1):
            worst = -np.inf
            for k in range(i, n):
                avg = np.dot(w[j:k + 1], y[j:k + 1]) / w[j:k + 1].sum()
                worst = max(worst, avg)
            best = min(best, worst)
        out[i] = best
    return out


def test_examples():
    assert np.allclose(decreasing_projection([1, 2, 3]), [2, 2, 2])
    assert np.allclose(decreasing_projection([3, 2, 1]), [3, 2, 1])
    assert np.allclose(decreasing_projection([1, 3, 2], [3, 1, 1]), [1.6, 1.6, 1.6])
    assert np.allclose(decreasing_projection([5, 1, 4, 0], lower=0.5, upper=4), [4, 2.5, 2.5, 0.5])


values = st.lists(st.floats(-10, 10), min_size=1, max_size=12)


@settings(max_examples=300, deadline=None)
@given(values, st.data())
def test_matches_minmax_oracle(y, data):
    y = np.array(y)
    w = np.array(data.draw(st.lists(st.floats(0.1, 5.0), min_size=len(y), max_size=len(y))))
    lo = data.draw(st.floats(-10, 0))
    hi = data.draw(st.floats(0, 10))
    got = decreasing_projection(y, w, lo, hi)
    expected = np.clip(minmax_oracle(y, w), lo, hi)
    assert np.allclose(got, expected, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(values)
def test_projection_properties(y):
    y = np.array(y)
    x = decreasing_projection(y)
    assert np.all(np.diff(x) <= 1e-12)
    # idempotent, and the residual is orthogonal to the fit
    assert np.allclose(decreasing_projection(x), x, atol=1e-12)
    assert abs(np.dot(y - x, x)) <= 1e-8 * max(1.0, np.dot(y, y))
    assert x.sum() == pytest.approx(y.sum(), abs=1e-9)
