import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from addiso.isotonic import (
    IsotonicFit,
    center,
    evaluate,
    fit_isotonic,
    max_min_reference,
    pava,
)


def brute_max_min(y, w):
    """Plain-Python enumeration of every (s, t) window."""
    k = len(y)
    out = []
    for i in range(k):
        best = -float("inf")
        for s in range(i + 1):
            worst = float("inf")
            for t in range(i, k):
                mean = sum(w[q] * y[q] for q in range(s, t + 1)) / sum(w[s:t + 1])
                worst = min(worst, mean)
            best = max(best, worst)
        out.append(best)
    return out


@pytest.mark.parametrize("y, w, expected", [
    ([1, 2, 3], [1, 1, 1], [1, 2, 3]),
    ([3, 1, 2], [1, 1, 1], [2, 2, 2]),
    ([1, 3, 2], [1, 1, 1], [1, 2.5, 2.5]),
    ([2, 0], [1, 3], [0.5, 0.5]),
    ([5], [1], [5]),
])
def test_small_cases(y, w, expected):
    assert_allclose(brute_max_min(y, w), expected, atol=1e-15)
    assert_allclose(pava(y, w), expected, atol=1e-15)
    assert_allclose(max_min_reference(y, w), expected, atol=1e-15)


def test_unit_weights_default():
    assert_array_equal(pava([3.0, 1.0, 2.0]), [2.0, 2.0, 2.0])


def test_monotone_input_is_fixed():
    y = np.array([-1.0, 0.0, 0.0, 2.5, 7.0])
    assert_array_equal(pava(y), y)
    assert_allclose(max_min_reference(y), y, atol=1e-15)


@pytest.mark.parametrize("fn", [pava, max_min_reference])
@pytest.mark.parametrize("y, w", [
    ([], None),
    ([1.0, 2.0], [1.0, 0.0]),
    ([1.0, 2.0], [1.0, -2.0]),
    ([1.0, np.nan], None),
    ([1.0, np.inf], None),
    ([1.0, 2.0], [1.0]),
])
def test_invalid_input(fn, y, w):
    with pytest.raises(ValueError):
        fn(y, w)


def test_brute_force_agreement_small_enumerations():
    rng = np.random.default_rng(3)
    for _ in range(50):
        k = rng.integers(1, 8)
        y = rng.normal(size=k)
        w = rng.uniform(0.1, 3.0, size=k)
        assert_allclose(max_min_reference(y, w), brute_max_min(list(y), list(w)),
                        atol=1e-13)


def test_exhaustive_permutations():
    # every ordering of a small set of distinct values
    for perm in itertools.permutations([0.0, 1.0, 2.0, 3.0, 4.0]):
        assert_allclose(pava(perm), max_min_reference(perm), atol=1e-14)


series = st.integers(1, 40).flatmap(lambda k: st.tuples(
    st.lists(st.floats(-1e3, 1e3), min_size=k, max_size=k),
    st.lists(st.floats(0.01, 100.0), min_size=k, max_size=k),
))


@settings(max_examples=200, deadline=None)
@given(series)
def test_properties(data):
    y, w = np.array(data[0]), np.array(data[1])
    g = pava(y, w)
    scale = 1.0 + np.abs(y).max()
    # monotone
    assert np.all(np.diff(g) >= 0)
    # idempotent
    assert_array_equal(pava(g, w), g)
    # weighted mean preserved
    assert abs(np.dot(w, g) - np.dot(w, y)) <= 1e-10 * scale * w.sum()
    # each maximal constant block sits at the weighted mean of its inputs
    edges = np.flatnonzero(np.diff(g)) + 1
    for block in np.split(np.arange(y.size), edges):
        mean = np.dot(w[block], y[block]) / w[block].sum()
        assert abs(g[block[0]] - mean) <= 1e-10 * scale
    # agrees with the max-min formula
    assert_allclose(g, max_min_reference(y, w), atol=1e-9 * scale, rtol=0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 30).flatmap(lambda k: st.tuples(
    st.lists(st.floats(-50, 50), min_size=k, max_size=k),
    st.lists(st.floats(-50, 50), min_size=k, max_size=k),
    st.lists(st.floats(0.1, 10.0), min_size=k, max_size=k),
)))
def test_nonexpansive(data):
    y, z, w = (np.array(a) for a in data)
    lhs = np.sqrt(np.dot(w, (pava(y, w) - pava(z, w)) ** 2))
    rhs = np.sqrt(np.dot(w, (y - z) ** 2))
    assert lhs <= rhs * (1 + 1e-12) + 1e-12


def test_pava_matches_reference_on_random_instances():
    rng = np.random.default_rng(20240)
    for _ in range(300):
        k = int(rng.integers(1, 51))
        y = rng.normal(size=k) + rng.uniform(-1, 1) * np.arange(k) / k
        w = rng.uniform(0.05, 5.0, size=k)
        assert_allclose(pava(y, w), max_min_reference(y, w), atol=1e-12, rtol=0)


def test_step_fit_evaluation():
    fit = IsotonicFit([0.0, 1.0], [-1.0, 1.0], [1.0, 1.0])
    assert evaluate(fit, 0.5) == -1.0
    assert evaluate(fit, -3.0) == -1.0
    assert evaluate(fit, 7.0) == 1.0
    assert evaluate(fit, 1.0) == 1.0
    xs = np.linspace(-2, 3, 101)
    vals = evaluate(fit, xs)
    assert np.all(np.diff(vals) >= 0)
    assert_array_equal(fit(xs), vals)


def test_fit_validation():
    with pytest.raises(ValueError):
        IsotonicFit([], [], [])
    with pytest.raises(ValueError):
        IsotonicFit([1.0, 0.0], [0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        IsotonicFit([0.0, 1.0], [0.0], [1.0, 1.0])


@pytest.mark.parametrize("levels, weights, centered, c", [
    ([1.0, 3.0], [1.0, 1.0], [-1.0, 1.0], 2.0),
    ([5.0], [4.0], [0.0], 5.0),
    ([0.0, 4.0], [3.0, 1.0], [-1.0, 3.0], 1.0),
])
def test_center(levels, weights, centered, c):
    fit = IsotonicFit(np.arange(len(levels), dtype=float), levels, weights)
    out, shift = center(fit)
    assert shift == pytest.approx(c, abs=1e-15)
    assert_allclose(out.levels, centered, atol=1e-15)
    assert out.mean == pytest.approx(0.0, abs=1e-15)


def test_fit_isotonic_pools_ties():
    fit = fit_isotonic([2.0, 1.0, 2.0], [4.0, 3.0, 0.0])
    assert_array_equal(fit.knots, [1.0, 2.0])
    assert_array_equal(fit.block_weights, [1.0, 2.0])
    assert_allclose(fit.levels, [7 / 3, 7 / 3])
