import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from softclik.core import (Box, Centerline, DomainError, GainMatrix, arc_length, evaluate_centerline,
                           resample, sample_rng, uniform_grid)


def semicircle(n):
    # constant curvature pi, unit length: centre (0, 1/pi), radius 1/pi
    s = uniform_grid(n)
    return np.column_stack([np.sin(np.pi * s) / np.pi, (1.0 - np.cos(np.pi * s)) / np.pi])


def test_grid_endpoints():
    g = uniform_grid(7)
    assert g[0] == 0.0 and g[-1] == 1.0
    assert np.all(np.diff(g) > 0)
    with pytest.raises(ValueError):
        uniform_grid(1)


def test_straight_segment_midpoint():
    c = Centerline([[0.0, 0.0], [1.0, 0.0]])
    np.testing.assert_allclose(evaluate_centerline(c, 0.5), [0.5, 0.0], atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 60), d=st.sampled_from([2, 3]), seed=st.integers(0, 2**32 - 1),
       interp=st.sampled_from(["cubic", "linear"]))
def test_node_reproduction_is_exact(n, d, seed, interp):
    vals = np.random.default_rng(seed).normal(size=(n, d))
    c = Centerline(vals, interp)
    for k, s in enumerate(c.grid):
        assert np.array_equal(evaluate_centerline(c, s), vals[k])
    assert np.array_equal(evaluate_centerline(c, c.grid), vals)


def test_semicircle_midpoint():
    c = Centerline(semicircle(100))
    np.testing.assert_allclose(evaluate_centerline(c, 0.5), [1 / np.pi, 1 / np.pi], atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(s=st.floats(0.0, 1.0), eps=st.floats(1e-12, 1e-6))
def test_continuity(s, eps):
    c = Centerline(semicircle(30))
    s2 = min(s + eps, 1.0)
    assert np.linalg.norm(evaluate_centerline(c, s) - evaluate_centerline(c, s2)) < 10 * eps + 1e-15


def test_out_of_domain():
    c = Centerline(semicircle(10))
    for s in (-1e-9, 1.0 + 1e-9, np.nan):
        with pytest.raises(DomainError):
            evaluate_centerline(c, s)


def test_constructor_validation():
    with pytest.raises(ValueError):
        Centerline(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        Centerline([[0.0, np.inf], [1.0, 0.0]])
    with pytest.raises(ValueError):
        Centerline(np.zeros((3, 2)), interp="quadratic")


def test_resample_same_size_idempotent():
    c = Centerline(semicircle(50))
    np.testing.assert_allclose(resample(c, 50).values, c.values, rtol=0, atol=1e-12)


def test_resample_straight_line():
    r = resample(Centerline([[0.0, 0.0], [2.0, 1.0]]), 5).values
    np.testing.assert_allclose(r, np.outer(np.linspace(0, 1, 5), [2.0, 1.0]), atol=1e-15)
    steps = np.linalg.norm(np.diff(r, axis=0), axis=1)
    np.testing.assert_allclose(steps, steps[0], rtol=1e-14)


def test_resample_round_trip():
    c = Centerline(semicircle(100))
    back = resample(resample(c, 1000), 100)
    assert np.abs(back.values - c.values).max() < 1e-6


def test_resample_rejects_short():
    with pytest.raises(ValueError):
        resample(Centerline(semicircle(5)), 1)


def test_interpolation_converges_second_order():
    fine = uniform_grid(2001)
    exact = np.column_stack([np.sin(np.pi * fine) / np.pi, (1.0 - np.cos(np.pi * fine)) / np.pi])
    errs = []
    for n in (11, 21, 41, 81):
        c = Centerline(semicircle(n))
        errs.append(np.abs(evaluate_centerline(c, fine) - exact).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 2.0), orders


def test_arc_length_of_semicircle():
    assert abs(arc_length(semicircle(2001)) - 1.0) < 1e-6


@settings(max_examples=50, deadline=None)
@given(q=st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_box_clamp(q):
    box = Box.uniform(-1.67, 0.0, 3)
    c = box.clamp(q)
    assert box.contains(c)
    assert np.all((box.lo <= c) & (c <= box.hi))


def test_box_validation():
    with pytest.raises(ValueError):
        Box([0.0], [-1.0])
    with pytest.raises(ValueError):
        Box([0.0, 0.0], [1.0])


def test_gain_matrix():
    assert GainMatrix.scalar(8.0, 3).m == 3
    GainMatrix([[2.0, 0.5], [0.5, 1.0]])
    for bad in ([[1.0, 2.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, -1.0]], [[0.0]], np.ones((2, 3))):
        with pytest.raises(ValueError):
            GainMatrix(bad)


def test_rng_streams():
    a = sample_rng(42, 7).random(5)
    assert np.array_equal(a, sample_rng(42, 7).random(5))
    assert not np.array_equal(a, sample_rng(42, 8).random(5))
    # the stream depends on seed xor index only
    assert np.array_equal(sample_rng(3, 5).random(3), sample_rng(6, 0).random(3))
