import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kpzlab.rng import Seed, as_generator
from kpzlab.stochastic import (TimeGrid, Path, bridge_sup_samples, downcross_bound, drop_frequency,
                               gaussian_tail_bounds, parabola_crossing_check, sample_bridge, sample_bridges)

# phi(1)/2 and phi(1), from mpmath at 50 digits
TAIL_AT_ONE = (0.12098536225957167490, 0.24197072451914334980)
# 16 pi^{-1/2} * 10 * exp(-6.25), from mpmath
DOWNCROSS_EXAMPLE = 0.17426273842821677763


def test_grid_validation():
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1.0, 4)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 1.0, 0)
    g = TimeGrid(0.0, 2.0, 8)
    assert np.all(np.diff(g.nodes) > 0)
    assert g.index_of(0.5) == 2
    with pytest.raises(ValueError):
        g.index_of(0.3)
    assert g.sub(0.5, 1.5) == TimeGrid(0.5, 1.5, 4)


def test_path_rejects_bad_values():
    g = TimeGrid(0, 1, 2)
    with pytest.raises(ValueError):
        Path(g, [0.0, 1.0])
    with pytest.raises(ValueError):
        Path(g, [0.0, np.nan, 1.0])


def test_trivial_bridge():
    p = sample_bridge(TimeGrid(0, 1, 1), 0.0, 0.0, Seed(1))
    assert np.array_equal(p.values, [0.0, 0.0])


def test_bridge_rejects_nonfinite():
    with pytest.raises(ValueError):
        sample_bridge(TimeGrid(0, 1, 4), math.inf, 0.0, Seed(1))


@settings(max_examples=30, deadline=None)
@given(x=st.floats(-50, 50), y=st.floats(-50, 50), m=st.integers(1, 40), seed=st.integers(0, 2 ** 32))
def test_endpoints_exact(x, y, m, seed):
    p = sample_bridge(TimeGrid(-1.0, 2.5, m), x, y, Seed(seed))
    assert p.values[0] == x and p.values[-1] == y


@pytest.mark.parametrize("j", [1, 5, 12])
def test_bridge_moments(j):
    g = TimeGrid(1.0, 3.0, 16)
    x, y = 0.5, -1.0
    v = sample_bridges(g, x, y, Seed(3, 0, j), size=100_000)[:, j]
    u = g.nodes[j]
    mean = x + (u - g.a) / g.length * (y - x)
    var = (u - g.a) * (g.b - u) / g.length
    n = v.size
    assert abs(v.mean() - mean) < 4 * math.sqrt(var / n)
    assert abs(v.var() - var) < 4 * var * math.sqrt(2 / (n - 1))


def test_midpoint_variance_quarter():
    v = sample_bridges(TimeGrid(0, 1, 2), 0.0, 0.0, Seed(11), size=100_000)[:, 1]
    assert abs(v.var() - 0.25) < 3 * 0.25 * math.sqrt(2 / v.size)


def test_reproducible():
    g = TimeGrid(0, 1, 64)
    a = sample_bridge(g, 0.0, 1.0, Seed(5, 2, 3)).values
    b = sample_bridge(g, 0.0, 1.0, Seed(5, 2, 3)).values
    c = sample_bridge(g, 0.0, 1.0, Seed(5, 2, 4)).values
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_seed_validation():
    with pytest.raises(ValueError):
        Seed(-1)
    with pytest.raises(TypeError):
        as_generator("seed")


def test_sup_tail_single_level():
    s = 1.0
    sups = bridge_sup_samples(TimeGrid(0, 1, 2 ** 12), 0.0, 0.0, 50_000, Seed(21))
    p = float(np.mean(sups > s))
    se = math.sqrt(p * (1 - p) / sups.size)
    assert abs(p - math.exp(-2.0)) < 3 * se + 0.02


def test_tail_bounds_values():
    lo, hi = gaussian_tail_bounds(1.0)
    assert lo == pytest.approx(TAIL_AT_ONE[0], rel=1e-14)
    assert hi == pytest.approx(TAIL_AT_ONE[1], rel=1e-14)
    assert gaussian_tail_bounds(0.0)[1] == math.inf
    with pytest.raises(ValueError):
        gaussian_tail_bounds(-0.1)


@pytest.mark.parametrize("s", [0.5, 1.0, 2.0, 4.0])
def test_tail_sandwich(s):
    mp.mp.dps = 40
    q = float(mp.erfc(mp.mpf(s) / mp.sqrt(2)) / 2)
    lo, hi = gaussian_tail_bounds(s)
    assert lo < q < hi


def test_tail_ratio_tends_to_one():
    r = [gaussian_tail_bounds(s)[1] / gaussian_tail_bounds(s)[0] for s in (4, 8, 16)]
    assert r[0] > r[1] > r[2] > 1
    assert r[2] - 1 < 1e-2


def test_downcross_bound():
    assert downcross_bound(1, 0.01, 1) == pytest.approx(DOWNCROSS_EXAMPLE, rel=1e-13)
    vals = [downcross_bound(1, 0.05, M) for M in (1, 2, 3)]
    assert vals[0] > vals[1] > vals[2]
    with pytest.raises(ValueError):
        downcross_bound(1, 1.0, 1)
    with pytest.raises(ValueError):
        downcross_bound(1, 0.1, 0)


def test_drop_frequency_below_bound():
    p, se = drop_frequency(1.0, 0.05, 1.5, 10_000, Seed(31))
    assert p <= downcross_bound(1.0, 0.05, 1.5)
    assert 0 <= p <= 1 and se >= 0


def test_drop_window_is_trailing():
    # a motion that falls by 2 over a single step must register for any r >= one step
    rng = np.random.default_rng(0)
    from scipy.ndimage import maximum_filter1d
    b = np.zeros((1, 11))
    b[0, 6:] = -2.0
    w = 2
    trailing = maximum_filter1d(b, size=w, axis=1, origin=(w - 1) // 2, mode="nearest")
    assert np.any(trailing - b >= 2.0)
    del rng


def test_parabola_checks():
    p6, _ = parabola_crossing_check(1.0, 6.0, 10_000, Seed(41))
    assert p6 < 1e-2
    p2, _ = parabola_crossing_check(1.0, 2.0, 10_000, Seed(41))
    assert p2 > p6
    big_c, _ = parabola_crossing_check(10.0, 2.0, 10_000, Seed(42))
    small_c, _ = parabola_crossing_check(0.1, 2.0, 10_000, Seed(42))
    assert big_c < small_c
    with pytest.raises(ValueError):
        parabola_crossing_check(1.0, 0.5, 10, Seed(1))
