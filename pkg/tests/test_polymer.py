import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kpzlab.gibbs import ks_2samp
from kpzlab.polymer import (BrownianEnvironment, DeterminantError, ScaledEnsembleParams, free_energy_ensemble,
                            from_scaled, last_passage_values, lattice_window, log_det, lpp_ensemble,
                            partition_hierarchy, partition_single, sample_environment, scale_ensemble,
                            to_scaled)
from kpzlab.rng import Seed
from kpzlab.stochastic import TimeGrid

from oracles import brute_force_lpp, brute_force_z, gue_top_eigenvalue


def test_environment_basics():
    env = sample_environment(1, 1.0, 0.01, Seed(1))
    assert env.paths()[0, 0] == 0.0 and env.n_steps == 100 and env.s_max == pytest.approx(1.0)
    with pytest.raises(ValueError):
        sample_environment(2, 1.0, 0.0, Seed(1))
    with pytest.raises(ValueError):
        sample_environment(2, 1.0, 0.3, Seed(1))
    with pytest.raises(ValueError):
        env.step_of(0.005)
    a = sample_environment(3, 1.0, 0.1, Seed(1, 0, 1)).increments
    b = sample_environment(3, 1.0, 0.1, Seed(1, 0, 2)).increments
    assert not np.array_equal(a, b)
    assert np.array_equal(a, sample_environment(3, 1.0, 0.1, Seed(1, 0, 1)).increments)


def test_environment_variance():
    s = 0.5
    ends = np.array([sample_environment(2, s, 0.05, Seed(2, i)).paths()[-1] for i in range(10_000)]).ravel()
    se = s * math.sqrt(2.0 / (ends.size - 1))
    assert abs(ends.var(ddof=1) - s) < 4 * se


def test_coarsen_sums_increments():
    env = sample_environment(3, 1.0, 0.1, Seed(3))
    c = env.coarsen(2)
    assert c.dt == pytest.approx(0.2) and c.n_steps == 5
    assert np.allclose(c.paths(), env.paths()[::2])
    assert env.coarsen(3).n_steps == 3
    with pytest.raises(ValueError):
        env.coarsen(0)


def test_single_level_closed_form():
    env = sample_environment(1, 2.0, 0.01, Seed(4))
    for beta in (0.5, 1.0, 3.0):
        for s in (0.5, 2.0):
            expect = beta * env.paths()[env.step_of(s), 0] - 0.5 * beta * beta * s
            assert partition_single(env, 1, 1, s, beta) == pytest.approx(expect, abs=1e-12)


def test_partition_single_validation():
    env = sample_environment(3, 1.0, 0.1, Seed(5))
    with pytest.raises(ValueError):
        partition_single(env, 2, 1, 1.0)
    with pytest.raises(ValueError):
        partition_single(env, 1, 2, 0.35)
    with pytest.raises(ValueError):
        partition_hierarchy(env, 4, 1.0)


@pytest.mark.parametrize("i,j", [(1, 3), (2, 4), (1, 1)])
def test_partition_single_matches_enumeration(i, j):
    env = sample_environment(4, 0.6, 0.1, Seed(6))
    expect = brute_force_z(env.increments, env.dt, [i], [j], beta=1.3)
    assert math.exp(partition_single(env, i, j, 0.6, 1.3)) == pytest.approx(expect, rel=1e-12)


def test_unreachable_level_is_zero():
    env = sample_environment(4, 0.2, 0.1, Seed(7))  # two steps cannot climb three levels
    assert partition_single(env, 1, 4, 0.2) == -math.inf
    with pytest.raises(DeterminantError):
        partition_hierarchy(env, 1, 0.2)


def test_self_convergence_in_dt():
    # log Z_1 for N=5 at s=1 on one Brownian path sampled at dt, 2dt, 4dt, 8dt
    env = sample_environment(5, 1.0, 1.25e-4, Seed(8))
    vals = [partition_single(env.coarsen(f), 1, 5, 1.0) for f in (8, 4, 2, 1)]
    diffs = np.abs(np.diff(vals))
    # three halvings at rate dt^{1/2} shrink the change by 2^{1.5}; allow 50% noise on top
    assert diffs[-1] < 1.5 * diffs[0] / 2.0 ** 1.5


def test_n_equals_one_is_single_path():
    env = sample_environment(4, 1.0, 0.01, Seed(9))
    assert partition_hierarchy(env, 1, 1.0) == partition_single(env, 1, 4, 1.0)


def test_brute_force_small_example():
    env = sample_environment(3, 0.4, 0.1, Seed(10))
    expect = brute_force_z(env.increments, env.dt, [1, 2], [2, 3])
    assert math.exp(partition_hierarchy(env, 2, 0.4)) == pytest.approx(expect, rel=1e-10)


def test_log_det_matches_numpy():
    rng = np.random.default_rng(11)
    A = rng.random((4, 4)) + 4 * np.eye(4)
    assert log_det(np.log(A)) == pytest.approx(math.log(np.linalg.det(A)), rel=1e-13)
    with pytest.raises(DeterminantError):
        log_det(np.log(np.array([[1.0, 2.0], [2.0, 1.0]])))
    with pytest.raises(DeterminantError):
        log_det(np.array([[0.0, -np.inf], [-np.inf, -np.inf]]))


@settings(max_examples=25, deadline=None)
@given(N=st.integers(2, 6), seed=st.integers(0, 10 ** 6), s=st.sampled_from([0.5, 1.0, 2.0]))
def test_lgv_positive_at_fine_dt(N, seed, s):
    env = sample_environment(N, s, 1e-3 * s, Seed(seed))
    for n in range(1, N + 1):
        assert math.isfinite(partition_hierarchy(env, n, s))


@settings(max_examples=20, deadline=None)
@given(N=st.integers(1, 8), seed=st.integers(0, 10 ** 6), beta=st.sampled_from([0.5, 1.0, 2.0]))
def test_telescoping(N, seed, beta):
    env = sample_environment(N, 1.0, 0.01, Seed(seed))
    grid = TimeGrid(0.5, 1.0, 5)
    X = free_energy_ensemble(env, N, grid, beta)
    B = env.paths()[[env.step_of(u) for u in grid.nodes]]
    expect = beta * B.sum(axis=1) - 0.5 * N * beta * beta * grid.nodes
    assert np.max(np.abs(X.values.sum(axis=0) - expect)) < 1e-8
    assert np.allclose(X.values[0], [partition_hierarchy(env, 1, u, beta) for u in grid.nodes], atol=1e-12)


def test_free_energy_crossings_allowed():
    env = sample_environment(2, 1.0, 0.01, Seed(12))
    X = free_energy_ensemble(env, 2, TimeGrid(0.1, 1.0, 9))
    assert np.all(np.isfinite(X.values))
    with pytest.raises(ValueError):
        free_energy_ensemble(env, 2, TimeGrid(0.0, 1.0, 10))
    with pytest.raises(ValueError):
        free_energy_ensemble(env, 3, TimeGrid(0.1, 1.0, 9))


def test_richardson_reduces_lattice_bias():
    # the N=20 top curve at s=4: compare with a much finer lattice on the same path
    env = sample_environment(20, 4.0, 1.25e-4, Seed(13))
    grid = TimeGrid(4.0 - 0.5, 4.0, 1)
    fine = free_energy_ensemble(env, 1, grid).values[0, -1]
    coarse = env.coarsen(16)
    plain = free_energy_ensemble(coarse, 1, grid).values[0, -1]
    rich = free_energy_ensemble(coarse, 1, grid, richardson=True).values[0, -1]
    assert abs(rich - fine) < abs(plain - fine) / 3


# ---------------------------------------------------------------------------
# zero temperature
# ---------------------------------------------------------------------------

def test_lpp_matches_enumeration():
    env = sample_environment(4, 0.5, 0.1, Seed(14))
    for n in (1, 2, 3):
        starts, ends = list(range(1, n + 1)), list(range(4 - n + 1, 5))
        got = last_passage_values(env, n, [5])[0]
        assert got == pytest.approx(brute_force_lpp(env.increments, starts, ends), abs=1e-12)


def test_lpp_full_occupancy():
    env = sample_environment(4, 1.0, 0.01, Seed(15))
    grid = TimeGrid(0.5, 1.0, 5)
    M = lpp_ensemble(env, 4, grid)
    B = env.paths()[[env.step_of(u) for u in grid.nodes]]
    assert np.allclose(M.values.sum(axis=0), B.sum(axis=1), atol=1e-12)


def test_lpp_state_limit():
    env = sample_environment(40, 0.1, 0.1, Seed(1))
    with pytest.raises(ValueError):
        last_passage_values(env, 20, [1])


def test_lpp_monotone_in_environment():
    env = sample_environment(3, 1.0, 0.01, Seed(16))
    bumped = BrownianEnvironment(env.dt, env.increments.copy())
    bumped.increments[30:, 1] += 0.01  # raises B_2 pointwise from s = 0.3 on
    grid = TimeGrid(0.5, 1.0, 5)
    assert np.all(lpp_ensemble(bumped, 1, grid).values >= lpp_ensemble(env, 1, grid).values)


def test_lpp_two_levels_is_gue_top():
    dt = 1e-4
    m1 = np.array([last_passage_values(sample_environment(2, 1.0, dt, Seed(17, i)), 1, [10_000])[0]
                   for i in range(10_000)])
    gue = gue_top_eigenvalue(2, 10_000, np.random.default_rng(18))
    _, p = ks_2samp(m1, gue)
    assert p > 0.01


def zero_temperature_gap(beta, N=5, dt=1e-3, seed=19):
    env = sample_environment(N, 1.0, dt, Seed(seed))
    grid = TimeGrid(0.5, 1.0, 1)
    # uncompensated free energy over beta
    X = free_energy_ensemble(env, 1, grid, beta).values[0, -1] + 0.5 * beta * beta * 1.0
    M = lpp_ensemble(env, 1, grid).values[0, -1]
    return abs(X / beta - M)


@pytest.mark.xfail(strict=True, reason="finite-beta entropy gap is about 0.7 at beta=32; see the ledger")
def test_zero_temperature_limit_at_beta_32():
    assert zero_temperature_gap(32.0) < 0.05


def test_zero_temperature_gap_shrinks():
    gaps = [zero_temperature_gap(b) for b in (32.0, 128.0, 512.0, 2048.0)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.05


# ---------------------------------------------------------------------------
# scaling
# ---------------------------------------------------------------------------

def test_scaled_params_constant():
    p = ScaledEnsembleParams(2.0, 50)
    assert p.center == pytest.approx(10.0)
    x = np.array([-1.0, 0.0, 2.0])
    # the compensated constant differs by exactly the s/2 = (sqrt(tN) + x)/2 term
    assert np.allclose(p.log_c(x) - p.log_c_compensated(x), 0.5 * (p.center + x))
    with pytest.raises(ValueError):
        ScaledEnsembleParams(0.0, 5)


def test_scaled_heat_kernel_normalisation():
    # E[Z_1] is the number of lattice paths times dt^{N-1}; the constant turns it into the heat kernel,
    # with an error that shrinks like N^{-1/2}
    t = 1.0

    def err(N, x):
        p = ScaledEnsembleParams(t, N)
        log_mean = (N - 1) * math.log(p.center + x) - math.lgamma(N)
        log_kernel = -x * x / (2 * t) - 0.5 * math.log(2 * math.pi * t)
        return abs(log_mean - float(p.log_c_compensated(x)) - log_kernel)

    for x in (-0.5, 0.0, 0.7):
        e = [err(N, x) for N in (400, 1600, 6400)]
        assert e[2] < 0.01
        assert e[1] < 0.55 * e[0] and e[2] < 0.55 * e[1]


@settings(max_examples=30, deadline=None)
@given(t=st.floats(1.0, 50.0), seed=st.integers(0, 1000))
def test_scaling_inversion(t, seed):
    rng = np.random.default_rng(seed)
    from kpzlab.gibbs import LineEnsemble
    h = LineEnsemble(TimeGrid(-1.0, 2.0, 6), rng.normal(size=(2, 7)))
    back = from_scaled(to_scaled(h, t), t)
    assert np.max(np.abs(back.values - h.values)) < 1e-12
    assert back.grid.a == pytest.approx(-1.0, abs=1e-12) and back.grid.b == pytest.approx(2.0, abs=1e-12)


def test_scale_ensemble_window():
    params = ScaledEnsembleParams(1.0, 16)
    grid = lattice_window(params, 0.01, -1.0, 1.0, 4)
    assert abs(grid.a - (4.0 - 1.0)) <= 0.01 and grid.a / 0.01 == pytest.approx(round(grid.a / 0.01))
    env = sample_environment(16, grid.b, 0.01, Seed(20))
    h, H = scale_ensemble(free_energy_ensemble(env, 2, grid), params)
    assert np.allclose(from_scaled(H, 1.0).values, h.values, atol=1e-12)
    with pytest.raises(ValueError):
        lattice_window(params, 0.01, -5.0, 0.0, 4)
    with pytest.raises(ValueError):
        lattice_window(params, 0.01, 1.0, 0.0, 4)


@pytest.mark.slow
def test_parabolic_stationarity():
    t, N, dt = 1.0, 50, 1e-3
    params = ScaledEnsembleParams(t, N)
    grid = lattice_window(params, 2 * dt, -0.5, 0.5, 2)
    vals = []
    for i in range(300):
        env = sample_environment(N, grid.b, dt, Seed(21, i))
        _, H = scale_ensemble(free_energy_ensemble(env, 1, grid, richardson=True), params)
        vals.append(H.values[0] + H.grid.nodes ** 2 / 2)
    vals = np.array(vals)
    mean = vals.mean(axis=0)
    se = vals.std(axis=0, ddof=1) / math.sqrt(len(vals))
    for j in range(3):
        for k in range(j + 1, 3):
            assert abs(mean[j] - mean[k]) < 3 * math.hypot(se[j], se[k])
