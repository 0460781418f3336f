import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from brute_levels import brute_level_stats, random_instance
from mlmc_sde.diagnostics import (
    InitialArray, compute_level_stats, diagnose_rows, explosion_predicate, level_stats_trend,
    sample_initial_array,
)
from mlmc_sde.estimators import level_zero_samples
from mlmc_sde.problems import Payoff, make_x5_problem
from mlmc_sde.randomness import Purpose, batch_normals
from mlmc_sde.schemes import x5_log_excess, x5_log_excess_iterates


def _array(N, fill=0.01, T=1.0, sigma_bar=1.0, **overrides):
    vals = {(l, k): fill for l in range(N.bit_length()) for k in range(1, (N >> l) + 1)}
    vals.update(overrides.get("set", {}))
    return InitialArray.from_mapping(T, sigma_bar, N, vals)


def test_all_small_gives_level_one():
    st = compute_level_stats(_array(16))
    assert st.L_N == 1 and st.theta_from_level_zero
    assert st.eta_N == 0.01 and st.theta_N == 0.01
    assert st.A4


def test_hand_example_level_two():
    arr = _array(4, set={(2, 1): 2.0, (1, 1): 0.3, (1, 2): -0.5})
    st = compute_level_stats(arr)
    assert st.L_N == 2 and st.eta_N == 2.0 and st.theta_N == 0.5
    assert not st.theta_from_level_zero


def test_equal_maxima_trigger_a4():
    arr = _array(8, set={(3, 1): 3.0, (2, 1): -3.0})
    assert compute_level_stats(arr).A4


def test_matches_brute_force(rng):
    for _ in range(1000):
        values, N, T, sb = random_instance(rng)
        delta = float(rng.uniform(0.01, 0.49))
        st = compute_level_stats(InitialArray.from_mapping(T, sb, N, values), delta)
        assert (st.L_N, st.eta_N, st.theta_N, st.A1, st.A2, st.A3, st.A4) == \
            brute_level_stats(values, N, T, sb, delta)


def test_level_definition_sanity(rng):
    for _ in range(200):
        arr = sample_initial_array(float(rng.choice([0.5, 1.0, 2.0])), 1.0, 2 ** int(rng.integers(2, 10)),
                                   int(rng.integers(0, 2**63)))
        st = compute_level_stats(arr)
        for l in range(st.L_N + 1, arr.depth + 1):
            assert np.all(np.abs(arr.levels[l]) <= 2 ** (l / 4))
        if st.L_N > 1:
            assert np.any(np.abs(arr.levels[st.L_N]) > 2 ** (st.L_N / 4))


def test_validation():
    with pytest.raises(ValueError):
        InitialArray(1.0, 1.0, 4, (np.zeros(4), np.zeros(2)))
    with pytest.raises(ValueError):
        InitialArray(1.0, 1.0, 6, (np.zeros(6),))
    with pytest.raises(ValueError):
        InitialArray(1.0, 1.0, 4, (np.zeros(4), np.zeros(3), np.zeros(1)))
    with pytest.raises(ValueError):
        InitialArray.from_mapping(1.0, 1.0, 2, {(0, 1): 0.0, (0, 2): 0.0})
    with pytest.raises(ValueError):
        compute_level_stats(_array(4), delta=0.5)


def test_sampled_array_uses_estimator_streams():
    arr = sample_initial_array(1.0, 1.0, 16, 9)
    np.testing.assert_array_equal(arr.levels[2], batch_normals(9, 2, np.arange(1, 5), Purpose.INITIAL, 1)[:, 0])
    sq = level_zero_samples(make_x5_problem(1.0), "euler", Payoff.terminal_power(1.0), np.arange(1, 17), 9,
                            steps=1)
    np.testing.assert_allclose(sq, np.abs(arr.levels[0] - arr.levels[0] ** 5), rtol=1e-15)


def test_explosion_predicate():
    assert not explosion_predicate((2 * 8) ** 0.25, 8, 1.0)
    assert explosion_predicate(2.2, 8, 1.0)
    assert not explosion_predicate(0.0, 8, 1.0)
    with pytest.raises(ValueError):
        explosion_predicate(1.0, 0, 1.0)


def test_predicate_matches_dynamics(rng):
    for _ in range(1000):
        N = int(rng.integers(1, 65))
        T = float(rng.uniform(0.5, 2.0))
        thr = (2 * N / T) ** 0.25
        xi = thr * math.exp(rng.normal(0, 0.2)) * rng.choice([-1, 1])
        rho = x5_log_excess_iterates(x5_log_excess(xi, N, T), N)
        if explosion_predicate(xi, N, T):
            assert np.all(np.diff(rho) > 0)
        else:
            assert np.all(rho[1:] <= rho[0] + 1e-12)


def test_trend_and_rows():
    assert level_stats_trend(1.0, 1.0, [16, 32], 0, 1) == []
    rows = diagnose_rows(1.0, 1.0, [16, 64], 3, 5)
    assert len(rows) == 6 and rows[0][:2] == (16, 0)


def test_mean_level_grows_with_N():
    Ns = [2**e for e in range(4, 17)]
    trend = level_stats_trend(1.0, 1.0, Ns, 200, 42)
    assert spearmanr(Ns, [t.mean_L_N for t in trend]).statistic > 0


def test_a2_is_rare():
    trend = level_stats_trend(1.0, 1.0, [2**10], 2000, 3)
    assert trend[0].frac_A2 < 1e-3
