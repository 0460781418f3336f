import math

import numpy as np
import pytest

from mlmc_sde.problems import InitialLaw, SdeProblem, make_ginzburg_landau, make_langevin, make_x5_problem
from mlmc_sde.randomness import IncrementGrid, Purpose, StreamId, derive_stream, sample_increments
from mlmc_sde.schemes import (
    DiscretePath, RadialSolveError, Scheme, deterministic_x5_path, euler_maruyama,
    implicit_euler_langevin, interpolate, simulate_batch, solve_radial, tamed_euler,
    x5_log_excess, x5_log_excess_iterates, x5_threshold,
)


def _zero_grid(steps, T=1.0, m=1):
    return IncrementGrid(steps, T / steps, np.zeros((steps, m)))


def _bisect(fn, lo, hi, tol=1e-9):
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if fn(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_explicit_euler_hand_values():
    p = make_x5_problem()
    path = euler_maruyama(p, [1.0], _zero_grid(1))
    np.testing.assert_array_equal(path.states[:, 0], [1.0, 0.0])
    path = euler_maruyama(p, [2.0], _zero_grid(2))
    np.testing.assert_array_equal(path.states[:, 0], [2.0, -14.0, 268898.0])
    assert path.states[0, 0] == 2.0
    np.testing.assert_array_equal(path.times, [0.0, 0.5, 1.0])


def _random_walk_problem(kind="identity"):
    return SdeProblem("walk", 1, 1, 1.0, lambda x: np.zeros_like(x),
                      lambda x: np.ones(x.shape + (1,)), InitialLaw.point_mass(0.5), noise_kind=kind)


def test_zero_drift_unit_noise_is_random_walk():
    grid = sample_increments(derive_stream(1, StreamId(3, 1, Purpose.BROWNIAN)), 8, 0.125, 1)
    for kind in ("identity", "general"):
        path = euler_maruyama(_random_walk_problem(kind), [0.5], grid)
        np.testing.assert_allclose(path.states[:, 0], 0.5 + np.concatenate([[0], np.cumsum(grid.increments[:, 0])]),
                                   atol=1e-14)
        tamed = tamed_euler(_random_walk_problem(kind), [0.5], grid)
        np.testing.assert_array_equal(tamed.states, path.states)


def test_tamed_hand_value_and_bounded_drift(rng):
    p = make_x5_problem()
    assert tamed_euler(p, [1.0], _zero_grid(1)).states[1, 0] == 0.5
    x = rng.uniform(-100, 100, size=(1000, 1))
    nxt = simulate_batch(p, "tamed", x, np.zeros((1000, 1, 1)), 1.0)[0]
    assert np.all(np.abs(nxt - x) < 1.0)


def test_tamed_paths_stay_bounded():
    from mlmc_sde.randomness import batch_normals
    p = make_x5_problem(1.0)
    init = batch_normals(5, 0, np.arange(1, 10**4 + 1), Purpose.INITIAL, 1)
    term, sup = simulate_batch(p, "tamed", init, np.zeros((10**4, 2**10, 1)), 2.0**-10)
    assert np.isfinite(sup).all() and math.sqrt(sup.max()) < 1e3


def test_radial_solver_values():
    r, res = solve_radial(0.5, 1.5)
    oracle = _bisect(lambda t: t**3 + t - 3.0, 1.0, 1.5)
    assert abs(r[0] - oracle) < 1e-8 and abs(r[0] - 1.213412) < 1e-6
    assert solve_radial(0.25, 1.0)[0][0] == 1.0
    assert solve_radial(0.3, 0.0)[0][0] == 0.0
    with pytest.raises(ValueError):
        solve_radial(0.0, 1.0)
    with pytest.raises(ValueError):
        solve_radial(1.5, 1.0)


def test_radial_solver_residuals(rng):
    h = rng.uniform(1e-6, 1.0, size=10**4)
    b = rng.exponential(3.0, size=10**4) * rng.choice([1e-3, 1.0, 1e3], size=10**4)
    r, res = solve_radial(0.37, b)
    np.testing.assert_array_equal(res, np.abs(0.37 * r * r * r + (1.0 - 0.37) * r - b))
    assert np.all(res[b < 100] <= 1e-12)
    # beyond that the residual can only be asked to sit within a few ulps of the terms
    assert np.all(res <= np.maximum(1e-12, 16 * np.finfo(float).eps * b))
    for hi, bi in zip(h[:500], b[:500]):
        r, res = solve_radial(hi, bi)
        assert res[0] <= max(1e-12, 16 * np.finfo(float).eps * bi)


def test_radial_solver_reports_failure():
    with pytest.raises(RadialSolveError) as exc:
        solve_radial(0.5, np.nan)
    assert math.isnan(exc.value.residual)


def test_implicit_langevin_step_solves_equation(rng):
    d = 3
    grid = sample_increments(derive_stream(2, StreamId(4, 1, Purpose.BROWNIAN)), 16, 1 / 16, d)
    path = implicit_euler_langevin(d, np.zeros(d), grid)
    h = grid.dt
    for n in range(16):
        y, y1 = path.states[n], path.states[n + 1]
        lhs = y1 - h * (y1 - np.dot(y1, y1) * y1)
        np.testing.assert_allclose(lhs, y + grid.increments[n], atol=1e-11)
    zero = implicit_euler_langevin(2, np.zeros(2), _zero_grid(4, m=2))
    assert np.all(zero.states == 0)


def test_implicit_only_for_langevin():
    with pytest.raises(ValueError):
        simulate_batch(make_x5_problem(), "implicit", np.ones((1, 1)), np.zeros((1, 2, 1)), 0.5)


def test_grid_must_span_horizon():
    with pytest.raises(ValueError):
        simulate_batch(make_x5_problem(), "euler", np.ones((1, 1)), np.zeros((1, 2, 1)), 0.25)


def test_deterministic_path_matches_euler_bitwise(rng):
    p = make_x5_problem()
    for x in rng.normal(size=20):
        for N in (1, 3, 8, 32):
            with np.errstate(over="ignore", invalid="ignore"):
                a = deterministic_x5_path(x, N).states
                b = euler_maruyama(p, [x], _zero_grid(N)).states
            np.testing.assert_array_equal(a, b)


def test_deterministic_special_starts():
    assert np.all(deterministic_x5_path(0.0, 5).states == 0)
    np.testing.assert_array_equal(deterministic_x5_path(1.0, 1).states[:, 0], [1.0, 0.0])
    thr = x5_threshold(4, 1.0)
    mags = np.abs(deterministic_x5_path(thr, 4).states[:, 0])
    # the boundary is an unstable fixed point of |y|: rounding grows by ~5x per step
    np.testing.assert_allclose(mags, thr, rtol=1e-12)


def test_deterministic_path_converges_at_rate_one():
    from mlmc_sde.reference import exact_x5_terminal
    Ns = [2**e for e in range(4, 13)]
    err = [abs(deterministic_x5_path(0.5, N).states[-1, 0] - exact_x5_terminal(0.5, 1.0)) for N in Ns]
    slope = np.polyfit(np.log(Ns), np.log(err), 1)[0]
    assert abs(slope + 1) < 0.1


def test_small_starts_contract_directly(rng):
    for _ in range(100):
        N = int(rng.integers(1, 2**10 + 1))
        x = rng.uniform(-1, 1) * x5_threshold(N, 1.0)
        mags = np.abs(deterministic_x5_path(x, N).states[:, 0])
        assert np.all(mags <= abs(x))


def test_large_starts_follow_growth_identity(rng):
    for _ in range(100):
        N = int(rng.integers(1, 64))
        x = x5_threshold(N, 1.0) * (1 + rng.exponential(0.01))
        with np.errstate(over="ignore", invalid="ignore"):
            y = np.abs(deterministic_x5_path(x, N).states[:, 0])
            pred = y[:-1] * (y[:-1] ** 4 / N - 1)
        ok = np.isfinite(y[1:]) & (y[:-1] < 1e60)
        np.testing.assert_allclose(y[1:][ok], pred[ok], rtol=1e-12)
        assert np.all(y[np.isfinite(y)] >= abs(x) * (1 - 1e-15))


def test_log_excess_matches_direct_iterates(rng):
    for _ in range(50):
        N = int(rng.integers(1, 32))
        x = x5_threshold(N, 1.0) * math.exp(rng.normal(0, 0.05))
        with np.errstate(over="ignore", invalid="ignore"):
            y = np.abs(deterministic_x5_path(x, N).states[:, 0])
        rho = x5_log_excess_iterates(x5_log_excess(x, N, 1.0), N)
        ok = np.isfinite(y) & (y > 1e-200) & (y < 1e200)
        np.testing.assert_allclose(rho[ok], np.log(y[ok] / x5_threshold(N, 1.0)), atol=1e-9, rtol=1e-9)


def test_growth_inequalities_small_sample():
    from growth_checks import run_all
    assert all(v == 0 for v in run_all(7, 300).values())


def test_interpolation():
    path = DiscretePath.uniform(1.0, [0.0, 2.0], "euler")
    assert interpolate(path, 0.25)[0] == 0.5
    assert interpolate(path, 0.5)[0] == 1.0
    p3 = DiscretePath.uniform(2.0, [1.0, 3.0, -1.0], "euler")
    assert interpolate(p3, 1.0)[0] == 3.0
    assert interpolate(p3, 2.0 + 1e-13)[0] == -1.0
    assert interpolate(p3, -1e-13)[0] == 1.0
    with pytest.raises(ValueError):
        interpolate(p3, 2.1)


def test_scheme_parse():
    assert Scheme.parse("tamed_euler") is Scheme.TAMED_EULER
    assert Scheme.parse("euler") is Scheme.EXPLICIT_EULER
    with pytest.raises(ValueError):
        Scheme.parse("rk4")
