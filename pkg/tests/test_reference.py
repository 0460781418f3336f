import math

import numpy as np
import pytest
from scipy import integrate

from mlmc_sde.randomness import IncrementGrid, Purpose, StreamId, batch_normals, coarsen, derive_stream, sample_increments
from mlmc_sde.reference import (
    QuadratureError, QuadratureSpec, adaptive_simpson, exact_x5_terminal, gl_exact_path,
    gl_exact_terminal, gl_reference_value, gl_strong_errors, x5_expectation,
)


def _quad_oracle(sigma, T=1.0, p=2.0):
    def g(x):
        return abs(x / (1 + 4 * T * x**4) ** 0.25) ** p * math.exp(-0.5 * (x / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))
    return integrate.quad(g, -math.inf, math.inf, epsabs=1e-13, epsrel=1e-13, limit=500)[0]


@pytest.mark.parametrize("sigma", [1.0, 0.1, 1 / 3, 2.5])
def test_expectation_matches_scipy_quad(sigma):
    oracle = _quad_oracle(sigma)
    assert x5_expectation(sigma) == pytest.approx(oracle, abs=1e-8)
    if sigma <= 1.0:
        gh = x5_expectation(sigma, spec=QuadratureSpec("gauss_hermite", nodes=200))
        assert gh == pytest.approx(oracle, abs=1e-6)


def test_expectation_other_horizons_and_powers():
    assert x5_expectation(0.7, T=3.0, p=3.0) == pytest.approx(_quad_oracle(0.7, 3.0, 3.0), abs=1e-8)


def test_published_reference_digits():
    assert round(x5_expectation(1.0), 5) == 0.28801
    assert round(x5_expectation(0.1), 6) == 0.009971
    assert round(x5_expectation(1 / 3), 5) == 0.09248


def test_exact_solution_solves_ode(rng):
    xi = rng.uniform(-3, 3, 100)
    t = rng.uniform(0.01, 2, 100)
    h = 1e-5
    deriv = (exact_x5_terminal(xi, t + h) - exact_x5_terminal(xi, t - h)) / (2 * h)
    np.testing.assert_allclose(deriv, -exact_x5_terminal(xi, t) ** 5, rtol=1e-6, atol=1e-12)


def test_exact_solution_edge_cases():
    assert exact_x5_terminal(1.7, 0.0) == 1.7
    assert exact_x5_terminal(0.0, 5.0) == 0.0
    big = exact_x5_terminal(1e200, 1.0)
    assert big == pytest.approx(4 ** -0.25)
    assert exact_x5_terminal(-1e200, 1.0) == pytest.approx(-(4 ** -0.25))
    a, b = exact_x5_terminal(np.nextafter(1.0, 0), 0.5), exact_x5_terminal(np.nextafter(1.0, 2), 0.5)
    assert abs(a - b) < 1e-14
    with pytest.raises(ValueError):
        exact_x5_terminal(1.0, -1.0)


@pytest.mark.parametrize("sigma", [1.0, 0.1, 1 / 3])
def test_expectation_agrees_with_plain_monte_carlo(sigma):
    xi = sigma * batch_normals(123, 0, np.arange(1, 10**7 + 1), Purpose.REFERENCE, 1)[:, 0]
    y = exact_x5_terminal(xi, 1.0) ** 2
    se = y.std(ddof=1) / math.sqrt(y.size)
    assert abs(y.mean() - x5_expectation(sigma)) <= 4 * se


def test_simpson_basics_and_failure():
    assert adaptive_simpson(lambda x: x**3, 0.0, 2.0, 1e-12) == pytest.approx(4.0, abs=1e-12)
    assert adaptive_simpson(np.sin, 0.0, math.pi, 1e-10) == pytest.approx(2.0, abs=1e-10)
    with pytest.raises(QuadratureError) as exc:
        adaptive_simpson(lambda x: np.sqrt(np.abs(x - 0.3)), 0.0, 1.0, 1e-14, max_depth=3, initial_panels=2)
    assert exc.value.achieved > 0


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec("gauss_hermite", nodes=8)
    with pytest.raises(ValueError):
        QuadratureSpec(abs_tol=0)
    with pytest.raises(ValueError):
        QuadratureSpec(range_multiplier=4)
    with pytest.raises(ValueError):
        QuadratureSpec("midpoint")
    with pytest.raises(ValueError):
        x5_expectation(0.0)


def test_gl_exact_solution_at_known_paths():
    flat = IncrementGrid(4096, 1 / 4096, np.zeros((4096, 1)))
    # W = 0: X_1 = 1 / sqrt(3)
    assert gl_exact_terminal(flat) == pytest.approx(1 / math.sqrt(3), rel=1e-14)
    # W_t = t: X_1 = e^2 / sqrt(1 + (e^4 - 1) / 2), trapezoid error O(dt^2)
    n = 2**12
    line = IncrementGrid(n, 1 / n, np.full((n, 1), 1 / n))
    exact = math.exp(2) / math.sqrt(1 + (math.exp(4) - 1) / 2)
    assert gl_exact_terminal(line) == pytest.approx(exact, rel=1e-6)
    walks = np.cumsum(line.increments[:, 0])[None, :]
    path = gl_exact_path(walks, 1 / n)
    assert path[0, 0] == 1.0
    assert path[0, -1] == pytest.approx(gl_exact_terminal(line), rel=1e-12)
    with pytest.raises(ValueError):
        gl_exact_terminal(IncrementGrid(4, 0.5, np.zeros((4, 1))))


def test_gl_trapezoid_converges_at_order_one():
    grid = sample_increments(derive_stream(8, StreamId(0, 1, Purpose.REFERENCE)), 2**16, 2.0**-16, 1)
    grids = [grid]
    for _ in range(12):
        grids.append(coarsen(grids[-1]))
    fine = gl_exact_terminal(grid)
    steps, errs = [], []
    for g in grids[6:12]:
        steps.append(g.steps)
        errs.append(abs(gl_exact_terminal(g) - fine))
    # single-path errors fluctuate, so bound the fitted slope and the error size
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert -1.6 <= slope <= -0.6
    assert max(e * s for e, s in zip(errs, steps)) < 50


def test_gl_reference_small_cases():
    est, se = gl_reference_value(1, 2**12, 5)
    walks = np.cumsum(batch_normals(5, 0, [1], Purpose.REFERENCE, 2**12)[0] * 2.0**-6)
    grid = IncrementGrid(2**12, 2.0**-12, np.diff(np.concatenate([[0.0], walks]))[:, None])
    assert se is None
    assert est == pytest.approx(gl_exact_terminal(grid) ** 2, rel=1e-12)
    with pytest.raises(ValueError):
        gl_reference_value(10, 2**10)
    with pytest.raises(ValueError):
        gl_reference_value(0)


def test_gl_reference_consistent_across_seeds():
    results = [gl_reference_value(20000, 2**12, s) for s in range(5)]
    for i in range(5):
        for j in range(i + 1, 5):
            (a, sa), (b, sb) = results[i], results[j]
            assert abs(a - b) <= 4 * math.hypot(sa, sb)
    assert all(abs(r[0] - 0.8114) <= 4 * r[1] for r in results)


def test_gl_strong_errors_decrease():
    errs = gl_strong_errors([2**6, 2**8, 2**10], paths=64, fine_steps=2**12, seed=3)
    assert errs[0] > errs[1] > errs[2] > 0
    with pytest.raises(ValueError):
        gl_strong_errors([3], paths=2, fine_steps=2**12)
