import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtem.analysis import empirical_moment_sup, moment_ratio
from mtem.brownian import generate, generate_increments
from mtem.integrators import (continuous_value, interpolate_on_fine_grid, mtem_step, run,
                              run_batch, scheme_step, step_process_value)
from mtem.problems import builtin_example2
from mtem.truncation import constant_policy

from conftest import scalar_problem


def test_frozen_step(frozen):
    assert mtem_step([1.5], 0.1, 1.0, [0.7], frozen)[0] == 1.5


def test_pure_noise_step():
    prob = scalar_problem(lambda x: 0 * x, lambda x: 1 + 0 * x)
    assert mtem_step([0.0], 0.5, 10.0, [0.1], prob)[0] == 0.1


def test_example2_truncated_step(ex2):
    out = mtem_step([4.0], 0.01, 2.0, [0.1], ex2.problem)[0]
    assert out == pytest.approx(4 - 0.12 + 2 ** 2.5 * 0.1, rel=1e-14)
    assert out == pytest.approx(4.4456854249, rel=1e-10)


def test_matrix_noise_step():
    from mtem.core import SdeProblem
    prob = SdeProblem(2, 3, lambda x: 0 * x,
                      lambda x: np.broadcast_to(np.array([[1.0, 2, 0], [0, 1, -1]]),
                                                x.shape[:-1] + (2, 3)),
                      [0.0, 0.0], lambda _: 3.0)
    out = mtem_step([0, 0], 0.1, 10.0, [1.0, 0.5, 2.0], prob)
    np.testing.assert_allclose(out, [2.0, -1.5])


@pytest.mark.parametrize("scheme", ["MTEM", "EM", "TEM"])
def test_single_step_run_matches_step(ex2, scheme):
    lad = generate(1.0, 0, 1, seed=3, replicate=0)
    policy = constant_policy(0.8)
    sol = run(ex2.problem, policy, scheme, 1.0, lad)
    expected = scheme_step(ex2.problem, scheme, None if scheme == "EM" else 0.8,
                           np.array([1.0]), 1.0, lad.increments[0])
    assert np.array_equal(sol.states[1], expected)
    assert sol.states[0][0] == 1.0


def test_mtem_equals_em_inside_ball(linear):
    inc = generate_increments(1.0, 8, 1, seed=1, replicates=range(100))
    em, _ = run_batch(linear.problem, "EM", 2.0 ** -8, None, inc)
    mtem, _ = run_batch(linear.problem, "MTEM", 2.0 ** -8, 1e6, inc)
    assert np.nanmax(np.abs(em)) < 1e6
    assert np.array_equal(em, mtem)


def test_non_dyadic_step_rejected(linear):
    lad = generate(1.0, 4, 1, 0, 0)
    with pytest.raises(ValueError, match="step not dyadic"):
        run(linear.problem, linear.policy, "MTEM", 0.1, lad)


def test_divergence_recorded():
    prob = scalar_problem(lambda x: x ** 3, lambda x: 0 * x, x0=10.0)
    lad = generate(1.0, 4, 1, 0, 0)
    sol = run(prob, None, "EM", 1 / 16, lad)
    assert sol.diverged_at is not None and len(sol.states) == sol.diverged_at
    with pytest.raises(ValueError, match="trajectory diverged"):
        step_process_value(sol, 1.0)
    finite = run(prob, constant_policy(10.0), "MTEM", 1 / 16, lad)
    assert finite.diverged_at is None


def test_step_process_readout(ex2):
    lad = generate(1.0, 6, 1, 9, 0)
    sol = run(ex2.problem, ex2.policy, "MTEM", 1 / 8, lad)
    for k in range(8):
        assert np.array_equal(step_process_value(sol, k / 8), sol.states[k])
        assert np.array_equal(step_process_value(sol, k / 8 + 1 / 16), sol.states[k])
    assert np.array_equal(step_process_value(sol, 1.0), sol.states[8])
    with pytest.raises(ValueError):
        step_process_value(sol, 1.1)


def test_continuous_readout_grid_coincidence(ex2):
    lad = generate(1.0, 8, 1, 2, 5)
    sol = run(ex2.problem, ex2.policy, "MTEM", 1 / 16, lad)
    for k in range(17):
        assert np.array_equal(continuous_value(sol, lad, k / 16), sol.states[k])


def test_continuous_readout_oracles(frozen):
    lad = generate(1.0, 4, 1, 0, 0)
    sol = run(frozen, constant_policy(5.0), "MTEM", 0.5, lad)
    for i in range(17):
        assert continuous_value(sol, lad, i / 16)[0] == 1.5
    drift = scalar_problem(lambda x: 1 + 0 * x, lambda x: 0 * x, x0=0.3)
    sol = run(drift, constant_policy(5.0), "MTEM", 0.5, lad)
    assert continuous_value(sol, lad, 0.25)[0] == pytest.approx(0.55, rel=1e-15)


def test_continuous_readout_uses_brownian_increment():
    prob = scalar_problem(lambda x: 0 * x, lambda x: 2 + 0 * x, x0=0.0)
    lad = generate(1.0, 5, 1, 7, 0)
    sol = run(prob, constant_policy(5.0), "MTEM", 0.25, lad)
    t = 0.25 + 3 / 32
    expected = sol.states[1] + 2 * (lad.bridge_value(t) - lad.bridge_value(0.25))
    np.testing.assert_allclose(continuous_value(sol, lad, t), expected, rtol=1e-13)


@given(st.integers(0, 4), st.integers(0, 100))
@settings(max_examples=20, deadline=None)
def test_batched_interpolant_matches_pointwise(level, rep):
    built = builtin_example2()
    lad = generate(1.0, 6, 1, 11, rep)
    sol = run(built.problem, built.policy, "MTEM", 2.0 ** -level, lad)
    cont, step = interpolate_on_fine_grid(built.problem, "MTEM", sol.h_delta, sol.states[None],
                                          lad.increments[None], lad.delta_min)
    for i in range(0, 65, 5):
        np.testing.assert_allclose(cont[0, i], continuous_value(sol, lad, i / 64),
                                   rtol=1e-12, atol=1e-14)
        assert np.array_equal(step[0, i], step_process_value(sol, i / 64))


@pytest.mark.slow
def test_example2_fourth_moment_is_step_stable():
    built = builtin_example2(h_construction="sqrt-closed-form")
    rows = empirical_moment_sup(built.problem, built.policy, "MTEM", 4.0, range(4, 11),
                                10_000, seed=1)
    assert all(r.diverged == 0 for r in rows)
    assert all(np.isfinite(r.max_mean_moment) for r in rows)
    assert moment_ratio(rows) < 2
