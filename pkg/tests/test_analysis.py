import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from mtem.analysis import (InsufficientSample, Reference, check_diffusion_growth,
                           check_khasminskii, check_monotonicity_condition, coupled_error_ladder,
                           empirical_moment_sup, fit_power_law, fit_rate, interpolant_gap,
                           strong_error_at_T, strong_error_sup)
from mtem.core import ConditionSet
from mtem.problems import EXAMPLE2_H, example1_C, example1_R0, example1_case2, example2_K
from mtem.truncation import constant_policy

from conftest import scalar_problem


def test_self_comparison_is_exact(ex2):
    ladder = strong_error_sup(ex2.problem, ex2.policy, ex2.cond, [4, 5, 6], 128,
                              Reference.fine_grid(6), seed=3)
    last = ladder.rows[-1]
    assert last.err_T_mean == 0 and last.err_sup_mean == 0
    assert ladder.rows[0].err_T_mean > 0


def test_frozen_dynamics_have_no_error(frozen):
    ladder = strong_error_sup(frozen, constant_policy(3.0), 4.0, [2, 3, 4], 100,
                              Reference.fine_grid(7), seed=0)
    assert np.all(ladder.column("err_T_mean") == 0)
    assert np.all(ladder.column("err_sup_mean") == 0)
    assert np.all(ladder.column("err_sup_step_mean") == 0)


def test_sup_dominates_terminal_error(ex2):
    ladder = strong_error_sup(ex2.problem, ex2.policy, 4.0, [3, 4, 5], 256,
                              Reference.fine_grid(8), seed=1)
    for row in ladder.rows:
        assert row.err_sup_mean >= row.err_T_mean
        assert row.err_sup_step_mean >= row.err_T_step_mean


def test_terminal_only_ladder_skips_sup(ex2):
    ladder = strong_error_at_T(ex2.problem, ex2.policy, ex2.cond, [3, 4, 5], 100,
                               Reference.fine_grid(7), seed=1)
    assert ladder.q == 4 and np.all(np.isnan(ladder.column("err_sup_mean")))


def test_results_independent_of_jobs(ex2):
    args = (ex2.problem, ex2.policy, "MTEM", [3, 4, 5], 600, Reference.fine_grid(7), 5, 4.0)
    assert coupled_error_ladder(*args, jobs=1) == coupled_error_ladder(*args, jobs=2)


def test_divergence_excluded_and_counted():
    prob = scalar_problem(lambda x: x ** 3, lambda x: 3 * x, x0=1.0)
    with pytest.raises(InsufficientSample):
        coupled_error_ladder(prob, constant_policy(1e3), "EM", [1, 2, 3], 100,
                             Reference.fine_grid(6), 0, 2.0)


@given(st.floats(-2, 2), st.floats(0.1, 10), st.sampled_from([1.0, 2.0, 4.0]))
def test_fit_recovers_synthetic_power_law(logc, exponent, q):
    deltas = 2.0 ** -np.arange(4, 11)
    estimates = np.exp(logc) * deltas ** (exponent * q)
    fit = fit_power_law(deltas, estimates, q)
    assert fit.slope == pytest.approx(exponent, rel=1e-9)
    assert fit.residual < 1e-10


def test_fit_examples():
    deltas = 2.0 ** -np.arange(3, 9)
    assert fit_power_law(deltas, deltas ** 2, 4).slope == pytest.approx(0.5, abs=1e-12)
    fit = fit_power_law(deltas, 4 * deltas ** 4, 4)
    assert fit.slope == pytest.approx(1.0, abs=1e-12) and fit.residual < 1e-12
    with pytest.raises(ValueError, match="degenerate ladder"):
        fit_power_law(deltas, np.where(deltas > 0.01, deltas, 0.0), 4)
    with pytest.raises(ValueError, match="at least 3"):
        fit_power_law(deltas[:2], deltas[:2], 4)


@pytest.mark.slow
def test_linear_rate_against_closed_form(linear):
    ladder = strong_error_at_T(linear.problem, linear.policy, 2.0, range(4, 11), 2000,
                               Reference.closed_form(linear.closed_form, 10), seed=11)
    assert fit_rate(ladder).slope == pytest.approx(0.5, abs=0.1)


def test_interpolant_gap_constant_drift():
    c, p = 1.5, 4.0
    prob = scalar_problem(lambda x: c + 0 * x, lambda x: 0 * x)
    rows = interpolant_gap(prob, constant_policy(1e9), [2, 3, 4], p, 100, seed=0, fine_level=8)
    for row in rows:
        expected = (c * (row.delta - 2.0 ** -8)) ** p
        assert row.fixed_time_mean == pytest.approx(expected, rel=1e-9)
        assert row.sup_mean == pytest.approx(expected, rel=1e-9)


def test_interpolant_gap_shrinks_with_step():
    prob = scalar_problem(lambda x: 0 * x, lambda x: 1 + 0 * x)
    rows = interpolant_gap(prob, constant_policy(1e9), [2, 4, 6], 2.0, 400, seed=4)
    fixed = [r.fixed_time_mean for r in rows]
    assert fixed[0] > fixed[1] > fixed[2]
    # E|B(t) - B(k delta)|^2 peaks just before the next grid point
    assert fixed[0] == pytest.approx(0.25 - 2.0 ** -10, rel=0.2)
    assert all(r.sup_mean >= r.fixed_time_mean for r in rows)


def test_moment_rows_for_frozen(frozen):
    rows = empirical_moment_sup(frozen, constant_policy(3.0), "MTEM", 4.0, [2, 3, 4], 100, 0)
    for row in rows:
        assert row.max_mean_moment == pytest.approx(1.5 ** 4)
        assert row.mean_max_moment == pytest.approx(1.5 ** 4)


def test_example1_constant_C_oracle():
    # stationary point of -x e^{3x} + e^{2x} solves e^x (1 + 3x) = 2
    x = brentq(lambda s: np.exp(s) * (1 + 3 * s) - 2, 0.0, 1.0, xtol=1e-15)
    value = -x * np.exp(3 * x) + np.exp(2 * x)
    got = example1_C()
    assert got["C"] == pytest.approx(value, rel=1e-10)
    assert got["argmax"] == pytest.approx(x, abs=1e-6)


def test_example1_R0_is_grid_floor():
    s = np.linspace(1e-4, 20, 200_001)
    assert np.all(example1_case2(s) < 0)
    assert example1_R0()["R0"] == pytest.approx(0.002)


def test_example2_K_oracle():
    x = np.linspace(-5, 5, 2_000_001)
    ratio = (x * x - x ** 4 + 2.5 * np.abs(x) ** 3) / (1 + x * x)
    got = example2_K(6.0)
    assert got["K"] == pytest.approx(ratio.max(), rel=1e-9)
    assert got["K"] >= ratio.max()


def test_condition_margins_with_recipe_constants(ex1, ex2):
    for built in (ex1, ex2):
        assert check_monotonicity_condition(built.problem, built.cond, 100_000, 50, 0).passed()
        assert check_khasminskii(built.problem, built.cond, 100_000, 50, 0).passed()
    assert ex2.cond.H == EXAMPLE2_H
    assert check_diffusion_growth(ex2.problem, ex2.cond, 100_000, 50, 0).passed()


def test_condition_margins_detect_violation():
    prob = scalar_problem(lambda x: x ** 3, lambda x: x, lip=1.0)
    cond = ConditionSet(p=4, q=3, K=1, H=1)
    assert not check_khasminskii(prob, cond, 1000, 10, 0).passed()
    assert not check_monotonicity_condition(prob, cond, 1000, 10, 0).passed()
    with pytest.raises(ValueError):
        check_diffusion_growth(prob, cond, 10, 1, 0)
