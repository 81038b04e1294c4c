import math
import warnings

import numpy as np
import pytest

from flexqueue.dp import (
    BurdenFunction,
    FixedPoint,
    ThresholdPolicy,
    Variant,
    bellman_residual,
    burden_of,
    evaluate_threshold_policy,
    extract_thresholds,
    finite_horizon_iterate,
    greedy_actions,
    solve_discounted,
    threshold_T,
)
from flexqueue.errors import NearTieWarning, NonMonotoneBurden, TruncationTooTight
from flexqueue.model import ModelParams, PowerCost, RewardTiming, TruncationSpec


def test_threshold_T_definition():
    assert threshold_T([0, 1, 2, 3], 1.5) == 1
    assert threshold_T([5, 6, 7], 1) == -1
    assert threshold_T([0, 0, 0], 0) == math.inf


def test_threshold_T_monotone_in_level():
    f = np.cumsum(np.linspace(0, 1, 20))
    ts = [threshold_T(f, th) for th in np.linspace(-1, 12, 60)]
    assert ts == sorted(ts)


def test_first_steps_of_finite_horizon(figure_base):
    vs = finite_horizon_iterate(figure_base, 3)
    assert np.all(vs[0].values == 0)
    assert np.all(burden_of(vs[0]).delta == 0)
    d1 = burden_of(vs[1]).delta[:, 0]
    dh = np.diff(figure_base.holding.array(vs[1].x_max))
    assert d1 == pytest.approx(dh / (figure_base.max_rate + figure_base.beta), rel=1e-12)


def test_first_step_serves_low_everywhere(figure_base):
    v0 = finite_horizon_iterate(figure_base, 0)[0]
    _, fast = greedy_actions(v0)
    assert not fast.any()
    assert extract_thresholds(burden_of(v0)).b_service == math.inf


def test_table_row_thresholds(table_row):
    v = solve_discounted(table_row)
    vh = solve_discounted(table_row, variant=Variant.ADMISSION_ONLY)
    assert v.policy().describe() == "Bs=2 Bd=3"
    assert vh.policy().b_admission == 2


def test_high_traffic_row_thresholds():
    m = ModelParams(lam=20, mu_low=3, mu_high=3.6, c=8, R=4, beta=1)
    assert solve_discounted(m).policy().describe() == "Bs=9 Bd=1"
    assert solve_discounted(m, variant=Variant.ADMISSION_ONLY).policy().b_admission == 1


@pytest.mark.parametrize("R", [0.0, 0.5, 1.5, 2.0, 2.5, 3.0])
def test_low_reward_keeps_service_threshold_above_admission(figure_base, R):
    p = solve_discounted(figure_base.replace(R=R)).policy()
    assert p.b_admission + 1 <= p.b_service


@pytest.mark.parametrize("R", [2.0, 2.5, 3.0])
def test_low_reward_adjacent_thresholds_near_ratio(figure_base, R):
    # equality is not implied by R <= c/delta alone: at R = 1.5 the burden
    # jumps past both levels at different states and Bs = 3, Bd = 0
    p = solve_discounted(figure_base.replace(R=R)).policy()
    assert p.b_service == p.b_admission + 1


def test_low_reward_thresholds_can_be_separated(figure_base):
    p = solve_discounted(figure_base.replace(R=1.5)).policy()
    assert p.describe() == "Bs=3 Bd=0"


def test_zero_burden_admits_everywhere(figure_base):
    d = BurdenFunction(np.zeros((10, 2)), figure_base, RewardTiming.AT_ADMISSION, Variant.COMBINED)
    assert extract_thresholds(d).b_admission == math.inf


def test_nonmonotone_burden_is_rejected(figure_base):
    d = BurdenFunction(np.array([[0.0, 0], [2, 2], [1, 1]]), figure_base, RewardTiming.AT_ADMISSION, Variant.COMBINED)
    with pytest.raises(NonMonotoneBurden):
        extract_thresholds(d)


def test_near_tie_warns(figure_base):
    d = BurdenFunction(np.array([[1.0, 1], [4.0, 4], [9, 9]]), figure_base, RewardTiming.AT_ADMISSION, Variant.COMBINED)
    with pytest.warns(NearTieWarning):
        extract_thresholds(d)


def test_tie_favours_admission(figure_base):
    d = BurdenFunction(np.array([[1.0, 1], [4.0, 4], [9, 9]]), figure_base, RewardTiming.AT_ADMISSION, Variant.COMBINED)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NearTieWarning)
        assert extract_thresholds(d).b_admission == 1


def test_departure_thresholds_use_shifted_levels():
    m = ModelParams(lam=5, mu_low=3, mu_high=5, c=6, R=4, beta=0.5, reward_timing=RewardTiming.AT_DEPARTURE)
    v = solve_discounted(m)
    d0 = burden_of(v).delta[:, 0]
    p = v.policy()
    assert p.b_service == 1 + threshold_T(d0, m.c / m.delta - m.R)
    assert p.b_admission == threshold_T(d0, 0.0)


def test_value_iteration_and_accelerated_agree(figure_base):
    a = solve_discounted(figure_base, method="accelerated")
    b = solve_discounted(figure_base, method="value_iteration")
    assert np.max(np.abs(a.values - b.values)) < 1e-8
    assert a.policy() == b.policy()
    assert isinstance(b.horizon, FixedPoint)


def test_solution_satisfies_optimality_equations(figure_base):
    v = solve_discounted(figure_base, method="value_iteration")
    assert bellman_residual(v) <= 1e-9


def test_doubling_iteration_budget_changes_nothing(figure_base):
    tol = 1e-9
    a = solve_discounted(figure_base, tol=tol, method="value_iteration")
    b = solve_discounted(figure_base, tol=tol / 2, max_iters=200000, method="value_iteration")
    assert a.policy() == b.policy()
    assert np.max(np.abs(a.values - b.values)) < tol


def test_optimal_thresholds_evaluate_to_optimal_values(figure_base):
    v = solve_discounted(figure_base)
    pv = evaluate_threshold_policy(v.policy(), figure_base, v.x_max)
    assert np.max(np.abs(pv.values - v.values)) < 1e-9


def test_reject_all_from_empty_is_zero(figure_base):
    pv = evaluate_threshold_policy(ThresholdPolicy(3, -1), figure_base, 20)
    assert pv(0, 0) == pytest.approx(0, abs=1e-24)
    assert pv(0, 1) == pytest.approx(0, abs=1e-24)


def test_values_are_read_only(figure_base):
    v = solve_discounted(figure_base)
    with pytest.raises(ValueError):
        v.values[0, 0] = 1.0


def test_never_serve_fast_when_empty(figure_base):
    for R in (0, 4, 10):
        _, fast = greedy_actions(solve_discounted(figure_base.replace(R=R)))
        assert not fast[0]


def test_adaptive_truncation_grows_cap():
    m = ModelParams(lam=2, mu_low=3, mu_high=5, c=1, R=60, beta=0.2, holding=PowerCost(0.01, 2))
    v = solve_discounted(m, TruncationSpec(x_max=16, safety_margin=4))
    assert v.x_max > 16
    assert v.policy().b_admission <= v.x_max - 4


def test_fixed_cap_too_tight_raises():
    m = ModelParams(lam=2, mu_low=3, mu_high=5, c=1, R=60, beta=0.2, holding=PowerCost(0.01, 2))
    with pytest.raises(TruncationTooTight):
        solve_discounted(m, TruncationSpec(x_max=16, safety_margin=4, adaptive=False))


def test_value_rows_cover_state_space(figure_base):
    v = solve_discounted(figure_base)
    rows = list(v.rows())
    assert len(rows) == 2 * (v.x_max + 1)
    assert rows[1] == (0, 1, v(0, 1))
