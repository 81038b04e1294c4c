import math

import numpy as np
import pytest

from flexqueue.errors import AssumptionViolated, ModelError, NonConvexCost, TabularOutOfRange
from flexqueue.model import (
    ExponentialCost,
    ModelParams,
    PowerCost,
    TabularCost,
    TruncationSpec,
    _power_ratio_sup,
    fixed_truncation,
    holding_cost,
    uniformize,
    validate_assumption1,
)


def test_uniformize_figure_instance():
    u = uniformize(ModelParams(lam=5, mu_low=3, mu_high=5, c=6, R=4, beta=0.5))
    assert u.alpha == pytest.approx(10 / 10.5, abs=1e-15)
    assert u.cost_scale == pytest.approx(1 / 10.5)


def test_uniformize_table_instance(table_row):
    u = uniformize(table_row)
    assert table_row.max_rate == 8
    assert u.alpha == pytest.approx(8 / 9, abs=1e-15)
    assert u.p_arrival == pytest.approx(2 / 9, abs=1e-15)


def test_uniformize_probabilities_sum_to_one(table_row):
    u = uniformize(table_row)
    total = u.p_arrival + u.p_low_service + u.p_extra_service + u.discount_complement
    assert total == pytest.approx(1.0, abs=1e-12)


def test_alpha_tends_to_one_as_discount_vanishes(table_row):
    alphas = [uniformize(table_row.replace(beta=b)).alpha for b in (1e-2, 1e-5, 1e-9)]
    assert alphas == sorted(alphas)
    assert 1 - alphas[-1] < 1e-9


def test_holding_cost_values():
    assert holding_cost(PowerCost(1, 2), 3) == 9
    for spec in (PowerCost(2, 3), ExponentialCost(2, 1.05), TabularCost((0, 1, 3))):
        assert holding_cost(spec, 0) == 0
    # K * rho**x shifted down by K so that h(0) = 0
    assert holding_cost(ExponentialCost(2, 1.05), 2) == pytest.approx(2 * 1.05**2 - 2)


def test_tabular_out_of_range_and_extrapolation():
    h = TabularCost((0, 1, 3, 6))
    with pytest.raises(TabularOutOfRange):
        holding_cost(h, 4)
    assert holding_cost(h, 5, extrapolate=True) == 12
    assert list(h.array(6)) == [0, 1, 3, 6, 9, 12, 15]


@pytest.mark.parametrize(
    "values",
    [(0, 0, 0), (0,), (1, 2, 3), (0, -1, 2)],
)
def test_tabular_rejects_degenerate_tables(values):
    with pytest.raises(ModelError):
        TabularCost(values)


def test_tabular_rejects_nonconvex():
    with pytest.raises(NonConvexCost, match="x=2"):
        TabularCost((0, 1, 3, 4))


def test_tabular_accepts_rounded_linear_table():
    assert TabularCost((0.0, 0.1, 0.2, 0.1 + 0.2, 0.4)).last_index == 4


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(lam=0),
        dict(mu_low=0),
        dict(mu_high=3),
        dict(c=-1),
        dict(R=-0.1),
        dict(beta=0),
        dict(lam=math.inf),
    ],
)
def test_model_validation(kwargs):
    base = dict(lam=5, mu_low=3, mu_high=5, c=6, R=4, beta=0.5)
    base.update(kwargs)
    with pytest.raises(ModelError):
        ModelParams(**base)


def test_replace_accepts_lambda_alias(figure_base):
    m = figure_base.replace(**{"lambda": 7.0})
    assert m.lam == 7 and m.mu_high == figure_base.mu_high


def test_power_cost_growth_condition(figure_base):
    v = validate_assumption1(PowerCost(1, 2), figure_base)
    assert v.holds
    assert v.theta == 4
    assert v.J >= 1 and v.alpha_bound < 1


def test_reported_J_is_smallest(figure_base):
    h = PowerCost(1, 2)
    v = validate_assumption1(h, figure_base)
    scale = 1 / (figure_base.max_rate + figure_base.beta)
    lam_n = figure_base.max_rate * scale
    weight0 = figure_base.R + figure_base.c * scale
    if v.J > 1:
        assert lam_n ** (v.J - 1) * _power_ratio_sup(h, scale, weight0, v.J - 1) >= 1


def test_exponential_growth_too_fast(figure_base):
    # normalized Lambda is 10 / 10.5, so rho must stay below 1.05
    assert validate_assumption1(ExponentialCost(1, 1.04), figure_base).holds
    with pytest.raises(AssumptionViolated):
        validate_assumption1(ExponentialCost(1, 1.06), figure_base)


def test_tabular_growth_checked_on_prefix(figure_base):
    v = validate_assumption1(TabularCost(tuple(float(x * x) for x in range(30))), figure_base)
    assert v.finite_prefix_only


def test_truncation_spec_validation():
    with pytest.raises(ModelError):
        TruncationSpec(x_max=9, safety_margin=8)
    t = fixed_truncation(5)
    assert (t.x_max, t.safety_margin, t.adaptive) == (5, 0, False)


def test_power_cost_is_convex():
    h = PowerCost(1.5, 2.5).array(50)
    assert np.all(np.diff(h, 2) >= 0)


def test_growth_condition_with_vanishing_reward_weight():
    m = ModelParams(lam=1, mu_low=1, mu_high=2, c=2.2250738585072014e-308, R=0, beta=1, holding=PowerCost(1, 1))
    assert validate_assumption1(m.holding, m).J == 1
