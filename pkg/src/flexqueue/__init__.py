"""Optimal admission and two-speed service control of an M/M/1 queue."""

from flexqueue.dp import (
    BurdenFunction,
    PolicyValue,
    ThresholdPolicy,
    ValueFunction,
    Variant,
    burden_of,
    evaluate_threshold_policy,
    extract_thresholds,
    finite_horizon_iterate,
    solve_discounted,
    threshold_T,
)
from flexqueue.flexibility import (
    AverageRewardResult,
    FlexibilityReport,
    FlexVerdict,
    average_reward,
    critical_reward,
    flexibility,
    sweep,
)
from flexqueue.model import (
    ExponentialCost,
    ModelParams,
    PowerCost,
    RewardTiming,
    TabularCost,
    TruncationSpec,
    holding_cost,
    uniformize,
    validate_assumption1,
)
from flexqueue.simulate import DiscountedEffective, SimConfig, SimEstimate, TimeAverage, simulate_average, simulate_discounted

__all__ = [
    "AverageRewardResult",
    "BurdenFunction",
    "DiscountedEffective",
    "ExponentialCost",
    "FlexVerdict",
    "FlexibilityReport",
    "ModelParams",
    "PolicyValue",
    "PowerCost",
    "RewardTiming",
    "SimConfig",
    "SimEstimate",
    "TabularCost",
    "ThresholdPolicy",
    "TimeAverage",
    "TruncationSpec",
    "ValueFunction",
    "Variant",
    "average_reward",
    "burden_of",
    "critical_reward",
    "evaluate_threshold_policy",
    "extract_thresholds",
    "finite_horizon_iterate",
    "flexibility",
    "holding_cost",
    "simulate_average",
    "simulate_discounted",
    "solve_discounted",
    "sweep",
    "threshold_T",
    "uniformize",
    "validate_assumption1",
]
