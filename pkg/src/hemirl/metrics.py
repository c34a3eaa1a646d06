"""Relative-reward metrics and smoothing over logged reward series.

IRR compares the composed agent's early rewards with a from-scratch
baseline over the first k environment steps; FRR compares the left
hemisphere acting alone with the same baseline over the last k steps.
Both are ratios of medians of raw rewards; normalization never enters.
Even-length windows take the average of the two central values. A ratio
whose denominator median is zero or negative is reported as undefined
rather than dropped.

The quadrant summary classifies each task by (IRR - 1, FRR - 1): IRR
strictly above 1 counts as objective 1 met, FRR at or above 1 as
objective 2 met, matching the objective statements the ratios encode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass(frozen=True)
class RewardSeries:
    """Raw rewards indexed by cumulative environment step."""

    steps: np.ndarray
    rewards: np.ndarray
    agent_kind: str = ""
    task: str = ""
    seed: int = -1

    def __post_init__(self):
        object.__setattr__(self, "steps", np.asarray(self.steps, dtype=np.int64))
        object.__setattr__(self, "rewards", np.asarray(self.rewards, dtype=np.float64))
        if self.steps.ndim != 1 or self.steps.shape != self.rewards.shape:
            raise UsageError("steps and rewards must be equal-length 1-D arrays")
        if self.steps.size == 0:
            raise UsageError("reward series must be nonempty")
        if np.any(np.diff(self.steps) <= 0):
            raise UsageError("series steps must be strictly increasing")

    def __len__(self) -> int:
        return int(self.steps.size)


@dataclass(frozen=True)
class MetricWindow:
    """First/last k environment steps out of T total."""

    k: int
    total: int

    def __post_init__(self):
        if not (0 < self.k <= self.total):
            raise UsageError(f"window must satisfy 0 < k <= T, got k={self.k} T={self.total}")


@dataclass(frozen=True)
class MetricResult:
    value: float
    defined: bool
    note: str = ""

    def __float__(self) -> float:
        return self.value


def _window_median(series: RewardSeries, mask: np.ndarray, what: str) -> float:
    if not np.any(mask):
        raise UsageError(f"series has no samples in the {what} window")
    return float(np.median(series.rewards[mask]))


def _ratio(num: float, den: float) -> MetricResult:
    if den <= 0.0:
        return MetricResult(float("nan"), False,
                            f"denominator median {den} is not positive")
    return MetricResult(num / den, True)


def irr(bihem: RewardSeries, left_only: RewardSeries, w: MetricWindow) -> MetricResult:
    """Initial relative reward: median ratio over the first k steps."""
    num = _window_median(bihem, bihem.steps <= w.k, "initial")
    den = _window_median(left_only, left_only.steps <= w.k, "initial")
    return _ratio(num, den)


def frr(left_hemisphere_eval: RewardSeries, left_only: RewardSeries,
        w: MetricWindow) -> MetricResult:
    """Final relative reward: median ratio over the last k steps.

    The numerator must come from left-alone evaluation episodes (the
    left hemisphere acting with the full gate), not composed rollouts.
    """
    cut = w.total - w.k
    num = _window_median(left_hemisphere_eval,
                         left_hemisphere_eval.steps >= cut, "final")
    den = _window_median(left_only, left_only.steps >= cut, "final")
    return _ratio(num, den)


def rolling_median(series: RewardSeries, window_steps: int) -> RewardSeries:
    """Trailing median smoothing over an environment-step window.

    Point i is replaced by the median of all samples whose step lies in
    (step_i - window_steps, step_i]; early points use the partial window
    available. Output length equals input length.
    """
    if window_steps <= 0:
        raise UsageError("window_steps must be positive")
    steps = series.steps
    out = np.empty_like(series.rewards)
    lo = 0
    for i in range(len(series)):
        while steps[lo] <= steps[i] - window_steps:
            lo += 1
        out[i] = np.median(series.rewards[lo:i + 1])
    return RewardSeries(steps.copy(), out, series.agent_kind, series.task, series.seed)


QUADRANTS = ("upper-right", "upper-left", "lower-right", "lower-left", "undefined")


def quadrant_label(irr_value: MetricResult, frr_value: MetricResult) -> str:
    if not (irr_value.defined and frr_value.defined):
        return "undefined"
    horizontal = "right" if irr_value.value > 1.0 else "left"
    vertical = "upper" if frr_value.value >= 1.0 else "lower"
    return f"{vertical}-{horizontal}"


def quadrant_summary(per_task: dict[str, tuple[MetricResult, MetricResult]]) -> dict[str, str]:
    """Label each task by which objectives its median (IRR, FRR) meet."""
    if not per_task:
        raise UsageError("quadrant summary needs at least one task")
    return {task: quadrant_label(i, f) for task, (i, f) in per_task.items()}


def median_over_seeds(values: list[MetricResult]) -> MetricResult:
    """Median of per-seed ratios; undefined if any input is undefined."""
    if not values:
        raise UsageError("need at least one seed")
    if any(not v.defined for v in values):
        return MetricResult(float("nan"), False, "at least one seed undefined")
    return MetricResult(float(np.median([v.value for v in values])), True)
