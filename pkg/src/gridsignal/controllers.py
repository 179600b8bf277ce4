"""Reference signal controllers: fixed-time baseline and queue-balance rule.

The rule controller requests a phase switch whenever the pressure of the
three red-served groups outweighs the currently served group:

    switch  iff  beta * (low-speed on red groups) - (low-speed on green) > 0

with strict inequality, counting vehicles at or below the low-speed
threshold on entry lanes only (right-turn lanes are unsignalled and
excluded). It is the supervising expert for imitation learning and a
baseline in its own right.
"""

from __future__ import annotations

import numpy as np

from .config import RuleParams
from .microsim import SimState, grouped_low_speed


def rule_expert(grouped: np.ndarray, current_phase: np.ndarray, beta: float) -> np.ndarray:
    """Switch decisions from (I, 4) grouped low-speed counts.

    grouped[i, p] counts low-speed vehicles on the pair of entry lanes that
    phase p serves at intersection i; current_phase[i] is the phase whose
    group is green now.
    """
    grouped = np.asarray(grouped, dtype=np.float64)
    current = np.asarray(current_phase).reshape(-1)
    idx = np.arange(grouped.shape[0])
    green = grouped[idx, current]
    red = grouped.sum(axis=1) - green
    return (beta * red - green > 0).astype(np.int8)


class RuleController:
    """Acts with the queue-balance rule on live simulator state."""

    def __init__(self, params: RuleParams | None = None):
        self.params = params or RuleParams()

    def act(self, state: SimState) -> np.ndarray:
        grouped = grouped_low_speed(state)
        return rule_expert(grouped, state.phase, self.params.beta)


class FixedTimeController:
    """Cycles phases on a fixed green period, ignoring traffic."""

    def __init__(self, period_s: float = 20.0):
        self.period_s = float(period_s)

    def act(self, state: SimState) -> np.ndarray:
        period_steps = max(1, int(round(self.period_s / state.net.cfg.step_s)))
        due = (state.amber == 0) & (state.green_age >= period_steps)
        return due.astype(np.int8)
