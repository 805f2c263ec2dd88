"""Model-free baselines: perturb & observe hill climbing and tabular Q-learning."""
from __future__ import annotations

import numpy as np


def perturb_observe(direction: float, power: float, last_power: float | None, step: float):
    """One hill-climbing move: keep direction while power rises, flip otherwise.

    Returns ``(u, direction)``.  The first call (``last_power is None``) moves
    in the initial direction.
    """
    if last_power is not None and not power > last_power:
        direction = -direction
    return direction * step, direction


class PerturbObserve:
    name = "po"

    def __init__(self, step: float, u_bounds, direction: float = 1.0):
        self.step = float(step)
        self.lo, self.hi = u_bounds
        self.direction = float(direction)
        self.last = None

    def act(self, power: float) -> float:
        u, self.direction = perturb_observe(self.direction, power, self.last, self.step)
        self.last = power
        return float(np.clip(u, self.lo, self.hi))


class QLearning:
    """Tabular Q-learning over binned outputs with reward equal to the measurement."""

    name = "qrl"

    def __init__(self, y_range, bins: int, actions, alpha: float = 0.5, gamma: float = 0.8,
                 epsilon: float = 0.1, rng: np.random.Generator | None = None):
        self.lo, self.hi = float(y_range[0]), float(y_range[1])
        if not self.hi > self.lo:
            raise ValueError("empty output range")
        self.bins = int(bins)
        self.actions = np.asarray(actions, dtype=float)
        self.alpha, self.gamma, self.epsilon = float(alpha), float(gamma), float(epsilon)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.Q = np.zeros((self.bins, len(self.actions)))
        self.prev = None  # (state, action index)

    def state(self, y: float) -> int:
        t = (float(y) - self.lo) / (self.hi - self.lo)
        return int(np.clip(np.floor(t * self.bins), 0, self.bins - 1))

    def greedy(self, s: int) -> int:
        row = self.Q[s]
        return int(np.flatnonzero(row == row.max())[0])

    def update(self, s, a, reward, s_next):
        target = reward + self.gamma * self.Q[s_next].max()
        self.Q[s, a] += self.alpha * (target - self.Q[s, a])

    def act(self, y: float, reward: float) -> float:
        """Learn from the reward of the previous action, then pick the next one."""
        s = self.state(y)
        if self.prev is not None:
            self.update(*self.prev, reward, s)
        # draw both numbers every step so the stream does not depend on the branch
        explore = self.rng.random() < self.epsilon
        pick = int(self.rng.integers(len(self.actions)))
        a = pick if explore else self.greedy(s)
        self.prev = (s, a)
        return float(self.actions[a])
