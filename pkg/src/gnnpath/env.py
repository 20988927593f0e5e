"""Simulated learners walking through a linear corpus.

A learner understands document ``i`` only after document ``i - 1``. Feedback
is perfectly accurate unless wrapped in :class:`NoisyFeedback`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Feedback(enum.IntEnum):
    """Learner response; the integer value is the one-hot slot in the policy input."""

    TOO_HARD = 0  # f_<
    TOO_EASY = 1  # f_>
    OK = 2  # f_o
    NOT_VISITED = 3

    @property
    def symbol(self) -> str:
        return {0: "f_lt", 1: "f_gt", 2: "f_ok", 3: "not_visited"}[int(self)]


N_FEEDBACK = len(Feedback)


@dataclass
class LearnerState:
    n_docs: int
    horizon: int
    understood: list[int] = field(default_factory=list)
    t: int = 0

    @property
    def done(self) -> bool:
        return self.t >= self.horizon


@dataclass(frozen=True)
class StepResult:
    doc: int
    feedback: Feedback
    reward: float
    done: bool
    understood: tuple[int, ...]


def feedback_for(understood: list[int] | tuple[int, ...], action: int) -> Feedback:
    if action in understood:
        return Feedback.TOO_EASY
    if action > 0 and (action - 1) not in understood:
        return Feedback.TOO_HARD
    return Feedback.OK


class LinearLearnerEnv:
    """Episode lifecycle for one simulated learner.

    ``horizon`` defaults to the number of documents, so only a mistake-free
    path collects the maximum return.
    """

    def __init__(self, n_docs: int, horizon: int | None = None):
        if n_docs < 1:
            raise ValueError("n_docs must be >= 1")
        horizon = n_docs if horizon is None else horizon
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.n_docs = n_docs
        self.horizon = horizon
        self.state = LearnerState(n_docs, horizon)

    def reset(self) -> LearnerState:
        self.state = LearnerState(self.n_docs, self.horizon)
        return self.state

    def _feedback(self, action: int) -> Feedback:
        return feedback_for(self.state.understood, action)

    def step(self, action: int) -> StepResult:
        s = self.state
        if s.done:
            raise RuntimeError("step called after the episode ended; call reset()")
        if not 0 <= action < self.n_docs:
            raise IndexError(f"action {action} out of range for {self.n_docs} documents")
        fb = self._feedback(action)
        reward = 1.0 if fb is Feedback.OK else 0.0
        if fb is Feedback.OK and action not in s.understood:
            s.understood.append(action)
        s.t += 1
        return StepResult(action, fb, reward, s.done, tuple(s.understood))


class NoisyFeedback(LinearLearnerEnv):
    """Extension: with probability ``epsilon`` report a uniformly chosen wrong feedback.

    Only the reported feedback is corrupted; the learner's understood set and
    the reward follow the reported value, matching what a recommender would see.
    Off by default everywhere.
    """

    def __init__(self, n_docs: int, horizon: int | None = None, epsilon: float = 0.0, seed: int = 0):
        super().__init__(n_docs, horizon)
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        self.epsilon = epsilon
        self.rng = np.random.default_rng(seed)

    def _feedback(self, action: int) -> Feedback:
        fb = super()._feedback(action)
        if self.epsilon and self.rng.random() < self.epsilon:
            others = [f for f in (Feedback.TOO_HARD, Feedback.TOO_EASY, Feedback.OK) if f is not fb]
            fb = others[int(self.rng.integers(len(others)))]
        return fb


def episode_return(rewards) -> float:
    return float(sum(rewards))
