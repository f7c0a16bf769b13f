"""Group-relative policy optimization core.

Advantages follow the group-relative form (reward minus the group mean over S
candidates); the update path is a plain score-function step with an explicit
KL pull toward the reference policy, applied through the PolicyAdapter
contract so real-model backends can be plugged in.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Sequence

from .errors import NonFiniteReward
from .grouping import ProblemGroup
from .seeding import derive_seed


@dataclass(frozen=True)
class TrainConfig:
    candidates_per_group: int = 4  # S
    kl_coefficient: float = 0.01  # beta
    learning_rate: float = 0.1
    steps: int = 500
    seed: int = 0
    normalize_advantages_by_std: bool = False

    def __post_init__(self):
        if self.candidates_per_group < 1:
            raise ValueError("candidates_per_group must be >= 1")
        if self.kl_coefficient < 0:
            raise ValueError("kl_coefficient must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")


@dataclass(frozen=True)
class AdvantageSet:
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    mean_reward: float


@dataclass(frozen=True)
class Candidate:
    completion: str
    tokens: int
    trace: object


@dataclass(frozen=True)
class UpdateSignal:
    """Per-candidate (trace, advantage) pairs plus the KL pull strength."""

    traced_advantages: tuple[tuple[object, float], ...]
    kl_coefficient: float


@dataclass(frozen=True)
class StepReport:
    group_id: str
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    mean_reward: float
    mean_tokens: float
    kl: float
    objective: float


class PolicyAdapter(ABC):
    """Contract a completion policy must satisfy to be trained or probed."""

    @abstractmethod
    def sample(self, prompt: str, budget: int, seed: int) -> tuple[str, int, object]:
        """Generate one completion; returns (text, token count <= budget, trace)."""

    @abstractmethod
    def log_prob(self, trace) -> float:
        """Log probability of a trace this adapter produced."""

    @abstractmethod
    def kl_to_reference(self) -> float:
        """Current KL divergence from the frozen reference policy."""

    @abstractmethod
    def apply_update(self, signal: UpdateSignal, learning_rate: float) -> None:
        """Apply one policy-gradient style update."""


def compute_advantages(
    rewards: Sequence[float], normalize_by_std: bool = False
) -> AdvantageSet:
    """Group-relative advantages: each reward minus the group mean.

    Std-normalization is off by default; the mean-subtracted form is the
    baseline definition and the zero-sum invariant holds either way.
    """
    rewards = tuple(float(r) for r in rewards)
    if not rewards:
        raise ValueError("rewards must be non-empty")
    for r in rewards:
        if not math.isfinite(r):
            raise NonFiniteReward(repr(r))
    mean = sum(rewards) / len(rewards)
    if all(r == rewards[0] for r in rewards):
        # Degenerate group: make the zero advantages exact, not just tiny.
        advantages = [0.0] * len(rewards)
    else:
        advantages = [r - mean for r in rewards]
    if normalize_by_std:
        var = sum(a * a for a in advantages) / len(advantages)
        std = math.sqrt(var)
        if std > 0:
            advantages = [a / std for a in advantages]
    return AdvantageSet(
        rewards=rewards, advantages=tuple(advantages), mean_reward=mean
    )


def objective_value(mean_reward: float, kl: float, beta: float) -> float:
    """KL-regularized objective used for logging: mean reward minus beta * KL."""
    if kl < 0:
        raise ValueError("kl must be >= 0")
    return mean_reward - beta * kl


RewardFn = Callable[[str, int], float]


def train_step(
    policy: PolicyAdapter,
    group: ProblemGroup,
    reward_fn: RewardFn,
    config: TrainConfig,
    step_index: int = 0,
) -> StepReport:
    """One GRPO step on a single group.

    Samples S candidates, scores them with reward_fn(completion, tokens),
    computes group-relative advantages, and applies one update. Any sampling
    failure aborts the whole step; there are no partial groups.
    """
    candidates = []
    for j in range(config.candidates_per_group):
        seed = derive_seed(config.seed, "candidate", group.group_id, step_index, j)
        completion, tokens, trace = policy.sample(group.prompt, group.budget, seed)
        candidates.append(Candidate(completion=completion, tokens=tokens, trace=trace))

    rewards = [reward_fn(c.completion, c.tokens) for c in candidates]
    adv = compute_advantages(rewards, config.normalize_advantages_by_std)

    signal = UpdateSignal(
        traced_advantages=tuple(
            (c.trace, a) for c, a in zip(candidates, adv.advantages)
        ),
        kl_coefficient=config.kl_coefficient,
    )
    policy.apply_update(signal, config.learning_rate)

    kl = policy.kl_to_reference()
    return StepReport(
        group_id=group.group_id,
        rewards=adv.rewards,
        advantages=adv.advantages,
        mean_reward=adv.mean_reward,
        mean_tokens=sum(c.tokens for c in candidates) / len(candidates),
        kl=kl,
        objective=objective_value(adv.mean_reward, kl, config.kl_coefficient),
    )
