"""Composite group reward: accuracy + format, optional explicit length penalty."""

from __future__ import annotations

from dataclasses import dataclass

from .extraction import ExtractedAnswerSet, Stage, extract_answers
from .grouping import ProblemGroup
from .verification import VerifyConfig, verify


@dataclass(frozen=True)
class RewardWeights:
    w_acc: float = 2.0
    w_fmt: float = 1.0
    w_len: float = 0.0

    def __post_init__(self):
        if self.w_acc < 0 or self.w_fmt < 0 or self.w_len < 0:
            raise ValueError("reward weights must be >= 0")


@dataclass(frozen=True)
class RewardBreakdown:
    r_acc: float
    r_fmt: float
    r_len: float
    total: float
    per_problem_correct: tuple[bool, ...]


def accuracy_reward(
    extracted: ExtractedAnswerSet,
    group: ProblemGroup,
    vcfg: VerifyConfig = VerifyConfig(),
) -> tuple[float, tuple[bool, ...]]:
    """Fraction of group members whose extracted answer verifies against truth.

    Absent answers count as wrong.
    """
    if len(extracted.answers) != group.size:
        raise ValueError("extracted answer count does not match group size")
    correct = tuple(
        ans is not None and verify(ans, problem.answer, vcfg)
        for ans, problem in zip(extracted.answers, group.members)
    )
    return sum(correct) / len(correct), correct


def format_reward(completion: str, n: int) -> int:
    """1 iff every slot i carries its Answeri: \\boxed{...} marker inside
    section i (i.e. every extraction stage is a section match), else 0."""
    extracted = extract_answers(completion, n)
    return int(all(stage is Stage.SECTION_MATCH for stage in extracted.stages))


def total_reward(
    completion: str,
    group: ProblemGroup,
    weights: RewardWeights = RewardWeights(),
    max_len: int = 1,
    tokens: int = 0,
    vcfg: VerifyConfig = VerifyConfig(),
) -> RewardBreakdown:
    """Combine accuracy, format, and (when w_len > 0) the length penalty.

    `tokens` is the completion length in the same unit as the group budget
    (adapter-reported tokens in live mode, simulated spend in sim mode).
    """
    if max_len <= 0:
        raise ValueError("max_len must be positive")
    extracted = extract_answers(completion, group.size)
    r_acc, correct = accuracy_reward(extracted, group, vcfg)
    r_fmt = format_reward(completion, group.size)
    r_len = max(-1.0, -tokens / max_len)
    total = weights.w_acc * r_acc + weights.w_fmt * r_fmt + weights.w_len * r_len
    return RewardBreakdown(
        r_acc=r_acc,
        r_fmt=float(r_fmt),
        r_len=r_len,
        total=total,
        per_problem_correct=correct,
    )
