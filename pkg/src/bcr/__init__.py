"""Batched contextual reinforcement toolkit.

Trains and evaluates policies that solve N packed problems under one shared
token budget: corpus probing, difficulty-balanced grouping, boxed-answer
extraction, answer verification, group-relative policy optimization, a
synthetic desk-scale environment, and an endpoint evaluation harness.
"""

from .corpus import Corpus, Problem, estimate_difficulty, load_corpus, save_corpus
from .extraction import ExtractedAnswerSet, Stage, extract_answers, find_all_boxed
from .grouping import (
    BudgetConfig,
    GroupingConfig,
    ProblemGroup,
    build_groups,
    render_prompt,
    render_system_prompt,
    select_budget,
)
from .grpo import PolicyAdapter, TrainConfig, compute_advantages, train_step
from .reward import RewardBreakdown, RewardWeights, total_reward
from .verification import VerifyConfig, normalize_latex, parse_rational, verify

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "Problem",
    "estimate_difficulty",
    "load_corpus",
    "save_corpus",
    "ExtractedAnswerSet",
    "Stage",
    "extract_answers",
    "find_all_boxed",
    "BudgetConfig",
    "GroupingConfig",
    "ProblemGroup",
    "build_groups",
    "render_prompt",
    "render_system_prompt",
    "select_budget",
    "PolicyAdapter",
    "TrainConfig",
    "compute_advantages",
    "train_step",
    "RewardBreakdown",
    "RewardWeights",
    "total_reward",
    "VerifyConfig",
    "normalize_latex",
    "parse_rational",
    "verify",
]
