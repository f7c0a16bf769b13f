"""Difficulty-balanced group construction, prompt rendering, budget selection."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .corpus import Corpus, Problem
from .errors import CorpusTooSmall, EmptyProbeSet, MissingDifficulty
from .seeding import derive_seed


@dataclass(frozen=True)
class GroupingConfig:
    group_size: int = 3
    seed: int = 0
    strata_count: Optional[int] = None  # defaults to group_size
    shuffle_within_group: bool = True

    def __post_init__(self):
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.strata_count is not None and self.strata_count < 1:
            raise ValueError("strata_count must be >= 1")

    @property
    def effective_strata(self) -> int:
        return self.strata_count if self.strata_count is not None else self.group_size


@dataclass(frozen=True)
class BudgetConfig:
    compression_ratio: float = 0.5
    rounding_granularity: int = 512

    def __post_init__(self):
        if not 0 < self.compression_ratio <= 1:
            raise ValueError("compression_ratio must be in (0, 1]")
        if self.rounding_granularity < 1:
            raise ValueError("rounding_granularity must be >= 1")


@dataclass(frozen=True)
class ProblemGroup:
    """N problems packed into one templated prompt sharing a token budget."""

    group_id: str
    members: tuple[Problem, ...]
    prompt: str
    budget: int

    def __post_init__(self):
        if not self.members:
            raise ValueError("group must have at least one member")
        if self.budget <= 0:
            raise ValueError("budget must be positive")

    @property
    def size(self) -> int:
        return len(self.members)


def render_system_prompt(n: int) -> str:
    """System instruction directing the model to solve n problems sequentially."""
    answer_lines = "\n".join(
        f"   After Problem {i}: Answer{i}: \\boxed{{...}}" for i in range(1, n + 1)
    )
    return (
        "[system]\n"
        "You are an expert mathematics tutor.\n"
        "Your task is to solve **multiple** math problems sequentially in a "
        "single response.\n"
        "Please strictly follow these rules:\n"
        "1. Use Markdown headers (### Problem X) to separate each problem.\n"
        "2. For each problem, show detailed step-by-step reasoning, then "
        "immediately put\n   the final answer right after the reasoning.\n"
        "3. Put the final answer for each problem immediately after solving "
        "it, in the\n   following format:\n"
        f"{answer_lines}\n"
        "4. Each answer should appear right after its corresponding problem's "
        "reasoning,\n   before moving to the next problem.\n"
        "5. Do not include any other text in your response."
    )


def render_prompt(members: Sequence[Problem]) -> str:
    """Render the full grouped prompt: system instruction then one section per problem."""
    parts = [render_system_prompt(len(members))]
    for i, problem in enumerate(members, start=1):
        parts.append(f"### Problem {i}\n{problem.statement}")
    return "\n\n".join(parts) + "\n"


def select_budget(
    probe_lengths: Sequence[float],
    group_size: int,
    config: BudgetConfig = BudgetConfig(),
) -> int:
    """Pick the shared token budget from probe completion lengths.

    budget = group_size * mean(probe_lengths) * compression_ratio, rounded to
    the nearest multiple of the granularity (ties round up, and the result is
    never below one granule so the budget stays positive).
    """
    lengths = list(probe_lengths)
    if not lengths:
        raise EmptyProbeSet()
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    l_avg = sum(lengths) / len(lengths)
    raw = group_size * l_avg * config.compression_ratio
    g = config.rounding_granularity
    quotient = raw / g
    lower = int(quotient) * g
    upper = lower + g
    if raw - lower < upper - raw:
        rounded = lower
    else:
        rounded = upper  # ties round up
    return max(rounded, g)


@dataclass(frozen=True)
class GroupingResult:
    groups: tuple[ProblemGroup, ...]
    leftovers: tuple[Problem, ...]


def build_groups(
    corpus: Corpus,
    config: GroupingConfig,
    budget: int = 1,
) -> GroupingResult:
    """Partition a scored corpus into difficulty-balanced groups of N.

    Problems are sorted by difficulty and cut into contiguous strata; each
    group draws one element from each stratum's independently shuffled order,
    giving near-uniform group mean difficulties. M mod N leftover problems are
    reported, never silently dropped.
    """
    n = config.group_size
    for p in corpus.problems:
        if p.difficulty is None:
            raise MissingDifficulty(p.id)
    m = len(corpus)
    if m < n:
        raise CorpusTooSmall(f"corpus has {m} problems, need at least {n}")
    k = m // n

    # Stable sort keeps corpus order among equal difficulties.
    ranked = sorted(corpus.problems, key=lambda p: p.difficulty)
    s = config.effective_strata
    strata: list[list[Problem]] = []
    base, extra = divmod(m, s)
    pos = 0
    for idx in range(s):
        size = base + (1 if idx < extra else 0)
        chunk = list(ranked[pos : pos + size])
        random.Random(derive_seed(config.seed, "stratum", idx)).shuffle(chunk)
        strata.append(chunk)
        pos += size

    # Global round-robin draw over strata; chunked into groups of n.
    drawn: list[Problem] = []
    cursors = [0] * s
    while len(drawn) < m:
        progressed = False
        for idx in range(s):
            if cursors[idx] < len(strata[idx]):
                drawn.append(strata[idx][cursors[idx]])
                cursors[idx] += 1
                progressed = True
        assert progressed

    groups = []
    for gi in range(k):
        members = drawn[gi * n : (gi + 1) * n]
        if config.shuffle_within_group:
            random.Random(derive_seed(config.seed, "group-order", gi)).shuffle(members)
        members = tuple(members)
        groups.append(
            ProblemGroup(
                group_id=f"g{gi:04d}",
                members=members,
                prompt=render_prompt(members),
                budget=budget,
            )
        )
    leftovers = tuple(drawn[k * n :])
    return GroupingResult(groups=tuple(groups), leftovers=leftovers)


def save_groups(result: GroupingResult, path, leftover_path=None) -> None:
    """Write groups (and optionally leftovers) as JSONL."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for g in result.groups:
            fh.write(
                json.dumps(
                    {
                        "group_id": g.group_id,
                        "member_ids": [p.id for p in g.members],
                        "prompt": g.prompt,
                        "budget": g.budget,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
    if leftover_path is not None:
        with Path(leftover_path).open("w", encoding="utf-8") as fh:
            for p in result.leftovers:
                fh.write(json.dumps({"id": p.id}) + "\n")
