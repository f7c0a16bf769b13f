"""Synthetic desk-scale environment for the batched training loop.

Problems are small arithmetic chains whose difficulty class is encoded by the
operator count. The toy policy picks a verbosity level (token spend) per
problem; a problem is solved iff its spend clears a hidden per-class
threshold, and spends share the group budget, so verbosity on early problems
starves later ones. Completions are rendered as real templated text and routed
through extraction and verification, so every step exercises the full reward
pipeline. Correctness-by-threshold is deterministic on purpose: it makes the
optimal policy computable by brute-force enumeration.
"""

from __future__ import annotations

import ast
import itertools
import json
import math
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .corpus import Corpus, Problem, estimate_difficulty
from .errors import BadMix
from .grouping import (
    BudgetConfig,
    GroupingConfig,
    ProblemGroup,
    build_groups,
    select_budget,
)
from .grpo import PolicyAdapter, TrainConfig, UpdateSignal, train_step
from .reward import RewardWeights, total_reward
from .seeding import derive_seed

CLASS_NAMES = ("easy", "medium", "hard")


@dataclass(frozen=True)
class SynthProblem(Problem):
    """A generated arithmetic problem with a hidden correctness threshold."""

    min_tokens_for_correct: int = 1
    difficulty_class: str = "easy"

    def __post_init__(self):
        super().__post_init__()
        if self.difficulty_class not in CLASS_NAMES:
            raise ValueError(f"unknown difficulty class {self.difficulty_class!r}")
        if self.min_tokens_for_correct < 1:
            raise ValueError("min_tokens_for_correct must be >= 1")


@dataclass(frozen=True)
class SimEnvConfig:
    """Environment shape: corpus mix, verbosity ladder, thresholds, budget rule.

    Thresholds are per class (easy, medium, hard) and must be strictly
    increasing so harder classes genuinely cost more to solve.
    """

    group_size: int = 3
    corpus_size: int = 30
    class_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    verbosity_levels: tuple[int, ...] = (1, 64, 128, 160, 192, 512)
    thresholds: tuple[int, int, int] = (128, 160, 192)
    init_logits: tuple[tuple[float, ...], ...] = (
        (0.0, 0.0, 0.0, 0.0, 0.0, 2.0),
        (0.0, 0.0, 0.0, 0.0, 0.0, 2.0),
        (0.0, 0.0, 0.0, 0.0, 0.0, 2.0),
    )
    budget: BudgetConfig = BudgetConfig(compression_ratio=0.5, rounding_granularity=512)

    def __post_init__(self):
        if self.group_size < 1:
            raise ValueError("group_size must be >= 1")
        if self.corpus_size < self.group_size:
            raise ValueError("corpus_size must be >= group_size")
        levels = self.verbosity_levels
        if len(levels) < 2 or any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("verbosity_levels must be strictly increasing")
        t = self.thresholds
        if len(t) != 3 or not t[0] < t[1] < t[2]:
            raise ValueError("thresholds must be strictly increasing, one per class")
        if len(self.init_logits) != 3:
            raise ValueError("init_logits needs one row per difficulty class")
        for row in self.init_logits:
            if len(row) != len(levels):
                raise ValueError("each logit row must match the level count")
            if any(not math.isfinite(x) for x in row):
                raise ValueError("logits must be finite")

    @classmethod
    def default(cls) -> "SimEnvConfig":
        """Balanced environment where every class is cheaply solvable.

        Solving costs 128/160/192 tokens by class while the untrained policy
        leans on the 512-token level, so the shared budget creates genuine
        compression pressure without making correctness unaffordable.
        """
        return cls()

    @classmethod
    def ablation(cls) -> "SimEnvConfig":
        """Environment where only the top verbosity level solves anything.

        One expensive problem per group of six fits the budget, so the
        no-penalty optimum solves exactly it; with an explicit length penalty
        the token cost of that solve (1023/1152 per unit weight) exceeds the
        accuracy gain of both penalty arms, so giving up on accuracy entirely
        becomes the rational optimum.
        """
        return cls(
            group_size=6,
            corpus_size=36,
            class_mix=(1 / 2, 1 / 3, 1 / 6),
            verbosity_levels=(1, 8, 64, 192, 448, 1100),
            thresholds=(1060, 1080, 1100),
            init_logits=(
                (2.0, 0.0, 0.0, -1.0, -4.0, -4.0),
                (-1.0, -1.0, -1.0, 0.0, 2.0, -4.0),
                (-2.0, -2.0, -6.0, -6.0, -6.0, 4.0),
            ),
            budget=BudgetConfig(compression_ratio=0.75, rounding_granularity=1152),
        )


def _eval_arith(expr: str) -> int:
    """Evaluate a generated +,-,* integer chain via the ast module."""

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, int):
            return node.value
        if isinstance(node, ast.BinOp):
            left, right = walk(node.left), walk(node.right)
            if isinstance(node.op, ast.Add):
                return left + right
            if isinstance(node.op, ast.Sub):
                return left - right
            if isinstance(node.op, ast.Mult):
                return left * right
        raise ValueError(f"unsupported expression {expr!r}")

    return walk(ast.parse(expr, mode="eval"))


def _count_ops(expr: str) -> int:
    tree = ast.parse(expr, mode="eval")
    return sum(isinstance(node, ast.BinOp) for node in ast.walk(tree))


_STATEMENT_PREFIX = "Compute "


def statement_class(statement: str) -> str:
    """Recover the difficulty class from a statement's operator count."""
    if not statement.startswith(_STATEMENT_PREFIX) or not statement.endswith("."):
        raise ValueError(f"not a generated statement: {statement!r}")
    ops = _count_ops(statement[len(_STATEMENT_PREFIX) : -1])
    if not 1 <= ops <= 3:
        raise ValueError(f"operator count {ops} maps to no class")
    return CLASS_NAMES[ops - 1]


def _apportion(count: int, mix: Sequence[float]) -> list[int]:
    """Largest-remainder split of `count` across the class proportions."""
    quotas = [count * p for p in mix]
    counts = [int(q) for q in quotas]
    remainder = count - sum(counts)
    order = sorted(range(len(mix)), key=lambda i: quotas[i] - counts[i], reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def generate_corpus(
    count: int,
    seed: int,
    class_mix: Sequence[float] = (1 / 3, 1 / 3, 1 / 3),
    thresholds: Sequence[int] = (128, 160, 192),
) -> Corpus:
    """Generate a deterministic synthetic corpus with the given class mix."""
    if count < 1:
        raise ValueError("count must be >= 1")
    mix = tuple(float(p) for p in class_mix)
    if len(mix) != 3 or any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-9:
        raise BadMix(f"class mix must be 3 non-negative proportions summing to 1: {mix}")

    rng = random.Random(seed)
    labels = []
    for class_idx, n in enumerate(_apportion(count, mix)):
        labels.extend([class_idx] * n)
    rng.shuffle(labels)

    problems = []
    for idx, class_idx in enumerate(labels):
        ops = class_idx + 1
        terms = [str(rng.randint(2, 12))]
        for _ in range(ops):
            terms.append(rng.choice("+-*"))
            terms.append(str(rng.randint(2, 12)))
        expr = " ".join(terms)
        problems.append(
            SynthProblem(
                id=f"p{idx:04d}",
                statement=f"{_STATEMENT_PREFIX}{expr}.",
                answer=str(_eval_arith(expr)),
                min_tokens_for_correct=int(thresholds[class_idx]),
                difficulty_class=CLASS_NAMES[class_idx],
            )
        )
    return Corpus(problems=tuple(problems), source="sim")


def _wrong_answer(answer: str) -> str:
    return str(int(answer) + 1)


def walk_completion(
    problems: Sequence[SynthProblem],
    levels: Sequence[int],
    budget: int,
) -> tuple[str, int, tuple[bool, ...], tuple[bool, ...]]:
    """Render a completion for the given per-slot spends under the budget.

    Problems are visited in order; once a spend would push the total past the
    budget, that problem and all later ones go unanswered (the first truncated
    slot leaves a dangling box opener, like a cut-off generation). Returns
    (text, tokens, answered flags, correct flags); tokens is the sum of the
    answered prefix's spends and never exceeds the budget.
    """
    parts = []
    spent = 0
    answered = []
    correct = []
    truncated = False
    for i, (problem, v) in enumerate(zip(problems, levels), start=1):
        if truncated or spent + v > budget:
            if not truncated:
                parts.append(f"### Problem {i}\nAnswer{i}: \\boxed{{")
                truncated = True
            answered.append(False)
            correct.append(False)
            continue
        spent += v
        ok = v >= problem.min_tokens_for_correct
        text = problem.answer if ok else _wrong_answer(problem.answer)
        parts.append(
            f"### Problem {i}\n"
            f"Worked the chain step by step ({v} tokens of reasoning).\n"
            f"Answer{i}: \\boxed{{{text}}}"
        )
        answered.append(True)
        correct.append(ok)
    return "\n".join(parts), spent, tuple(answered), tuple(correct)


def analytic_reward(
    problems: Sequence[SynthProblem],
    levels: Sequence[int],
    budget: int,
    weights: RewardWeights,
    max_len: int,
) -> tuple[float, float, float, float, int]:
    """Closed-form reward for a spend assignment, mirroring the text pipeline.

    Returns (total, r_acc, r_fmt, r_len, tokens). Used by the enumeration
    oracles; equality with the rendered-text path is a tested invariant.
    """
    spent = 0
    n = len(problems)
    n_answered = 0
    n_correct = 0
    for problem, v in zip(problems, levels):
        if spent + v > budget:
            break
        spent += v
        n_answered += 1
        if v >= problem.min_tokens_for_correct:
            n_correct += 1
    r_acc = n_correct / n
    r_fmt = 1.0 if n_answered == n else 0.0
    r_len = max(-1.0, -spent / max_len)
    total = weights.w_acc * r_acc + weights.w_fmt * r_fmt + weights.w_len * r_len
    return total, r_acc, r_fmt, r_len, spent


_PROMPT_SECTION = re.compile(r"^### Problem (\d+)\n(.+)$", re.MULTILINE)


def _statements_from_prompt(prompt: str) -> list[str]:
    """Pull per-slot statements out of a rendered group prompt, in order."""
    slots = {}
    for m in _PROMPT_SECTION.finditer(prompt):
        slots[int(m.group(1))] = m.group(2)
    if not slots or sorted(slots) != list(range(1, len(slots) + 1)):
        raise ValueError("prompt does not contain a contiguous problem list")
    return [slots[i] for i in range(1, len(slots) + 1)]


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


class ToyPolicy(PolicyAdapter):
    """Softmax-over-verbosity policy, one categorical head per difficulty class.

    The reference head is frozen at construction for KL regularization.
    Sampling parses the prompt back into problems (via a statement index over
    the corpus), draws one level per slot, and renders the completion through
    the shared budget walk.
    """

    def __init__(self, config: SimEnvConfig, corpus: Corpus):
        self.config = config
        self.levels = np.array(config.verbosity_levels, dtype=np.int64)
        self.logits = np.array(config.init_logits, dtype=np.float64)
        self.reference_logits = self.logits.copy()
        self.reference_logits.setflags(write=False)
        self._by_statement = {p.statement: p for p in corpus}

    @property
    def level_count(self) -> int:
        return len(self.levels)

    def add_corpus(self, corpus: Corpus) -> None:
        """Extend the statement index so prompts over a new corpus resolve."""
        for p in corpus:
            self._by_statement.setdefault(p.statement, p)

    def distribution(self, class_idx: int) -> np.ndarray:
        return _softmax(self.logits[class_idx])

    def _resolve(self, prompt: str) -> list[SynthProblem]:
        problems = []
        for statement in _statements_from_prompt(prompt):
            problem = self._by_statement.get(statement)
            if problem is None:
                raise ValueError(f"statement not in the policy's corpus: {statement!r}")
            problems.append(problem)
        return problems

    def sample(self, prompt: str, budget: int, seed: int):
        problems = self._resolve(prompt)
        rng = np.random.default_rng(seed)
        trace = []
        levels = []
        for problem in problems:
            c = CLASS_NAMES.index(problem.difficulty_class)
            j = int(rng.choice(self.level_count, p=self.distribution(c)))
            trace.append((c, j))
            levels.append(int(self.levels[j]))
        text, tokens, _, _ = walk_completion(problems, levels, budget)
        return text, tokens, tuple(trace)

    def greedy_level_indices(self) -> tuple[int, ...]:
        return tuple(int(np.argmax(self.logits[c])) for c in range(3))

    def log_prob(self, trace) -> float:
        total = 0.0
        for c, j in trace:
            total += float(np.log(self.distribution(c)[j]))
        return total

    def score_gradient(self, trace) -> np.ndarray:
        """d log pi(trace) / d logits, same shape as the logit table."""
        grad = np.zeros_like(self.logits)
        for c, j in trace:
            p = self.distribution(c)
            grad[c] -= p
            grad[c, j] += 1.0
        return grad

    def kl_to_reference(self) -> float:
        """Mean over classes of KL(current || reference)."""
        total = 0.0
        for c in range(3):
            p = self.distribution(c)
            r = _softmax(self.reference_logits[c])
            total += float(np.sum(p * (np.log(p) - np.log(r))))
        return total / 3

    def _kl_gradient(self) -> np.ndarray:
        grad = np.zeros_like(self.logits)
        for c in range(3):
            p = self.distribution(c)
            r = _softmax(self.reference_logits[c])
            diff = np.log(p) - np.log(r)
            kl_c = float(np.sum(p * diff))
            grad[c] = p * (diff - kl_c)
        return grad / 3

    def apply_update(self, signal: UpdateSignal, learning_rate: float) -> None:
        grad = np.zeros_like(self.logits)
        for trace, advantage in signal.traced_advantages:
            if advantage != 0.0:
                grad += advantage * self.score_gradient(trace)
        grad /= len(signal.traced_advantages)
        if signal.kl_coefficient:
            grad -= signal.kl_coefficient * self._kl_gradient()
        self.logits += learning_rate * grad

    def expected_verbosity(self, problems: Sequence[SynthProblem]) -> float:
        """Mean over problems of the expected per-problem spend (untruncated)."""
        per_class = [float(np.dot(self.distribution(c), self.levels)) for c in range(3)]
        return sum(
            per_class[CLASS_NAMES.index(p.difficulty_class)] for p in problems
        ) / len(problems)


def reference_expected_verbosity(config: SimEnvConfig) -> float:
    """Expected per-problem spend of the untrained policy, weighted by mix."""
    levels = np.array(config.verbosity_levels, dtype=np.float64)
    return sum(
        p * float(np.dot(_softmax(np.array(row, dtype=np.float64)), levels))
        for p, row in zip(config.class_mix, config.init_logits)
    )


def simulate_completion(policy: ToyPolicy, group: ProblemGroup, seed: int):
    """Sample one completion for a group: (text, tokens, trace)."""
    return policy.sample(group.prompt, group.budget, seed)


def enumerate_policy_metrics(
    policy: ToyPolicy,
    groups: Sequence[ProblemGroup],
    weights: RewardWeights,
    max_len: int,
) -> dict:
    """Exact expected metrics of the current policy by full enumeration.

    Iterates every per-slot level combination per group, weighting the
    analytic reward by its probability. Exponential in group size, fine for
    desk-scale groups.
    """
    totals = {"reward": 0.0, "r_acc": 0.0, "r_fmt": 0.0, "r_len": 0.0, "tokens": 0.0}
    levels = [int(v) for v in policy.levels]
    for group in groups:
        dists = [
            policy.distribution(CLASS_NAMES.index(p.difficulty_class))
            for p in group.members
        ]
        for combo in itertools.product(range(policy.level_count), repeat=group.size):
            prob = 1.0
            for dist, j in zip(dists, combo):
                prob *= float(dist[j])
            if prob == 0.0:
                continue
            total, r_acc, r_fmt, r_len, tokens = analytic_reward(
                group.members, [levels[j] for j in combo], group.budget, weights, max_len
            )
            totals["reward"] += prob * total
            totals["r_acc"] += prob * r_acc
            totals["r_fmt"] += prob * r_fmt
            totals["r_len"] += prob * r_len
            totals["tokens"] += prob * tokens
    return {k: v / len(groups) for k, v in totals.items()}


def brute_force_optimal(
    config: SimEnvConfig,
    groups: Sequence[ProblemGroup],
    weights: RewardWeights,
    max_len: int,
) -> tuple[float, dict]:
    """Best mean reward over all deterministic class-to-level assignments.

    Expected reward is multilinear in the per-class distributions, so the
    stochastic optimum is attained at a deterministic assignment; enumerating
    the m^3 assignments is an exact oracle.
    """
    levels = [int(v) for v in config.verbosity_levels]
    best_reward = -math.inf
    best_assignment = None
    for combo in itertools.product(range(len(levels)), repeat=3):
        mean_acc = 0.0
        mean_total = 0.0
        for group in groups:
            spend = [
                levels[combo[CLASS_NAMES.index(p.difficulty_class)]]
                for p in group.members
            ]
            total, r_acc, _, _, _ = analytic_reward(
                group.members, spend, group.budget, weights, max_len
            )
            mean_total += total
            mean_acc += r_acc
        mean_total /= len(groups)
        if mean_total > best_reward:
            best_reward = mean_total
            best_assignment = {
                "levels": {
                    CLASS_NAMES[c]: levels[combo[c]] for c in range(3)
                },
                "mean_accuracy": mean_acc / len(groups),
            }
    return best_reward, best_assignment


ARM_WEIGHTS = {
    "implicit": RewardWeights(w_acc=2.0, w_fmt=1.0, w_len=0.0),
    "penalty-211": RewardWeights(w_acc=2.0, w_fmt=1.0, w_len=1.0),
    "penalty-511": RewardWeights(w_acc=5.0, w_fmt=1.0, w_len=1.0),
}


def arm_name(weights: RewardWeights) -> str:
    for name, w in ARM_WEIGHTS.items():
        if w == weights:
            return name
    return f"custom-{weights.w_acc:g}-{weights.w_fmt:g}-{weights.w_len:g}"


@dataclass(frozen=True)
class TrainingLogRow:
    step: int
    arm: str
    mean_tokens: float
    accuracy: float
    r_acc: float
    r_fmt: float
    r_len: float
    kl: float
    objective: float


@dataclass(frozen=True)
class SimEnvironment:
    """A prepared environment: scored corpus, policy, groups, shared budget."""

    config: SimEnvConfig
    corpus: Corpus
    policy: ToyPolicy
    groups: tuple[ProblemGroup, ...]
    budget: int


@dataclass
class TrainingResult:
    rows: list[TrainingLogRow]
    env: SimEnvironment
    weights: RewardWeights
    arm: str


def prepare_environment(config: SimEnvConfig, seed: int) -> SimEnvironment:
    """Generate, probe, budget, and group a synthetic corpus.

    The untrained policy itself serves as the difficulty probe, and the shared
    budget comes from the probe means through the standard selection rule, so
    the sim drives the same pipeline as a live run.
    """
    corpus = generate_corpus(
        config.corpus_size,
        derive_seed(seed, "sim-corpus"),
        config.class_mix,
        config.thresholds,
    )
    policy = ToyPolicy(config, corpus)
    scored = estimate_difficulty(
        corpus, policy, rollouts=4, seed=derive_seed(seed, "sim-probe")
    )
    budget = select_budget(
        [p.difficulty for p in scored], config.group_size, config.budget
    )
    grouping = build_groups(
        scored,
        GroupingConfig(group_size=config.group_size, seed=derive_seed(seed, "sim-groups")),
        budget=budget,
    )
    return SimEnvironment(
        config=config,
        corpus=scored,
        policy=policy,
        groups=grouping.groups,
        budget=budget,
    )


def run_bcr_training(
    config: SimEnvConfig,
    train_config: TrainConfig,
    weights: RewardWeights,
    env: Optional[SimEnvironment] = None,
) -> TrainingResult:
    """Run the full loop: probe, group, then GRPO steps cycling over groups.

    The first log row (step 0) holds the exact expected metrics of the
    untrained policy; subsequent rows average the sampled candidates of each
    step. With steps=0 the log is just that initialization row.
    """
    if env is None:
        env = prepare_environment(config, train_config.seed)
    policy = env.policy
    max_len = env.budget
    arm = arm_name(weights)

    init = enumerate_policy_metrics(policy, env.groups, weights, max_len)
    rows = [
        TrainingLogRow(
            step=0,
            arm=arm,
            mean_tokens=init["tokens"],
            accuracy=init["r_acc"],
            r_acc=init["r_acc"],
            r_fmt=init["r_fmt"],
            r_len=init["r_len"],
            kl=policy.kl_to_reference(),
            objective=init["reward"],
        )
    ]

    for step in range(1, train_config.steps + 1):
        group = env.groups[(step - 1) % len(env.groups)]
        breakdowns = []

        def reward_fn(completion: str, tokens: int, _group=group) -> float:
            b = total_reward(completion, _group, weights, max_len=max_len, tokens=tokens)
            breakdowns.append(b)
            return b.total

        report = train_step(policy, group, reward_fn, train_config, step_index=step)
        rows.append(
            TrainingLogRow(
                step=step,
                arm=arm,
                mean_tokens=report.mean_tokens,
                accuracy=sum(b.r_acc for b in breakdowns) / len(breakdowns),
                r_acc=sum(b.r_acc for b in breakdowns) / len(breakdowns),
                r_fmt=sum(b.r_fmt for b in breakdowns) / len(breakdowns),
                r_len=sum(b.r_len for b in breakdowns) / len(breakdowns),
                kl=report.kl,
                objective=report.objective,
            )
        )
    return TrainingResult(rows=rows, env=env, weights=weights, arm=arm)


def write_training_log(rows: Sequence[TrainingLogRow], path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row.__dict__, ensure_ascii=False) + "\n")


GroupSource = Callable[[ProblemGroup], tuple[str, int]]


def greedy_policy_source(policy: ToyPolicy) -> GroupSource:
    """Deterministic source: each class plays its highest-probability level."""

    def source(group: ProblemGroup) -> tuple[str, int]:
        modes = policy.greedy_level_indices()
        levels = [
            int(policy.levels[modes[CLASS_NAMES.index(p.difficulty_class)]])
            for p in group.members
        ]
        text, tokens, _, _ = walk_completion(group.members, levels, group.budget)
        return text, tokens

    return source


def max_verbosity_source(config: SimEnvConfig) -> GroupSource:
    """Baseline source that always spends the top verbosity level."""
    top = int(config.verbosity_levels[-1])

    def source(group: ProblemGroup) -> tuple[str, int]:
        text, tokens, _, _ = walk_completion(group.members, [top] * group.size, group.budget)
        return text, tokens

    return source


def task_scaling_summary(
    source: GroupSource,
    config: SimEnvConfig,
    seed: int,
    n_values: Sequence[int] = (1, 2, 3, 4, 5),
    eval_corpus: Optional[Corpus] = None,
    eval_budget: BudgetConfig = BudgetConfig(compression_ratio=1.0, rounding_granularity=512),
) -> list[dict]:
    """Score a completion source at several packing sizes.

    Budgets scale with N through the standard selection rule; the per-problem
    probe mean is the untrained policy's exact expected verbosity so the
    budget schedule is deterministic. Returns one summary dict per n.
    """
    from .evalharness import score_groups, pack_eval_groups

    if eval_corpus is None:
        eval_corpus = generate_corpus(
            60, derive_seed(seed, "sim-eval-corpus"), config.class_mix, config.thresholds
        )
    l_avg = reference_expected_verbosity(config)
    summaries = []
    for n in n_values:
        budget = select_budget([l_avg], n, eval_budget)
        groups = pack_eval_groups(eval_corpus, n, seed, budget=budget)
        summary = score_groups(source, groups, n)
        summary["budget"] = budget
        summaries.append(summary)
    return summaries
