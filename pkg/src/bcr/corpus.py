"""Problem corpus ingestion, difficulty probing, and JSONL persistence."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from .errors import DuplicateId, EmptyCorpus, MalformedRecord, ProbeFailure
from .seeding import derive_seed


@dataclass(frozen=True)
class Problem:
    """A single math problem with its ground-truth answer.

    difficulty, when set, is the mean completion-token count of a probe policy
    on this problem (higher = harder).
    """

    id: str
    statement: str
    answer: str
    difficulty: Optional[float] = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("problem id must be non-empty")
        if not self.statement:
            raise ValueError(f"problem {self.id!r}: statement must be non-empty")
        if not self.answer:
            raise ValueError(f"problem {self.id!r}: answer must be non-empty")
        if self.difficulty is not None:
            if not math.isfinite(self.difficulty) or self.difficulty < 0:
                raise ValueError(
                    f"problem {self.id!r}: difficulty must be finite and >= 0"
                )


@dataclass(frozen=True)
class Corpus:
    """An ordered collection of problems with a provenance label."""

    problems: tuple[Problem, ...]
    source: str = ""

    def __post_init__(self):
        seen = set()
        for p in self.problems:
            if p.id in seen:
                raise DuplicateId(p.id)
            seen.add(p.id)

    def __len__(self):
        return len(self.problems)

    def __iter__(self):
        return iter(self.problems)

    def by_id(self, problem_id: str) -> Problem:
        for p in self.problems:
            if p.id == problem_id:
                return p
        raise KeyError(problem_id)


_REQUIRED_KEYS = ("id", "statement", "answer")


def load_corpus(path, fmt: str = "jsonl") -> Corpus:
    """Load a corpus from a JSONL file, one problem record per line.

    Raises MalformedRecord, DuplicateId, or EmptyCorpus.
    """
    if fmt != "jsonl":
        raise ValueError(f"unsupported corpus format {fmt!r}")
    path = Path(path)
    problems = []
    seen = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, f"invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise MalformedRecord(lineno, "record is not a JSON object")
            for key in _REQUIRED_KEYS:
                if key not in record or not isinstance(record[key], str) or not record[key]:
                    raise MalformedRecord(lineno, f"missing or empty field {key!r}")
            if record["id"] in seen:
                raise DuplicateId(record["id"])
            seen.add(record["id"])
            difficulty = record.get("difficulty")
            if difficulty is not None:
                try:
                    difficulty = float(difficulty)
                except (TypeError, ValueError) as exc:
                    raise MalformedRecord(lineno, "difficulty is not a number") from exc
                if not math.isfinite(difficulty) or difficulty < 0:
                    raise MalformedRecord(lineno, "difficulty must be finite and >= 0")
            try:
                problems.append(
                    Problem(
                        id=record["id"],
                        statement=record["statement"],
                        answer=record["answer"],
                        difficulty=difficulty,
                    )
                )
            except ValueError as exc:
                raise MalformedRecord(lineno, str(exc)) from exc
    if not problems:
        raise EmptyCorpus(str(path))
    return Corpus(problems=tuple(problems), source=str(path))


def save_corpus(corpus: Corpus, path) -> None:
    """Write a corpus back to JSONL, preserving order."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for p in corpus.problems:
            record = {"id": p.id, "statement": p.statement, "answer": p.answer}
            if p.difficulty is not None:
                record["difficulty"] = p.difficulty
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def single_problem_prompt(problem: Problem) -> str:
    """Render the one-problem prompt used for difficulty probing."""
    from .grouping import render_system_prompt

    return (
        render_system_prompt(1)
        + "\n\n### Problem 1\n"
        + problem.statement
        + "\n"
    )


def estimate_difficulty(
    corpus: Corpus,
    probe,
    rollouts: int = 4,
    seed: int = 0,
    retries: int = 2,
    parallelism: int = 1,
    probe_budget: int = 32768,
) -> Corpus:
    """Attach a difficulty estimate to every problem of a new corpus.

    The estimate is the arithmetic mean of the probe policy's completion-token
    counts over `rollouts` independent rollouts on the single-problem prompt.
    Probe calls may fan out across problems up to `parallelism`; results are
    merged back in corpus order, so concurrency never changes the output.
    """
    if rollouts < 1:
        raise ValueError("rollouts must be >= 1")

    def probe_one(problem: Problem) -> float:
        prompt = single_problem_prompt(problem)
        lengths = []
        for r in range(rollouts):
            attempt = 0
            while True:
                rollout_seed = derive_seed(seed, "difficulty", problem.id, r, attempt)
                try:
                    _, tokens, _ = probe.sample(prompt, probe_budget, rollout_seed)
                    lengths.append(float(tokens))
                    break
                except Exception as exc:  # noqa: BLE001 - adapter failures are opaque
                    attempt += 1
                    if attempt > retries:
                        raise ProbeFailure(problem.id, exc) from exc
        return sum(lengths) / len(lengths)

    if parallelism <= 1:
        scores = [probe_one(p) for p in corpus.problems]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            scores = list(pool.map(probe_one, corpus.problems))

    scored = tuple(
        replace(p, difficulty=score) for p, score in zip(corpus.problems, scores)
    )
    return Corpus(problems=scored, source=corpus.source)
