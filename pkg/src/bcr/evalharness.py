"""Concurrent multi-problem evaluation against a policy or a chat endpoint.

Problems are packed sequentially into groups of n (the final short group kept
as-is), completions come from either a local source callable or an
OpenAI-style chat-completions endpoint, and every completion is scored through
the shared extraction and verification modules. The API key is read from the
BCR_API_KEY environment variable and is never written to logs or reports.
"""

from __future__ import annotations

import csv
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import requests

from .corpus import Corpus
from .errors import EndpointUnavailable, IoFailure, MalformedResponse
from .extraction import Stage, extract_answers
from .grouping import ProblemGroup, render_prompt
from .verification import VerifyConfig, verify

API_KEY_ENV = "BCR_API_KEY"


@dataclass(frozen=True)
class EvalConfig:
    n_values: tuple[int, ...] = (1, 2, 3, 4, 5)
    temperature: float = 0.6
    top_p: float = 0.9
    max_tokens: int = 32768
    endpoint: Optional[str] = None
    model_name: Optional[str] = None
    parallelism: int = 4
    retries: int = 2
    skip_failed: bool = False
    seed: int = 0
    backoff_base: float = 0.25  # seconds; doubled per retry

    def __post_init__(self):
        if not self.n_values or any(n < 1 for n in self.n_values):
            raise ValueError("n_values must be positive integers")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")


@dataclass(frozen=True)
class EvalRecord:
    group_id: str
    n: int
    per_problem_correct: tuple[bool, ...]
    generated_tokens: int
    extraction_stages: tuple[Stage, ...]
    latency_ms: int
    token_count_estimated: bool = False
    failed: bool = False

    def __post_init__(self):
        if len(self.per_problem_correct) != self.n:
            raise ValueError("per_problem_correct must have one entry per problem")
        if self.generated_tokens < 0 or self.latency_ms < 0:
            raise ValueError("token and latency counts must be >= 0")


def pack_eval_groups(
    corpus: Corpus, n: int, seed: int, budget: int = 32768
) -> tuple[ProblemGroup, ...]:
    """Pack the corpus in order into ceil(M/n) groups; the last may be short.

    Evaluation has no difficulty scores, so packing is sequential and
    deterministic; `seed` only participates in group ids for traceability.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    problems = list(corpus.problems)
    if len(problems) < n:
        raise ValueError(f"corpus has {len(problems)} problems, need at least {n}")
    groups = []
    for gi in range(0, len(problems), n):
        members = tuple(problems[gi : gi + n])
        groups.append(
            ProblemGroup(
                group_id=f"eval-n{n}-g{gi // n:04d}",
                members=members,
                prompt=render_prompt(members),
                budget=budget,
            )
        )
    return tuple(groups)


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.6
    top_p: float = 0.9
    max_tokens: int = 32768


_TRANSIENT_STATUSES = {408, 409, 425, 429, 500, 502, 503, 504}


def fetch_completion(
    endpoint: str,
    model: str,
    prompt: str,
    decoding: Decoding = Decoding(),
    retries: int = 2,
    backoff_base: float = 0.25,
    timeout: float = 120.0,
) -> tuple[str, int, bool]:
    """POST one chat-completion request; returns (text, tokens, estimated).

    Transient failures are retried with exponential backoff. The token count
    prefers usage.completion_tokens; when the provider omits it we fall back
    to a whitespace-token estimate and flag the record.
    """
    payload = {
        "model": model,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": decoding.temperature,
        "top_p": decoding.top_p,
        "max_tokens": decoding.max_tokens,
    }
    headers = {}
    api_key = os.environ.get(API_KEY_ENV)
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    last_error = None
    for attempt in range(retries + 1):
        if attempt:
            time.sleep(backoff_base * (2 ** (attempt - 1)))
        try:
            response = requests.post(
                endpoint, json=payload, headers=headers, timeout=timeout
            )
        except requests.RequestException as exc:
            last_error = str(exc)
            continue
        if response.status_code in _TRANSIENT_STATUSES:
            last_error = f"HTTP {response.status_code}"
            continue
        if response.status_code != 200:
            raise MalformedResponse(f"HTTP {response.status_code} from {endpoint}")
        try:
            body = response.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response shape: {exc}") from exc
        if not isinstance(text, str):
            raise MalformedResponse("message content is not a string")
        usage = body.get("usage") or {}
        tokens = usage.get("completion_tokens")
        if isinstance(tokens, int) and tokens >= 0:
            return text, tokens, False
        return text, len(text.split()), True
    raise EndpointUnavailable(f"{endpoint}: retries exhausted ({last_error})")


# A source maps a group to (text, tokens) or (text, tokens, estimated_flag).
GroupSource = Callable[[ProblemGroup], tuple]


def endpoint_source(config: EvalConfig) -> GroupSource:
    """Wrap an external endpoint as a group completion source."""
    if not config.endpoint or not config.model_name:
        raise ValueError("endpoint and model_name are required for remote eval")
    decoding = Decoding(config.temperature, config.top_p, config.max_tokens)

    def source(group: ProblemGroup) -> tuple[str, int, bool]:
        return fetch_completion(
            config.endpoint,
            config.model_name,
            group.prompt,
            decoding,
            retries=config.retries,
            backoff_base=config.backoff_base,
        )

    return source


def _score_one(
    source: GroupSource, group: ProblemGroup, vcfg: VerifyConfig
) -> EvalRecord:
    start = time.monotonic()
    try:
        result = source(group)
        text, tokens = result[0], result[1]
        estimated = bool(result[2]) if len(result) > 2 else False
    except (EndpointUnavailable, MalformedResponse):
        return EvalRecord(
            group_id=group.group_id,
            n=group.size,
            per_problem_correct=(False,) * group.size,
            generated_tokens=0,
            extraction_stages=(Stage.NONE,) * group.size,
            latency_ms=int((time.monotonic() - start) * 1000),
            failed=True,
        )
    extracted = extract_answers(text, group.size)
    correct = tuple(
        ans is not None and verify(ans, problem.answer, vcfg)
        for ans, problem in zip(extracted.answers, group.members)
    )
    return EvalRecord(
        group_id=group.group_id,
        n=group.size,
        per_problem_correct=correct,
        generated_tokens=tokens,
        extraction_stages=extracted.stages,
        latency_ms=int((time.monotonic() - start) * 1000),
        token_count_estimated=estimated,
    )


def summarize(records: Sequence[EvalRecord], n: int, skip_failed: bool = False) -> dict:
    """Aggregate records for one packing size into a summary row."""
    records = sorted(records, key=lambda r: r.group_id)
    failures = sum(r.failed for r in records)
    used = [r for r in records if not (skip_failed and r.failed)]
    total = sum(r.n for r in used)
    correct = sum(sum(r.per_problem_correct) for r in used)
    tokens = sum(r.generated_tokens for r in used)
    return {
        "n": n,
        "accuracy_pct": 100.0 * correct / total if total else 0.0,
        "tokens_per_problem": tokens / total if total else 0.0,
        "groups": len(records),
        "failures": failures,
    }


def score_groups(
    source: GroupSource,
    groups: Sequence[ProblemGroup],
    n: int,
    parallelism: int = 1,
    skip_failed: bool = False,
    vcfg: VerifyConfig = VerifyConfig(),
) -> dict:
    """Score prepared groups with a source and return the summary row."""
    if parallelism <= 1:
        records = [_score_one(source, g, vcfg) for g in groups]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(lambda g: _score_one(source, g, vcfg), groups))
    return summarize(records, n, skip_failed)


def evaluate(
    source: GroupSource,
    corpus: Corpus,
    config: EvalConfig,
    budget_for_n: Optional[Callable[[int], int]] = None,
) -> tuple[list[EvalRecord], list[dict]]:
    """Pack, fetch, and score the corpus for every n in config.n_values.

    Failed groups count as all-wrong with zero tokens unless skip_failed is
    set, in which case they are excluded from the averages but still counted
    in the failures column.
    """
    vcfg = VerifyConfig()
    all_records: list[EvalRecord] = []
    summaries: list[dict] = []
    for n in config.n_values:
        budget = budget_for_n(n) if budget_for_n else config.max_tokens
        groups = pack_eval_groups(corpus, n, config.seed, budget=budget)
        if config.parallelism <= 1:
            records = [_score_one(source, g, vcfg) for g in groups]
        else:
            with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
                records = list(pool.map(lambda g: _score_one(source, g, vcfg), groups))
        records.sort(key=lambda r: r.group_id)
        all_records.extend(records)
        summaries.append(summarize(records, n, config.skip_failed))
    return all_records, summaries


_REPORT_COLUMNS = ("n", "accuracy_pct", "tokens_per_problem", "groups", "failures")


def emit_report(summaries: Sequence[dict], path, fmt: str = "csv") -> None:
    """Write summary rows as CSV or JSON with a fixed column order."""
    if not summaries:
        raise ValueError("no summary rows to report")
    if fmt not in ("csv", "json"):
        raise ValueError(f"unsupported report format {fmt!r}")
    path = Path(path)
    try:
        if fmt == "csv":
            with path.open("w", encoding="utf-8", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=_REPORT_COLUMNS, extrasaction="ignore")
                writer.writeheader()
                for row in summaries:
                    writer.writerow({k: row[k] for k in _REPORT_COLUMNS})
        else:
            rows = [{k: row[k] for k in _REPORT_COLUMNS} for row in summaries]
            path.write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def export_trajectory(log_rows: Sequence, path, fmt: str = "csv", group_size: int = 1) -> None:
    """Export (tokens, accuracy) pairs along a training log as Pareto data."""
    if not log_rows:
        raise ValueError("no training log rows to export")
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    points = [
        {
            "step": row.step,
            "tokens_per_problem": row.mean_tokens / group_size,
            "accuracy_pct": 100.0 * row.accuracy,
        }
        for row in log_rows
    ]
    path = Path(path)
    try:
        if fmt == "csv":
            with path.open("w", encoding="utf-8", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=("step", "tokens_per_problem", "accuracy_pct"))
                writer.writeheader()
                writer.writerows(points)
        elif fmt == "json":
            path.write_text(json.dumps(points, indent=2) + "\n", encoding="utf-8")
        else:
            raise ValueError(f"unsupported trajectory format {fmt!r}")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
