"""Parsing multi-problem completions into per-problem answers.

A completion is expected to follow the grouped template (### Problem i
sections, each ending in "Answeri: \\boxed{...}"), but real outputs drift, so
extraction falls back through three stages of decreasing specificity:
section-scoped match, global match, then positional assignment of all boxed
expressions.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional


class Stage(Enum):
    SECTION_MATCH = "section_match"
    GLOBAL_MATCH = "global_match"
    POSITIONAL = "positional"
    NONE = "none"


@dataclass(frozen=True)
class ExtractedAnswerSet:
    answers: tuple[Optional[str], ...]
    stages: tuple[Stage, ...]
    raw_boxed_count: int

    def __post_init__(self):
        if len(self.answers) != len(self.stages):
            raise ValueError("answers and stages must have equal length")
        for a, s in zip(self.answers, self.stages):
            if (a is None) != (s is Stage.NONE):
                raise ValueError("answer is absent iff its stage is none")


def extract_boxed(text: str, start: int) -> Optional[str]:
    """Return the brace-balanced content starting just inside a \\boxed{.

    `start` points at the first character after the opening brace. Nested
    braces increase depth; a backslash escapes the following character. If the
    text ends before depth returns to zero, the box was truncated and None is
    returned.
    """
    depth = 1
    i = start
    while i < len(text):
        ch = text[i]
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return text[start:i]
        elif ch == "\\" and i + 1 < len(text):
            i += 1  # skip escaped character
        i += 1
    return None


_BOXED_OPEN = "\\boxed{"


def find_all_boxed(text: str) -> list[str]:
    """All \\boxed{...} contents in order, outermost and non-overlapping."""
    found = []
    i = 0
    while True:
        i = text.find(_BOXED_OPEN, i)
        if i < 0:
            break
        start = i + len(_BOXED_OPEN)
        content = extract_boxed(text, start)
        if content is None:
            # Truncated box: keep scanning for complete ones further in.
            i = start
            continue
        found.append(content)
        i = start + len(content) + 1
    return found


_SECTION_SPLIT = re.compile(r"^[ \t]*###[ \t]*Problem", re.MULTILINE)


def _split_sections(completion: str) -> list[tuple[int, str]]:
    """Split on '### Problem' headers; returns (problem number, section body)."""
    sections = []
    starts = [m.start() for m in _SECTION_SPLIT.finditer(completion)]
    for idx, begin in enumerate(starts):
        end = starts[idx + 1] if idx + 1 < len(starts) else len(completion)
        body = completion[begin:end]
        number = re.search(r"###[ \t]*Problem[ \t]*(\d+)", body)
        if number:
            sections.append((int(number.group(1)), body))
    return sections


def _answer_pattern(i: int, lenient: bool) -> re.Pattern:
    if lenient:
        return re.compile(rf"Answer[ \t]*{i}[ \t]*:[ \t]*\\boxed\{{", re.IGNORECASE)
    return re.compile(rf"Answer{i}: ?\\boxed\{{")


def extract_answers(completion: str, n: int, lenient: bool = False) -> ExtractedAnswerSet:
    """Extract up to n answers from a grouped completion.

    Stage 1 searches "Answeri: \\boxed{" inside section i, stage 2 searches
    the same pattern anywhere in the text, stage 3 assigns the i-th boxed
    occurrence to slot i. All-absent output is valid and simply yields zero
    reward downstream.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    answers: list[Optional[str]] = [None] * n
    stages = [Stage.NONE] * n

    for number, body in _split_sections(completion):
        if not 1 <= number <= n or answers[number - 1] is not None:
            continue
        match = _answer_pattern(number, lenient).search(body)
        if match:
            content = extract_boxed(body, match.end())
            if content is not None:
                answers[number - 1] = content
                stages[number - 1] = Stage.SECTION_MATCH

    for i in range(1, n + 1):
        if answers[i - 1] is not None:
            continue
        match = _answer_pattern(i, lenient).search(completion)
        if match:
            content = extract_boxed(completion, match.end())
            if content is not None:
                answers[i - 1] = content
                stages[i - 1] = Stage.GLOBAL_MATCH

    all_boxed = find_all_boxed(completion)
    for i in range(1, n + 1):
        if answers[i - 1] is None and i <= len(all_boxed):
            answers[i - 1] = all_boxed[i - 1]
            stages[i - 1] = Stage.POSITIONAL

    return ExtractedAnswerSet(
        answers=tuple(answers),
        stages=tuple(stages),
        raw_boxed_count=len(all_boxed),
    )
