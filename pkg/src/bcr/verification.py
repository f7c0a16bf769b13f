"""Answer equivalence checking: exact rationals, numeric tolerance, string match."""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional


@dataclass(frozen=True)
class VerifyConfig:
    numeric_tolerance: float = 1e-6
    enable_rational: bool = True
    enable_normalized_string: bool = True

    def __post_init__(self):
        if self.numeric_tolerance <= 0:
            raise ValueError("numeric_tolerance must be positive")


_FRAC_ALIASES = re.compile(r"\\[dt]frac")


def _strip_wrapper(s: str) -> Optional[str]:
    """Strip one enclosing $...$ or {...} layer if it wraps the whole string."""
    if len(s) >= 2 and s[0] == "$" and s[-1] == "$":
        inner = s[1:-1]
        if "$" not in inner:
            return inner
    if len(s) >= 2 and s[0] == "{" and s[-1] == "}":
        depth = 0
        for i, ch in enumerate(s):
            if ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0 and i != len(s) - 1:
                    return None  # opening brace closes early; not a wrapper
        if depth == 0:
            return s[1:-1]
    return None


def normalize_latex(s: str) -> str:
    """Canonicalize a LaTeX-ish answer string for literal comparison.

    Removes whitespace, rewrites \\dfrac/\\tfrac to \\frac, drops \\left and
    \\right, and peels enclosing $...$ / {...} wrappers until none remain
    (repeating until a fixed point keeps the function idempotent).
    """
    out = re.sub(r"\s+", "", s)
    out = _FRAC_ALIASES.sub(r"\\frac", out)
    out = out.replace("\\left", "").replace("\\right", "")
    while True:
        inner = _strip_wrapper(out)
        if inner is None:
            break
        out = inner
    return out


_NUMBER = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)$")
_SLASH_FRACTION = re.compile(r"^([+-]?)(.+?)/(.+)$")
_LATEX_FRACTION = re.compile(r"^([+-]?)\\frac\{(.+?)\}\{(.+)\}$")


def parse_rational(s: str) -> Optional[Fraction]:
    """Parse the supported exact subset into a Fraction.

    Covers integers, finite decimals, a/b, \\frac{a}{b}, optional sign, and a
    percent suffix. Returns None for anything else.
    """
    text = normalize_latex(s)
    if not text:
        return None
    percent = False
    if text.endswith("\\%"):
        text, percent = text[:-2], True
    elif text.endswith("%"):
        text, percent = text[:-1], True

    value = _parse_rational_core(text)
    if value is None:
        return None
    return value / 100 if percent else value


def _parse_rational_core(text: str) -> Optional[Fraction]:
    if _NUMBER.match(text):
        try:
            return Fraction(text)
        except (ValueError, ZeroDivisionError):
            return None
    m = _LATEX_FRACTION.match(text)
    if m:
        num = _parse_rational_core(m.group(2))
        den = _parse_rational_core(m.group(3))
        if num is None or den is None or den == 0:
            return None
        value = num / den
        return -value if m.group(1) == "-" else value
    m = _SLASH_FRACTION.match(text)
    if m:
        num = _parse_rational_core(m.group(2))
        den = _parse_rational_core(m.group(3))
        if num is None or den is None or den == 0:
            return None
        value = num / den
        return -value if m.group(1) == "-" else value
    return None


def parse_real(s: str) -> Optional[float]:
    """Parse a candidate into a float, via the rational subset or float()."""
    rational = parse_rational(s)
    if rational is not None:
        return float(rational)
    try:
        return float(normalize_latex(s))
    except (ValueError, OverflowError):
        return None


def verify_detail(candidate: str, truth: str, config: VerifyConfig = VerifyConfig()):
    """Like verify, but reports which stage matched ('rational', 'numeric',
    'string', or None)."""
    if not truth:
        raise ValueError("truth must be non-empty")
    if candidate is None:
        return False, None

    if config.enable_rational:
        c = parse_rational(candidate)
        t = parse_rational(truth)
        if c is not None and t is not None and c == t:
            return True, "rational"

    c_real = parse_real(candidate)
    t_real = parse_real(truth)
    if c_real is not None and t_real is not None:
        eps = config.numeric_tolerance
        if abs(c_real - t_real) <= eps * max(1.0, abs(t_real)):
            return True, "numeric"

    if config.enable_normalized_string:
        if normalize_latex(candidate) == normalize_latex(truth):
            return True, "string"

    return False, None


def verify(candidate: str, truth: str, config: VerifyConfig = VerifyConfig()) -> bool:
    """True iff candidate matches truth under any verification stage."""
    ok, _ = verify_detail(candidate, truth, config)
    return ok
