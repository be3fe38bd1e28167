"""Turn raw completion text into a structured answer: label, number, or verdict.

All extractors are total and pure: they never raise on arbitrary text, and
an unmatchable input yields an 'unparsed' result rather than an error.
Last-match semantics are used throughout because chain-of-thought text often
discusses rejected options before stating the final answer.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .model import normalize_number


@dataclass(frozen=True)
class ExtractedAnswer:
    kind: str  # "label" | "number" | "verdict" | "unparsed"
    value: object = None
    matched_span: Optional[tuple[int, int]] = None
    rule_id: Optional[str] = None

    @property
    def is_parsed(self) -> bool:
        return self.kind != "unparsed"


UNPARSED = ExtractedAnswer(kind="unparsed")

# "the answer is (B)", "answer is B", "answer: B"; the label itself must be
# uppercase or "answer is a ..." prose would parse as label A.
_ANSWER_PHRASE = re.compile(
    r"(?i:answer)\s*(?i:is|:)\s*\(?([A-Z])\)?(?![A-Za-z])"
)
_PAREN_LABEL = re.compile(r"\(([A-Z])\)")
_BARE_LABEL = re.compile(r"(?<![A-Za-z])([A-Z])(?=[\s]*[.,;:!?)\]]|$)")

_ANSWER_NUM = re.compile(
    r"answer\s*(?:is|:)?[^0-9\-]*(-?[\d][\d,]*(?:\.\d+)?)", re.IGNORECASE
)
_NUM = re.compile(r"-?[\d][\d,]*(?:\.\d+)?")
_VERDICT = re.compile(r"(?<![a-z])(true|false)(?![a-z])", re.IGNORECASE)


def _last_nonempty_line(text: str) -> tuple[str, int]:
    """Return the final non-blank line and its start offset in text."""
    offset = 0
    best = ("", 0)
    for line in text.splitlines(keepends=True):
        if line.strip():
            best = (line, offset)
        offset += len(line)
    return best


def extract_choice_answer(text: str, labels: set[str]) -> ExtractedAnswer:
    """Extract a choice label, trying answer phrases first, then the final line."""
    if not labels:
        return UNPARSED

    matches = [m for m in _ANSWER_PHRASE.finditer(text) if m.group(1).upper() in labels]
    if matches:
        m = matches[-1]
        return ExtractedAnswer(
            kind="label", value=m.group(1).upper(),
            matched_span=m.span(), rule_id="answer-phrase",
        )

    line, offset = _last_nonempty_line(text)
    matches = [m for m in _PAREN_LABEL.finditer(line) if m.group(1) in labels]
    if matches:
        m = matches[-1]
        return ExtractedAnswer(
            kind="label", value=m.group(1),
            matched_span=(offset + m.start(), offset + m.end()),
            rule_id="paren-label",
        )

    matches = [m for m in _BARE_LABEL.finditer(line) if m.group(1) in labels]
    if matches:
        m = matches[-1]
        return ExtractedAnswer(
            kind="label", value=m.group(1),
            matched_span=(offset + m.start(), offset + m.end()),
            rule_id="bare-label",
        )

    return UNPARSED


def extract_numeric_answer(text: str) -> ExtractedAnswer:
    """Extract a normalized number, preferring one following an 'answer' cue."""
    matches = list(_ANSWER_NUM.finditer(text))
    if matches:
        m = matches[-1]
        value = normalize_number(m.group(1))
        if value is not None:
            return ExtractedAnswer(
                kind="number", value=value, matched_span=m.span(1), rule_id="answer-cue"
            )

    line, offset = _last_nonempty_line(text)
    nums = list(_NUM.finditer(line))
    if nums:
        m = nums[-1]
        value = normalize_number(m.group(0))
        if value is not None:
            return ExtractedAnswer(
                kind="number", value=value,
                matched_span=(offset + m.start(), offset + m.end()),
                rule_id="last-number",
            )
    return UNPARSED


def extract_verdict(text: str) -> ExtractedAnswer:
    """Extract a true/false verdict from the final two non-blank lines.

    Restricting to the tail avoids matching the literal words embedded in
    the verification instruction itself.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    tail = "\n".join(lines[-2:]) if lines else ""
    matches = list(_VERDICT.finditer(tail))
    if not matches:
        return UNPARSED
    m = matches[-1]
    return ExtractedAnswer(
        kind="verdict", value=m.group(1).lower() == "true",
        matched_span=m.span(), rule_id="verdict-token",
    )
