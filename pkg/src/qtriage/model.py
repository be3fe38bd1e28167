"""Core domain types: questions, choice relabeling, dataset I/O, cloze conversion."""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path
from typing import Optional

LABELS = string.ascii_uppercase

_CURRENCY = "$€£¥"


class DatasetError(ValueError):
    """Raised for malformed dataset files or invalid question structure."""


def normalize_number(raw: str) -> Optional[str]:
    """Canonicalize a numeric answer string.

    Strips commas, currency symbols and surrounding whitespace, drops a
    trailing ".0" style fractional part, and renders the value canonically
    so e.g. "1,000", "$1000" and "1000.0" all compare equal. Returns None
    if the string is not a number.
    """
    s = raw.strip().strip(_CURRENCY).strip()
    s = s.replace(",", "")
    s = s.rstrip(".")
    if not s:
        return None
    try:
        value = Decimal(s)
    except InvalidOperation:
        return None
    value = value.normalize()
    # Decimal.normalize renders 1000 as 1E+3; force plain notation.
    text = format(value, "f")
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if text in ("", "-"):
        text = "0"
    if text == "-0":
        text = "0"
    return text


def _norm_ws(s: str) -> str:
    return " ".join(s.split())


@dataclass(frozen=True)
class Question:
    """One test item: a stem plus an ordered, labeled choice list.

    Cloze questions carry no choices and a normalized numeric gold string.
    """

    id: str
    text: str
    choices: tuple[tuple[str, str], ...] = ()
    gold: Optional[str] = None
    source: str = ""
    kind: str = "mcq"
    meta: dict = field(default_factory=dict, compare=False)

    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.choices)

    def content_of(self, label: str) -> str:
        for lab, content in self.choices:
            if lab == label:
                return content
        raise KeyError(label)

    def validate(self) -> None:
        if self.kind not in ("mcq", "cloze"):
            raise DatasetError(f"question {self.id}: unknown kind {self.kind!r}")
        if self.kind == "cloze":
            if self.choices:
                raise DatasetError(f"question {self.id}: cloze question must have no choices")
            if self.gold is not None and normalize_number(self.gold) != self.gold:
                raise DatasetError(
                    f"question {self.id}: cloze gold {self.gold!r} is not a normalized number"
                )
            return
        if not self.choices:
            raise DatasetError(f"question {self.id}: mcq question needs choices")
        expected = tuple(LABELS[: len(self.choices)])
        if self.labels() != expected:
            raise DatasetError(
                f"question {self.id}: labels {self.labels()} are not contiguous from 'A'"
            )
        seen = set()
        for _, content in self.choices:
            key = _norm_ws(content)
            if not key:
                raise DatasetError(f"question {self.id}: empty choice content")
            if key in seen:
                raise DatasetError(f"question {self.id}: duplicate choice content {content!r}")
            seen.add(key)
        if self.gold is not None and self.gold not in self.labels():
            raise DatasetError(f"question {self.id}: gold {self.gold!r} not among labels")


@dataclass(frozen=True)
class LabelMapping:
    """Maps relabeled choice letters back to the original label space."""

    forward: tuple[tuple[str, str], ...]  # (new label, original label), ordered
    origin: str = ""

    def to_original(self, new_label: str) -> str:
        for new, orig in self.forward:
            if new == new_label:
                return orig
        raise KeyError(f"label {new_label!r} not in mapping for {self.origin!r}")

    def new_labels(self) -> tuple[str, ...]:
        return tuple(new for new, _ in self.forward)

    def validate(self) -> None:
        news = self.new_labels()
        origs = [orig for _, orig in self.forward]
        if news != tuple(LABELS[: len(news)]):
            raise DatasetError(f"mapping for {self.origin!r}: new labels not contiguous")
        if len(set(origs)) != len(origs):
            raise DatasetError(f"mapping for {self.origin!r}: not injective")


@dataclass(frozen=True)
class DatasetSpec:
    """Per-dataset divide configuration: sample count and partition thresholds."""

    name: str
    divide_base: int
    mu: Fraction = Fraction(4, 5)
    nu: Fraction = Fraction(3, 5)

    def validate(self) -> None:
        if self.divide_base < 2:
            raise DatasetError(f"divide_base must be >= 2, got {self.divide_base}")
        if not (0 < self.mu <= 1):
            raise DatasetError(f"mu must be in (0, 1], got {self.mu}")
        if not (0 <= self.nu < self.mu):
            raise DatasetError(f"nu must be in [0, mu), got nu={self.nu} mu={self.mu}")


def relabel_choices(contents: list[str]) -> list[tuple[str, str]]:
    """Assign contiguous labels 'A', 'B', ... to contents in order."""
    if not contents:
        raise DatasetError("cannot relabel an empty choice list")
    if len(contents) > len(LABELS):
        raise DatasetError(f"cannot label {len(contents)} choices: more than 26 not supported")
    seen = set()
    for content in contents:
        key = _norm_ws(content)
        if key in seen:
            raise DatasetError(f"duplicate choice content {content!r}")
        seen.add(key)
    return [(LABELS[i], content) for i, content in enumerate(contents)]


def cloze_to_mcq(q: Question, prior_answers: list[str]) -> tuple[Question, LabelMapping]:
    """Build an MCQ from a cloze question using previously sampled answers.

    Choices are the deduplicated prior answers in first-appearance order.
    The gold label is set only when the gold value survives into the list.
    """
    if q.kind != "cloze":
        raise DatasetError(f"question {q.id} is not cloze")
    if not prior_answers:
        raise DatasetError(f"question {q.id}: no prior answers to build choices from")
    uniq: list[str] = []
    for ans in prior_answers:
        if ans not in uniq:
            uniq.append(ans)
    choices = relabel_choices(uniq)
    gold_label = None
    if q.gold is not None:
        for label, content in choices:
            if content == q.gold:
                gold_label = label
                break
    mapping = LabelMapping(
        forward=tuple((label, content) for label, content in choices), origin=q.id
    )
    mcq = replace(q, kind="mcq", choices=tuple(choices), gold=gold_label)
    mcq.validate()
    return mcq, mapping


def _question_from_record(rec: dict, schema: str, lineno: int) -> Question:
    def need(field_name: str) -> object:
        if field_name not in rec:
            raise DatasetError(f"line {lineno}: missing field {field_name!r}")
        return rec[field_name]

    qid = need("id")
    text = need("question")
    if not isinstance(qid, str) or not qid:
        raise DatasetError(f"line {lineno}: field 'id' must be a non-empty string")
    if not isinstance(text, str) or not text:
        raise DatasetError(f"line {lineno}: field 'question' must be a non-empty string")

    if schema == "cloze-jsonl":
        gold_raw = need("gold")
        gold = normalize_number(str(gold_raw))
        if gold is None:
            raise DatasetError(f"line {lineno}: field 'gold' is not numeric: {gold_raw!r}")
        return Question(
            id=qid, text=text, gold=gold, source=rec.get("source", ""),
            kind="cloze", meta=rec.get("meta", {}),
        )

    contents = need("choices")
    if not isinstance(contents, list) or not all(isinstance(c, str) for c in contents):
        raise DatasetError(f"line {lineno}: field 'choices' must be a list of strings")
    try:
        choices = relabel_choices(contents)
    except DatasetError as exc:
        raise DatasetError(f"line {lineno}: {exc}") from exc
    gold = rec.get("gold")
    q = Question(
        id=qid, text=text, choices=tuple(choices), gold=gold,
        source=rec.get("source", ""), kind="mcq", meta=rec.get("meta", {}),
    )
    return q


def load_dataset(path: str | Path, schema: str = "mcq-jsonl") -> list[Question]:
    """Load questions from a JSONL file, validating every invariant."""
    if schema not in ("mcq-jsonl", "cloze-jsonl"):
        raise DatasetError(f"unknown schema {schema!r}")
    path = Path(path)
    questions: list[Question] = []
    seen_ids: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}: invalid JSON: {exc}") from exc
            q = _question_from_record(rec, schema, lineno)
            try:
                q.validate()
            except DatasetError as exc:
                raise DatasetError(f"line {lineno}: {exc}") from exc
            if q.id in seen_ids:
                raise DatasetError(f"line {lineno}: duplicate question id {q.id!r}")
            seen_ids.add(q.id)
            questions.append(q)
    return questions


def save_dataset(path: str | Path, questions: list[Question]) -> None:
    """Write questions as JSONL; inverse of load_dataset."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for q in questions:
            rec: dict = {"id": q.id, "question": q.text}
            if q.kind == "cloze":
                rec["gold"] = q.gold
            else:
                rec["choices"] = [content for _, content in q.choices]
                if q.gold is not None:
                    rec["gold"] = q.gold
            if q.source:
                rec["source"] = q.source
            if q.meta:
                rec["meta"] = q.meta
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
