"""Divide phase: sample answers per question, score confidence, and partition.

The confidence score of a question is the maximum answer frequency across
its sampled completions. Questions are routed to high / med / low subsets
by the (mu, nu) thresholds, with a finer split of the low subset at 0.4.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence

from .backend import Backend, CompletionRequest
from .extraction import extract_choice_answer, extract_numeric_answer, extract_verdict
from .model import DatasetSpec, Question
from .prompts import build_prompt, build_verify_prompt

DIVIDE_TEMPERATURE = 0.7
DEFAULT_MAX_OUTPUT_TOKENS = 512
FINE_SPLIT = Fraction(2, 5)  # low subset splits into top/bottom at 0.4

SUBSETS = ("high", "med", "low")
FINE_BINS = ("high", "med", "low_top", "low_bottom")


class DivideError(ValueError):
    pass


@dataclass(frozen=True)
class InferenceRecord:
    """One completion for one question, with its extracted answer."""

    question_id: str
    phase: str
    sample_index: int
    prompt: str
    text: str
    answer: Optional[str]  # parsed value, or None when unparsed
    prompt_tokens: int
    output_tokens: int

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "phase": self.phase,
            "sample_index": self.sample_index,
            "answer": self.answer,
            "prompt_tokens": self.prompt_tokens,
            "output_tokens": self.output_tokens,
        }


@dataclass(frozen=True)
class AnswerHistogram:
    """Counts of parsed answers for one question's samples."""

    counts: dict[str, int]
    total_samples: int
    unparsed_count: int
    first_seen: dict[str, int] = field(default_factory=dict)

    def validate(self) -> None:
        if sum(self.counts.values()) + self.unparsed_count != self.total_samples:
            raise DivideError("histogram counts do not sum to total_samples")
        if any(c < 1 for c in self.counts.values()):
            raise DivideError("histogram contains a zero count")


def histogram_from_answers(answers: Sequence[Optional[str]]) -> AnswerHistogram:
    """Fold an ordered answer list (None = unparsed) into a histogram."""
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    unparsed = 0
    for idx, ans in enumerate(answers):
        if ans is None:
            unparsed += 1
            continue
        counts[ans] = counts.get(ans, 0) + 1
        first_seen.setdefault(ans, idx)
    return AnswerHistogram(
        counts=counts,
        total_samples=len(answers),
        unparsed_count=unparsed,
        first_seen=first_seen,
    )


def confidence_score(h: AnswerHistogram) -> Fraction:
    """Max answer frequency over all samples; 0 when everything was unparsed.

    Unparsed completions stay in the denominator: an unparseable generation
    is evidence of low confidence, not grounds to shrink the sample count.
    """
    if h.total_samples < 1:
        raise DivideError("histogram has no samples")
    if not h.counts:
        return Fraction(0)
    return Fraction(max(h.counts.values()), h.total_samples)


def majority_answer(h: AnswerHistogram) -> str:
    """Most frequent answer; ties go to the answer seen at the earliest sample."""
    if not h.counts:
        raise DivideError("cannot vote on a histogram with no parsed answers")
    best = max(h.counts.values())
    tied = [a for a, c in h.counts.items() if c == best]
    return min(tied, key=lambda a: h.first_seen.get(a, 0))


def assign_subset(cs: Fraction, mu: Fraction, nu: Fraction) -> str:
    if cs > mu:
        return "high"
    if cs > nu:
        return "med"
    return "low"


def assign_fine_bin(cs: Fraction, mu: Fraction, nu: Fraction) -> str:
    subset = assign_subset(cs, mu, nu)
    if subset != "low":
        return subset
    return "low_top" if cs > FINE_SPLIT else "low_bottom"


@dataclass(frozen=True)
class ConfidenceReport:
    question_id: str
    histogram: AnswerHistogram
    cs: Fraction
    subset: str
    fine_bin: str

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "counts": dict(sorted(self.histogram.counts.items())),
            "first_seen": dict(sorted(self.histogram.first_seen.items())),
            "total_samples": self.histogram.total_samples,
            "unparsed_count": self.histogram.unparsed_count,
            "cs": [self.cs.numerator, self.cs.denominator],
            "subset": self.subset,
            "fine_bin": self.fine_bin,
        }

    @staticmethod
    def from_dict(d: dict) -> "ConfidenceReport":
        hist = AnswerHistogram(
            counts={k: int(v) for k, v in d["counts"].items()},
            total_samples=int(d["total_samples"]),
            unparsed_count=int(d["unparsed_count"]),
            first_seen={k: int(v) for k, v in d.get("first_seen", {}).items()},
        )
        num, den = d["cs"]
        return ConfidenceReport(
            question_id=d["question_id"],
            histogram=hist,
            cs=Fraction(num, den),
            subset=d["subset"],
            fine_bin=d["fine_bin"],
        )


def report_for(question_id: str, h: AnswerHistogram, spec: DatasetSpec) -> ConfidenceReport:
    cs = confidence_score(h)
    return ConfidenceReport(
        question_id=question_id,
        histogram=h,
        cs=cs,
        subset=assign_subset(cs, spec.mu, spec.nu),
        fine_bin=assign_fine_bin(cs, spec.mu, spec.nu),
    )


def partition(reports: Sequence[ConfidenceReport]) -> dict[str, list[str]]:
    """Group question ids by subset; the three lists partition the input."""
    out: dict[str, list[str]] = {s: [] for s in SUBSETS}
    for r in reports:
        out[r.subset].append(r.question_id)
    return out


def _extract_for(q: Question, text: str) -> Optional[str]:
    if q.kind == "cloze" or not q.choices:
        ans = extract_numeric_answer(text)
    else:
        ans = extract_choice_answer(text, set(q.labels()))
    return ans.value if ans.is_parsed else None


def run_divide(
    questions: Sequence[Question],
    spec: DatasetSpec,
    backend: Backend,
    parallelism: int = 1,
    temperature: float = DIVIDE_TEMPERATURE,
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
    progress: Optional[Callable[[str], None]] = None,
) -> tuple[list[ConfidenceReport], list[InferenceRecord]]:
    """Sample each question divide_base times and score its confidence.

    Requests fan out across a thread pool; aggregation happens on results
    sorted by (question id, sample index) so output is independent of
    completion order.
    """
    spec.validate()
    t = spec.divide_base
    requests: list[tuple[Question, CompletionRequest]] = []
    for q in questions:
        prompt = build_prompt(q, "ZTCOT")
        for j in range(t):
            requests.append(
                (
                    q,
                    CompletionRequest(
                        prompt=prompt,
                        temperature=temperature,
                        max_output_tokens=max_output_tokens,
                        sample_index=j,
                        question_id=q.id,
                        phase="divide",
                    ),
                )
            )

    records: list[InferenceRecord] = []
    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        completions = list(pool.map(lambda qr: backend.complete(qr[1]), requests))
    for (q, req), comp in zip(requests, completions):
        records.append(
            InferenceRecord(
                question_id=q.id,
                phase="divide",
                sample_index=req.sample_index,
                prompt=req.prompt,
                text=comp.text,
                answer=_extract_for(q, comp.text),
                prompt_tokens=comp.prompt_tokens,
                output_tokens=comp.output_tokens,
            )
        )
    records.sort(key=lambda r: (r.question_id, r.sample_index))

    by_question: dict[str, list[InferenceRecord]] = {}
    for rec in records:
        by_question.setdefault(rec.question_id, []).append(rec)

    reports: list[ConfidenceReport] = []
    for q in questions:
        recs = by_question.get(q.id, [])
        answers = [r.answer for r in sorted(recs, key=lambda r: r.sample_index)]
        h = histogram_from_answers(answers)
        reports.append(report_for(q.id, h, spec))
        if progress is not None:
            progress(f"{q.id}: cs={float(reports[-1].cs):.2f} subset={reports[-1].subset}")
    return reports, records


def verify_divide(
    q: Question,
    prior_record: InferenceRecord,
    backend: Backend,
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
) -> str:
    """Cheap single-inference divide: check one prior answer, route high/low.

    An unparsed verdict routes to low: over-assigning to low costs extra
    conquer work but never skips a hard question.
    """
    answer_text = prior_record.answer if prior_record.answer is not None else "(none)"
    if prior_record.answer is not None and q.choices and prior_record.answer in q.labels():
        answer_text = f"({prior_record.answer}) {q.content_of(prior_record.answer)}"
    prompt = build_verify_prompt(q, answer_text)
    req = CompletionRequest(
        prompt=prompt,
        temperature=0.0,
        max_output_tokens=max_output_tokens,
        sample_index=0,
        question_id=q.id,
        phase="verify",
        metadata={"prior_answer": prior_record.answer},
    )
    comp = backend.complete(req)
    verdict = extract_verdict(comp.text)
    if verdict.is_parsed and verdict.value is True:
        return "high"
    return "low"


def records_from_transcript(
    entries: Sequence[tuple[str, dict, object]],
    questions: Sequence[Question],
    phase: str = "divide",
) -> list[InferenceRecord]:
    """Rebuild inference records (with re-extracted answers) from a cache."""
    by_id = {q.id: q for q in questions}
    records = []
    for _key, req, comp in entries:
        if req.get("phase") != phase:
            continue
        q = by_id.get(req.get("question_id"))
        if q is None:
            continue
        records.append(
            InferenceRecord(
                question_id=q.id,
                phase=phase,
                sample_index=int(req["sample_index"]),
                prompt=req.get("prompt", ""),
                text=comp.text,
                answer=_extract_for(q, comp.text),
                prompt_tokens=comp.prompt_tokens,
                output_tokens=comp.output_tokens,
            )
        )
    records.sort(key=lambda r: (r.question_id, r.sample_index))
    return records


def save_reports(path: str | Path, reports: Sequence[ConfidenceReport]) -> None:
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in reports]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_reports(path: str | Path) -> list[ConfidenceReport]:
    reports = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            reports.append(ConfidenceReport.from_dict(json.loads(line)))
    return reports
