"""Conquer phase: re-solve med/low confidence questions.

Strategies: plain re-query (ZTCOT), rationale reuse (PKR), choice filtering
(FCR), and their combinations (COM1/COM2), each optionally wrapped in
self-consistency voting. Also houses the oracle choice-list constructions
used for ablation runs.
"""

from __future__ import annotations

import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from .backend import Backend, CompletionRequest
from .divide import (
    DEFAULT_MAX_OUTPUT_TOKENS,
    AnswerHistogram,
    ConfidenceReport,
    InferenceRecord,
    histogram_from_answers,
    majority_answer,
)
from .extraction import extract_choice_answer
from .model import LabelMapping, Question, relabel_choices
from .prompts import build_prompt, strategy_needs_filtered, strategy_needs_rationales

SC_TEMPERATURE = 0.7
GREEDY_TEMPERATURE = 0.0

RATIONALE_SELECT_MODES = ("longest", "random", "shortest")
ABLATION_MODES = ("full", "random_k", "with_prior", "without_prior", "without_prior_2")


class ConquerError(ValueError):
    pass


@dataclass(frozen=True)
class RationaleCluster:
    """All divide-phase rationales that led to one particular answer."""

    answer: str
    rationales: tuple[tuple[str, int, int], ...]  # (text, length, sample_index)


@dataclass(frozen=True)
class ConquerOutcome:
    question_id: str
    strategy: str
    self_consistency: bool
    final_answer: Optional[str]  # in the ORIGINAL label space; None = unparsed
    records: tuple[InferenceRecord, ...]
    mapping: Optional[LabelMapping] = None

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "strategy": self.strategy,
            "self_consistency": self.self_consistency,
            "final_answer": self.final_answer,
            "mapping": list(self.mapping.forward) if self.mapping else None,
            "records": [r.to_dict() for r in self.records],
        }


def _strip_sentinel(text: str) -> str:
    """Rationale body without the final answer sentence; length basis for PKR."""
    lines = text.splitlines()
    while lines and ("answer is" in lines[-1].lower() or not lines[-1].strip()):
        lines.pop()
    return "\n".join(lines)


def clusters_from_records(records: Sequence[InferenceRecord]) -> list[RationaleCluster]:
    """Group parsed divide records by answer, preserving sample order."""
    grouped: dict[str, list[tuple[str, int, int]]] = {}
    for rec in sorted(records, key=lambda r: r.sample_index):
        if rec.answer is None:
            continue
        body = _strip_sentinel(rec.text)
        grouped.setdefault(rec.answer, []).append((body, len(body), rec.sample_index))
    return [RationaleCluster(answer=a, rationales=tuple(rs)) for a, rs in grouped.items()]


def select_rationales(
    clusters: Sequence[RationaleCluster],
    strategy: str = "longest",
    seed: Optional[int] = None,
) -> list[tuple[str, str]]:
    """Pick one rationale per cluster; this is the prior-knowledge set.

    Output is ordered by descending cluster size, then by earliest first
    occurrence, so the model's modal answer leads the prior block.
    """
    if not clusters:
        raise ConquerError("no rationale clusters to select from")
    if strategy not in RATIONALE_SELECT_MODES:
        raise ConquerError(f"unknown rationale selection strategy {strategy!r}")
    for c in clusters:
        if not c.rationales:
            raise ConquerError(f"cluster for answer {c.answer!r} is empty")

    rng = random.Random(seed)
    ordered = sorted(
        clusters, key=lambda c: (-len(c.rationales), min(r[2] for r in c.rationales))
    )
    picked: list[tuple[str, str]] = []
    for c in ordered:
        if strategy == "longest":
            best = max(c.rationales, key=lambda r: (r[1], -r[2]))
        elif strategy == "shortest":
            best = min(c.rationales, key=lambda r: (r[1], r[2]))
        else:
            best = c.rationales[rng.randrange(len(c.rationales))]
        picked.append((c.answer, best[0]))
    return picked


def filter_choices(q: Question, h: AnswerHistogram) -> tuple[Question, LabelMapping]:
    """Reduce the choice list to the distinct previously-answered options.

    Surviving contents keep their original label order and are relabeled
    from 'A'; the mapping records new label -> original label.
    """
    if not h.counts:
        raise ConquerError(
            f"question {q.id}: no parsed prior answers; fall back to ZTCOT"
        )
    labels = q.labels()
    bad = [a for a in h.counts if a not in labels]
    if bad:
        raise ConquerError(f"question {q.id}: prior answers {bad} are not valid labels")
    survivors = [lab for lab in labels if lab in h.counts]
    contents = [q.content_of(lab) for lab in survivors]
    new_choices = relabel_choices(contents)
    mapping = LabelMapping(
        forward=tuple((new, orig) for (new, _), orig in zip(new_choices, survivors)),
        origin=q.id,
    )
    new_gold = None
    if q.gold is not None and q.gold in survivors:
        new_gold = new_choices[survivors.index(q.gold)][0]
    filtered = replace(q, choices=tuple(new_choices), gold=new_gold)
    return filtered, mapping


def _map_rationale_labels(
    rationales: list[tuple[str, str]], mapping: Optional[LabelMapping]
) -> list[tuple[str, str]]:
    if mapping is None:
        return rationales
    inverse = {orig: new for new, orig in mapping.forward}
    return [(inverse.get(ans, ans), text) for ans, text in rationales]


def conquer_item(
    q: Question,
    report: ConfidenceReport,
    strategy: str,
    backend: Backend,
    divide_records: Sequence[InferenceRecord] = (),
    self_consistency: bool = False,
    sc_samples: int = 5,
    rationale_select: str = "longest",
    seed: Optional[int] = None,
    tail_override: Optional[str] = None,
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS,
) -> ConquerOutcome:
    """Run one conquer strategy on one question and map the answer back."""
    working = q
    mapping: Optional[LabelMapping] = None
    if strategy_needs_filtered(strategy):
        working, mapping = filter_choices(q, report.histogram)
        if len(working.choices) == 1:
            # A single surviving option needs no model call.
            return ConquerOutcome(
                question_id=q.id,
                strategy=strategy,
                self_consistency=self_consistency,
                final_answer=mapping.to_original("A"),
                records=(),
                mapping=mapping,
            )

    rationales = None
    if strategy_needs_rationales(strategy):
        clusters = clusters_from_records(
            [r for r in divide_records if r.question_id == q.id]
        )
        rationales = _map_rationale_labels(
            select_rationales(clusters, rationale_select, seed=seed), mapping
        )

    prompt = build_prompt(working, strategy, rationales=rationales, tail_override=tail_override)
    metadata: dict = {}
    if mapping is not None:
        metadata["label_map"] = [list(pair) for pair in mapping.forward]
    if strategy_needs_rationales(strategy):
        metadata["uplift_gold"] = True

    n_samples = sc_samples if self_consistency else 1
    temperature = SC_TEMPERATURE if self_consistency else GREEDY_TEMPERATURE
    labels = set(working.labels())

    records = []
    for j in range(n_samples):
        req = CompletionRequest(
            prompt=prompt,
            temperature=temperature,
            max_output_tokens=max_output_tokens,
            sample_index=j,
            question_id=q.id,
            phase="conquer",
            metadata=metadata,
        )
        comp = backend.complete(req)
        ans = extract_choice_answer(comp.text, labels)
        records.append(
            InferenceRecord(
                question_id=q.id,
                phase="conquer",
                sample_index=j,
                prompt=prompt,
                text=comp.text,
                answer=ans.value if ans.is_parsed else None,
                prompt_tokens=comp.prompt_tokens,
                output_tokens=comp.output_tokens,
            )
        )

    hist = histogram_from_answers([r.answer for r in records])
    emitted: Optional[str] = majority_answer(hist) if hist.counts else None
    final = mapping.to_original(emitted) if (mapping and emitted is not None) else emitted
    return ConquerOutcome(
        question_id=q.id,
        strategy=strategy,
        self_consistency=self_consistency,
        final_answer=final,
        records=tuple(records),
        mapping=mapping,
    )


def run_conquer(
    questions: Sequence[Question],
    reports: Sequence[ConfidenceReport],
    strategy: str,
    backend: Backend,
    divide_records: Sequence[InferenceRecord] = (),
    subsets: Sequence[str] = ("med", "low"),
    parallelism: int = 1,
    **kwargs,
) -> list[ConquerOutcome]:
    """Conquer every question routed to one of the selected subsets.

    The high subset is never touched: its divide-phase majority stands.
    """
    if "high" in subsets:
        raise ConquerError("the high confidence subset is fixed, not conquered")
    by_id = {q.id: q for q in questions}
    selected = [
        r for r in reports if r.subset in subsets or r.fine_bin in subsets
    ]

    def work(r: ConfidenceReport) -> ConquerOutcome:
        return conquer_item(
            by_id[r.question_id], r, strategy, backend,
            divide_records=divide_records, **kwargs,
        )

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        outcomes = list(pool.map(work, selected))
    outcomes.sort(key=lambda o: o.question_id)
    return outcomes


def ablation_choices(
    q: Question,
    mode: str,
    h: AnswerHistogram,
    k: int = 2,
    seed: Optional[int] = None,
) -> tuple[Question, LabelMapping]:
    """Oracle choice-list constructions for ablation runs (gold required).

    Modes: keep the full list; gold plus random incorrect options; gold plus
    the prior answers; gold plus never-chosen options; or gold plus one
    random never-chosen option.
    """
    if mode not in ABLATION_MODES:
        raise ConquerError(f"unknown ablation mode {mode!r}")
    if q.gold is None:
        raise ConquerError(f"ablation mode {mode!r} requires a gold label ({q.id})")

    labels = list(q.labels())
    priors = set(h.counts)
    incorrect = [lab for lab in labels if lab != q.gold]
    rng = random.Random(seed)

    if mode == "full":
        keep = labels
    elif mode == "random_k":
        if k < 1 or k > len(labels):
            raise ConquerError(f"random_k: k={k} out of range for {len(labels)} choices")
        keep = [q.gold] + rng.sample(incorrect, k - 1)
    elif mode == "with_prior":
        keep = [q.gold] + [lab for lab in priors if lab != q.gold]
    else:
        pool = [lab for lab in incorrect if lab not in priors]
        if not pool:
            raise ConquerError(
                f"ablation mode {mode!r}: no incorrect non-prior choice exists ({q.id})"
            )
        if mode == "without_prior":
            keep = [q.gold] + pool
        else:  # without_prior_2
            keep = [q.gold, rng.choice(pool)]

    keep_ordered = [lab for lab in labels if lab in set(keep)]
    contents = [q.content_of(lab) for lab in keep_ordered]
    new_choices = relabel_choices(contents)
    mapping = LabelMapping(
        forward=tuple((new, orig) for (new, _), orig in zip(new_choices, keep_ordered)),
        origin=q.id,
    )
    new_gold = new_choices[keep_ordered.index(q.gold)][0]
    return replace(q, choices=tuple(new_choices), gold=new_gold), mapping


def save_outcomes(path: str | Path, outcomes: Sequence[ConquerOutcome]) -> None:
    lines = [json.dumps(o.to_dict(), sort_keys=True) for o in outcomes]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_outcomes(path: str | Path) -> list[dict]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out
