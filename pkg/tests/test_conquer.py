import random

import pytest
from hypothesis import given, settings, strategies as st

from qtriage.backend import MockBackend, QuestionProfile
from qtriage.conquer import (
    ConquerError,
    RationaleCluster,
    ablation_choices,
    clusters_from_records,
    conquer_item,
    filter_choices,
    select_rationales,
)
from qtriage.divide import InferenceRecord, histogram_from_answers, report_for
from qtriage.model import LABELS, Question, DatasetSpec
from qtriage.prompts import PromptError, build_prompt


def question(qid="q1", n=5, gold=None):
    choices = tuple((LABELS[i], f"content {LABELS[i].lower()}") for i in range(n))
    return Question(id=qid, text="which one?", choices=choices, gold=gold)


def cluster(answer, lengths_and_indices):
    return RationaleCluster(
        answer=answer,
        rationales=tuple((f"r{answer}{i}" * max(1, ln // 4), ln, i) for ln, i in lengths_and_indices),
    )


def spec(t=5):
    return DatasetSpec(name="t", divide_base=t)


class TestSelectRationales:
    def test_longest_per_cluster_modal_first(self):
        clusters = [cluster("A", [(40, 0), (95, 3)]), cluster("B", [(60, 1)])]
        picked = select_rationales(clusters, "longest")
        assert [p[0] for p in picked] == ["A", "B"]
        assert picked[0][1] == clusters[0].rationales[1][0]
        assert picked[1][1] == clusters[1].rationales[0][0]

    def test_shortest(self):
        clusters = [cluster("A", [(40, 0), (95, 3)]), cluster("B", [(60, 1)])]
        picked = select_rationales(clusters, "shortest")
        assert picked[0][1] == clusters[0].rationales[0][0]

    def test_equal_length_tie_breaks_to_earliest_index(self):
        c = cluster("A", [(50, 2), (50, 0), (50, 4)])
        picked = select_rationales([c], "longest")
        assert picked[0][1] == c.rationales[1][0]  # the index-0 rationale

    def test_random_is_seed_deterministic(self):
        clusters = [cluster("A", [(10, 0), (20, 1), (30, 2)])]
        a = select_rationales(clusters, "random", seed=5)
        b = select_rationales(clusters, "random", seed=5)
        assert a == b

    def test_empty_cluster_list_errors(self):
        with pytest.raises(ConquerError):
            select_rationales([], "longest")

    def test_one_per_cluster_count_identity(self):
        rng = random.Random(7)
        for _ in range(200):
            n_clusters = rng.randint(1, 5)
            clusters = [
                cluster(LABELS[i], [(rng.randint(1, 100), j) for j in range(rng.randint(1, 6))])
                for i in range(n_clusters)
            ]
            picked = select_rationales(clusters, "longest")
            assert len(picked) == n_clusters
            # oracle: enumerate all (length, index) pairs per cluster
            for answer, text in picked:
                c = next(c for c in clusters if c.answer == answer)
                best = sorted(c.rationales, key=lambda r: (-r[1], r[2]))[0]
                assert text == best[0]


class TestFilterChoices:
    def test_uniq_and_original_order_relabel(self):
        q = Question(
            id="q1", text="?", choices=(
                ("A", "12"), ("B", "7"), ("C", "9"), ("D", "3"), ("E", "5"),
            ),
        )
        h = histogram_from_answers(["B", "D", "B", "D", "B"])
        filtered, mapping = filter_choices(q, h)
        assert filtered.choices == (("A", "7"), ("B", "3"))
        assert mapping.forward == (("A", "B"), ("B", "D"))

    def test_three_survivors(self):
        q = question()
        h = histogram_from_answers(["E", "C", "A", "E", "C"])
        filtered, mapping = filter_choices(q, h)
        assert [c for _, c in filtered.choices] == [
            q.content_of("A"), q.content_of("C"), q.content_of("E")
        ]
        assert mapping.forward == (("A", "A"), ("B", "C"), ("C", "E"))

    def test_degenerate_single_answer(self):
        q = question()
        h = histogram_from_answers(["D"] * 5)
        filtered, mapping = filter_choices(q, h)
        assert len(filtered.choices) == 1
        assert mapping.forward == (("A", "D"),)

    def test_empty_support_errors_with_fallback_hint(self):
        q = question()
        with pytest.raises(ConquerError, match="ZTCOT"):
            filter_choices(q, histogram_from_answers([None] * 5))

    def test_gold_remapped(self):
        q = question(gold="C")
        h = histogram_from_answers(["C", "E"])
        filtered, _ = filter_choices(q, h)
        assert filtered.gold == "A"

    @settings(max_examples=200)
    @given(
        n=st.integers(min_value=2, max_value=7),
        data=st.data(),
    )
    def test_round_trip_property(self, n, data):
        q = question(n=n)
        answers = data.draw(
            st.lists(st.sampled_from(list(LABELS[:n])), min_size=1, max_size=10)
        )
        h = histogram_from_answers(answers)
        filtered, mapping = filter_choices(q, h)
        assert 1 <= len(filtered.choices) <= min(n, len(set(answers)))
        assert filtered.labels() == tuple(LABELS[: len(filtered.choices)])
        for new in filtered.labels():
            assert mapping.to_original(new) in q.labels()
        origs = [mapping.to_original(lab) for lab in filtered.labels()]
        assert len(set(origs)) == len(origs)  # injective


class TestBuildPrompt:
    def test_ztcot_tail(self):
        p = build_prompt(question(), "ZTCOT")
        assert p.endswith("Let's think step by step.")
        assert "Answer Choices:" in p

    def test_fcr_tail_substitutes_count(self):
        q = question(n=2)
        p = build_prompt(q, "FCR")
        assert p.endswith("Let's delve deeper into these 2 choices and select the best one")

    def test_com1_tail_and_prior_block(self):
        p = build_prompt(
            question(), "COM1",
            rationales=[("A", "first path"), ("B", "second path")],
        )
        assert p.endswith("let's delve deeper into this question to arrive at the best answer")
        assert "Prior reasoning:" in p
        assert p.count("path") == 2

    def test_pkr_requires_rationales(self):
        with pytest.raises(PromptError):
            build_prompt(question(), "PKR")

    def test_tail_override(self):
        p = build_prompt(question(), "ZTCOT", tail_override="Custom tail")
        assert p.endswith("Custom tail")


class TestConquerItem:
    def profiles(self, dist, qid="q1", gold=None):
        return {qid: QuestionProfile(qid, dist, 80, gold=gold)}

    def divide_records(self, answers, qid="q1"):
        return [
            InferenceRecord(
                question_id=qid, phase="divide", sample_index=i, prompt="p",
                text=f"some reasoning {'x' * (10 + 7 * i)}\nSo the answer is ({a}).",
                answer=a, prompt_tokens=1, output_tokens=1,
            )
            for i, a in enumerate(answers)
        ]

    def test_fcr_singleton_short_circuits(self):
        q = question()
        answers = ["D"] * 5
        report = report_for("q1", histogram_from_answers(answers), spec())
        backend = MockBackend(self.profiles({"D": 1.0}), seed=0)
        outcome = conquer_item(q, report, "FCR", backend)
        assert outcome.final_answer == "D"
        assert outcome.records == ()
        assert backend.calls == 0

    def test_fcr_sc_votes_then_maps(self):
        q = question()
        answers = ["C", "E", "C", "E", "C"]
        report = report_for("q1", histogram_from_answers(answers), spec())
        # surviving originals C and E renormalize to C-dominant
        backend = MockBackend(self.profiles({"C": 0.5, "E": 0.3, "A": 0.2}), seed=1)
        outcome = conquer_item(
            q, report, "FCR", backend, self_consistency=True, sc_samples=5
        )
        assert outcome.final_answer in ("C", "E")
        assert len(outcome.records) == 5
        assert outcome.mapping.forward == (("A", "C"), ("B", "E"))

    def test_ztcot_greedy_modal_answer(self):
        q = question()
        answers = ["A", "B", "C", "A", "B"]
        report = report_for("q1", histogram_from_answers(answers), spec())
        backend = MockBackend(self.profiles({"B": 0.6, "A": 0.4}), seed=0)
        outcome = conquer_item(q, report, "ZTCOT", backend)
        assert outcome.final_answer == "B"
        assert outcome.self_consistency is False

    def test_pkr_rationale_count_equals_cluster_count(self):
        q = question()
        answers = ["A", "B", "A", "C", "A"]
        records = self.divide_records(answers)
        clusters = clusters_from_records(records)
        assert len(clusters) == 3
        report = report_for("q1", histogram_from_answers(answers), spec())
        backend = MockBackend(self.profiles({"A": 1.0}), seed=0)
        outcome = conquer_item(q, report, "PKR", backend, divide_records=records)
        assert "Prior reasoning:" in outcome.records[0].prompt
        assert outcome.final_answer == "A"

    def test_com2_filters_and_includes_rationales(self):
        q = question()
        answers = ["A", "B", "A", "B", "A"]
        records = self.divide_records(answers)
        report = report_for("q1", histogram_from_answers(answers), spec())
        backend = MockBackend(self.profiles({"A": 0.5, "B": 0.5}), seed=0)
        outcome = conquer_item(q, report, "COM2", backend, divide_records=records)
        assert outcome.mapping is not None
        prompt = outcome.records[0].prompt
        assert "Prior reasoning:" in prompt
        assert "2 choices" in prompt

    def test_replay_reproduces_outcome(self, tmp_path):
        from qtriage.backend import CachingBackend, ReplayBackend, TranscriptCache

        q = question()
        answers = ["C", "E", "C", "E", "C"]
        report = report_for("q1", histogram_from_answers(answers), spec())
        path = tmp_path / "t.jsonl"
        live = CachingBackend(
            MockBackend(self.profiles({"C": 0.5, "E": 0.5}), seed=2), TranscriptCache(path)
        )
        first = conquer_item(q, report, "FCR", live, self_consistency=True, sc_samples=5)
        replay = ReplayBackend(TranscriptCache(path))
        second = conquer_item(q, report, "FCR", replay, self_consistency=True, sc_samples=5)
        assert first == second


class TestAblationChoices:
    def make(self, gold="C"):
        return question(gold=gold)

    def test_full_unchanged(self):
        q = self.make()
        out, mapping = ablation_choices(q, "full", histogram_from_answers(["A"]))
        assert out.choices == q.choices
        assert [m[0] for m in mapping.forward] == list(q.labels())

    def test_without_prior_excludes_prior_answers(self):
        q = self.make()
        h = histogram_from_answers(["A", "B", "A"])
        out, mapping = ablation_choices(q, "without_prior", h)
        origs = {orig for _, orig in mapping.forward}
        assert origs == {"C", "D", "E"}
        assert out.gold == "A"  # C relabels first

    def test_random_k_keeps_gold(self):
        q = self.make()
        out, mapping = ablation_choices(q, "random_k", histogram_from_answers(["A"]), k=2, seed=0)
        assert len(out.choices) == 2
        assert mapping.to_original(out.gold) == "C"

    def test_with_prior_dedups_gold(self):
        q = self.make()
        h = histogram_from_answers(["C", "E", "C"])
        out, mapping = ablation_choices(q, "with_prior", h)
        origs = {orig for _, orig in mapping.forward}
        assert origs == {"C", "E"}

    def test_without_prior_2_two_choices(self):
        q = self.make()
        h = histogram_from_answers(["A", "B"])
        out, _ = ablation_choices(q, "without_prior_2", h, seed=1)
        assert len(out.choices) == 2

    def test_no_gold_errors(self):
        q = question(gold=None)
        with pytest.raises(ConquerError, match="gold"):
            ablation_choices(q, "full", histogram_from_answers(["A"]))

    def test_all_priors_cover_incorrect_errors(self):
        q = question(n=2, gold="A")
        h = histogram_from_answers(["B", "B"])
        with pytest.raises(ConquerError, match="without_prior"):
            ablation_choices(q, "without_prior", h)
