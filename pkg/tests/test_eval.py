"""Evaluation harness: packing, endpoint client, scoring, and reports."""

import csv
import json

import pytest

from bcr.corpus import Corpus, Problem
from bcr.errors import EndpointUnavailable, MalformedResponse
from bcr.evalharness import (
    Decoding,
    EvalConfig,
    EvalRecord,
    emit_report,
    endpoint_source,
    evaluate,
    export_trajectory,
    fetch_completion,
    pack_eval_groups,
    score_groups,
    summarize,
)
from bcr.extraction import Stage
from bcr.stubserver import StubRule, StubServer


def make_corpus(m=6):
    return Corpus(
        problems=tuple(
            Problem(id=f"p{i}", statement=f"State the number {i}.", answer=str(i))
            for i in range(m)
        )
    )


class TestEvalConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_values": ()},
            {"n_values": (0,)},
            {"top_p": 0.0},
            {"temperature": -1.0},
            {"max_tokens": 0},
            {"parallelism": 0},
            {"retries": -1},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            EvalConfig(**kwargs)


class TestPackEvalGroups:
    def test_even_split(self):
        groups = pack_eval_groups(make_corpus(6), 2, seed=0)
        assert [g.size for g in groups] == [2, 2, 2]
        assert groups[0].group_id == "eval-n2-g0000"

    def test_remainder_group_kept_short(self):
        groups = pack_eval_groups(make_corpus(7), 3, seed=0)
        assert [g.size for g in groups] == [3, 3, 1]

    def test_sequential_and_deterministic(self):
        corpus = make_corpus(6)
        groups = pack_eval_groups(corpus, 3, seed=0)
        assert [p.id for p in groups[0].members] == ["p0", "p1", "p2"]
        assert groups == pack_eval_groups(corpus, 3, seed=0)

    def test_too_small_corpus_rejected(self):
        with pytest.raises(ValueError):
            pack_eval_groups(make_corpus(2), 3, seed=0)


class TestFetchCompletion:
    def test_round_trip_with_usage(self):
        with StubServer(default_completion="Answer1: \\boxed{5}", default_tokens=57) as stub:
            text, tokens, estimated = fetch_completion(stub.url, "stub", "prompt")
        assert text == "Answer1: \\boxed{5}"
        assert tokens == 57
        assert estimated is False

    def test_transient_failures_are_retried(self):
        with StubServer(default_tokens=3, fail_first=2) as stub:
            text, tokens, _ = fetch_completion(
                stub.url, "stub", "prompt", retries=2, backoff_base=0.01
            )
            assert stub.request_count == 3
        assert tokens == 3

    def test_retries_exhausted_raises(self):
        with StubServer(fail_first=10) as stub:
            with pytest.raises(EndpointUnavailable):
                fetch_completion(stub.url, "stub", "prompt", retries=1, backoff_base=0.01)

    def test_missing_usage_falls_back_to_estimate(self):
        with StubServer(default_completion="three word reply", omit_usage=True) as stub:
            text, tokens, estimated = fetch_completion(stub.url, "stub", "prompt")
        assert tokens == 3
        assert estimated is True

    def test_unreachable_endpoint_raises(self):
        with pytest.raises(EndpointUnavailable):
            fetch_completion(
                "http://127.0.0.1:9/v1/chat/completions",
                "stub",
                "prompt",
                retries=0,
                backoff_base=0.01,
            )

    def test_rule_selects_completion_by_prompt(self):
        rules = [StubRule(needle="number 1", completion="Answer1: \\boxed{1}", tokens=9)]
        with StubServer(rules, default_tokens=1) as stub:
            text, tokens, _ = fetch_completion(stub.url, "stub", "State the number 1.")
        assert tokens == 9


class TestScoring:
    def test_source_tuple_of_two_or_three(self):
        corpus = make_corpus(2)
        groups = pack_eval_groups(corpus, 1, seed=0)
        summary = score_groups(lambda g: ("Answer1: \\boxed{0}", 5), groups, 1)
        assert summary["tokens_per_problem"] == 5.0
        summary = score_groups(lambda g: ("Answer1: \\boxed{0}", 5, True), groups, 1)
        assert summary["tokens_per_problem"] == 5.0

    def test_failed_group_counts_all_wrong(self):
        def source(group):
            raise EndpointUnavailable("down")

        groups = pack_eval_groups(make_corpus(4), 2, seed=0)
        summary = score_groups(source, groups, 2)
        assert summary["failures"] == 2
        assert summary["accuracy_pct"] == 0.0
        assert summary["tokens_per_problem"] == 0.0

    def test_skip_failed_excludes_from_averages(self):
        calls = {"count": 0}

        def source(group):
            calls["count"] += 1
            if calls["count"] == 1:
                raise MalformedResponse("bad body")
            return "### Problem 1\nAnswer1: \\boxed{2}\n### Problem 2\nAnswer2: \\boxed{3}", 10

        groups = pack_eval_groups(make_corpus(4), 2, seed=0)
        summary = score_groups(source, groups, 2, skip_failed=True)
        assert summary["failures"] == 1
        assert summary["groups"] == 2
        assert summary["accuracy_pct"] == pytest.approx(100.0 * 2 / 2)
        assert summary["tokens_per_problem"] == pytest.approx(5.0)

    def test_parallel_scoring_matches_serial(self):
        def source(group):
            return f"Answer1: \\boxed{{{group.members[0].answer}}}", 7

        groups = pack_eval_groups(make_corpus(6), 1, seed=0)
        serial = score_groups(source, groups, 1, parallelism=1)
        parallel = score_groups(source, groups, 1, parallelism=4)
        assert serial == parallel


class TestSummarize:
    def test_hand_computed_aggregate(self):
        records = [
            EvalRecord(
                group_id="eval-n2-g0000",
                n=2,
                per_problem_correct=(True, True),
                generated_tokens=30,
                extraction_stages=(Stage.SECTION_MATCH,) * 2,
                latency_ms=5,
            ),
            EvalRecord(
                group_id="eval-n2-g0001",
                n=2,
                per_problem_correct=(True, False),
                generated_tokens=50,
                extraction_stages=(Stage.SECTION_MATCH,) * 2,
                latency_ms=5,
            ),
        ]
        summary = summarize(records, 2)
        assert summary == {
            "n": 2,
            "accuracy_pct": 75.0,
            "tokens_per_problem": 20.0,
            "groups": 2,
            "failures": 0,
        }

    def test_order_invariant(self):
        records = [
            EvalRecord(
                group_id=f"eval-n1-g{i:04d}",
                n=1,
                per_problem_correct=(i % 2 == 0,),
                generated_tokens=i,
                extraction_stages=(Stage.POSITIONAL,),
                latency_ms=1,
            )
            for i in range(5)
        ]
        assert summarize(records, 1) == summarize(list(reversed(records)), 1)

    def test_record_validation(self):
        with pytest.raises(ValueError):
            EvalRecord(
                group_id="g",
                n=2,
                per_problem_correct=(True,),
                generated_tokens=1,
                extraction_stages=(Stage.NONE,),
                latency_ms=0,
            )


class TestEvaluate:
    def test_end_to_end_against_stub(self):
        corpus = make_corpus(4)
        rules = [
            StubRule(
                needle=f"State the number {i}.",
                completion=f"### Problem 1\nAnswer1: \\boxed{{{i}}}",
                tokens=10 + i,
            )
            for i in range(4)
        ]
        with StubServer(rules) as stub:
            config = EvalConfig(
                n_values=(1,), endpoint=stub.url, model_name="stub", parallelism=2
            )
            records, summaries = evaluate(endpoint_source(config), corpus, config)
        assert len(records) == 4
        assert summaries[0]["accuracy_pct"] == 100.0
        assert summaries[0]["tokens_per_problem"] == pytest.approx((10 + 11 + 12 + 13) / 4)

    def test_budget_for_n_controls_group_budget(self):
        corpus = make_corpus(4)
        seen = []

        def source(group):
            seen.append(group.budget)
            return "Answer1: \\boxed{0}", 1

        config = EvalConfig(n_values=(1, 2), parallelism=1)
        evaluate(source, corpus, config, budget_for_n=lambda n: 100 * n)
        assert set(seen) == {100, 200}


class TestReports:
    def test_csv_report(self, tmp_path):
        path = tmp_path / "report.csv"
        emit_report(
            [
                {
                    "n": 1,
                    "accuracy_pct": 50.0,
                    "tokens_per_problem": 12.5,
                    "groups": 4,
                    "failures": 0,
                }
            ],
            path,
        )
        rows = list(csv.DictReader(path.open()))
        assert rows[0]["n"] == "1"
        assert float(rows[0]["accuracy_pct"]) == 50.0

    def test_json_report(self, tmp_path):
        path = tmp_path / "report.json"
        emit_report(
            [
                {
                    "n": 2,
                    "accuracy_pct": 75.0,
                    "tokens_per_problem": 20.0,
                    "groups": 3,
                    "failures": 1,
                }
            ],
            path,
            fmt="json",
        )
        data = json.loads(path.read_text())
        assert data == [
            {
                "n": 2,
                "accuracy_pct": 75.0,
                "tokens_per_problem": 20.0,
                "groups": 3,
                "failures": 1,
            }
        ]

    def test_empty_report_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report([], tmp_path / "report.csv")

    def test_unknown_format_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report([{"n": 1}], tmp_path / "report.xml", fmt="xml")

    def test_trajectory_export(self, tmp_path):
        class Row:
            def __init__(self, step, mean_tokens, accuracy):
                self.step = step
                self.mean_tokens = mean_tokens
                self.accuracy = accuracy

        path = tmp_path / "trajectory.csv"
        export_trajectory([Row(0, 300.0, 0.5), Row(1, 150.0, 0.75)], path, group_size=3)
        rows = list(csv.DictReader(path.open()))
        assert float(rows[0]["tokens_per_problem"]) == pytest.approx(100.0)
        assert float(rows[1]["accuracy_pct"]) == pytest.approx(75.0)

    def test_trajectory_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            export_trajectory([], tmp_path / "trajectory.csv")


def test_api_key_is_sent_but_never_reported(tmp_path, monkeypatch):
    """The key comes from the environment and must not leak into outputs."""
    monkeypatch.setenv("BCR_API_KEY", "secret-key-123")
    corpus = make_corpus(2)
    with StubServer(default_completion="Answer1: \\boxed{0}", default_tokens=2) as stub:
        config = EvalConfig(n_values=(1,), endpoint=stub.url, model_name="stub")
        _, summaries = evaluate(endpoint_source(config), corpus, config)
    path = tmp_path / "report.json"
    emit_report(summaries, path, fmt="json")
    assert "secret-key-123" not in path.read_text()


def test_decoding_defaults():
    d = Decoding()
    assert (d.temperature, d.top_p, d.max_tokens) == (0.6, 0.9, 32768)
