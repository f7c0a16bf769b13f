"""Command-line driver: exit codes, manifests, idempotence, config files."""

import json
import re

import pytest

from bcr.cli import main
from bcr.stubserver import StubRule, StubServer


def run_cli(*argv):
    return main(list(argv))


def strip_timestamps(manifest):
    return {k: v for k, v in manifest.items() if k not in ("started", "finished")}


class TestVerifyCommand:
    def test_match_exits_zero(self, capsys):
        assert run_cli("verify", "--candidate", "1/2", "--truth", "0.5") == 0
        assert capsys.readouterr().out.strip() == "match"

    def test_mismatch_exits_one(self, capsys):
        assert run_cli("verify", "--candidate", "1/3", "--truth", "0.5") == 1
        assert capsys.readouterr().out.strip() == "no match"

    def test_tolerance_flag(self):
        assert run_cli(
            "verify", "--candidate", "3.001", "--truth", "3", "--tolerance", "0.01"
        ) == 0


class TestUsageErrors:
    def test_unknown_subcommand_exits_two(self, capsys):
        assert run_cli("frobnicate") == 2

    def test_no_subcommand_exits_two(self, capsys):
        assert run_cli() == 2

    def test_missing_required_flag_exits_two(self, capsys):
        assert run_cli("extract", "--n", "2") == 2


class TestCorpusAndGroups:
    def test_corpus_groups_pipeline(self, tmp_path, capsys):
        corpus_path = tmp_path / "corpus.jsonl"
        groups_path = tmp_path / "groups.jsonl"
        assert run_cli(
            "corpus", "--count", "12", "--seed", "3", "--probe",
            "--out", str(corpus_path),
        ) == 0
        assert run_cli(
            "groups", "--corpus", str(corpus_path), "--group-size", "3",
            "--seed", "3", "--out", str(groups_path),
        ) == 0
        lines = [json.loads(x) for x in groups_path.read_text().splitlines()]
        assert len(lines) == 4
        assert all(len(rec["member_ids"]) == 3 for rec in lines)

    def test_manifest_written_next_to_output(self, tmp_path):
        corpus_path = tmp_path / "corpus.jsonl"
        run_cli("corpus", "--count", "6", "--out", str(corpus_path))
        manifest = json.loads((tmp_path / "corpus.jsonl.manifest.json").read_text())
        assert manifest["command"] == "corpus"
        assert manifest["output_paths"] == [str(corpus_path)]
        assert re.fullmatch(r"[0-9a-f]{64}", manifest["config_hash"])

    def test_idempotent_given_same_seed(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run_cli("corpus", "--count", "10", "--seed", "5", "--probe", "--out", str(a))
        run_cli("corpus", "--count", "10", "--seed", "5", "--probe", "--out", str(b))
        assert a.read_bytes() == b.read_bytes()
        ma = strip_timestamps(json.loads((tmp_path / "a.jsonl.manifest.json").read_text()))
        mb = strip_timestamps(json.loads((tmp_path / "b.jsonl.manifest.json").read_text()))
        # Same settings apart from the output path itself.
        assert ma["command"] == mb["command"]
        assert ma["seed"] == mb["seed"]

    def test_groups_on_unscored_corpus_fails_cleanly(self, tmp_path, capsys):
        corpus_path = tmp_path / "corpus.jsonl"
        run_cli("corpus", "--count", "6", "--out", str(corpus_path))
        assert run_cli(
            "groups", "--corpus", str(corpus_path), "--out", str(tmp_path / "g.jsonl")
        ) == 1
        assert "error:" in capsys.readouterr().err


class TestExtractAndReward:
    def test_extract_outputs_json(self, tmp_path, capsys):
        completion = tmp_path / "completion.txt"
        completion.write_text(
            "### Problem 1\nAnswer1: \\boxed{4}\n### Problem 2\nAnswer2: \\boxed{9}"
        )
        assert run_cli("extract", "--file", str(completion), "--n", "2") == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["answers"] == ["4", "9"]
        assert payload["stages"] == ["section_match", "section_match"]

    def test_reward_scores_completion(self, tmp_path, capsys):
        corpus_path = tmp_path / "corpus.jsonl"
        run_cli("corpus", "--count", "6", "--seed", "2", "--out", str(corpus_path))
        capsys.readouterr()  # drop the corpus command's status line
        corpus = [json.loads(x) for x in corpus_path.read_text().splitlines()]
        completion = tmp_path / "completion.txt"
        completion.write_text(
            f"### Problem 1\nAnswer1: \\boxed{{{corpus[0]['answer']}}}\n"
            f"### Problem 2\nAnswer2: \\boxed{{wrong}}"
        )
        assert run_cli(
            "reward", "--file", str(completion), "--corpus", str(corpus_path),
            "--ids", f"{corpus[0]['id']},{corpus[1]['id']}",
            "--budget", "100", "--tokens", "50", "--w-len", "1.0",
        ) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["r_acc"] == 0.5
        assert payload["r_fmt"] == 1.0
        assert payload["r_len"] == -0.5
        assert payload["per_problem_correct"] == [True, False]


class TestTrainSim:
    def test_steps_zero_writes_init_row_only(self, tmp_path, capsys):
        log = tmp_path / "log.jsonl"
        assert run_cli("train-sim", "--steps", "0", "--log", str(log)) == 0
        rows = [json.loads(x) for x in log.read_text().splitlines()]
        assert len(rows) == 1
        assert rows[0]["step"] == 0
        assert "arm=implicit" in capsys.readouterr().out

    def test_short_run_logs_every_step(self, tmp_path):
        log = tmp_path / "log.jsonl"
        assert run_cli("train-sim", "--steps", "5", "--seed", "2", "--log", str(log)) == 0
        rows = [json.loads(x) for x in log.read_text().splitlines()]
        assert [r["step"] for r in rows] == [0, 1, 2, 3, 4, 5]
        assert (tmp_path / "log.jsonl.manifest.json").exists()

    def test_train_then_report(self, tmp_path):
        log = tmp_path / "log.jsonl"
        out = tmp_path / "trajectory.csv"
        run_cli("train-sim", "--steps", "3", "--log", str(log))
        assert run_cli(
            "report", "--log", str(log), "--out", str(out), "--group-size", "3"
        ) == 0
        header = out.read_text().splitlines()[0]
        assert header == "step,tokens_per_problem,accuracy_pct"

    def test_unknown_arm_exits_two(self):
        assert run_cli("train-sim", "--arm", "nonsense", "--log", "x.jsonl") == 2


class TestEvalCommand:
    def test_eval_against_stub(self, tmp_path, capsys):
        corpus_path = tmp_path / "corpus.jsonl"
        problems = [
            {"id": f"p{i}", "statement": f"Name the value {i}.", "answer": str(i)}
            for i in range(4)
        ]
        corpus_path.write_text("".join(json.dumps(p) + "\n" for p in problems))
        rules = [
            StubRule(
                needle=f"Name the value {i}.",
                completion=f"### Problem 1\nAnswer1: \\boxed{{{i}}}",
                tokens=5,
            )
            for i in range(4)
        ]
        out = tmp_path / "report.csv"
        with StubServer(rules) as stub:
            code = run_cli(
                "eval", "--endpoint", stub.url, "--model", "stub",
                "--n", "1", "--corpus", str(corpus_path), "--out", str(out),
            )
        assert code == 0
        assert "accuracy=100.00%" in capsys.readouterr().out
        assert out.read_text().splitlines()[1].startswith("1,100.0,5.0,4,0")

    def test_eval_bad_endpoint_reports_failures(self, tmp_path):
        corpus_path = tmp_path / "corpus.jsonl"
        corpus_path.write_text(
            json.dumps({"id": "p0", "statement": "s", "answer": "1"}) + "\n"
        )
        out = tmp_path / "report.csv"
        code = run_cli(
            "eval", "--endpoint", "http://127.0.0.1:9/v1/chat/completions",
            "--model", "stub", "--n", "1", "--corpus", str(corpus_path),
            "--out", str(out), "--retries", "0",
        )
        assert code == 0
        assert out.read_text().splitlines()[1].split(",")[-1] == "1"


class TestConfigFile:
    def test_toml_defaults_with_cli_override(self, tmp_path, capsys):
        cfg = tmp_path / "settings.toml"
        cfg.write_text('count = 8\nseed = 4\n')
        out = tmp_path / "corpus.jsonl"
        assert run_cli("--config", str(cfg), "corpus", "--out", str(out)) == 0
        assert len(out.read_text().splitlines()) == 8
        out2 = tmp_path / "corpus2.jsonl"
        assert run_cli(
            "--config", str(cfg), "corpus", "--count", "5", "--out", str(out2)
        ) == 0
        assert len(out2.read_text().splitlines()) == 5
