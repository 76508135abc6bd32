"""End-to-end tests of the command-line interface, driven through click's
CliRunner with the scripted mock backend."""

import json
import sys
import types

import pytest
from click.testing import CliRunner

from proofgen.cli import load_mock_script, main
from proofgen.harness import ERROR_BUCKETS
from proofgen.metrics import METRIC_NAMES

T4_PROMPT_TAIL = "<ref> Definition:Even Integer </ref> <proof>"


def _invoke(args, env=None):
    return CliRunner().invoke(main, args, env=env, catch_exceptions=False)


def _write_json(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture()
def gold_proof(corpus):
    return dict(corpus.examples_in_split("test"))[4]


@pytest.fixture()
def decode_script(tmp_path, gold_proof):
    """Mock script reproducing theorem 4's gold proof under greedy decoding."""
    return _write_json(
        tmp_path / "script.json",
        {T4_PROMPT_TAIL: [[gold_proof.raw_text() + " </proof>", 1.0]]},
    )


@pytest.fixture()
def greedy_config(tmp_path):
    return _write_json(tmp_path / "config.json", {"decode": {"mode": "greedy"}, "seed": 3})


def _decode_args(corpus_path, script, config, *extra):
    return [
        "--corpus", str(corpus_path),
        "--backend", "mock",
        "--mock-script", script,
        "--config", config,
        *extra,
    ]


class TestDecodeCommand:
    def test_reruns_are_byte_identical(self, corpus_path, decode_script, greedy_config, tmp_path):
        outs = []
        for name in ("first.json", "second.json"):
            out = tmp_path / name
            result = _invoke(
                _decode_args(corpus_path, decode_script, greedy_config, "--seed", "7", "decode", "--out", str(out))
            )
            assert result.exit_code == 0, result.output
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]
        report = json.loads(outs[0])
        assert report["seed"] == 7
        assert report["scored"] == 1
        assert report["items"][0]["metrics"]["gleu"] == 1.0

    def test_report_goes_to_stdout_without_out(self, corpus_path, decode_script, greedy_config):
        result = _invoke(_decode_args(corpus_path, decode_script, greedy_config, "decode"))
        assert result.exit_code == 0
        report = json.loads(result.stdout)
        assert report["task"] == "full_proof"
        assert "scored 1/1 items" in result.stderr
        assert "gleu=1.0000" in result.stderr

    def test_config_seed_applies_without_override(self, corpus_path, decode_script, greedy_config):
        result = _invoke(_decode_args(corpus_path, decode_script, greedy_config, "decode"))
        assert json.loads(result.stdout)["seed"] == 3

    def test_csv_means_written(self, corpus_path, decode_script, greedy_config, tmp_path):
        csv_path = tmp_path / "means.csv"
        result = _invoke(
            _decode_args(corpus_path, decode_script, greedy_config, "decode", "--csv", str(csv_path))
        )
        assert result.exit_code == 0
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "metric,mean"
        assert lines[1] == "gleu,1.0"
        assert lines[-1] == "scored,1"

    def test_requires_config(self, corpus_path, decode_script):
        result = _invoke(["--corpus", str(corpus_path), "--mock-script", decode_script, "decode"])
        assert result.exit_code == 2
        assert "needs --config" in result.stderr

    def test_requires_corpus(self, decode_script, greedy_config):
        result = _invoke(["--mock-script", decode_script, "--config", greedy_config, "decode"])
        assert result.exit_code == 2
        assert "corpus is required" in result.stderr

    def test_mock_backend_requires_script(self, corpus_path, greedy_config):
        result = _invoke(["--corpus", str(corpus_path), "--config", greedy_config, "decode"])
        assert result.exit_code == 2
        assert "--mock-script" in result.stderr

    def test_remote_backend_requires_endpoint_and_model(self, corpus_path, greedy_config):
        result = _invoke(
            ["--corpus", str(corpus_path), "--config", greedy_config, "--backend", "remote", "decode"]
        )
        assert result.exit_code == 2
        assert "--endpoint" in result.stderr

    def test_failed_run_reports_cleanly(self, corpus_path, greedy_config, tmp_path):
        script = _write_json(tmp_path / "empty-script.json", {"matches nothing": [["x", 1.0]]})
        result = _invoke(_decode_args(corpus_path, script, greedy_config, "decode"))
        assert result.exit_code == 1
        assert "more than half" in result.stderr

    def test_bad_config_file_reports_cleanly(self, corpus_path, decode_script, tmp_path):
        config = tmp_path / "broken.json"
        config.write_text("{nope")
        result = _invoke(_decode_args(corpus_path, decode_script, str(config), "decode"))
        assert result.exit_code == 1
        assert "cannot read config" in result.stderr

    def test_corpus_from_environment(self, corpus_path, decode_script, greedy_config):
        result = _invoke(
            ["--mock-script", decode_script, "--config", greedy_config, "decode"],
            env={"PROOFGEN_CORPUS": str(corpus_path)},
        )
        assert result.exit_code == 0


class TestEmitFinetuneCommand:
    def test_provided_setting_counts_records(self, corpus_path, tmp_path):
        out = tmp_path / "train.jsonl"
        result = _invoke(
            ["--corpus", str(corpus_path), "emit-finetune", "--setting", "provided", "--out", str(out)]
        )
        assert result.exit_code == 0
        assert result.stdout.strip() == f"wrote 7 records to {out}"
        assert len(out.read_text().splitlines()) == 7

    def test_none_setting_emits_one_record_per_example(self, corpus_path, tmp_path):
        out = tmp_path / "train.jsonl"
        result = _invoke(
            ["--corpus", str(corpus_path), "emit-finetune", "--setting", "none", "--out", str(out)]
        )
        assert result.stdout.strip() == f"wrote 1 records to {out}"

    def test_retrieved_setting_requires_retrievals_flag(self, corpus_path, tmp_path):
        result = _invoke(
            ["--corpus", str(corpus_path), "emit-finetune", "--setting", "retrieved", "--out", str(tmp_path / "o")]
        )
        assert result.exit_code == 2
        assert "--retrievals" in result.stderr

    def test_retrieved_setting_with_table(self, corpus_path, tmp_path):
        retrievals = _write_json(tmp_path / "retr.json", {"1": ["Definition:Even Integer", "Definition:Integer"]})
        out = tmp_path / "train.jsonl"
        result = _invoke(
            ["--corpus", str(corpus_path), "emit-finetune", "--setting", "retrieved",
             "--retrievals", retrievals, "--out", str(out)]
        )
        assert result.exit_code == 0
        assert "wrote 7 records" in result.stdout

    def test_retrieved_setting_missing_train_theorem(self, corpus_path, tmp_path):
        retrievals = _write_json(tmp_path / "retr.json", {"4": ["Definition:Odd Integer"]})
        result = _invoke(
            ["--corpus", str(corpus_path), "emit-finetune", "--setting", "retrieved",
             "--retrievals", retrievals, "--out", str(tmp_path / "o")]
        )
        assert result.exit_code == 1


class TestSuggestCommand:
    @pytest.fixture()
    def suggest_script(self, tmp_path):
        # Object-form tables: text -> weight.
        return _write_json(
            tmp_path / "suggest.json",
            {"<proof>": {"We use [[Definition:Odd Integer|odd]] numbers.\n\nx": 0.7, "Another line.\n\nx": 0.3}},
        )

    def test_provided_constraints_and_coverage(self, corpus_path, suggest_script):
        result = _invoke(
            ["--corpus", str(corpus_path), "--mock-script", suggest_script,
             "suggest", "--theorem-id", "4", "--provided", "--k", "3", "--temperature", "0.0"]
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.stdout)
        assert payload["theorem_id"] == 4
        assert payload["seed"] == 0
        (suggestion,) = payload["suggestions"]
        assert suggestion["text"] == "We use [[Definition:Odd Integer|odd]] numbers."
        assert suggestion["covered_titles"] == ["Definition:Odd Integer"]
        assert payload["cost"] > 0

    def test_same_seed_is_reproducible(self, corpus_path, suggest_script):
        args = [
            "--corpus", str(corpus_path), "--mock-script", suggest_script, "--seed", "11",
            "suggest", "--theorem-id", "4", "--provided", "--k", "5",
        ]
        assert _invoke(args).stdout == _invoke(args).stdout

    def test_explicit_titles(self, corpus_path, suggest_script):
        result = _invoke(
            ["--corpus", str(corpus_path), "--mock-script", suggest_script,
             "suggest", "--theorem-id", "4", "--title", "Definition:Odd Integer",
             "--title", "Definition:Even Integer", "--temperature", "0.0"]
        )
        payload = json.loads(result.stdout)
        assert payload["suggestions"][0]["covered_titles"] == ["Definition:Odd Integer"]

    def test_history_file_extends_prompt(self, corpus_path, tmp_path):
        history = tmp_path / "history.txt"
        history.write_text("First step here.\n\nSecond step follows.")
        script = _write_json(
            tmp_path / "hist-script.json",
            {"Second step follows.\n\n": {"Concluding step. {{qed}} </proof>": 1.0}},
        )
        result = _invoke(
            ["--corpus", str(corpus_path), "--mock-script", script,
             "suggest", "--theorem-id", "4", "--history-file", str(history), "--temperature", "0.0"]
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.stdout)
        assert payload["suggestions"][0]["text"] == "Concluding step. {{qed}}"
        assert payload["suggestions"][0]["terminated"] is True

    def test_provided_and_titles_conflict(self, corpus_path, suggest_script):
        result = _invoke(
            ["--corpus", str(corpus_path), "--mock-script", suggest_script,
             "suggest", "--theorem-id", "4", "--provided", "--title", "Definition:Integer"]
        )
        assert result.exit_code == 2
        assert "mutually exclusive" in result.stderr

    def test_unknown_theorem(self, corpus_path, suggest_script):
        result = _invoke(
            ["--corpus", str(corpus_path), "--mock-script", suggest_script, "suggest", "--theorem-id", "99"]
        )
        assert result.exit_code == 1
        assert "unknown theorem id 99" in result.stderr

    def test_provided_needs_stored_proof(self, corpus_path, suggest_script):
        result = _invoke(
            ["--corpus", str(corpus_path), "--mock-script", suggest_script,
             "suggest", "--theorem-id", "2", "--provided"]
        )
        assert result.exit_code == 1
        assert "no stored proof" in result.stderr


class TestScoreCommand:
    def test_gold_proof_scores_ones(self, corpus_path, gold_proof, tmp_path):
        proof_file = tmp_path / "proof.txt"
        proof_file.write_text(gold_proof.raw_text())
        result = _invoke(
            ["--corpus", str(corpus_path), "score", "--theorem-id", "4", "--proof-file", str(proof_file)]
        )
        assert result.exit_code == 0
        payload = json.loads(result.stdout)
        assert payload["metrics"]["gleu"] == 1.0
        assert payload["metrics"]["ref_f1"] == 1.0
        assert payload["covered_titles"] == [
            "Definition:Odd Integer",
            "Axiom:Commutative Law of Addition",
            "Definition:Even Integer",
        ]

    def test_write_to_file(self, corpus_path, gold_proof, tmp_path):
        proof_file = tmp_path / "proof.txt"
        proof_file.write_text("A proof without any links.")
        out = tmp_path / "scores.json"
        result = _invoke(
            ["--corpus", str(corpus_path), "score", "--theorem-id", "4",
             "--proof-file", str(proof_file), "--out", str(out)]
        )
        assert result.exit_code == 0
        assert result.stdout == ""
        payload = json.loads(out.read_text())
        assert payload["metrics"]["ref_f1"] == 0.0

    def test_theorem_without_gold_proof(self, corpus_path, tmp_path):
        proof_file = tmp_path / "proof.txt"
        proof_file.write_text("x")
        result = _invoke(
            ["--corpus", str(corpus_path), "score", "--theorem-id", "2", "--proof-file", str(proof_file)]
        )
        assert result.exit_code == 1
        assert "no stored proof" in result.stderr


ANNOTATION_ROWS = [
    {
        "theorem_id": 4,
        "step_index": 0,
        "fine_grained_errors": ["hallucinated_ref"],
        "step_correct": "no",
        "step_useful": False,
        "overall_correct": 2,
        "overall_useful": 2,
    },
    {
        "theorem_id": 4,
        "step_index": 1,
        "fine_grained_errors": [],
        "step_correct": "yes",
        "step_useful": True,
        "overall_correct": 5,
        "overall_useful": 5,
    },
]


def _write_annotations(tmp_path):
    path = tmp_path / "annotations.jsonl"
    path.write_text("\n".join(json.dumps(r) for r in ANNOTATION_ROWS) + "\n")
    return str(path)


class TestAggregateAnnotationsCommand:
    def test_rates(self, tmp_path):
        result = _invoke(["aggregate-annotations", "--annotations", _write_annotations(tmp_path)])
        assert result.exit_code == 0
        payload = json.loads(result.stdout)
        assert payload["count"] == 2
        assert payload["bucket_rates"]["reference"] == 0.5
        assert payload["overall_correct_rate"] == 0.5
        assert payload["step_useful_rate"] == 0.5

    def test_threshold_flags(self, tmp_path):
        result = _invoke(
            ["aggregate-annotations", "--annotations", _write_annotations(tmp_path),
             "--correct-threshold", "2", "--useful-threshold", "5"]
        )
        payload = json.loads(result.stdout)
        assert payload["overall_correct_rate"] == 1.0
        assert payload["overall_useful_rate"] == 0.5

    def test_malformed_file(self, tmp_path):
        path = tmp_path / "annotations.jsonl"
        path.write_text("{broken\n")
        result = _invoke(["aggregate-annotations", "--annotations", str(path)])
        assert result.exit_code == 1
        assert "line 1" in result.stderr


def _means_dict(**overrides):
    values = {name: 0.5 for name in METRIC_NAMES}
    values.update(overrides)
    return values


def _aggregate_dict(overall_correct_rate):
    return {
        "count": 1,
        "empty": False,
        "fine_rates": {},
        "bucket_rates": {bucket: 0.0 for bucket in ERROR_BUCKETS},
        "step_correct_rate": 0.0,
        "step_useful_rate": 0.0,
        "overall_correct_rate": overall_correct_rate,
        "overall_useful_rate": 0.0,
    }


class TestCorrelateCommand:
    def test_matrix_from_files(self, tmp_path):
        run_a = _write_json(tmp_path / "run_a.json", {"task": "next_step", "means": _means_dict(gleu=0.2)})
        run_b = _write_json(tmp_path / "run_b.json", {"task": "next_step", "means": _means_dict(gleu=0.8)})
        agg_a = _write_json(tmp_path / "agg_a.json", _aggregate_dict(0.1))
        agg_b = _write_json(tmp_path / "agg_b.json", _aggregate_dict(0.9))
        result = _invoke(
            ["correlate", "--run", f"base={run_a}", "--run", f"tuned={run_b}",
             "--aggregate", f"base={agg_a}", "--aggregate", f"tuned={agg_b}"]
        )
        assert result.exit_code == 0, result.output
        payload = json.loads(result.stdout)
        assert payload["labels"] == ["base", "tuned"]
        assert abs(payload["cells"]["gleu"]["overall_correct_rate"] - 1.0) < 1e-12

    def test_bad_label_syntax(self, tmp_path):
        run_a = _write_json(tmp_path / "run_a.json", {"means": _means_dict()})
        result = _invoke(["correlate", "--run", "no-equals-sign", "--aggregate", f"a={run_a}"])
        assert result.exit_code == 2
        assert "LABEL=PATH" in result.stderr

    def test_unreadable_input(self, tmp_path):
        agg = _write_json(tmp_path / "agg.json", _aggregate_dict(0.5))
        result = _invoke(
            ["correlate", "--run", f"a={tmp_path / 'absent.json'}", "--aggregate", f"a={agg}"]
        )
        assert result.exit_code == 1
        assert "failed to load inputs" in result.stderr


class TestServeCommand:
    def test_builds_app_and_hands_it_to_uvicorn(self, corpus_path, decode_script, monkeypatch):
        captured = {}

        def fake_run(app, host, port, log_level):
            captured.update(app=app, host=host, port=port)

        monkeypatch.setitem(sys.modules, "uvicorn", types.SimpleNamespace(run=fake_run))
        result = _invoke(
            ["--corpus", str(corpus_path), "--mock-script", decode_script, "serve", "--port", "1234"]
        )
        assert result.exit_code == 0, result.output
        assert captured["host"] == "127.0.0.1"
        assert captured["port"] == 1234
        assert captured["app"] is not None


class TestMockScriptLoading:
    def test_pair_and_object_forms_agree(self, tmp_path):
        pairs = tmp_path / "pairs.json"
        pairs.write_text(json.dumps({"<proof>": [["a", 0.5], ["b", 0.5]]}))
        obj = tmp_path / "obj.json"
        obj.write_text(json.dumps({"<proof>": {"a": 0.5, "b": 0.5}}))
        assert load_mock_script(pairs) == load_mock_script(obj) == {"<proof>": [("a", 0.5), ("b", 0.5)]}

    def test_non_object_script_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(["not", "a", "script"]))
        with pytest.raises(ValueError, match="JSON object"):
            load_mock_script(path)

    def test_cli_reports_bad_script(self, corpus_path, greedy_config, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("[1, 2]")
        result = _invoke(_decode_args(corpus_path, str(bad), greedy_config, "decode"))
        assert result.exit_code == 1
        assert "bad mock script" in result.stderr
