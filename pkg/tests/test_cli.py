"""
End-to-end tests for the command-line tool.
"""

import json

import numpy as np
import pytest

from online_quantile.checkpoint import load_checkpoint
from online_quantile.cli import build_parser, main
from online_quantile.ensemble import load_ensemble
from online_quantile.errors import ExitCode
from online_quantile.simlab import read_reports_csv

LEARNER = ["--tau", "0.5", "-R", "3", "-s", "2", "-p", "2", "-A", "4"]


def write_training_csv(path, n, seed=0, header=True):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 2))
    y = np.sin(2 * np.pi * X[:, 0]) + 0.3 * rng.standard_normal(n)
    lines = ["x1,x2,y"] if header else []
    lines += [f"{float(X[i, 0])!r},{float(X[i, 1])!r},{float(y[i])!r}" for i in range(n)]
    path.write_text("\n".join(lines) + "\n")
    return path


def write_queries_csv(path, n, seed=1):
    X = np.random.default_rng(seed).random((n, 2))
    path.write_text("".join(f"{float(a)!r},{float(b)!r}\n" for a, b in X))
    return X


def parse_summary(text):
    rows = {}
    for line in text.splitlines():
        if ": " in line:
            key, value = line.split(": ", 1)
            rows[key] = value
    return rows


class TestParser:
    """Test cases for argument parsing."""

    def test_fit_flags(self):
        """Test parsing of fit flags."""
        args = build_parser().parse_args(["fit", "-i", "data.csv", "--tau", "0.9", "-R", "2", "--lenient"])
        assert args.command == "fit"
        assert args.tau == 0.9
        assert args.R == 2.0
        assert args.strict is False
        assert args.resume is None

    def test_simulate_flags(self):
        """Test parsing of simulate flags."""
        args = build_parser().parse_args(["simulate", "-o", "lab", "--seeds", "0", "1", "2", "--window", "8", "64"])
        assert args.seeds == [0, 1, 2]
        assert args.window == [8, 64]
        assert args.timed is None

    def test_missing_command_is_usage_error(self):
        """Test exit code 1 without a subcommand."""
        assert main([]) == ExitCode.USAGE

    def test_bad_flag_value_is_usage_error(self):
        """Test exit code 1 for an unparsable flag value."""
        assert main(["fit", "--tau", "high"]) == ExitCode.USAGE


class TestFitCommand:
    """Test cases for ``fit``."""

    def test_empty_input(self, tmp_path, capsys):
        """Test fit on empty input."""
        data = tmp_path / "empty.csv"
        data.write_text("")
        assert main(["fit", "-i", str(data), *LEARNER]) == ExitCode.SUCCESS
        summary = parse_summary(capsys.readouterr().out)
        assert summary["t"] == "0"
        assert summary["accepted_records"] == "0"

    def test_summary_counts(self, tmp_path, capsys):
        """Test summary after a few records."""
        data = write_training_csv(tmp_path / "train.csv", 50)
        assert main(["fit", "-i", str(data), *LEARNER]) == ExitCode.SUCCESS
        summary = parse_summary(capsys.readouterr().out)
        assert summary["t"] == "50"
        assert summary["N"] == "50"
        assert summary["accepted_records"] == "50"

    def test_strict_abort_names_line(self, tmp_path, caplog):
        """Test strict mode aborts with the offending line number."""
        data = tmp_path / "bad.csv"
        data.write_text("0.1,0.2,1.0\n1.5,0.2,1.0\n0.3,0.4,2.0\n")
        checkpoint = tmp_path / "model.json"
        assert main(["fit", "-i", str(data), "--checkpoint", str(checkpoint), *LEARNER]) == ExitCode.DATA
        assert "line 2" in caplog.text
        assert not checkpoint.exists()

    def test_lenient_skips(self, tmp_path, capsys):
        """Test lenient mode skips and counts bad records."""
        data = tmp_path / "bad.csv"
        data.write_text("0.1,0.2,1.0\n1.5,0.2,1.0\n0.3,0.4,2.0\n")
        assert main(["fit", "-i", str(data), "--lenient", *LEARNER]) == ExitCode.SUCCESS
        summary = parse_summary(capsys.readouterr().out)
        assert summary["t"] == "2"
        assert summary["skipped_records"] == "1"

    def test_missing_input_file(self, tmp_path):
        """Test fit with a missing input file."""
        assert main(["fit", "-i", str(tmp_path / "absent.csv"), *LEARNER]) == ExitCode.DATA

    def test_missing_required_setting(self, tmp_path):
        """Test fit with only tau given."""
        data = write_training_csv(tmp_path / "train.csv", 5)
        assert main(["fit", "-i", str(data), "--tau", "0.5"]) == ExitCode.USAGE

    def test_checkpoint_every_needs_checkpoint(self, tmp_path):
        """Test checkpoint interval without a checkpoint path."""
        data = write_training_csv(tmp_path / "train.csv", 5)
        assert main(["fit", "-i", str(data), "--checkpoint-every", "2", *LEARNER]) == ExitCode.USAGE

    def test_jsonl_input(self, tmp_path, capsys):
        """Test fit on JSONL input."""
        data = tmp_path / "train.jsonl"
        data.write_text('{"x": [0.1, 0.2], "y": 1.0}\n{"x": [0.7, 0.4], "y": -0.5}\n')
        assert main(["fit", "-i", str(data), "--format", "jsonl", *LEARNER]) == ExitCode.SUCCESS
        assert parse_summary(capsys.readouterr().out)["t"] == "2"

    def test_mini_batch(self, tmp_path, capsys):
        """Test fit in mini-batch mode."""
        data = write_training_csv(tmp_path / "train.csv", 50)
        assert main(["fit", "-i", str(data), "--batch-size", "8", *LEARNER]) == ExitCode.SUCCESS
        summary = parse_summary(capsys.readouterr().out)
        assert summary["t"] == "7"
        assert summary["N"] == "50"

    def test_resume_matches_single_pass(self, tmp_path):
        """Test two resumed fits match one pass over all records."""
        full = write_training_csv(tmp_path / "full.csv", 300, header=False)
        lines = full.read_text().splitlines(keepends=True)
        first = tmp_path / "first.csv"
        second = tmp_path / "second.csv"
        first.write_text("".join(lines[:120]))
        second.write_text("".join(lines[120:]))

        once = tmp_path / "once.json"
        twice = tmp_path / "twice.json"
        assert main(["fit", "-i", str(full), "--checkpoint", str(once), *LEARNER]) == ExitCode.SUCCESS
        assert main(["fit", "-i", str(first), "--checkpoint", str(twice), *LEARNER]) == ExitCode.SUCCESS
        assert main(["fit", "-i", str(second), "--checkpoint", str(twice), "--resume", *LEARNER]) == ExitCode.SUCCESS

        a = load_checkpoint(once)
        b = load_checkpoint(twice)
        np.testing.assert_array_equal(a.state.theta, b.state.theta)
        assert a.prequential.total == b.prequential.total

    def test_resume_with_other_config(self, tmp_path):
        """Test resume with a different configuration."""
        data = write_training_csv(tmp_path / "train.csv", 20)
        checkpoint = tmp_path / "model.json"
        assert main(["fit", "-i", str(data), "--checkpoint", str(checkpoint), *LEARNER]) == ExitCode.SUCCESS
        other = ["--tau", "0.9", "-R", "3", "-s", "2", "-p", "2", "-A", "4"]
        assert main(["fit", "-i", str(data), "--checkpoint", str(checkpoint), "--resume", *other]) == ExitCode.DATA

    def test_resume_single_as_ensemble(self, tmp_path):
        """Test resuming a single-learner checkpoint as an ensemble."""
        data = write_training_csv(tmp_path / "train.csv", 20)
        checkpoint = tmp_path / "model.json"
        assert main(["fit", "-i", str(data), "--checkpoint", str(checkpoint), *LEARNER]) == ExitCode.SUCCESS
        args = ["fit", "-i", str(data), "--checkpoint", str(checkpoint), "--resume", "--replicates", "2", *LEARNER]
        assert main(args) == ExitCode.DATA

    def test_ensemble_fit(self, tmp_path):
        """Test fit with replicates."""
        data = write_training_csv(tmp_path / "train.csv", 40)
        checkpoint = tmp_path / "ensemble.json"
        args = ["fit", "-i", str(data), "--checkpoint", str(checkpoint), "--replicates", "3", *LEARNER]
        assert main(args) == ExitCode.SUCCESS
        ensemble = load_ensemble(checkpoint)
        assert len(ensemble.replicates) == 3
        assert ensemble.summary()["t"] == 40

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        """Test config file values overridden by flags."""
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"estimator": {"tau": 0.9, "R": 3.0, "A": 4.0, "s": 2.0, "p": 2}}))
        data = write_training_csv(tmp_path / "train.csv", 10)
        checkpoint = tmp_path / "model.json"
        args = ["fit", "-c", str(config), "-i", str(data), "--tau", "0.25", "--checkpoint", str(checkpoint)]
        assert main(args) == ExitCode.SUCCESS
        assert load_checkpoint(checkpoint).config.tau == 0.25


class TestPredictCommand:
    """Test cases for ``predict``."""

    def test_zero_state_predicts_zero(self, tmp_path, capsys):
        """Test predictions of an untrained checkpoint."""
        data = tmp_path / "empty.csv"
        data.write_text("")
        checkpoint = tmp_path / "model.json"
        assert main(["fit", "-i", str(data), "--checkpoint", str(checkpoint), *LEARNER]) == ExitCode.SUCCESS
        capsys.readouterr()
        queries = tmp_path / "queries.csv"
        write_queries_csv(queries, 4)
        assert main(["predict", str(checkpoint), str(queries)]) == ExitCode.SUCCESS
        assert capsys.readouterr().out.splitlines() == ["0.0"] * 4

    def test_predictions_match_checkpoint(self, tmp_path):
        """Test predict output against the loaded estimator."""
        data = write_training_csv(tmp_path / "train.csv", 200)
        checkpoint = tmp_path / "model.json"
        assert main(["fit", "-i", str(data), "--checkpoint", str(checkpoint), *LEARNER]) == ExitCode.SUCCESS
        queries = tmp_path / "queries.csv"
        X = write_queries_csv(queries, 25)
        output = tmp_path / "out" / "predictions.txt"
        assert main(["predict", str(checkpoint), str(queries), "-o", str(output)]) == ExitCode.SUCCESS

        estimator = load_checkpoint(checkpoint)
        written = [float(line) for line in output.read_text().splitlines()]
        assert written == [estimator.predict(x) for x in X]
        assert not output.with_name("predictions.txt.tmp").exists()

    def test_query_outside_cube(self, tmp_path, caplog):
        """Test predict with a query outside the unit cube."""
        data = write_training_csv(tmp_path / "train.csv", 10)
        checkpoint = tmp_path / "model.json"
        assert main(["fit", "-i", str(data), "--checkpoint", str(checkpoint), *LEARNER]) == ExitCode.SUCCESS
        queries = tmp_path / "queries.csv"
        queries.write_text("0.1,0.2\n0.5,1.2\n")
        output = tmp_path / "predictions.txt"
        assert main(["predict", str(checkpoint), str(queries), "-o", str(output)]) == ExitCode.DATA
        assert "line 2" in caplog.text
        assert not output.exists()
        assert not output.with_name("predictions.txt.tmp").exists()

    def test_expected_config_mismatch(self, tmp_path):
        """Test predict with a mismatching expected config."""
        data = write_training_csv(tmp_path / "train.csv", 10)
        checkpoint = tmp_path / "model.json"
        assert main(["fit", "-i", str(data), "--checkpoint", str(checkpoint), *LEARNER]) == ExitCode.SUCCESS
        queries = tmp_path / "queries.csv"
        write_queries_csv(queries, 2)
        other = ["--tau", "0.1", "-R", "3", "-s", "2", "-p", "2", "-A", "4"]
        assert main(["predict", str(checkpoint), str(queries), *other]) == ExitCode.DATA

    def test_ensemble_predict(self, tmp_path, capsys):
        """Test predict from an ensemble manifest."""
        data = write_training_csv(tmp_path / "train.csv", 40)
        checkpoint = tmp_path / "ensemble.json"
        args = ["fit", "-i", str(data), "--checkpoint", str(checkpoint), "--replicates", "2", *LEARNER]
        assert main(args) == ExitCode.SUCCESS
        capsys.readouterr()
        queries = tmp_path / "queries.csv"
        X = write_queries_csv(queries, 3)
        assert main(["predict", str(checkpoint), str(queries)]) == ExitCode.SUCCESS
        written = [float(line) for line in capsys.readouterr().out.splitlines()]
        ensemble = load_ensemble(checkpoint)
        assert written == [ensemble.predict(x) for x in X]


class TestSimulateCommand:
    """Test cases for ``simulate``."""

    ARGS = ["--horizon", "64", "--seeds", "0", "1", "--J-truth", "32", "--no-timing", "-A", "4"]

    def test_outputs(self, tmp_path, capsys):
        """Test files written by simulate."""
        lab = tmp_path / "lab"
        assert main(["simulate", "-o", str(lab), *self.ARGS]) == ExitCode.SUCCESS
        assert sorted(p.name for p in lab.iterdir()) == [
            "curve.csv",
            "manifest.json",
            "run_seed0.csv",
            "run_seed1.csv",
        ]
        reports = read_reports_csv(lab / "run_seed0.csv")
        assert [r.N for r in reports] == [1, 2, 4, 8, 16, 32, 64]
        assert all(r.wall_time_ns == 0 for r in reports)

        manifest = json.loads((lab / "manifest.json").read_text())
        assert manifest["seeds"] == [0, 1]
        assert manifest["expected_slope"] == pytest.approx(-0.8)
        assert isinstance(manifest["slope"], float)
        assert "SIMULATION SUMMARY" in capsys.readouterr().out

    def test_untimed_runs_are_byte_identical(self, tmp_path):
        """Test untimed simulate output is byte identical across runs."""
        assert main(["simulate", "-o", str(tmp_path / "a"), *self.ARGS]) == ExitCode.SUCCESS
        assert main(["simulate", "-o", str(tmp_path / "b"), *self.ARGS]) == ExitCode.SUCCESS
        for name in ("run_seed0.csv", "run_seed1.csv", "curve.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_missing_output_dir(self):
        """Test simulate without an output directory."""
        assert main(["simulate", "--horizon", "8"]) == ExitCode.USAGE

    def test_short_run_has_no_slope(self, tmp_path):
        """Test simulate too short for a slope fit."""
        lab = tmp_path / "lab"
        args = ["simulate", "-o", str(lab), "--horizon", "2", "--J-truth", "8", "--no-timing", "-A", "4"]
        assert main(args) == ExitCode.SUCCESS
        assert json.loads((lab / "manifest.json").read_text())["slope"] is None


class TestInspectCommand:
    """Test cases for ``inspect``."""

    def test_prints_metadata(self, tmp_path, capsys):
        """Test inspect output."""
        data = write_training_csv(tmp_path / "train.csv", 30)
        checkpoint = tmp_path / "model.json"
        assert main(["fit", "-i", str(data), "--checkpoint", str(checkpoint), *LEARNER]) == ExitCode.SUCCESS
        capsys.readouterr()
        assert main(["inspect", str(checkpoint)]) == ExitCode.SUCCESS
        info = json.loads(capsys.readouterr().out)
        assert info["kind"] == "estimator"
        assert info["t"] == 30

    def test_missing_checkpoint(self, tmp_path):
        """Test inspect of a missing file."""
        assert main(["inspect", str(tmp_path / "absent.json")]) == ExitCode.DATA

    def test_not_a_checkpoint(self, tmp_path):
        """Test inspect of a non-object JSON file."""
        path = tmp_path / "notes.json"
        path.write_text("[1, 2]")
        assert main(["inspect", str(path)]) == ExitCode.DATA
