"""
Test Timed k-Tail CLI - mine, check, eval, gen and export through click's runner
"""

from pathlib import Path

import pandas as pd
import pytest
from click.testing import CliRunner

from timed_automaton import load_model
from timed_trace import load_corpus
from tkt_cli import EXIT_CONFIG_ERROR, EXIT_INPUT_ERROR, EXIT_OK, EXIT_REJECTED, cli

WORKLOADS = Path(__file__).parent / "workloads"
REQUEST_WORKLOAD = str(WORKLOADS / "request_overload.yaml")


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def corpora(runner, tmp_path):
    """Valid and overloaded request corpora written by `gen`"""
    valid = tmp_path / "valid.trace"
    invalid = tmp_path / "invalid.trace"
    assert runner.invoke(cli, ["gen", REQUEST_WORKLOAD, "-n", "30", "-o", str(valid)]).exit_code == EXIT_OK
    result = runner.invoke(cli, ["gen", REQUEST_WORKLOAD, "-n", "30", "--seed", "99", "--anomalous", "-o", str(invalid)])
    assert result.exit_code == EXIT_OK
    return valid, invalid


@pytest.fixture
def model(runner, corpora, tmp_path):
    path = tmp_path / "request.tkt"
    result = runner.invoke(cli, ["mine", str(corpora[0]), "-o", str(path), "--config", "M1"])
    assert result.exit_code == EXIT_OK, result.output
    return path


def test_mine_writes_model_and_summary(runner, corpora, model):
    """Test mine command output"""
    result = runner.invoke(cli, ["mine", str(corpora[0]), "-o", str(model)])

    assert "traces: 30" in result.stdout
    assert "events: 180" in result.stdout
    assert load_model(model).states


def test_mine_dumps_stages(runner, corpora, tmp_path):
    """Test mine with intermediate stages"""
    out = tmp_path / "model.tkt"
    result = runner.invoke(cli, ["mine", str(corpora[0]), "-o", str(out), "--dump-stages", "--k", "3"])

    assert result.exit_code == EXIT_OK
    for stage in ("initial", "merged", "refined"):
        assert (tmp_path / f"model.{stage}.tkt").exists()
        assert f"stage {stage}:" in result.stdout


def test_mine_custom_policy(runner, corpora, tmp_path):
    """Test mine with an explicit policy"""
    out = tmp_path / "model.tkt"
    result = runner.invoke(
        cli, ["mine", str(corpora[0]), "-o", str(out), "--policy", "gamma", "--param", "0.99", "--absolute", "off"]
    )

    assert result.exit_code == EXIT_OK
    assert all(not g.clock.is_absolute for tr in load_model(out).transitions for g in tr.guards)


def test_mine_empty_corpus_is_input_error(runner, tmp_path):
    """Test mine on an empty corpus"""
    empty = tmp_path / "empty.trace"
    empty.write_text("", encoding="utf-8")
    result = runner.invoke(cli, ["mine", str(empty), "-o", str(tmp_path / "m.tkt")])

    assert result.exit_code == EXIT_INPUT_ERROR
    assert "no traces" in result.output


def test_mine_missing_corpus_is_input_error(runner, tmp_path):
    """Test mine on an absent corpus"""
    result = runner.invoke(cli, ["mine", str(tmp_path / "absent.trace"), "-o", str(tmp_path / "m.tkt")])

    assert result.exit_code == EXIT_INPUT_ERROR


@pytest.mark.parametrize(
    "options",
    [
        ["--config", "M99"],
        ["--config", "M1", "--policy", "minmax", "--param", "0.1"],
        ["--policy", "minmax"],
        ["--param", "0.1"],
        ["--config", "M2", "--absolute", "on"],
        ["--policy", "gamma", "--param", "0.5"],
    ],
)
def test_mine_invalid_policy_is_config_error(runner, corpora, tmp_path, options):
    """Test mine with invalid policy options"""
    result = runner.invoke(cli, ["mine", str(corpora[0]), "-o", str(tmp_path / "m.tkt")] + options)

    assert result.exit_code == EXIT_CONFIG_ERROR


def test_check_accepts_training_traces(runner, corpora, model):
    """Test check on the training corpus"""
    result = runner.invoke(cli, ["check", str(model), str(corpora[0])])

    assert result.exit_code == EXIT_OK
    assert result.stdout.splitlines() == ["ACCEPT"] * 30


def test_check_rejects_overloaded_traces(runner, corpora, model):
    """Test check on overloaded traces"""
    result = runner.invoke(cli, ["check", str(model), str(corpora[1])])

    assert result.exit_code == EXIT_REJECTED
    lines = result.stdout.splitlines()
    assert len(lines) == 30
    assert all(line.startswith("REJECT event") and "violated" in line for line in lines)


def test_check_reports_missing_transition(runner, model, tmp_path):
    """Test check diagnosis for an unseen operation"""
    traces = tmp_path / "unknown.trace"
    traces.write_text("B upload 0\nE upload 4\n", encoding="utf-8")
    result = runner.invoke(cli, ["check", str(model), str(traces)])

    assert result.exit_code == EXIT_REJECTED
    assert "no transition for upload/B" in result.stdout


def test_check_open_traces(runner, model, tmp_path):
    """Test check with unfinished traces"""
    traces = tmp_path / "open.trace"
    traces.write_text("B request 0\nB parse 3\n", encoding="utf-8")

    assert runner.invoke(cli, ["check", str(model), str(traces)]).exit_code == EXIT_INPUT_ERROR
    result = runner.invoke(cli, ["check", str(model), str(traces), "--allow-open", "--no-absolute"])
    assert result.exit_code == EXIT_OK
    assert result.stdout.strip() == "ACCEPT"


def test_check_unreadable_model_is_config_error(runner, corpora, tmp_path):
    """Test check with broken or absent models"""
    broken = tmp_path / "broken.tkt"
    broken.write_text("not a model\n", encoding="utf-8")

    assert runner.invoke(cli, ["check", str(broken), str(corpora[0])]).exit_code == EXIT_CONFIG_ERROR
    assert runner.invoke(cli, ["check", str(tmp_path / "absent.tkt"), str(corpora[0])]).exit_code == EXIT_CONFIG_ERROR


def test_eval_writes_one_row_per_configuration(runner, corpora, tmp_path):
    """Test eval reports"""
    report = tmp_path / "report.csv"
    wide = tmp_path / "wide.csv"
    result = runner.invoke(
        cli,
        [
            "eval", str(corpora[0]), "--invalid", str(corpora[1]), "--configs", "M1,M16,G1,G4",
            "--folds", "5", "--repetitions", "1", "--fractions", "1.0",
            "-o", str(report), "--wide", str(wide), "--no-timing",
        ],
    )

    assert result.exit_code == EXIT_OK, result.output
    assert "M16" in result.stdout
    frame = pd.read_csv(wide)
    assert list(frame["config_id"]) == ["M1", "M16", "G1", "G4"]
    long = pd.read_csv(report)
    assert "inference_ms" not in set(long["metric"])
    assert len(long) == 4 * 7


def test_eval_subset_study_prints_portions(runner, corpora):
    """Test eval subset study summary"""
    result = runner.invoke(
        cli,
        [
            "eval", str(corpora[0]), "--configs", "M1,M2", "--folds", "5",
            "--repetitions", "1", "--extractions", "2", "--fractions", "0.5,1.0",
        ],
    )

    assert result.exit_code == EXIT_OK, result.output
    assert "intermediate" in result.stdout
    assert "M1/M2" in result.stdout


def test_eval_errors(runner, corpora):
    """Test eval errors"""
    assert runner.invoke(cli, ["eval", str(corpora[0]), "--configs", "X1"]).exit_code == EXIT_CONFIG_ERROR
    assert runner.invoke(cli, ["eval", str(corpora[0]), "--fractions", "half"]).exit_code == EXIT_CONFIG_ERROR
    result = runner.invoke(cli, ["eval", str(corpora[0]), "--folds", "50", "--fractions", "1.0"])
    assert result.exit_code == EXIT_INPUT_ERROR


def test_gen_is_reproducible(runner):
    """Test gen determinism"""
    first = runner.invoke(cli, ["gen", REQUEST_WORKLOAD, "-n", "5"])
    second = runner.invoke(cli, ["gen", REQUEST_WORKLOAD, "-n", "5"])

    assert first.exit_code == EXIT_OK
    assert first.stdout == second.stdout
    assert first.stdout.startswith("B request 0\n")


def test_gen_takes_workload_through_spec_option(runner, tmp_path):
    """Test gen --spec output against the positional form and across runs"""
    first, second = tmp_path / "first.trace", tmp_path / "second.trace"
    for out in (first, second):
        result = runner.invoke(cli, ["gen", "--spec", REQUEST_WORKLOAD, "-n", "100", "--seed", "7", "-o", str(out)])
        assert result.exit_code == EXIT_OK, result.output
    assert first.read_bytes() == second.read_bytes()

    positional = runner.invoke(cli, ["gen", REQUEST_WORKLOAD, "-n", "100", "--seed", "7"])
    assert positional.stdout == first.read_text(encoding="utf-8")

    assert runner.invoke(cli, ["gen", "-n", "3"]).exit_code == EXIT_CONFIG_ERROR
    other = str(WORKLOADS / "reorder.yaml")
    assert runner.invoke(cli, ["gen", other, "--spec", REQUEST_WORKLOAD]).exit_code == EXIT_CONFIG_ERROR


def test_gen_writes_loadable_corpus(runner, corpora):
    """Test gen output files"""
    assert len(load_corpus(corpora[0])) == 30
    assert len(load_corpus(corpora[1])) == 30


def test_gen_bad_workload_is_config_error(runner, tmp_path):
    """Test gen with invalid workloads"""
    spec = tmp_path / "bad.yaml"
    spec.write_text("workload:\n  roots: [f]\n  operations:\n    - label: f\n      children: [f]\n", encoding="utf-8")

    assert runner.invoke(cli, ["gen", str(spec)]).exit_code == EXIT_CONFIG_ERROR
    assert runner.invoke(cli, ["gen", str(tmp_path / "absent.yaml")]).exit_code == EXIT_CONFIG_ERROR


def test_export_is_stable(runner, model, tmp_path):
    """Test export command"""
    first = runner.invoke(cli, ["export", str(model)])
    second = runner.invoke(cli, ["export", str(model)])

    assert first.exit_code == EXIT_OK
    assert first.stdout == second.stdout
    assert first.stdout.startswith('digraph "timed_automaton" {')
    assert "request/B" in first.stdout

    out = tmp_path / "model.dot"
    assert runner.invoke(cli, ["export", str(model), "-o", str(out)]).exit_code == EXIT_OK
    assert out.read_text(encoding="utf-8") == first.stdout


def test_unknown_flag_is_usage_error(runner, model):
    """Test unknown option"""
    assert runner.invoke(cli, ["export", str(model), "--color"]).exit_code == EXIT_CONFIG_ERROR
