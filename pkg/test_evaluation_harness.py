"""
Test Evaluation Harness - k-fold metrics, subset study, summaries and scaling
"""

from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from evaluation_harness import (
    EvaluationError,
    absolute_clock_comparison,
    harmonic_mean,
    kfold_evaluate,
    partition_folds,
    portion_summary,
    scaling_study,
    score_model,
    subset_study,
)
from guard_policies import CONFIGURATION_MATRIX, parse_config_list, policy_config_from_id
from timed_automaton import accepts
from timed_trace import parse_trace
from tkt_miner import TimedKTailMiner
from workload_generator import (
    AnomalySpec,
    DurationSpec,
    OperationSpec,
    WorkloadSpec,
    generate_anomalous_corpus,
    generate_corpus,
    load_workload,
)

WORKLOADS = Path(__file__).parent / "workloads"
M1 = [policy_config_from_id("M1")]


def _request_workload(seed):
    return WorkloadSpec(
        operations=(
            OperationSpec("request", children=("parse", "render"), duration=DurationSpec.uniform(8, 12)),
            OperationSpec("parse", duration=DurationSpec.uniform(8, 12)),
            OperationSpec("render", duration=DurationSpec.uniform(8, 12)),
        ),
        roots=("request",),
        seed=seed,
    )


def _small_corpora(seed=1, n=20):
    spec = _request_workload(seed)
    valid = generate_corpus(spec, n)
    invalid = generate_anomalous_corpus(spec, AnomalySpec.overload(3), n, seed=seed + 1000)
    return valid, invalid


def test_harmonic_mean():
    """Test harmonic mean of sensitivity and specificity"""
    assert harmonic_mean(1.0, 1.0) == 1.0
    assert harmonic_mean(0.0, 0.0) == 0.0
    assert harmonic_mean(0.5, 1.0) == pytest.approx(2 / 3)
    assert harmonic_mean(0.7, None) is None


def test_fold_partition_spreads_the_remainder():
    """Test fold sizes when the traces do not divide evenly"""
    parts = partition_folds(23, 10, np.random.default_rng(0))

    assert [len(p) for p in parts] == [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]
    assert sorted(i for p in parts for i in p) == list(range(23))


def test_identical_traces_are_always_accepted():
    """Test k-fold run over identical traces without invalid ones"""
    trace = parse_trace("B f 0\nB g 2\nE g 7\nE f 9")
    report = kfold_evaluate([trace] * 10, [], M1, folds=10)
    row = report.row("M1")

    assert row.sensitivity == 1.0
    assert row.specificity is None
    assert row.harmonic_mean is None
    assert row.runs == 10
    assert row.events_processed == 36


def test_training_traces_as_invalid_are_mostly_accepted():
    """Test k-fold specificity when the invalid set is the valid corpus"""
    valid, _ = _small_corpora(n=12)
    report = kfold_evaluate(valid, valid, M1, folds=3)

    assert report.row("M1").specificity < 0.5
    model = TimedKTailMiner(policy_config=M1[0]).mine(valid).model
    assert all(accepts(model, t).accepted for t in valid)


def test_training_traces_scored_as_invalid_give_zero_specificity():
    """Test specificity of a model scored against its own training traces"""
    valid, invalid = _small_corpora(n=15)
    for config_id in ("M1", "M16", "G4"):
        model = TimedKTailMiner(policy_config=policy_config_from_id(config_id)).mine(valid).model

        assert score_model(model, valid, valid) == (1.0, 0.0)
    assert score_model(model, valid, []) == (1.0, None)
    with pytest.raises(EvaluationError, match="at least one valid"):
        score_model(model, [], invalid)

    trace = parse_trace("B f 0\nB g 2\nE g 7\nE f 9")
    report = kfold_evaluate([trace] * 10, [trace] * 4, M1, folds=5)
    assert report.row("M1").specificity == 0.0


@pytest.mark.parametrize("seed", [11, 12, 13])
def test_overload_is_detected_on_the_three_operation_workload(seed):
    """Test overload detection with the min-max configuration"""
    spec = _request_workload(seed)
    valid = generate_corpus(spec, 100)
    invalid = generate_anomalous_corpus(spec, AnomalySpec.overload(3), 100, seed=seed + 500)

    row = kfold_evaluate(valid, invalid, M1, folds=10, seed=seed).row("M1")

    assert row.sensitivity >= 0.9
    assert row.specificity >= 0.9
    assert row.harmonic_mean == pytest.approx(harmonic_mean(row.sensitivity, row.specificity))


def test_report_is_deterministic():
    """Test report determinism for a fixed seed"""
    valid, invalid = _small_corpora()
    configs = parse_config_list("M1,M2,G1")
    first = kfold_evaluate(valid, invalid, configs, folds=5, repetitions=2, seed=4)
    second = kfold_evaluate(valid, invalid, configs, folds=5, repetitions=2, seed=4)

    pd.testing.assert_frame_equal(
        first.to_long_frame(include_timing=False), second.to_long_frame(include_timing=False)
    )


def test_parallel_folds_match_sequential():
    """Test parallel fold execution"""
    valid, invalid = _small_corpora()
    sequential = kfold_evaluate(valid, invalid, M1, folds=4, seed=2, n_jobs=1)
    parallel = kfold_evaluate(valid, invalid, M1, folds=4, seed=2, n_jobs=2)

    pd.testing.assert_frame_equal(
        sequential.to_long_frame(include_timing=False), parallel.to_long_frame(include_timing=False)
    )


def test_dropping_absolute_guards_never_lowers_sensitivity():
    """Test sensitivity with and without absolute guards"""
    valid, invalid = _small_corpora(seed=3, n=30)
    configs = [CONFIGURATION_MATRIX[i] for i in ("M1", "M2", "M5", "M6", "G1", "G2")]
    report = kfold_evaluate(valid, invalid, configs, folds=5, seed=1)

    for odd, even in (("M1", "M2"), ("M5", "M6"), ("G1", "G2")):
        assert report.row(even).sensitivity >= report.row(odd).sensitivity

    comparison = absolute_clock_comparison(report)
    assert list(comparison["pair"]) == ["M1/M2", "M5/M6", "G1/G2"]
    assert (comparison["sensitivity_without"] >= comparison["sensitivity_with"]).all()


def test_evaluation_preconditions():
    """Test k-fold preconditions"""
    valid, invalid = _small_corpora(n=5)

    with pytest.raises(EvaluationError, match="cannot fill"):
        kfold_evaluate(valid, invalid, M1, folds=10)
    with pytest.raises(EvaluationError, match="no configurations"):
        kfold_evaluate(valid, invalid, [], folds=5)
    with pytest.raises(EvaluationError, match="duplicate"):
        kfold_evaluate(valid, invalid, M1 + M1, folds=5)


def test_full_fraction_matches_kfold():
    """Test subset study at the full training fraction"""
    valid, invalid = _small_corpora(n=20)
    full = kfold_evaluate(valid, invalid, M1, folds=5, seed=9)
    study = subset_study(valid, invalid, M1, [1.0], folds=5, seed=9)

    pd.testing.assert_frame_equal(
        full.to_long_frame(include_timing=False), study.to_long_frame(include_timing=False)
    )


def test_subset_study_rows_and_long_csv(tmp_path):
    """Test subset study rows and CSV export"""
    valid, invalid = _small_corpora(n=40)
    configs = parse_config_list("M1,M16")
    report = subset_study(valid, invalid, configs, [0.25, 0.5, 1.0], extractions=2, folds=5, seed=3)

    assert len(report) == 6
    assert report.row("M16", 0.25).runs == 10
    assert report.row("M1", 1.0).runs == 5
    for row in report.rows:
        assert row.harmonic_mean == pytest.approx(harmonic_mean(row.sensitivity, row.specificity))

    path = tmp_path / "report.csv"
    report.write_csv(path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["config_id", "training_fraction", "metric", "value"]
    assert set(frame["metric"]) == {
        "sensitivity", "specificity", "harmonic_mean", "inference_ms",
        "events_processed", "states", "transitions", "clocks",
    }
    assert len(frame) == 6 * 8

    table = report.summary_table()
    assert "M16" in table and "0.25" in table


def test_subset_study_preconditions():
    """Test subset study preconditions"""
    valid, invalid = _small_corpora(n=20)

    with pytest.raises(EvaluationError, match="outside"):
        subset_study(valid, invalid, M1, [0.0], folds=5)
    with pytest.raises(EvaluationError, match="fewer than 5 folds"):
        subset_study(valid, invalid, M1, [0.1], folds=5)


def test_sensitivity_trend_over_training_fractions():
    """Test sensitivity trend as the training fraction grows"""
    workload, _ = load_workload(WORKLOADS / "order_processing.yaml")
    valid = generate_corpus(workload, 60)
    report = subset_study(valid, [], M1, [0.25, 1.0], extractions=3, folds=5, seed=0)

    assert report.row("M1", 1.0).sensitivity >= report.row("M1", 0.25).sensitivity - 0.05


def test_portion_summary_buckets():
    """Test portion buckets of the subset study"""
    valid, invalid = _small_corpora(n=40)
    report = subset_study(valid, invalid, M1, [0.25, 0.3, 0.5, 1.0], extractions=1, folds=5, seed=0)
    summary = portion_summary(report)

    assert list(summary["portion"].astype(str)) == ["small", "intermediate", "high"]
    small = summary[summary["portion"] == "small"]["sensitivity"].iloc[0]
    expected = np.mean([report.row("M1", 0.25).sensitivity, report.row("M1", 0.3).sensitivity])
    assert small == pytest.approx(expected)


def test_scaling_study_grows_gently():
    """Test inference time scaling over corpus size"""
    workload = WorkloadSpec(
        operations=(
            OperationSpec("batch", children=("item",), duration=DurationSpec.uniform(5, 9)),
            OperationSpec("item", children=("io",), repetition=(30, 40), duration=DurationSpec.uniform(2, 4)),
            OperationSpec("io", repetition=(1, 2), duration=DurationSpec.uniform(1, 3)),
        ),
        roots=("batch",),
        seed=21,
    )
    frame = scaling_study(workload, [50, 100, 200])

    assert list(frame["traces"]) == [50, 100, 200]
    assert frame["events"].iloc[1] >= 10_000
    assert frame["inference_ms"].iloc[1] < 5_000
    assert (frame["time_ratio"].iloc[1:] < 4).all()
