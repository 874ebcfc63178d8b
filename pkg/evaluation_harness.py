"""
Evaluation Harness
K-fold cross-validation of mined models over the guard configuration matrix:
sensitivity, specificity, harmonic mean, inference time and model size, plus
training-subset, absolute-clock and scaling studies
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from prettytable import PrettyTable

from guard_policies import CONFIGURATION_MATRIX, PolicyConfig
from timed_automaton import AutomatonError, TimedAutomaton, accepts
from timed_trace import TimedTrace, count_events
from tkt_miner import MinerConfig, TimedKTailMiner
from workload_generator import WorkloadSpec, generate_corpus

logger = logging.getLogger(__name__)

METRICS = (
    "sensitivity",
    "specificity",
    "harmonic_mean",
    "inference_ms",
    "events_processed",
    "states",
    "transitions",
    "clocks",
)
# Columns that do not depend on wall-clock time
STABLE_METRICS = tuple(m for m in METRICS if m != "inference_ms")

PORTION_BINS = (0.0, 0.3, 0.7, 1.0)
PORTION_LABELS = ("small", "intermediate", "high")


class EvaluationError(Exception):
    """Evaluation that cannot be carried out on the given corpus"""


def harmonic_mean(sensitivity: float, specificity: Optional[float]) -> Optional[float]:
    if specificity is None:
        return None
    total = sensitivity + specificity
    return 2 * sensitivity * specificity / total if total > 0 else 0.0


@dataclass
class FoldOutcome:
    """One configuration evaluated on one fold"""

    config_id: str
    sensitivity: float
    specificity: Optional[float]
    inference_ms: float
    events_processed: int
    states: int
    transitions: int
    clocks: int


@dataclass
class EvaluationRow:
    """Averages over every fold, repetition and extraction of one (config, fraction)"""

    config_id: str
    training_fraction: float
    sensitivity: float
    specificity: Optional[float]
    harmonic_mean: Optional[float]
    inference_ms: float
    events_processed: float
    states: float
    transitions: float
    clocks: float
    runs: int


@dataclass
class EvaluationReport:
    rows: List[EvaluationRow] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def extend(self, other: "EvaluationReport") -> None:
        self.rows.extend(other.rows)

    def row(self, config_id: str, training_fraction: float = 1.0) -> EvaluationRow:
        for row in self.rows:
            if row.config_id == config_id and math.isclose(row.training_fraction, training_fraction):
                return row
        raise KeyError(f"no row for {config_id} at fraction {training_fraction}")

    def to_frame(self) -> pd.DataFrame:
        """Wide table, one row per (config, fraction); convenient for plotting"""
        columns = [f for f in EvaluationRow.__dataclass_fields__]
        frame = pd.DataFrame([asdict(row) for row in self.rows], columns=columns)
        frame[list(METRICS)] = frame[list(METRICS)].astype(float)
        return frame

    def to_long_frame(self, include_timing: bool = True) -> pd.DataFrame:
        """Columns config_id, training_fraction, metric, value; undefined metrics are dropped"""
        metrics = METRICS if include_timing else STABLE_METRICS
        wide = self.to_frame()
        long = wide.melt(
            id_vars=["config_id", "training_fraction"],
            value_vars=list(metrics),
            var_name="metric",
            value_name="value",
        )
        return long.dropna(subset=["value"]).reset_index(drop=True)

    def write_csv(self, path: Union[str, Path], include_timing: bool = True) -> None:
        self.to_long_frame(include_timing).to_csv(path, index=False, float_format="%.6f")
        logger.info(f"Report written to {path} ({len(self.rows)} rows)")

    def summary_table(self) -> str:
        table = PrettyTable()
        table.field_names = ["config", "fraction", "sens", "spec", "hmean", "ms", "events", "states", "trans", "clocks"]
        for row in self.rows:
            table.add_row(
                [
                    row.config_id,
                    f"{row.training_fraction:.2f}",
                    f"{row.sensitivity:.3f}",
                    "-" if row.specificity is None else f"{row.specificity:.3f}",
                    "-" if row.harmonic_mean is None else f"{row.harmonic_mean:.3f}",
                    f"{row.inference_ms:.1f}",
                    f"{row.events_processed:.0f}",
                    f"{row.states:.1f}",
                    f"{row.transitions:.1f}",
                    f"{row.clocks:.1f}",
                ]
            )
        return table.get_string()


def _accepted(model: TimedAutomaton, trace: TimedTrace) -> bool:
    # A trace the checker refuses to process counts as rejected
    try:
        return accepts(model, trace).accepted
    except AutomatonError:
        return False


def score_model(
    model: TimedAutomaton, valid: Sequence[TimedTrace], invalid: Sequence[TimedTrace]
) -> Tuple[float, Optional[float]]:
    """Sensitivity over `valid` and specificity over `invalid` (None when it is empty)"""
    if not valid:
        raise EvaluationError("sensitivity needs at least one valid trace")
    sensitivity = sum(_accepted(model, t) for t in valid) / len(valid)
    specificity = None
    if invalid:
        specificity = sum(not _accepted(model, t) for t in invalid) / len(invalid)
    return sensitivity, specificity


def _evaluate_fold(
    training: List[TimedTrace],
    held_out: List[TimedTrace],
    invalid: List[TimedTrace],
    configs: Sequence[PolicyConfig],
    miner_config: MinerConfig,
) -> List[FoldOutcome]:
    """Mine the structure once, then apply every configuration's policy to it"""
    miner = TimedKTailMiner(miner_config)
    refined, structure_ms, _ = miner.infer_structure(training)
    events = count_events(training)
    outcomes = []
    for config in configs:
        model, policy_ms = miner.generalize(refined, config)
        sensitivity, specificity = score_model(model, held_out, invalid)
        size = model.summary()
        outcomes.append(
            FoldOutcome(
                config_id=config.label,
                sensitivity=sensitivity,
                specificity=specificity,
                inference_ms=structure_ms + policy_ms,
                events_processed=events,
                states=size["states"],
                transitions=size["transitions"],
                clocks=size["clocks"],
            )
        )
    return outcomes


def partition_folds(n: int, folds: int, rng: np.random.Generator) -> List[List[int]]:
    """Shuffled partition of range(n); the remainder goes one per fold to the first folds"""
    order = rng.permutation(n)
    base, extra = divmod(n, folds)
    parts, start = [], 0
    for fold in range(folds):
        size = base + (1 if fold < extra else 0)
        parts.append(sorted(int(i) for i in order[start : start + size]))
        start += size
    return parts


def _collect_outcomes(
    valid: Sequence[TimedTrace],
    invalid: Sequence[TimedTrace],
    configs: Sequence[PolicyConfig],
    folds: int,
    repetitions: int,
    rng: np.random.Generator,
    miner_config: MinerConfig,
    n_jobs: int,
) -> List[FoldOutcome]:
    if folds < 2:
        raise EvaluationError(f"at least 2 folds are needed, got {folds}")
    if len(valid) < folds:
        raise EvaluationError(f"{len(valid)} valid traces cannot fill {folds} folds")
    if repetitions < 1:
        raise EvaluationError(f"repetitions must be at least 1, got {repetitions}")

    tasks = []
    for _ in range(repetitions):
        parts = partition_folds(len(valid), folds, rng)
        for held in parts:
            held_set = set(held)
            training = [t for i, t in enumerate(valid) if i not in held_set]
            tasks.append((training, [valid[i] for i in held], list(invalid)))

    results = Parallel(n_jobs=n_jobs)(
        delayed(_evaluate_fold)(training, held_out, bad, configs, miner_config)
        for training, held_out, bad in tasks
    )
    return [outcome for fold in results for outcome in fold]


def _aggregate(
    outcomes: Sequence[FoldOutcome], configs: Sequence[PolicyConfig], training_fraction: float
) -> EvaluationReport:
    report = EvaluationReport()
    for config in configs:
        mine = [o for o in outcomes if o.config_id == config.label]
        sensitivity = float(np.mean([o.sensitivity for o in mine]))
        specificity = None
        if mine[0].specificity is not None:
            specificity = float(np.mean([o.specificity for o in mine]))
        report.rows.append(
            EvaluationRow(
                config_id=config.label,
                training_fraction=training_fraction,
                sensitivity=sensitivity,
                specificity=specificity,
                harmonic_mean=harmonic_mean(sensitivity, specificity),
                inference_ms=float(np.mean([o.inference_ms for o in mine])),
                events_processed=float(np.mean([o.events_processed for o in mine])),
                states=float(np.mean([o.states for o in mine])),
                transitions=float(np.mean([o.transitions for o in mine])),
                clocks=float(np.mean([o.clocks for o in mine])),
                runs=len(mine),
            )
        )
    return report


def _check_configs(configs: Sequence[PolicyConfig]) -> None:
    if not configs:
        raise EvaluationError("no configurations to evaluate")
    labels = [config.label for config in configs]
    if len(set(labels)) != len(labels):
        raise EvaluationError(f"duplicate configurations in {', '.join(labels)}")


def kfold_evaluate(
    valid: Sequence[TimedTrace],
    invalid: Sequence[TimedTrace],
    configs: Sequence[PolicyConfig],
    folds: int = 10,
    repetitions: int = 1,
    seed: int = 0,
    k: int = 2,
    n_jobs: int = 1,
) -> EvaluationReport:
    """
    Sensitivity on held-out folds and specificity on every invalid trace,
    averaged over folds and repetitions. Specificity (and so the harmonic
    mean) is None when there are no invalid traces.
    """
    _check_configs(configs)
    logger.info(
        f"{folds}-fold evaluation x{repetitions}: {len(valid)} valid, "
        f"{len(invalid)} invalid traces, {len(configs)} configurations"
    )
    outcomes = _collect_outcomes(
        valid, invalid, configs, folds, repetitions,
        np.random.default_rng(seed), MinerConfig(k=k), n_jobs,
    )
    return _aggregate(outcomes, configs, 1.0)


def _subset_size(fraction: float, total: int) -> int:
    return math.floor(Fraction(str(fraction)) * total + Fraction(1, 2))


def subset_study(
    valid: Sequence[TimedTrace],
    invalid: Sequence[TimedTrace],
    configs: Sequence[PolicyConfig],
    fractions: Sequence[float],
    extractions: int = 10,
    folds: int = 10,
    repetitions: int = 1,
    seed: int = 0,
    k: int = 2,
    n_jobs: int = 1,
) -> EvaluationReport:
    """
    kfold_evaluate on random subsets of the valid traces, one report row per
    configuration and fraction, averaged over the extractions. Selected traces
    keep their original order; fraction 1.0 is the full set, evaluated once.
    """
    _check_configs(configs)
    if extractions < 1:
        raise EvaluationError(f"extractions must be at least 1, got {extractions}")
    for fraction in fractions:
        if not 0 < fraction <= 1:
            raise EvaluationError(f"training fraction {fraction} outside (0, 1]")
        size = _subset_size(fraction, len(valid))
        if size < folds:
            raise EvaluationError(
                f"fraction {fraction} of {len(valid)} traces leaves {size}, fewer than {folds} folds"
            )

    miner_config = MinerConfig(k=k)
    selection_rng = np.random.default_rng(seed)
    report = EvaluationReport()
    for fraction in fractions:
        fold_rng = np.random.default_rng(seed)
        if fraction == 1:
            subsets = [list(valid)]
        else:
            size = _subset_size(fraction, len(valid))
            subsets = [
                [valid[int(i)] for i in sorted(selection_rng.choice(len(valid), size, replace=False))]
                for _ in range(extractions)
            ]
        outcomes: List[FoldOutcome] = []
        for subset in subsets:
            outcomes.extend(
                _collect_outcomes(subset, invalid, configs, folds, repetitions, fold_rng, miner_config, n_jobs)
            )
        report.extend(_aggregate(outcomes, configs, float(fraction)))
        logger.info(f"Fraction {fraction:.2f}: {len(subsets)} extraction(s) evaluated")
    return report


def portion_summary(report: EvaluationReport) -> pd.DataFrame:
    """Mean metrics per configuration for small, intermediate and high training portions"""
    frame = report.to_frame()
    frame["portion"] = pd.cut(
        frame["training_fraction"], bins=list(PORTION_BINS), labels=list(PORTION_LABELS)
    )
    summary = (
        frame.groupby(["config_id", "portion"], observed=True, sort=False)[
            ["sensitivity", "specificity", "harmonic_mean"]
        ]
        .mean()
        .reset_index()
    )
    return summary


def absolute_clock_comparison(report: EvaluationReport) -> pd.DataFrame:
    """
    Pairs each matrix configuration keeping absolute-clock guards (odd id)
    with its twin dropping them (the next even id).
    """
    frame = report.to_frame()
    present = set(frame["config_id"])
    records = []
    for config_id in frame["config_id"].drop_duplicates():
        config = CONFIGURATION_MATRIX.get(config_id)
        if config is None or not config.absolute_guards:
            continue
        twin = f"{config_id[0]}{int(config_id[1:]) + 1}"
        if twin not in present:
            continue
        with_abs = frame[frame["config_id"] == config_id]
        without_abs = frame[frame["config_id"] == twin]
        records.append(
            {
                "pair": f"{config_id}/{twin}",
                "sensitivity_with": with_abs["sensitivity"].mean(),
                "sensitivity_without": without_abs["sensitivity"].mean(),
                "specificity_with": with_abs["specificity"].mean(),
                "specificity_without": without_abs["specificity"].mean(),
            }
        )
    columns = ["pair", "sensitivity_with", "sensitivity_without", "specificity_with", "specificity_without"]
    return pd.DataFrame(records, columns=columns)


def scaling_study(
    spec: WorkloadSpec,
    sizes: Sequence[int],
    policy_config: Optional[PolicyConfig] = None,
    k: int = 2,
    seed: Optional[int] = None,
) -> pd.DataFrame:
    """Inference time against corpus size; ratios are relative to the previous size"""
    miner = TimedKTailMiner(MinerConfig(k=k), policy_config)
    records: List[Dict[str, float]] = []
    for size in sizes:
        result = miner.mine(generate_corpus(spec, size, seed))
        records.append(
            {"traces": result.traces, "events": result.events, "inference_ms": result.elapsed_ms}
        )
    frame = pd.DataFrame(records, columns=["traces", "events", "inference_ms"])
    frame["event_ratio"] = frame["events"] / frame["events"].shift(1)
    frame["time_ratio"] = frame["inference_ms"] / frame["inference_ms"].shift(1)
    return frame
