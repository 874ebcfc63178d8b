"""
Timed k-Tail command line
mine, check, eval, gen and export commands over trace corpora and model files

Exit codes: 0 ok, 1 input error, 2 configuration or model error,
3 at least one trace rejected by `check`.
"""

import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, NoReturn, Optional

import click

from evaluation_harness import (
    EvaluationError,
    absolute_clock_comparison,
    kfold_evaluate,
    portion_summary,
    subset_study,
)
from guard_policies import (
    PolicyConfig,
    PolicyError,
    PolicyKind,
    parse_config_list,
    policy_config_from_id,
)
from timed_automaton import (
    AutomatonError,
    MalformedTraceError,
    ModelFormatError,
    accepts,
    load_model,
    save_model,
    to_dot,
    write_dot,
)
from timed_trace import TraceError, format_corpus, load_corpus, write_corpus
from tkt_miner import ConfigurationError, MiningError, create_miner
from tkt_settings import load_settings, setup_logging
from workload_generator import (
    AnomalyError,
    WorkloadError,
    generate_anomalous_corpus,
    generate_corpus,
    load_workload,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_CONFIG_ERROR = 2
EXIT_REJECTED = 3


def _fail(message: str, code: int) -> NoReturn:
    click.echo(f"Error: {message}", err=True)
    sys.exit(code)


def _resolve_policy(
    settings: Dict[str, Any],
    config_id: Optional[str],
    policy: Optional[str],
    param: Optional[str],
    absolute: Optional[str],
) -> PolicyConfig:
    """--policy/--param/--absolute describe a custom policy; otherwise a matrix id is used"""
    try:
        if policy is not None:
            if config_id is not None:
                raise PolicyError("use either --config or --policy, not both")
            if param is None:
                raise PolicyError("--policy needs --param")
            return PolicyConfig(PolicyKind(policy), param, absolute != "off")
        if param is not None:
            raise PolicyError("--param needs --policy")
        config = policy_config_from_id(config_id or settings["guards"]["config_id"])
        if absolute is not None and (absolute == "on") != config.absolute_guards:
            raise PolicyError(f"--absolute {absolute} contradicts configuration {config.label}")
        return config
    except PolicyError as e:
        _fail(str(e), EXIT_CONFIG_ERROR)


def policy_options(func):
    options = [
        click.option("--config", "config_id", default=None, help="Configuration id (M1..M16, G1..G4)"),
        click.option("--policy", type=click.Choice([p.value for p in PolicyKind]), default=None, help="Custom guard policy"),
        click.option("--param", default=None, help="Epsilon (minmax) or gamma (gamma)"),
        click.option("--absolute", type=click.Choice(["on", "off"]), default=None, help="Keep absolute-clock guards"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@click.group()
@click.option("--settings", "settings_path", default=None, help="Settings file (default: config.yaml)")
@click.option("--log-level", default=None, help="Override the configured log level")
@click.pass_context
def cli(ctx, settings_path, log_level):
    """Timed k-Tail: mine timed automata from begin/end traces"""
    settings = load_settings(settings_path)
    setup_logging(settings, log_level)
    ctx.obj = settings


@cli.command()
@click.argument("corpus", type=click.Path())
@click.option("-o", "--output", "model_out", required=True, type=click.Path(), help="Model file to write")
@click.option("--k", type=int, default=None, help="kFuture length (default 2)")
@click.option("--dump-stages", is_flag=True, default=False, help="Also write initial/merged/refined automata")
@policy_options
@click.pass_obj
def mine(settings, corpus, model_out, k, dump_stages, config_id, policy, param, absolute):
    """Mine a timed automaton from a trace corpus"""
    policy_config = _resolve_policy(settings, config_id, policy, param, absolute)
    if k is not None:
        settings["mining"]["k"] = k
    try:
        miner = create_miner(settings, policy_config, keep_stages=dump_stages or None)
    except ConfigurationError as e:
        _fail(str(e), EXIT_CONFIG_ERROR)

    try:
        traces = load_corpus(corpus)
        result = miner.mine(traces)
    except (TraceError, MiningError) as e:
        _fail(f"{corpus}: {e}", EXIT_INPUT_ERROR)

    save_model(result.model, model_out)
    out = Path(model_out)
    for stage, automaton in result.stages.items():
        stage_path = out.with_name(f"{out.stem}.{stage}{out.suffix}")
        save_model(automaton, stage_path)
        click.echo(f"stage {stage}: {stage_path}")
    for key, value in result.summary().items():
        click.echo(f"{key}: {value}")


@cli.command()
@click.argument("model_path", type=click.Path())
@click.argument("traces_path", type=click.Path())
@click.option("--no-absolute", is_flag=True, default=False, help="Ignore absolute-clock guards")
@click.option("--allow-open", is_flag=True, default=False, help="Accept traces with operations still running")
@click.pass_obj
def check(settings, model_path, traces_path, no_absolute, allow_open):
    """Print ACCEPT or REJECT <first failure> for every trace"""
    try:
        model = load_model(model_path)
    except ModelFormatError as e:
        _fail(f"{model_path}: {e}", EXIT_CONFIG_ERROR)
    try:
        traces = load_corpus(traces_path, allow_open=allow_open)
    except TraceError as e:
        _fail(f"{traces_path}: {e}", EXIT_INPUT_ERROR)

    rejected = 0
    for trace in traces:
        try:
            result = accepts(model, trace, check_absolute=not no_absolute, allow_open=allow_open)
            verdict = "ACCEPT" if result.accepted else f"REJECT {result.failure}"
        except MalformedTraceError as e:
            verdict = f"REJECT malformed trace: {e}"
        if not verdict.startswith("ACCEPT"):
            rejected += 1
        click.echo(verdict)

    logger.info(f"{len(traces) - rejected} of {len(traces)} traces accepted")
    if rejected:
        sys.exit(EXIT_REJECTED)


def _parse_fractions(text: str) -> List[float]:
    try:
        return [float(token) for token in text.split(",") if token.strip()]
    except ValueError as e:
        raise EvaluationError(f"invalid fraction list {text!r}") from e


@cli.command("eval")
@click.argument("valid_path", type=click.Path())
@click.option("--invalid", "invalid_path", type=click.Path(), default=None, help="Corpus of anomalous traces")
@click.option("--configs", "config_list", default=None, help="Comma separated ids, e.g. M1,M16,G1")
@click.option("-o", "--report", "report_out", type=click.Path(), default=None, help="Long-format CSV report")
@click.option("--wide", "wide_out", type=click.Path(), default=None, help="Per-row CSV for plotting")
@click.option("--folds", type=int, default=None)
@click.option("--repetitions", type=int, default=None)
@click.option("--extractions", type=int, default=None)
@click.option("--fractions", default=None, help="Training fractions, e.g. 0.1,0.5,1.0")
@click.option("--seed", type=int, default=None)
@click.option("--k", type=int, default=None)
@click.option("--n-jobs", type=int, default=None)
@click.option("--no-timing", is_flag=True, default=False, help="Leave inference time out of the CSV")
@click.pass_obj
def evaluate(
    settings, valid_path, invalid_path, config_list, report_out, wide_out,
    folds, repetitions, extractions, fractions, seed, k, n_jobs, no_timing,
):
    """Cross-validate guard configurations on valid and anomalous corpora"""
    options = settings["evaluation"]
    folds = folds if folds is not None else options["folds"]
    repetitions = repetitions if repetitions is not None else options["repetitions"]
    extractions = extractions if extractions is not None else options["extractions"]
    seed = seed if seed is not None else options["seed"]
    n_jobs = n_jobs if n_jobs is not None else options["n_jobs"]
    k = k if k is not None else settings["mining"]["k"]

    try:
        configs = parse_config_list(config_list or settings["guards"]["config_id"])
        fraction_list = _parse_fractions(fractions) if fractions else [float(f) for f in options["fractions"]]
    except (PolicyError, EvaluationError) as e:
        _fail(str(e), EXIT_CONFIG_ERROR)

    try:
        valid = load_corpus(valid_path)
        invalid = load_corpus(invalid_path) if invalid_path else []
    except TraceError as e:
        _fail(str(e), EXIT_INPUT_ERROR)

    try:
        if fraction_list == [1.0]:
            report = kfold_evaluate(valid, invalid, configs, folds, repetitions, seed, k, n_jobs)
        else:
            report = subset_study(
                valid, invalid, configs, fraction_list, extractions, folds, repetitions, seed, k, n_jobs
            )
    except ConfigurationError as e:
        _fail(str(e), EXIT_CONFIG_ERROR)
    except (EvaluationError, MiningError) as e:
        _fail(str(e), EXIT_INPUT_ERROR)

    click.echo(report.summary_table())
    if len(fraction_list) > 1:
        click.echo(portion_summary(report).to_string(index=False))
    comparison = absolute_clock_comparison(report)
    if not comparison.empty:
        click.echo(comparison.to_string(index=False))
    if report_out:
        report.write_csv(report_out, include_timing=not no_timing)
    if wide_out:
        report.to_frame().to_csv(wide_out, index=False, float_format="%.6f")


@cli.command()
@click.argument("spec_path", required=False, type=click.Path())
@click.option("--spec", "spec_option", type=click.Path(), default=None, help="Workload file")
@click.option("-n", "count", type=int, default=None, help="Number of traces")
@click.option("--seed", type=int, default=None, help="Override the workload seed")
@click.option("--anomalous", is_flag=True, default=False, help="Inject the file's anomaly into every trace")
@click.option("-o", "--output", type=click.Path(), default=None, help="Corpus file (default: stdout)")
@click.pass_obj
def gen(settings, spec_path, spec_option, count, seed, anomalous, output):
    """Generate a synthetic corpus from a workload file, given as --spec or positionally"""
    if spec_path and spec_option and spec_path != spec_option:
        _fail(f"two workload files given: {spec_path} and {spec_option}", EXIT_CONFIG_ERROR)
    spec_path = spec_option or spec_path
    if not spec_path:
        _fail("no workload file given, use --spec", EXIT_CONFIG_ERROR)
    count = count if count is not None else settings["generation"]["traces"]
    try:
        workload, anomaly = load_workload(spec_path)
        if anomalous:
            if anomaly is None:
                raise AnomalyError(f"{spec_path} has no anomaly section")
            traces = generate_anomalous_corpus(workload, anomaly, count, seed)
        else:
            traces = generate_corpus(workload, count, seed)
    except (WorkloadError, AnomalyError) as e:
        _fail(str(e), EXIT_CONFIG_ERROR)

    if output:
        write_corpus(output, traces)
    else:
        click.echo(format_corpus(traces), nl=False)


@cli.command()
@click.argument("model_path", type=click.Path())
@click.option("-o", "--output", type=click.Path(), default=None, help="DOT file (default: stdout)")
def export(model_path, output):
    """Export a model as a Graphviz digraph"""
    try:
        model = load_model(model_path)
    except AutomatonError as e:
        _fail(f"{model_path}: {e}", EXIT_CONFIG_ERROR)
    if output:
        write_dot(model, output)
    else:
        click.echo(to_dot(model), nl=False)


def main():
    cli()


if __name__ == "__main__":
    main()
