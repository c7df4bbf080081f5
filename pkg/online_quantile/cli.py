"""
Command-line interface: fit, predict, simulate and inspect.

Every subcommand returns an ExitCode; ``main`` maps library exceptions to
exit codes (1 usage, 2 data, 3 internal, 130 interrupted).
"""

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, TextIO, Union

from .checkpoint import inspect_checkpoint, load_checkpoint, read_document, save_checkpoint
from .ensemble import EnsembleConfig, EnsembleEstimator, load_ensemble, save_ensemble
from .errors import (
    CheckpointError,
    CheckpointMismatchError,
    ConfigError,
    DomainError,
    ExitCode,
    LayoutMismatchError,
    MalformedRecordError,
)
from .learner import EstimatorConfig, MiniBatch, Mode, OnlineQuantileEstimator, Sample
from .records import IngestStats, iter_query_points, iter_samples, write_predictions
from .config import (
    LabConfig,
    LearnerSettings,
    RunConfig,
    build_config,
    load_config_file,
    merge_settings,
    resolve_config_path,
)
from .simlab import (
    curve_slope,
    expected_rate,
    make_sobolev_truth,
    mean_log_error_curve,
    run_seed_sweep,
    write_curve_csv,
    write_reports_csv,
    write_run_manifest,
)

logger = logging.getLogger(__name__)

Learner = Union[OnlineQuantileEstimator, EnsembleEstimator]

_LEARNER_KEYS = (
    "tau", "R", "A", "s", "p", "mode", "batch_size", "seed",
    "replicates", "subset_fraction", "mask_scope", "include_intercept",
)
_DATA_ERRORS = (DomainError, MalformedRecordError, CheckpointError, LayoutMismatchError, FileNotFoundError)


def _print_summary(title: str, rows: Dict[str, Any], out: TextIO) -> None:
    print("=" * 60, file=out)
    print(title, file=out)
    print("=" * 60, file=out)
    for key, value in rows.items():
        print(f"{key}: {value}", file=out)


def _open_text(path: Optional[Path], default: TextIO):
    if path is None:
        return nullcontext(default)
    if not path.exists():
        raise FileNotFoundError(f"Input file not found: {path}")
    return open(path, "r", encoding="utf-8", newline="")


def _batches(samples: Iterable[Sample], size: int) -> Iterator[List[Sample]]:
    pending: List[Sample] = []
    for sample in samples:
        pending.append(sample)
        if len(pending) == size:
            yield pending
            pending = []
    if pending:
        yield pending


def _load_learner(path: Path, expected: Optional[EstimatorConfig]) -> Learner:
    if read_document(path).get("kind") == "ensemble":
        return load_ensemble(path, expected)
    return load_checkpoint(path, expected)


def _resume_learner(run: RunConfig, base: EstimatorConfig, ensemble: Optional[EnsembleConfig]) -> Learner:
    learner = _load_learner(run.checkpoint, base)
    resumed_ensemble = isinstance(learner, EnsembleEstimator)
    if resumed_ensemble != (ensemble is not None):
        raise CheckpointMismatchError(
            f"{run.checkpoint} holds {'an ensemble' if resumed_ensemble else 'a single learner'}, "
            f"the run asks for {'an ensemble' if ensemble is not None else 'a single learner'}"
        )
    if resumed_ensemble and learner.config.replicates_B != ensemble.replicates_B:
        raise CheckpointMismatchError(
            f"{run.checkpoint} has {learner.config.replicates_B} replicates, the run asks for {ensemble.replicates_B}"
        )
    logger.info(f"Resuming from {run.checkpoint} at t={learner.summary()['t']}")
    return learner


def _save(learner: Learner, path: Path) -> None:
    if isinstance(learner, EnsembleEstimator):
        save_ensemble(learner, path)
    else:
        save_checkpoint(learner, path)


def _step(learner: Learner, mode: Mode, batch: List[Sample]) -> None:
    if mode is Mode.SINGLE_SAMPLE:
        learner.partial_fit(batch[0])
    else:
        learner.partial_fit_batch(MiniBatch(batch))


def cmd_fit(run: RunConfig, out: Optional[TextIO] = None, stdin: Optional[TextIO] = None) -> ExitCode:
    """Stream training records through the learner and write checkpoints.

    Args:
        run: Validated run configuration
        out: Stream for the final summary
        stdin: Input stream used when run.input is unset

    Returns:
        ExitCode.SUCCESS

    Raises:
        MalformedRecordError: On a bad record in strict mode
        CheckpointMismatchError: When resuming under a different configuration
    """
    out = out or sys.stdout
    base = run.estimator_config()
    ensemble = run.ensemble_config(base)
    if run.resume:
        learner = _resume_learner(run, base, ensemble)
    elif ensemble is not None:
        learner = EnsembleEstimator(ensemble)
    else:
        learner = OnlineQuantileEstimator(base)

    stats = IngestStats()
    updates = 0
    with _open_text(run.input, stdin or sys.stdin) as stream:
        logger.info(f"Reading {run.input_format.value} records from {run.input or 'stdin'}")
        samples = (sample for _, sample in iter_samples(stream, run.input_format, run.p, run.strict, stats))
        for batch in _batches(samples, run.batch_size):
            _step(learner, run.mode, batch)
            updates += 1
            if run.checkpoint_every and updates % run.checkpoint_every == 0:
                _save(learner, run.checkpoint)

    if run.checkpoint is not None:
        _save(learner, run.checkpoint)
    if stats.skipped:
        logger.warning(f"Skipped {stats.skipped} malformed record(s); first: {stats.first_error}")

    summary = learner.summary()
    summary["accepted_records"] = stats.accepted
    summary["skipped_records"] = stats.skipped
    _print_summary("FIT SUMMARY", summary, out)
    return ExitCode.SUCCESS


def cmd_predict(checkpoint: Path, queries: Optional[Path], fmt: str = "csv", output: Optional[Path] = None,
                expected_config: Optional[EstimatorConfig] = None, out: Optional[TextIO] = None,
                stdin: Optional[TextIO] = None) -> ExitCode:
    """Write one prediction per query row.

    Predictions go to output (replaced only once every row succeeded) or to
    out. A query outside [0, 1]^p raises MalformedRecordError naming the row.
    """
    learner = _load_learner(Path(checkpoint), expected_config)
    p = learner.base.p if isinstance(learner, EnsembleEstimator) else learner.config.p
    with _open_text(queries, stdin or sys.stdin) as stream:
        predictions = (learner.predict(x) for _, x in iter_query_points(stream, fmt, p))
        if output is None:
            count = write_predictions(out or sys.stdout, predictions)
        else:
            output.parent.mkdir(parents=True, exist_ok=True)
            tmp = output.with_name(output.name + ".tmp")
            try:
                with open(tmp, "w", encoding="utf-8") as f:
                    count = write_predictions(f, predictions)
            except BaseException:
                tmp.unlink(missing_ok=True)
                raise
            tmp.replace(output)
    logger.info(f"Wrote {count} prediction(s) to {output or 'stdout'}")
    return ExitCode.SUCCESS


def cmd_simulate(lab: LabConfig, out: Optional[TextIO] = None) -> ExitCode:
    """Run the seed sweep and write per-seed CSVs, curve.csv and manifest.json."""
    out = out or sys.stdout
    config = lab.estimator_config()
    ensemble = lab.ensemble_config(config)
    model = make_sobolev_truth(
        p=lab.p,
        s=lab.s,
        Q=lab.Q,
        R=lab.truth_R if lab.truth_R is not None else lab.R,
        seed=lab.truth_seed,
        tau=lab.tau,
        noise=lab.noise_law(),
        intercept=lab.intercept,
        J_truth=lab.J_truth,
        decay_offset=lab.decay_offset,
    )
    runs = run_seed_sweep(
        config,
        model,
        lab.horizon,
        lab.seeds,
        batch_size=lab.batch_size,
        ensemble=ensemble,
        workers=lab.workers,
        timed=lab.timed,
    )

    output_dir = lab.output_dir
    output_dir.mkdir(parents=True, exist_ok=True)
    for seed, reports in zip(lab.seeds, runs):
        write_reports_csv(reports, output_dir / f"run_seed{seed}.csv")
    curve = mean_log_error_curve(runs)
    write_curve_csv(curve, output_dir / "curve.csv")

    try:
        slope = curve_slope(curve, lab.window)
    except ValueError as e:
        logger.warning(f"No rate slope fitted: {e}")
        slope = None
    write_run_manifest(
        output_dir / "manifest.json",
        config,
        model,
        lab.seeds,
        horizon=lab.horizon,
        batch_size=lab.batch_size,
        ensemble=ensemble.to_dict() if ensemble is not None else None,
        window=list(lab.window) if lab.window else None,
        slope=slope,
        expected_slope=expected_rate(lab.s),
    )
    logger.info(f"Simulation written to: {output_dir}")
    _print_summary(
        "SIMULATION SUMMARY",
        {
            "seeds": len(lab.seeds),
            "horizon": lab.horizon,
            "final_mean_log_error": curve[-1].mean_log_error if curve else None,
            "slope": slope,
            "expected_slope": expected_rate(lab.s),
            "output_dir": output_dir,
        },
        out,
    )
    return ExitCode.SUCCESS


def cmd_inspect(checkpoint: Path, out: Optional[TextIO] = None) -> ExitCode:
    """Print checkpoint metadata as JSON."""
    print(json.dumps(inspect_checkpoint(checkpoint), indent=2), file=out or sys.stdout)
    return ExitCode.SUCCESS


class _ArgumentParser(argparse.ArgumentParser):
    """ArgumentParser reporting usage errors as ConfigError instead of exiting."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", help="JSON config file (flags override its values)")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")
    parser.add_argument("--quiet", "-q", action="store_true", help="Suppress output except errors")


def _add_learner(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("learner")
    group.add_argument("--tau", type=float, help="Quantile level in (0, 1)")
    group.add_argument("--radius", "-R", dest="R", type=float, help="ℓ1 radius R")
    group.add_argument("--step-constant", "-A", dest="A", type=float,
                       help="Step-size constant A (default 1/(tau(1-tau)))")
    group.add_argument("--smoothness", "-s", dest="s", type=float, help="Smoothness s > 1/2")
    group.add_argument("--dims", "-p", dest="p", type=int, help="Number of covariates")
    group.add_argument("--mode", choices=[m.value for m in Mode], help="Update mode")
    group.add_argument("--batch-size", type=int, help="Samples per update in mini_batch mode")
    group.add_argument("--seed", type=int, help="Seed for randomized components")
    group.add_argument("--replicates", type=int, help="Run a random-coordinate ensemble of this size")
    group.add_argument("--subset-fraction", type=float, help="Share of coordinates each replicate moves")
    group.add_argument("--mask-scope", choices=["total", "per_block"], help="What the subset fraction counts")
    group.add_argument("--include-intercept", action="store_true", default=None,
                       help="Always move the intercept in ensemble replicates")


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="online-quantile",
        description="Online nonparametric additive quantile regression",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Fit the median from a CSV stream and checkpoint every 1000 updates
  online_quantile_cli.py fit -i data.csv --tau 0.5 -R 5 -s 2 -p 3 --checkpoint model.json --checkpoint-every 1000

  # Continue the same fit on new data
  online_quantile_cli.py fit -i more.csv --tau 0.5 -R 5 -s 2 -p 3 --checkpoint model.json --resume

  # Predict at query points
  online_quantile_cli.py predict model.json queries.csv -o predictions.txt

  # Rate experiment over 20 seeds
  online_quantile_cli.py simulate --output-dir ./lab --horizon 131072 --seeds $(seq 0 19) --workers 4
        """,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    fit = subparsers.add_parser("fit", help="Stream training records into a learner")
    _add_common(fit)
    _add_learner(fit)
    fit.add_argument("--input", "-i", help="Training records ('-' or unset for stdin)")
    fit.add_argument("--format", dest="input_format", choices=["csv", "jsonl"], help="Record format")
    fit.add_argument("--lenient", dest="strict", action="store_const", const=False,
                     help="Skip malformed records instead of aborting")
    fit.add_argument("--checkpoint", help="Checkpoint path")
    fit.add_argument("--checkpoint-every", type=int, help="Write the checkpoint every K updates")
    fit.add_argument("--resume", action="store_true", default=None, help="Continue from --checkpoint")

    predict = subparsers.add_parser("predict", help="Predict quantiles at query points")
    _add_common(predict)
    _add_learner(predict)
    predict.add_argument("checkpoint", help="Checkpoint or ensemble manifest")
    predict.add_argument("queries", help="Query file ('-' for stdin)")
    predict.add_argument("--format", dest="input_format", choices=["csv", "jsonl"], help="Query format")
    predict.add_argument("--output", "-o", help="Predictions file (default stdout)")

    simulate = subparsers.add_parser("simulate", help="Run synthetic rate experiments")
    _add_common(simulate)
    _add_learner(simulate)
    simulate.add_argument("--output-dir", "-o", dest="output_dir", help="Directory for reports")
    simulate.add_argument("--horizon", type=int, help="Samples per run")
    simulate.add_argument("--seeds", type=int, nargs="+", help="Data seeds, one run each")
    simulate.add_argument("--workers", type=int, help="Worker processes")
    simulate.add_argument("--window", type=int, nargs=2, metavar=("LO", "HI"), help="Sample-count window of the slope fit")
    simulate.add_argument("--sobolev-radius", "-Q", dest="Q", type=float, help="Sobolev radius of the truth")
    simulate.add_argument("--truth-radius", dest="truth_R", type=float, help="ℓ1 radius of the truth (default R)")
    simulate.add_argument("--noise", choices=["gaussian", "student_t", "uniform"], help="Noise law")
    simulate.add_argument("--sigma", type=float, help="Noise scale")
    simulate.add_argument("--df", type=float, help="Student-t degrees of freedom")
    simulate.add_argument("--J-truth", dest="J_truth", type=int, help="Coefficients per dimension of the truth")
    simulate.add_argument("--truth-seed", type=int, help="Seed of the truth coefficients")
    simulate.add_argument("--no-timing", dest="timed", action="store_const", const=False,
                          help="Report zero wall time (byte-reproducible CSVs)")

    inspect = subparsers.add_parser("inspect", help="Print checkpoint metadata")
    _add_common(inspect)
    inspect.add_argument("checkpoint", help="Checkpoint or ensemble manifest")
    return parser


_NOT_SETTINGS = {"command", "config", "verbose", "quiet", "checkpoint", "queries", "output"}
_COMMAND_SECTIONS = {
    "fit": ("estimator", "ensemble", "input"),
    "predict": ("estimator", "ensemble", "input"),
    "simulate": ("estimator", "ensemble", "lab"),
}


def _settings(args: argparse.Namespace, include: Sequence[str] = ()) -> Dict[str, Any]:
    path = resolve_config_path(args.config)
    file_values = load_config_file(path, _COMMAND_SECTIONS[args.command]) if path else {}
    flags = {k: v for k, v in vars(args).items() if k not in _NOT_SETTINGS or k in include}
    return merge_settings(file_values, flags)


def _expected_config(values: Dict[str, Any]) -> Optional[EstimatorConfig]:
    learner_values = {k: v for k, v in values.items() if k in _LEARNER_KEYS}
    if not learner_values:
        return None
    return build_config(LearnerSettings, learner_values).estimator_config()


def _dispatch(args: argparse.Namespace) -> ExitCode:
    if args.command == "inspect":
        return cmd_inspect(Path(args.checkpoint))
    if args.command == "fit":
        return cmd_fit(build_config(RunConfig, _settings(args, include=("checkpoint",))))
    if args.command == "predict":
        values = _settings(args)
        fmt = values.pop("input_format", None) or "csv"
        queries = None if args.queries == "-" else Path(args.queries)
        return cmd_predict(
            Path(args.checkpoint),
            queries,
            fmt=fmt,
            output=Path(args.output) if args.output else None,
            expected_config=_expected_config(values),
        )
    values = _settings(args)
    if "seeds" in values:
        values["seeds"] = tuple(values["seeds"])
    return cmd_simulate(build_config(LabConfig, values))


def _configure_logging(verbose: bool, quiet: bool) -> None:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    elif quiet:
        logging.getLogger().setLevel(logging.ERROR)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(argv)
        _configure_logging(args.verbose, args.quiet)
        return int(_dispatch(args))
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return int(ExitCode.INTERRUPTED)
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return int(ExitCode.USAGE)
    except _DATA_ERRORS as e:
        logger.error(f"Data error: {e}")
        return int(ExitCode.DATA)
    except ValueError as e:
        logger.error(f"Invalid parameters: {e}")
        return int(ExitCode.USAGE)
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        if args is not None and args.verbose:
            import traceback
            traceback.print_exc()
        return int(ExitCode.INTERNAL)
