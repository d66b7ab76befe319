"""
Command-line entry point for d2dce-lab.

    python -m app.main verify {gradients|properties|all}
    python -m app.main run {mog|instability|ablation} [--config PATH] [--override k=v ...] [--out DIR]
    python -m app.main version

Exit status: 0 on success, 1 when a check fails or a run errors,
2 on usage or configuration errors.
"""
import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from app import __version__
from app.config import get_settings
from app.core.exceptions import ConfigFileError, LabError
from app.core.logging_config import get_logger, setup_logging
from app.models.experiment import ExperimentConfig, ExperimentName, ExperimentReport
from app.services import experiments
from app.services.config_file import load_experiment_config
from app.services.report_writer import write_report
from app.services.verification import Suite, run_verification

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(prog="d2dce-lab", description="Data-to-data conditioning lab")
    parser.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="override LOG_LEVEL for this invocation")
    commands = parser.add_subparsers(dest="command", required=True)

    verify = commands.add_parser("verify", help="run gradient and property checks")
    verify.add_argument("suite", choices=[s.value for s in Suite])

    run = commands.add_parser("run", help="run an experiment and write its report")
    run.add_argument("experiment", choices=[e.value for e in ExperimentName])
    run.add_argument("--config", type=Path, default=None, help="key = value config file")
    run.add_argument("--override", action="extend", nargs="+", default=[], metavar="KEY=VALUE",
                     help="config overrides applied after the file")
    run.add_argument("--out", type=Path, default=Path(settings.default_out_dir),
                     help="output directory")

    commands.add_parser("version", help="print the version")
    return parser


def cmd_verify(suite: str) -> int:
    report = run_verification(Suite(suite))
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_FAILED


def execute_experiment(config: ExperimentConfig, checkpoint_dir: Optional[Path] = None) -> ExperimentReport:
    if config.experiment is ExperimentName.MOG:
        return experiments.run_mog_experiment(config.options.method, config.mog, config.run,
                                              config.options, checkpoint_dir=checkpoint_dir)
    if config.experiment is ExperimentName.INSTABILITY:
        return experiments.run_instability_experiment(config.options, config.run,
                                                      checkpoint_dir=checkpoint_dir)
    return experiments.run_masking_ablation(config.options, config.mog, config.run,
                                            checkpoint_dir=checkpoint_dir)


def cmd_run(experiment: str, config_path: Optional[Path], overrides: Sequence[str], out_dir: Path) -> int:
    config = load_experiment_config(ExperimentName(experiment), config_path, overrides)
    checkpoint_dir = out_dir / "checkpoints" if config.run.save_checkpoint else None
    report = execute_experiment(config, checkpoint_dir)
    for path in write_report(report, out_dir, config):
        print(path)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE

    setup_logging(args.log_level)
    try:
        if args.command == "version":
            print(f"{get_settings().app_name} {__version__}")
            return EXIT_OK
        if args.command == "verify":
            return cmd_verify(args.suite)
        return cmd_run(args.experiment, args.config, args.override, args.out)
    except ConfigFileError as exc:
        logger.error(f"Configuration error: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LabError, OSError) as exc:
        logger.error(f"{args.command} failed: {exc}")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
