import argparse
import os
import sys

from src.config_manager import ConfigManager
from src.errors import EXIT_OK, ToolkitError, exit_code_for
from src.logger import setup_logger
from src.pipeline import ExperimentPipeline, check_thresholds
from src.reporting import FORMATS, bundle_document

logger = setup_logger("CLI")


def _add_config_args(parser: argparse.ArgumentParser):
    parser.add_argument("config", help="Experiment config (JSON)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override a config field, dot notation allowed (e.g. noise.static_flip=0.02). Repeatable.")
    parser.add_argument("--output-dir", default=None, help="Override the config's output directory")


def parse_args(argv=None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(prog="shadowbench",
                                     description="Repeated-settings shadow estimation with blended detector tomography")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="Run an experiment and write its bundle(s)")
    _add_config_args(run_parser)
    run_parser.add_argument("--check", action="store_true", help="Fail with exit code 4 when thresholds are missed")

    compare_parser = subparsers.add_parser("compare", help="Paired CS vs LBCS comparison")
    compare_parser.add_argument("cs_config", help="CS experiment config")
    compare_parser.add_argument("lbcs_config", help="LBCS experiment config")
    compare_parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                                help="Override applied to both configs")
    compare_parser.add_argument("--out", default=None, help="Write the comparison table to this CSV")

    qdt_parser = subparsers.add_parser("qdt", help="Stand-alone detector tomography")
    _add_config_args(qdt_parser)

    monitor_parser = subparsers.add_parser("monitor", help="Per-job drift series from a bundle")
    monitor_parser.add_argument("bundle", help="Bundle directory")
    monitor_parser.add_argument("--qubit", type=int, default=0)
    monitor_parser.add_argument("--basis", choices=list("XYZ"), default="Z")
    monitor_parser.add_argument("--outcome", type=int, choices=[0, 1], default=0)
    monitor_parser.add_argument("--out", default=None, help="Write the series to this CSV")

    report_parser = subparsers.add_parser("report", help="Print a bundle's reports")
    report_parser.add_argument("bundle", help="Bundle directory")
    report_parser.add_argument("--format", default="csv", help=f"One of {', '.join(FORMATS)}")

    subparsers.add_parser("gui", help="Launch the Streamlit dashboard")
    return parser.parse_args(argv)


def _load(path: str, overrides, output_dir=None):
    config = ConfigManager(path).load_config(overrides)
    if output_dir:
        config = config.model_copy(update={"output_dir": output_dir})
    return config


def run_command(args: argparse.Namespace) -> int:
    pipeline = ExperimentPipeline()

    if args.command == "run":
        config = _load(args.config, args.set, args.output_dir)
        bundles = pipeline.run(config)
        for bundle in bundles:
            print(f"{bundle.directory}: " + ", ".join(
                f"{label} {r.mean:.6f} +/- {r.standard_error:.2e} (err {r.absolute_error:.2e})"
                for label, r in bundle.reports.items()))
            if args.check:
                check_thresholds(bundle, config)

    elif args.command == "compare":
        table = pipeline.compare_schemes(_load(args.cs_config, args.set), _load(args.lbcs_config, args.set),
                                         persist=True)
        print(table.to_string(index=False))
        if args.out:
            table.to_csv(args.out, index=False)

    elif args.command == "qdt":
        config = _load(args.config, args.set, args.output_dir)
        directory = os.path.join(config.output_dir, f"{config.label}_qdt")
        fits = pipeline.run_qdt(config, directory)
        for q, fit in enumerate(fits):
            flip = 1.0 - fit.measurements[2, 0, 0, 0].real
            print(f"qubit {q}: Z-basis 0->1 flip {flip:.5f}, converged={fit.converged}, iterations={fit.iterations}")
        print(f"Recovered POVMs written to {directory}")

    elif args.command == "monitor":
        series, consistency = pipeline.monitor(args.bundle, args.qubit, args.basis, args.outcome)
        out = args.out or os.path.join(args.bundle, f"monitor_q{args.qubit}_{args.basis}.csv")
        series.to_csv(out, index=False)
        print(consistency.to_string(index=False))
        print(f"{len(series)} jobs written to {out}")

    elif args.command == "report":
        sys.stdout.write(bundle_document(args.bundle, args.format))

    elif args.command == "gui":
        print("Launching ShadowBench dashboard...")
        return os.system("streamlit run gui_app.py")

    return EXIT_OK


def main(argv=None):
    args = parse_args(argv)
    try:
        code = run_command(args)
    except ToolkitError as e:
        logger.error(str(e))
        code = exit_code_for(e)
    sys.exit(code)


if __name__ == "__main__":
    main()
