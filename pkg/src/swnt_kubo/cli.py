"""Command line entry point: ``swnt-kubo <command> --config run.toml``."""
import argparse
import json
import logging
import sys
import warnings

from .config import ConfigError, load_config
from .errors import ValidationError
from .runner import run_jobs

COMMANDS = {
    "spectrum": ("spectrum",),
    "sweep": ("sweep",),
    "lines": ("lines",),
    "oracle": ("oracle",),
    "converge": ("convergence",),
    "run": None,
}

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2


def build_parser():
    parser = argparse.ArgumentParser(
        prog="swnt-kubo",
        description="Kubo optical conductivity of interacting electrons on a nanotube ring.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "spectrum": "eigenvalues and dipole weights (spectrum.csv)",
        "sweep": "leading conductivity on the omega grid (sweep.csv, sweep_beta.csv)",
        "lines": "delta-peak line spectrum (lines.csv)",
        "oracle": "time-domain cross-check (compare.csv)",
        "converge": "truncation and time-step drift study (convergence*.csv)",
        "run": "every job listed under [run] jobs",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="TOML configuration file")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. model.lambda=0.5 (repeatable)")
        p.add_argument("--output-dir", help="output directory (beats config and environment)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.override)
    jobs = COMMANDS[args.command]
    if jobs is not None:
        overrides.append("run.jobs=[" + ", ".join(f'"{j}"' for j in jobs) + "]")
    try:
        cfg = load_config(args.config, overrides)
    except (ConfigError, ValidationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.output_dir:
        from dataclasses import replace
        from pathlib import Path
        cfg = replace(cfg, output_dir=Path(args.output_dir))
    with warnings.catch_warnings():
        if not args.verbose:
            warnings.simplefilter("ignore")
        manifest = run_jobs(cfg)
    for name, info in manifest.jobs.items():
        status = info["status"]
        extra = info.get("error", "")
        print(f"{name}: {status}{' - ' + extra if extra else ''}")
    print(f"manifest: {cfg.output_dir / 'manifest.json'}")
    if args.verbose:
        print(json.dumps(manifest.diagnostics, indent=2, sort_keys=True, default=str))
    return manifest.exit_code()


if __name__ == "__main__":
    sys.exit(main())
