"""Command-line entry point: ``sglab <verb> [--config FILE] [--set key=value ...]``.

Verbs: train, sample, eval, sweep, oracle, figures, echo.
Exit status: 0 success, 2 configuration error, 3 missing checkpoint or
failed experiment, 4 file-system error.
"""
from __future__ import annotations

import argparse
import json
import sys

from . import experiments
from .config import OUTPUT_ROOT_ENV, ConfigError, parse_config
from .eval.fokker_planck import FokkerPlanckError
from .nn.checkpoint import CheckpointError
from .nn.train import TrainingDiverged
from .sampler import SamplerError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN = 3
EXIT_IO = 4

VERBS = {
    "train": experiments.run_train,
    "sample": experiments.run_sample,
    "eval": experiments.run_eval,
    "sweep": experiments.run_sweep,
    "oracle": experiments.run_oracle,
    "figures": experiments.run_figures,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sglab", description="Self-guided diffusion toy experiments.",
                                epilog=f"Set {OUTPUT_ROOT_ENV} to prefix relative output directories.")
    p.add_argument("verb", choices=[*VERBS, "echo"], help="what to run; 'echo' prints the effective config")
    p.add_argument("--config", "-c", help="flat key = value config file")
    p.add_argument("--set", "-s", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    return p


def run_command(verb: str, cfg) -> object:
    return VERBS[verb](cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"sglab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.verb == "echo":
        sys.stdout.write(cfg.echo())
        return EXIT_OK
    try:
        result = run_command(args.verb, cfg)
    except ConfigError as exc:
        print(f"sglab: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (experiments.ExperimentError, CheckpointError, SamplerError, FokkerPlanckError, TrainingDiverged, ValueError) as exc:
        print(f"sglab {args.verb}: {exc}", file=sys.stderr)
        return EXIT_RUN
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"sglab {args.verb}: {exc.strerror or exc}{where}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(result, default=str, sort_keys=True) if not isinstance(result, list) else
          "\n".join(json.dumps(r, sort_keys=True) for r in result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
