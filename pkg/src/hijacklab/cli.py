"""Command-line entry point.

Subcommands map one-to-one onto the experiment surface: ``run`` executes a
scenario from a JSON config, ``validate-config`` parses without running,
``calibrate`` fits the defense thresholds, and ``export-features`` writes a
2-D feature projection for a trained checkpoint. Exit codes: 0 success,
2 configuration error, 3 runtime error. The environment variable
HIJACKLAB_OUTPUT_DIR overrides the configured output directory.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import data, experiments, models
from .experiments import ConfigError, DESK_ATTACK, ExperimentConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _defaults_epilog() -> str:
    cfg = ExperimentConfig(scenario="clean")
    lines = ["default configuration (override via the JSON config file):"]
    for section, obj in (("fl", cfg.fl), ("attack", cfg.attack), ("task", cfg.task)):
        pairs = ", ".join(f"{k}={v}" for k, v in asdict(obj).items())
        lines.append(f"  [{section}] {pairs}")
    lines.append(f"  hijack_round={cfg.hijack_round} seeds={list(cfg.seeds)}")
    lines.append(f"  alpha_grid={list(cfg.alpha_grid)}")
    lines.append(f"  hijack_round_grid={list(cfg.hijack_round_grid)}")
    lines.append(f"  class_count_grid={list(cfg.class_count_grid)} "
                 f"samples_per_class_grid={list(cfg.samples_per_class_grid)}")
    lines.append(f"  output_dir={cfg.output_dir} "
                 "(HIJACKLAB_OUTPUT_DIR overrides)")
    lines.append("  attack defaults above are the desk-scale values; the"
                 " reference settings (alpha=0.5, anchors 500@0.005, cloaks"
                 " 100@0.005) remain available via the config file.")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hijacklab",
        description="Desk-scale federated-learning model-hijacking laboratory.",
        epilog=_defaults_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario from a JSON config")
    run.add_argument("config", help="path to the experiment config file")

    validate = sub.add_parser("validate-config",
                              help="parse and validate a config, then exit")
    validate.add_argument("config", help="path to the experiment config file")

    calibrate = sub.add_parser(
        "calibrate", help="fit defense thresholds on the configured task")
    calibrate.add_argument("config", help="path to the experiment config file")

    export = sub.add_parser(
        "export-features",
        help="project a checkpoint's features for two sample groups to 2-D")
    export.add_argument("checkpoint", help="model checkpoint file")
    export.add_argument("datasets", nargs="+",
                        help="two or more dataset files; each becomes a group")
    export.add_argument("--output", default="features.csv",
                        help="destination CSV (default: %(default)s)")
    export.add_argument("--per-group", type=int, default=100,
                        help="samples per group (default: %(default)s)")
    return parser


def _cmd_run(args) -> int:
    cfg = experiments.parse_config(args.config)
    records = experiments.run_scenario(cfg)
    out = experiments.output_dir(cfg) / cfg.scenario
    print(f"{len(records)} records -> {out / 'metrics.csv'}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    cfg = experiments.parse_config(args.config)
    print(f"ok: scenario={cfg.scenario} seeds={list(cfg.seeds)}")
    return EXIT_OK


def _cmd_calibrate(args) -> int:
    cfg = experiments.parse_config(args.config)
    seed = cfg.seeds[0]
    _, _, anomaly, bit_depth, low, high = experiments.calibrate_defenses(cfg, seed)
    result = {"feature_anomaly_tau": anomaly.tau,
              "squeeze_bit_depth": bit_depth,
              "squeeze_threshold_low": low,
              "squeeze_threshold_high": high}
    out = experiments.output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "calibration.json"
    path.write_text(json.dumps(result, indent=2) + "\n")
    print(json.dumps(result, indent=2))
    print(f"written to {path}")
    return EXIT_OK


def _cmd_export(args) -> int:
    params = models.load_checkpoint(args.checkpoint)
    groups = {}
    for path in args.datasets:
        dataset = data.load_dataset(path)
        groups[Path(path).stem] = dataset.flat()[:args.per_group]
    rows = experiments.export_features(params, groups)
    Path(args.output).write_text(experiments.features_csv(rows))
    print(f"{len(rows)} points -> {args.output}")
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "validate-config": _cmd_validate,
             "calibrate": _cmd_calibrate, "export-features": _cmd_export}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
