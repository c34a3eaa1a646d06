"""Command-line experiment runner.

Subcommands: meta-train, main, eval (each taking a config file), report
(taking an output directory), and validate (config check only). Exit
codes: 0 success, 1 configuration or usage error, 2 numeric failure
mid-training.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import ConfigurationError, NumericError, UsageError
from .runner import Runner, report


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hemirl",
        description="Desk-scale bi-hemispheric RL experiment pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    def add_config_command(name: str, help_text: str):
        c = sub.add_parser(name, help=help_text)
        c.add_argument("config", help="path to the experiment config (INI)")
        c.add_argument("--only", default="",
                       help="run only cells whose id contains this substring")
        return c

    add_config_command("meta-train",
                       "meta-train the right-hemisphere networks (stage 1)")
    add_config_command("main",
                       "train bi-hemispheric and left-only agents per task (stage 2)")
    add_config_command("eval",
                       "evaluate non-learning baselines on sampled sub-tasks")
    r = sub.add_parser("report", help="summary CSVs and SVG figures from artifacts")
    r.add_argument("output_dir", help="experiment output directory")
    v = sub.add_parser("validate", help="parse and validate a config, run nothing")
    v.add_argument("config", help="path to the experiment config (INI)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(f"config ok: hash {cfg.config_hash()[:12]}, "
                  f"{len(cfg.main.tasks)} tasks, {cfg.seeds} seeds")
            return 0
        if args.command == "report":
            return report(args.output_dir)
        cfg = load_config(args.config)
        runner = Runner(cfg, only=args.only)
        if args.command == "meta-train":
            runner.run_meta()
        elif args.command == "main":
            runner.run_main()
        elif args.command == "eval":
            runner.run_eval()
        return 0
    except (ConfigurationError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
