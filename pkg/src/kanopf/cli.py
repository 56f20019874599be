"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numeric failure
(divergence/infeasibility), 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, DataFileError, DomainError, NumericError, ShapeError
from .pipeline import (cmd_compare, cmd_export_activations, cmd_gen_data, cmd_prune,
                       cmd_sweep, cmd_symbolic, cmd_train, load_config)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kanopf",
        description="Spline-network surrogate pipeline for stochastic OPF studies",
    )
    parser.add_argument("--verbose", action="store_true", help="log INFO to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, **files):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override the global seed")
        p.add_argument("--out", default=None, help="override the output directory")
        for flag, help_str in files.items():
            p.add_argument(f"--{flag.replace('_', '-')}", required=True, help=help_str)
        return p

    add("gen-data", "sample scenarios and solve the oracle into dataset files")
    add("train", "train the surrogate on existing datasets",
        train_data="training dataset csv", test_data="test dataset csv")
    add("sweep", "train across sample sizes and network shapes",
        train_data="training dataset csv", test_data="test dataset csv")
    add("compare", "surrogate vs oracle distributions on a held-out dataset",
        model="model file", test_data="held-out dataset csv")
    p = add("export-activations", "per-edge activation tables before/after training",
            model="model file", data="dataset csv defining input ranges")
    p.add_argument("--layer", type=int, default=0)
    add("symbolic", "fit closed-form candidates to every edge activation",
        model="model file", data="dataset csv defining input ranges")
    p = add("prune", "drop low-importance edges and save the pruned model",
            model="model file", data="dataset csv defining input ranges")
    p.add_argument("--threshold", type=float, required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            from .pipeline import parse_config
            import json
            with open(args.config, encoding="utf-8") as fh:
                raw = json.load(fh)
            raw["seed"] = args.seed
            config = parse_config(raw)
        if args.out is not None:
            config.out_dir = args.out

        if args.command == "gen-data":
            paths = cmd_gen_data(config)
            print(paths["train"])
            print(paths["test"])
        elif args.command == "train":
            model_path, curve_path, report = cmd_train(config, args.train_data, args.test_data)
            print(model_path)
            print(curve_path)
        elif args.command == "sweep":
            path, _ = cmd_sweep(config, args.train_data, args.test_data)
            print(path)
        elif args.command == "compare":
            report_path, _ = cmd_compare(config, args.model, args.test_data)
            print(report_path)
        elif args.command == "export-activations":
            for path in cmd_export_activations(config, args.model, args.data, args.layer):
                print(path)
        elif args.command == "symbolic":
            print(cmd_symbolic(config, args.model, args.data))
        elif args.command == "prune":
            model_path, report_path = cmd_prune(config, args.model, args.data, args.threshold)
            print(model_path)
            print(report_path)
        return EXIT_OK
    except (ConfigError, DomainError, ShapeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataFileError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    raise SystemExit(main())
