"""Command line entry point ``tlvar``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""
import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from ..exceptions import ArgumentError, ConfigError, DataError, TLVARError
from ..tensor import matricize
from .experiments import (ExperimentConfig, run_fit, run_forecast, run_select,
                          run_simulation, write_results)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
VERB_KINDS = {
    "simulate": ("sim1", "sim2", "sim3"),
    "forecast": ("forecast",),
    "fit": ("fit",),
    "select": ("select",),
}


class _Parser(argparse.ArgumentParser):
    # usage mistakes are configuration errors, not data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="tlvar", description="Transfer learning for VAR models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb, kinds in VERB_KINDS.items():
        p = sub.add_parser(verb)
        p.add_argument("--config", help="JSON experiment description")
        if verb == "simulate":
            p.add_argument("--experiment", choices=kinds,
                           help="run a built-in sweep with default settings")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--replications", type=int)
        p.add_argument("--threads", type=int, help="worker processes for replications")
    return parser


def _load_config(args, verb):
    if args.config:
        data = json.loads(Path(args.config).read_text(encoding="utf-8")) \
            if Path(args.config).is_file() else None
        if data is None:
            raise ConfigError(f"config file not found: {args.config}")
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    elif verb == "simulate" and args.experiment:
        data = {"experiment": args.experiment}
    else:
        raise ConfigError(f"{verb} needs --config" + (" or --experiment" if verb == "simulate"
                                                      else ""))
    if verb == "simulate" and args.experiment:
        data["experiment"] = args.experiment
    for key in ("seed", "out", "replications", "threads"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    cfg = ExperimentConfig.from_dict(data)
    if cfg.experiment not in VERB_KINDS[verb]:
        raise ConfigError(f"'{verb}' cannot run a {cfg.experiment} experiment")
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    return cfg


def _write_tensor(path, A):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in matricize(A, 1):
            w.writerow([format(float(v), ".17g") for v in row])


def _run(args):
    cfg = _load_config(args, args.verb)
    t = time.perf_counter()
    out = Path(cfg.out)
    if args.verb == "simulate":
        rows, failures = run_simulation(cfg)
        write_results(out, cfg, rows, failures, time.perf_counter() - t)
        print(f"{len(rows)} rows, {len(failures)} failures -> {out / 'results.csv'}")
    elif args.verb == "forecast":
        rows, failures = run_forecast(cfg)
        write_results(out, cfg, rows, failures, time.perf_counter() - t)
        for r in rows:
            if r.metric != "failures":
                print(f"{r.method:8s} {r.metric:6s} {r.value:.4f}")
    elif args.verb == "fit":
        tensors, failures = run_fit(cfg)
        out.mkdir(parents=True, exist_ok=True)
        for method, A in tensors.items():
            _write_tensor(out / f"coef_{method}.csv", A)
        (out / "manifest.json").write_text(json.dumps(
            {"config": cfg.to_dict(), "failures": failures,
             "shapes": {m: list(np.shape(A)) for m, A in tensors.items()}},
            indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        print(f"wrote {len(tensors)} coefficient files to {out}")
        if failures and not tensors:
            return EXIT_NUMERICAL
    else:
        best, table = run_select(cfg)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "validation.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["c", "rmsfe"])
            for c, score in table:
                w.writerow([format(c, ".17g"), format(score, ".17g")])
        print(f"selected c_S = {best:g}")
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (json.JSONDecodeError, ArgumentError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TLVARError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
