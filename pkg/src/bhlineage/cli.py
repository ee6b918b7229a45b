"""Command line entry point: ``bhlineage <command> [--config PATH] ...``.

Exit status: 0 pass, 1 statistical/acceptance failure, 2 configuration
error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import acceptance, experiment
from .errors import ConfigError, DomainError, LineageError, NumericsError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERICS = 0, 1, 2, 3

log = logging.getLogger("bhlineage")


def _load(args) -> experiment.ExperimentConfig:
    if args.config is None:
        raise ConfigError(f"'{args.command}' needs --config")
    cfg = experiment.ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.base_seed = args.seed
    return cfg


def _out(args, cfg=None) -> Path:
    if args.out is not None:
        return Path(args.out)
    return Path(cfg.out_dir if cfg is not None else "selftest")


def cmd_genfun(args) -> int:
    cfg = _load(args)
    table = experiment.run_genfun(cfg, _out(args, cfg))
    print(f"wrote {len(table.t_grid)}x{len(table.s_grid)} table ({table.method})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    summary = experiment.run_simulate(cfg, _out(args, cfg), args.threads)
    print(f"{summary['completed']} trees, survival {summary['survival_fraction']:.4f}, "
          f"{summary['records']} lineage records")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _load(args)
    path = experiment.run_predict(cfg, _out(args, cfg))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args)
    report = experiment.run_compare(cfg, _out(args, cfg), args.threads)
    for t in report["tests"]:
        p = t["p_value"]
        stat = f"p={p:.4g}" if p is not None else f"stat={t['statistic']:.4g}"
        print(f"[{t['verdict']}] {t['test']}: {stat}")
    return EXIT_OK if report["verdict"] == "PASS" else EXIT_FAIL


def cmd_enumerate(args) -> int:
    cfg = _load(args)
    out = experiment.run_enumerate(cfg, _out(args, cfg))
    print(f"{out['trees']} genealogies, extinction {out['extinction']:.6g}, "
          f"total mass {out['total_uniform']:.15g}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    only = set(args.only) if args.only else None
    results = acceptance.run_selftest(_out(args), seed=args.seed, threads=args.threads,
                                      only=only)
    failed = [r.id for r in results if not r.ok]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed"
          + (f"; failing: {', '.join(failed)}" if failed else ""))
    return EXIT_OK if not failed else EXIT_FAIL


COMMANDS = {
    "genfun": (cmd_genfun, "solve the generating-function equation on a (t, s) grid"),
    "simulate": (cmd_simulate, "simulate trees and sample one lineage record per tree"),
    "predict": (cmd_predict, "tabulate rate bias B(t, T, l) and the mark density"),
    "compare": (cmd_compare, "simulate, then test the samples against theory"),
    "enumerate": (cmd_enumerate, "exact laws for unit lifetimes by enumerating genealogies"),
    "selftest": (cmd_selftest, "run the acceptance criteria"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bhlineage", description="Ancestral lineages in Bellman-Harris branching processes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out", type=Path, help="output directory")
        if name == "selftest":
            p.add_argument("--only", nargs="+", metavar="AC-n",
                           choices=list(acceptance.CRITERIA), help="subset of criteria")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command][0](args)
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericsError as exc:
        print(f"numerics error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except LineageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
