"""Command line: ``tracepriv simulate | attack | compare | report``.

Exit status is 0 on success, 1 when a run is incorrect (an exposed set
differs from the oracle, an invariant fails, or ``compare`` finds a
verdict off the expected matrix) and 2 on usage errors, including a
missing or invalid config file.  Output goes to ``--out``, else
``$TRACEPRIV_OUT``, else ``./out``.
"""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

from ..errors import ConfigError, InvariantViolation, RunFailed
from .config import config_from_mapping, load_config
from .report import read_records, render_summary, write_records
from .runner import analyse, compare_variants, output_dir, report_paths, run_scenario

OK, FAILED, USAGE = 0, 1, 2


def parse_seeds(text: str) -> list[int]:
    """``"1..20"`` (inclusive), ``"7"`` or comma-separated mixes of both."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if m := re.fullmatch(r"(-?\d+)\.\.(-?\d+)", part):
            lo, hi = int(m.group(1)), int(m.group(2))
            if hi < lo:
                raise argparse.ArgumentTypeError(f"empty seed range {part}")
            seeds.extend(range(lo, hi + 1))
        elif re.fullmatch(r"-?\d+", part):
            seeds.append(int(part))
        else:
            raise argparse.ArgumentTypeError(f"bad seed list {text!r}; use e.g. 1..20 or 1,2,5")
    return seeds


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tracepriv", description="Contact-tracing protocol simulator and privacy attacks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="one run: world, protocols, attacks, report")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--no-views", action="store_true", help="do not store view logs for `attack`")

    a = sub.add_parser("attack", help="re-run the attacks on stored view logs")
    a.add_argument("views", nargs="?", help="a .views.gz file written by simulate")
    a.add_argument("--config")
    a.add_argument("--seed", type=int)
    a.add_argument("--out")

    c = sub.add_parser("compare", help="many seeds: privacy matrix against the expected one")
    c.add_argument("--config", required=True)
    c.add_argument("--seeds", required=True, type=parse_seeds)
    c.add_argument("--out")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--save-views", action="store_true")

    r = sub.add_parser("report", help="render a stored .report file as text")
    r.add_argument("path")
    return p


def _simulate(args) -> int:
    cfg = load_config(args.config)
    report = run_scenario(cfg, args.seed, out_dir=args.out, save_views=not args.no_views)
    rpath, _, _ = report_paths(output_dir(args.out), cfg.name, report.seed)
    print(report.summary(), end="")
    print(f"report written to {rpath}")
    return OK if report.correct else FAILED


def _attack(args) -> int:
    from ..simworld import build_world
    from .viewstore import load_runs, read_meta
    if args.views:
        path = Path(args.views)
    elif args.config:
        cfg = load_config(args.config)
        path = report_paths(output_dir(args.out), cfg.name, cfg.world.seed if args.seed is None else args.seed)[2]
    else:
        print("attack: give a .views.gz file or --config [--seed]", file=sys.stderr)
        return USAGE
    if not path.is_file():
        print(f"attack: no stored views at {path}", file=sys.stderr)
        return USAGE
    meta = read_meta(path)
    cfg = config_from_mapping(meta["config"], name=meta["config"]["name"])
    seed = meta["seed"]
    world = build_world(cfg.scenario(seed))
    runs = load_runs(path, world)
    report = analyse(cfg, seed, world, runs)
    out = output_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    apath = out / f"{cfg.name}.{seed}.attack.report"
    write_records(apath, report.records())
    print(render_summary(report.records()), end="")
    print(f"attack report written to {apath}")
    return OK


def _compare(args) -> int:
    cfg = load_config(args.config)
    summary = compare_variants(cfg, args.seeds, out_dir=args.out, save_views=args.save_views, jobs=args.jobs)
    print(summary.text(), end="")
    return OK if summary.passed else FAILED


def _report(args) -> int:
    path = Path(args.path)
    if not path.is_file():
        print(f"report: no such file {path}", file=sys.stderr)
        return USAGE
    try:
        recs = read_records(path)
    except ValueError as e:
        print(f"report: {e}", file=sys.stderr)
        return USAGE
    print(render_summary(recs), end="")
    return OK


COMMANDS = {"simulate": _simulate, "attack": _attack, "compare": _compare, "report": _report}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else USAGE
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return USAGE
    except ConfigError as e:
        print(f"{args.command}: invalid config: {e}", file=sys.stderr)
        return USAGE
    except InvariantViolation as e:
        print(f"{args.command}: aborted: {e}", file=sys.stderr)
        return FAILED
    except RunFailed as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
