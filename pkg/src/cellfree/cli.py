"""Command line entry point: ``cellfree run|check-gradients|optimize <spec-file>``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, load_config, parse_overrides
from .experiments import DEPLOY_KINDS, emit_results, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cellfree", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run the experiment described by the spec file"),
                        ("check-gradients", "compare analytic and finite-difference AP gradients"),
                        ("optimize", "optimize AP positions (deploy_random unless the spec says kmeans)")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("spec_file")
        s.add_argument("--seed", type=int, action="append",
                       help="seed(s) to run instead of the spec's list; repeatable")
        s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key, e.g. --set scenario.num_users=20")
        s.add_argument("--out", help="output path (default: the spec's output)")
        s.add_argument("--format", choices=("csv", "json"), default="csv")
        s.add_argument("--jobs", type=int, default=1, help="worker processes for sweep points")
        s.add_argument("--timing", action="store_true",
                       help="add a wall_time_s column (makes outputs non-reproducible)")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _summary(table) -> str:
    cols = table.columns
    lines = [f"{len(table.rows)} rows, kind={table.meta.get('kind')}"]
    status = table.column("status")
    bad = [s for s in status if s != "ok"]
    if bad:
        lines.append(f"{len(bad)} failed rows: {bad[0]}")
    if "agrees" in cols:
        used = [a for a, ex in zip(table.column("agrees"), table.column("excluded")) if not ex]
        lines.append(f"gradient agreement on {sum(used)}/{len(used)} APs away from users")
    if "improvement" in cols:
        imp = np.array(table.column("improvement"), dtype=float)
        lines.append(f"median improvement {100 * np.nanmedian(imp):.2f}%")
    if "rel_error" in cols and "de_sum_rate" in cols:
        rel = np.abs(np.array(table.column("rel_error"), dtype=float))
        lines.append(f"max |DE - MC| / MC = {100 * np.nanmax(rel):.2f}%")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _, spec = load_config(args.spec_file, parse_overrides(args.overrides))
        if args.command == "check-gradients" and spec.kind != "gradient_check":
            spec = replace(spec, kind="gradient_check")
        elif args.command == "optimize" and spec.kind not in DEPLOY_KINDS:
            spec = replace(spec, kind="deploy_random")
        if args.seed:
            spec = replace(spec, seeds=tuple(args.seed))
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    table = run_experiment(spec, jobs=args.jobs, timing=args.timing)
    out = args.out or spec.output
    if args.format == "json" and out.endswith(".csv"):
        out = out[:-4] + ".json"
    for path in emit_results(table, out, args.format):
        print(f"wrote {path}")
    print(_summary(table))
    return 0


if __name__ == "__main__":
    sys.exit(main())
