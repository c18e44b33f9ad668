"""Command line entry points.

    fairtensor run <config> [--workers N] [--seed S]
    fairtensor report <results_dir>
    fairtensor gen-synth <config> <out_dir>
    fairtensor --print-defaults
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import FairtensorError
from .experiment import (
    default_config_text,
    load_config,
    report,
    run_experiment,
)
from .sparse import save_sensitive, save_tensor
from .synthetic import generate


def _gen_synth(config_path, out_dir) -> int:
    cfg = load_config(config_path)
    tensor, ctx, _ = generate(cfg.synth_spec())
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(tensor, out / "entries.txt")
    save_sensitive(ctx, out / "groups.txt")
    counts = ", ".join(
        f"{ctx.group_names[g]}={int((ctx.groups_of_entries(tensor) == g).sum())}"
        for g in range(ctx.num_groups)
    )
    print(
        f"wrote {tensor.nnz} entries with dims "
        f"{'x'.join(str(d) for d in tensor.dims)} to {out} ({counts})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairtensor",
        description="Sparse tensor completion with group-fair augmentation.",
    )
    parser.add_argument(
        "--print-defaults", action="store_true",
        help="print a fully populated config file and exit",
    )
    sub = parser.add_subparsers(dest="command")

    p_run = sub.add_parser("run", help="run the configured sweep")
    p_run.add_argument("config", help="experiment INI file")
    p_run.add_argument("--workers", type=int, default=None,
                       help="parallel grid workers (default: from config)")
    p_run.add_argument("--seed", type=int, default=None,
                       help="replace the config's seed list with one seed")
    p_run.add_argument("--out", default=None,
                       help="output directory (default: from config)")

    p_rep = sub.add_parser("report", help="summarize a results directory")
    p_rep.add_argument("results_dir")

    p_gen = sub.add_parser(
        "gen-synth", help="write a synthetic dataset to disk"
    )
    p_gen.add_argument("config", help="config INI with a [synthetic] section")
    p_gen.add_argument("out", help="output directory")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        print(default_config_text())
        return 0
    if args.command is None:
        parser.print_help()
        return 2
    try:
        if args.command == "run":
            return run_experiment(
                args.config, workers=args.workers,
                seed_override=args.seed, out_dir=args.out,
            )
        if args.command == "report":
            return report(args.results_dir)
        if args.command == "gen-synth":
            return _gen_synth(args.config, args.out)
    except FairtensorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
