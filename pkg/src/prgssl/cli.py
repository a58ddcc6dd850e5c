"""Command line entry point: ``run``, ``sweep``, ``replay``, ``init-config``."""

import argparse
import json
import logging
import sys

from .runner import ExperimentConfig, load_config, replay, run, save_config, sweep


def _seeds(text):
    return [int(s) for s in text.replace(",", " ").split()]


def build_parser():
    p = argparse.ArgumentParser(prog="prgssl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="single training run")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--out", required=True)

    s = sub.add_parser("sweep", help="grid x seeds, aggregated")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", required=True, help="JSON file mapping parameter -> list of values")
    s.add_argument("--seeds", type=_seeds, required=True, help="comma-separated seeds")
    s.add_argument("--out", required=True)

    rp = sub.add_parser("replay", help="rerun a manifest and compare artifacts byte for byte")
    rp.add_argument("--manifest", required=True)

    i = sub.add_parser("init-config", help="write the default configuration")
    i.add_argument("--out", required=True)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "run":
        m = run(load_config(args.config), args.seed, args.out)
        f = m.final
        print(f"accuracy={f['test_accuracy']:.4f} gm={f['gm']:.4f} "
              f"rare_recall={f['rare_recall']:.4f} ({m.duration_s:.1f}s) -> {args.out}")
        return 0

    if args.command == "sweep":
        with open(args.grid) as fh:
            grid = json.load(fh)
        report = sweep(load_config(args.config), grid, args.seeds, args.out)
        for row in report["rows"]:
            if row["n_ok"]:
                print(f"{json.dumps(row['params'], sort_keys=True)}: "
                      f"acc {row['accuracy_mean']:.4f}+-{row['accuracy_std']:.4f}  "
                      f"gm {row['gm_mean']:.4f}+-{row['gm_std']:.4f}  "
                      f"({row['n_ok']} ok, {row['n_failed']} failed)")
            else:
                print(f"{json.dumps(row['params'], sort_keys=True)}: all {row['n_failed']} runs failed")
        return 0 if all(r["n_failed"] == 0 for r in report["rows"]) else 1

    if args.command == "replay":
        bad = replay(args.manifest)
        if bad:
            print("MISMATCH: " + ", ".join(bad))
            return 1
        print("replay OK")
        return 0

    if args.command == "init-config":
        save_config(ExperimentConfig(), args.out)
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
