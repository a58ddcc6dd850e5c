"""Sensitivity sweeps over the guidance knobs (alpha x n_b, then steps).

    PRG_THREADS=4 python scripts/run_ablation.py --out runs/ablation --seeds 0,1,2
"""

import argparse
import json
from pathlib import Path

from prgssl.runner import load_config, sweep

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=ROOT / "configs" / "directional.json")
    ap.add_argument("--grid", default=ROOT / "configs" / "grid_ablation.json")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--iterations", type=int)
    args = ap.parse_args()

    base = load_config(args.config).with_params({"mode": "prg"})
    if args.iterations is not None:
        base = base.with_params({"max_iterations": args.iterations})
    seeds = [int(s) for s in args.seeds.split(",")]
    grid = json.loads(Path(args.grid).read_text())
    for name, g in (("alpha_nb", grid), ("steps", {"steps": [1, 2, 3, 5]})):
        report = sweep(base, g, seeds, Path(args.out) / name)
        for r in report["rows"]:
            acc = "failed" if not r["n_ok"] else f"acc {r['accuracy_mean']:.4f}  gm {r['gm_mean']:.4f}"
            print(f"{name:9s} {json.dumps(r['params'], sort_keys=True):36s} {acc}")


if __name__ == "__main__":
    main()
