"""Run the MNAR comparison (none / prg / distribution_alignment, plus prg with steps=5) over five seeds.

    python scripts/run_directional.py --out runs/directional
"""

import argparse
from pathlib import Path

from prgssl.runner import load_config, sweep

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "directional.json")
    ap.add_argument("--out", default="runs/directional")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--iterations", type=int, help="override max_iterations (quick looks)")
    args = ap.parse_args()

    base = load_config(args.config)
    if args.iterations is not None:
        base = base.with_params({"max_iterations": args.iterations})
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    rows = sweep(base, {"mode": ["none", "prg", "distribution_alignment"]}, seeds, out / "modes")["rows"]
    rows += sweep(base.with_params({"mode": "prg"}), {"steps": [5]}, seeds, out / "steps")["rows"]

    print(f"{'cell':32s} {'accuracy':>16s} {'gm':>16s} {'rare recall':>16s}")
    for r in rows:
        if not r["n_ok"]:
            print(f"{str(r['params']):32s} all runs failed")
            continue
        cols = [f"{r[k + '_mean']:.4f}+-{r[k + '_std']:.4f}" for k in ("accuracy", "gm", "rare_recall")]
        print(f"{str(r['params']):32s} " + " ".join(f"{c:>16s}" for c in cols))


if __name__ == "__main__":
    main()
