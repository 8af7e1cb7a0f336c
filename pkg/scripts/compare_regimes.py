"""Train every regime on several seeds and print final eval metrics side by side.

    python scripts/compare_regimes.py --seeds 0 1 7 --out out/regimes
"""

import argparse
import json
from pathlib import Path

from groundkit.grpo.train import preset, train_toy

REGIMES = ["none", "none+rl", "sft_coords_only", "sft_coords_only+rl", "sft_diverse", "sft_diverse+rl"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 7, 42])
    ap.add_argument("--preset", default="toy")
    ap.add_argument("--regimes", nargs="+", default=REGIMES)
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    rows = []
    for seed in args.seeds:
        cfg = preset(args.preset).with_overrides(seed=seed)
        for regime in args.regimes:
            res = train_toy(cfg, regime)
            row = {"seed": seed, "regime": regime, **res.final_eval()}
            row["tail_zero_variance"] = res.tail_zero_variance() if res.rl_records() else None
            rows.append(row)
            print(f"seed {seed:3d}  {regime:20s}  acc {row['eval_accuracy']:.3f}  "
                  f"entropy {row['rollout_entropy']:.3f}  zero-var "
                  + ("-" if row["tail_zero_variance"] is None else f"{row['tail_zero_variance']:.2f}"))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "regimes.json").write_text(json.dumps(rows, indent=2) + "\n")


if __name__ == "__main__":
    main()
