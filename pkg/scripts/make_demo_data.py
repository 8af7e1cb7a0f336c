"""Write a small synthetic pipeline input set: screenshots, samples and detections.

A fraction of samples get no overlapping detection so the refine stage drops
them; the rest are kept as-is or nudged to a slightly shifted box.

    python scripts/make_demo_data.py --n 200 --flawed 40 --out out/demo
    groundkit pipeline --samples out/demo/samples.jsonl --detections out/demo/detections.jsonl --out out/run
"""

import argparse
import json
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from groundkit.core import BBox, GroundingSample, Perspective, Screenshot

LABELS = ["settings gear", "search icon", "back arrow", "send button", "profile picture", "menu"]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200)
    ap.add_argument("--flawed", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("out/demo"))
    args = ap.parse_args()
    if not 0 <= args.flawed <= args.n:
        ap.error("--flawed must be between 0 and --n")

    rng = np.random.default_rng(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    w, h = 360, 640
    samples, detections = [], []
    for i in range(args.n):
        x, y = float(rng.integers(0, w - 60)), float(rng.integers(0, h - 60))
        box = BBox(x, y, x + 40 + float(rng.integers(20)), y + 30 + float(rng.integers(20)))
        img = Image.new("RGB", (w, h), "white")
        ImageDraw.Draw(img).rectangle(box.as_list(), fill=tuple(int(v) for v in rng.integers(0, 200, 3)))
        name = f"shot{i:05d}.png"
        img.save(args.out / name)
        label = LABELS[i % len(LABELS)]
        samples.append(GroundingSample(f"s{i:05d}", Screenshot(f"shot{i:05d}", w, h, name), box,
                                       {Perspective.ORIGINAL: f"tap the {label}"}, "demo",
                                       frozenset({f"platform:{'ios' if i % 2 else 'android'}"})))
        if i < args.flawed:
            det = BBox(0, 0, 10, 10) if box.x_l > 20 else BBox(w - 10, h - 10, w, h)
        else:
            dx = float(rng.integers(-2, 3))
            det = BBox(max(0.0, box.x_l + dx), box.y_l, min(w, box.x_r + dx), box.y_r)
        detections.append({"screenshot_id": f"shot{i:05d}", "elements": [{"bbox": det.as_list(), "label": "icon"}]})

    with open(args.out / "samples.jsonl", "w") as f:
        for s in samples:
            f.write(json.dumps(s.to_json(), sort_keys=True) + "\n")
    with open(args.out / "detections.jsonl", "w") as f:
        for d in detections:
            f.write(json.dumps(d, sort_keys=True) + "\n")
    print(f"wrote {args.n} samples ({args.flawed} without a matching detection) to {args.out}")


if __name__ == "__main__":
    main()
