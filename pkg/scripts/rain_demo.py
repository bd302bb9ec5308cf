"""Fit RaIN on synthetic faces and save a grid of sampled illumination styles.

    python scripts/rain_demo.py --faces 50 --steps 200 --styles 6 --out rain_grid.png
"""

import argparse

import numpy as np

from cpgan.data import save_png, synth_faces
from cpgan.rain import rain_generate, train_rain


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--faces", type=int, default=50)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--styles", type=int, default=6)
    ap.add_argument("--rows", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="rain_grid.png")
    args = ap.parse_args()

    contents = np.stack([img for img, _ in synth_faces(args.faces, args.seed)])
    model, history = train_rain(contents, args.steps, seed=args.seed)
    if history:
        print(f"loss {history[0]['total']:.3f} -> {np.mean([h['total'] for h in history[-10:]]):.3f}")
    rows = []
    for img in contents[: args.rows]:
        styled = [rain_generate(model, img[None], args.seed * 1000 + k)[0] for k in range(args.styles)]
        rows.append(np.concatenate([img, *styled], axis=2))
    save_png(args.out, np.concatenate(rows, axis=1))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
