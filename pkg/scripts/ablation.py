"""Held-out PSNR of the full model and both CPnet ablations over several seeds.

    python scripts/ablation.py --seeds 0 1 2 --iterations 2000
"""

import argparse
import json
import logging

import numpy as np

from cpgan.config import ABLATIONS, toy_config
from cpgan.train import evaluate_models, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--iterations", type=int, default=2000)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    psnr = {v: [] for v in ABLATIONS}
    bicubic = []
    for variant in ABLATIONS:
        for seed in args.seeds:
            cfg = toy_config(seed, variant, iterations=args.iterations)
            result = train(cfg, write=False)
            report = evaluate_models(result.models, result.data.test)
            psnr[variant].append(report["cpgan"]["psnr"])
            bicubic.append(report["bicubic"]["psnr"])
            print(json.dumps({"variant": variant, "seed": seed, **{k: v["psnr"] for k, v in report.items()}}), flush=True)

    full = np.median(psnr["full"])
    print(f"{'variant':<12}{'median PSNR':>12}{'vs full':>10}")
    for variant in ABLATIONS:
        med = np.median(psnr[variant])
        print(f"{variant:<12}{med:>12.3f}{med - full:>+10.3f}")
    print(f"{'bicubic':<12}{np.median(bicubic):>12.3f}{np.median(bicubic) - full:>+10.3f}")


if __name__ == "__main__":
    main()
