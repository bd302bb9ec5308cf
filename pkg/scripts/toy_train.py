"""Train one toy model and report held-out PSNR/SSIM against the bicubic baseline.

    python scripts/toy_train.py --seed 0 --variant full --out runs/toy-full-s0
"""

import argparse
import json
import logging
import time

from cpgan.config import ABLATIONS, toy_config
from cpgan.train import evaluate_models, format_report, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--variant", choices=ABLATIONS, default="full")
    ap.add_argument("--iterations", type=int, default=2000)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    overrides = {"iterations": args.iterations}
    if args.out:
        overrides["out_dir"] = args.out
    cfg = toy_config(args.seed, args.variant, **overrides)
    t0 = time.time()
    result = train(cfg)
    report = evaluate_models(result.models, result.data.test)
    print(format_report(report))
    print(json.dumps({"variant": args.variant, "seed": args.seed, "minutes": (time.time() - t0) / 60,
                      "gap_db": report["cpgan"]["psnr"] - report["bicubic"]["psnr"]}))


if __name__ == "__main__":
    main()
