"""Held-out metrics of a trained desk checkpoint as the acquisition is thinned.

    python scripts/subsampling_sweep.py --checkpoint runs/desk/last.ckpt
"""

import argparse
import os
from functools import partial

import numpy as np

from sesdi import metrics
from sesdi.experiment import DeskConfig, build_desk_datasets
from sesdi.model import load_params
from sesdi.trainer import predict_dataset
from sesdi.traces import subsample_contiguous, subsample_uniform


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--workers", type=int, default=min(4, os.cpu_count() or 1))
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    params = load_params(args.checkpoint)
    _, test, _ = build_desk_datasets(DeskConfig(), args.workers)
    labels = test.labels()
    print("mode,fraction,l1,psnr,ssim")
    for mode in ("uniform", "contiguous"):
        for f in (1.0, 0.8, 0.6, 0.5, 0.4, 0.2):
            if mode == "uniform":
                sub = lambda ctx, seed, f=f: subsample_uniform(ctx, f, seed)
            else:
                sub = partial(subsample_contiguous, fraction=f)
            reps = [metrics.evaluate(predict_dataset(params, test, sub, 1000 * r), labels)
                    for r in range(args.repeats)]
            l1, psnr, ssim = (float(np.mean([getattr(r, k) for r in reps]))
                              for k in ("l1", "psnr", "ssim"))
            print(f"{mode},{f},{l1:.2f},{psnr:.3f},{ssim:.4f}")


if __name__ == "__main__":
    main()
