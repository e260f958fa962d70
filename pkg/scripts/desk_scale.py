"""Desk-scale end-to-end run: simulate 24 + 4 salt models, train, compare to the constant predictor.

    python scripts/desk_scale.py --out runs/desk --workers 4
"""

import argparse
import json
import logging
import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from sesdi import metrics
from sesdi.experiment import DESK_TRAIN, DeskConfig, contiguous_half, run_desk
from sesdi.trainer import predict_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    ap.add_argument("--workers", type=int, default=min(4, os.cpu_count() or 1))
    ap.add_argument("--epochs", type=int, default=DESK_TRAIN.epochs)
    ap.add_argument("--lr", type=float, default=DESK_TRAIN.lr)
    ap.add_argument("--n-train", type=int, default=24)
    ap.add_argument("--n-test", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    args.out.mkdir(parents=True, exist_ok=True)
    cfg = DeskConfig(n_train=args.n_train, n_test=args.n_test, seed=args.seed)
    tc = replace(DESK_TRAIN, epochs=args.epochs, lr=args.lr)
    run = run_desk(cfg, tc, workers=args.workers, log_path=args.out / "metrics.csv",
                   checkpoint_dir=args.out)

    sub = np.mean([metrics.evaluate(predict_dataset(run.result.params, run.test_set,
                                                    contiguous_half, s),
                                    run.test_set.labels()).ssim for s in (0, 1000, 2000)])
    summary = {
        "constant_velocity": run.baseline_velocity,
        "constant": vars(run.baseline),
        "trained": vars(run.trained),
        "l1_improvement": 1 - run.trained.l1 / run.baseline.l1,
        "ssim_gain": run.trained.ssim - run.baseline.ssim,
        "ssim_contiguous_half": float(sub),
        "seconds": run.timings,
    }
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
