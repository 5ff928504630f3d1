#!/usr/bin/env python3
"""Final training loss and exchanged traffic across compression ratios.

Trains the same logistic problem at several compression ratios and writes
one CSV row per ratio: final global loss at the averaged model, per-worker
value traffic, and the virtual communication time.

    python scripts/compression_sweep.py --c 1 2 10 100 --out sweep.csv
"""

import argparse
import csv

import numpy as np

from saps.cli import ExperimentConfig, run_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=32)
    ap.add_argument("--N", type=int, default=128, dest="n_dims")
    ap.add_argument("--T", type=int, default=600, dest="t_rounds")
    ap.add_argument("--gamma", type=float, default=0.2)
    ap.add_argument("--c", type=int, nargs="+", default=[1, 2, 10, 100])
    ap.add_argument("--samples", type=int, default=16384)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="compression_sweep.csv")
    args = ap.parse_args()

    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["c", "loss_at_mean_model", "values_per_worker", "cum_time"])
        for c in args.c:
            cfg = ExperimentConfig(
                n=args.n, N=args.n_dims, T=args.t_rounds, c=c, gamma=args.gamma,
                master_seed=args.seed, partition="iid",
                objective={"kind": "logistic", "samples": args.samples,
                           "separation": 0.75},
            )
            res = run_experiment(cfg)
            models = np.stack([w.x for w in res.workers], axis=1)
            xbar = models.mean(axis=1)
            loss = float(np.mean([w.objective.full_loss(xbar) for w in res.workers]))
            values = res.summary["total_values_exchanged"] / cfg.n
            writer.writerow([c, loss, values, res.summary["total_comm_time"]])
            print(f"c={c:4d}: loss {loss:.4f}, values/worker {values:.0f}, "
                  f"comm time {res.summary['total_comm_time']:.2f} s")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
