"""Ablation study on the synthetic recovery dataset.

Usage: python benchmarks/ablation_study.py [--seeds 0 1 2] [--epochs 150] [--out results.csv]

Runs one fold of the two-phase protocol for the default model and each
ablation (NoAct, NoAvg, NoLN) under several seeds, then prints per-seed test
AUCs and the mean per variant.
"""
import argparse
import csv
import json
import sys

import numpy as np

from qakt.config import RunConfig
from qakt.data import SyntheticSpec, generate_synthetic
from qakt.training import ABLATIONS, synthetic_recovery

# same settings as the synthetic recovery acceptance test
BASE = dict(n_skills=5, dim=64, slice_length=100, lr=1e-3, qmatrix_lr_scale=30.0, sparse_delay_epochs=100)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--epochs", type=int, default=150)
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="extra RunConfig overrides (JSON values)")
    parser.add_argument("--out", help="write per-run rows as CSV")
    args = parser.parse_args()

    extra = {k: json.loads(v) for k, v in (s.split("=", 1) for s in args.set)}
    log, truth = generate_synthetic(SyntheticSpec())
    rows = []
    for name, flags in ABLATIONS.items():
        for seed in args.seeds:
            cfg = RunConfig(**BASE, max_epochs=args.epochs, seed=seed, **extra, **flags)
            res = synthetic_recovery(log, truth, cfg)
            rows.append((name, seed, res.fold.test_auc, res.recovery.f1, res.seconds))
            print(f"{name:<8} seed {seed}: test AUC {res.fold.test_auc:.4f}  F1 {res.recovery.f1:.3f}  "
                  f"({res.seconds / 60:.1f} min)", flush=True)
    print()
    means = {}
    for name in ABLATIONS:
        aucs = [r[2] for r in rows if r[0] == name]
        means[name] = float(np.mean(aucs))
        print(f"{name:<8} mean test AUC {means[name]:.4f}  sd {np.std(aucs):.4f}")
    worse = [n for n in means if n != "default" and means[n] > means["default"]]
    print("default >= every ablation:", "yes" if not worse else f"no ({', '.join(worse)} higher)")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "seed", "test_auc", "f1", "seconds"])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
