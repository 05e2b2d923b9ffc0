"""Why post-selected data needs readout correction on the whole register, and how much survives the filter.

    python demos/readout_and_postselection.py --length 9
"""
from __future__ import annotations

import argparse

import numpy as np

from chshforge.harness import ExperimentConfig, ideal_retention, resolve_calibration, run_scurve


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--length", type=int, default=9)
    ap.add_argument("--shots", type=int, default=1000)
    ap.add_argument("--reps", type=int, default=2)
    args = ap.parse_args()
    n = args.length
    cal = resolve_calibration(ExperimentConfig())

    # kept fraction: two parity checks, so 1/4 of the shots at any length beyond 3
    for m in (3, 4, 8, 15):
        print(f"noiseless retention at n={m:<2}: {ideal_retention(m):.3f}")

    variants = {
        "no mitigation": dict(mitigation=False),
        "filter, then correct a and b": dict(mitigate_before_filter=False),
        "subspace solve, then filter": dict(post_mitigation="subspace"),
        "tensored inverse, then filter": dict(),
    }
    print(f"\nmean max|S| of the post-processed CNOT at n={n}, {args.reps} repetitions of {args.shots} shots")
    for name, kw in variants.items():
        cfg = ExperimentConfig(shots=args.shots, **kw)
        vals = [run_scurve(cfg, "postprocessed", n, rep, calibration=cal).max_abs_s for rep in range(args.reps)]
        print(f"  {name:<32} {np.mean(vals):.3f}")
    dyn = [run_scurve(ExperimentConfig(shots=args.shots), "dynamic", n, rep, calibration=cal).max_abs_s for rep in range(args.reps)]
    print(f"  {'dynamic CNOT, for reference':<32} {np.mean(dyn):.3f}")


if __name__ == "__main__":
    main()
