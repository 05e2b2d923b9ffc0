"""Build the three long-range CNOTs on one chain and compare their cost and noiseless CHSH curves.

    python demos/long_range_cnot_tour.py --length 7
"""
from __future__ import annotations

import argparse
import math

from chshforge.circuit import decompose_swaps, two_qubit_count, two_qubit_depth
from chshforge.harness import ExperimentConfig, resolve_calibration, run_scurve
from chshforge.schedule import schedule_asap
from chshforge.synthesis import SYNTHESIZERS, CnotStrategy


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--length", type=int, default=7)
    ap.add_argument("--shots", type=int, default=4000)
    args = ap.parse_args()
    n = args.length
    durations = resolve_calibration(ExperimentConfig()).durations

    print(f"CNOT between the ends of a {n}-qubit chain")
    print(f"{'strategy':<14}{'2q gates':>9}{'2q depth':>9}{'duration (us)':>15}")
    for st in CnotStrategy:
        body = decompose_swaps(SYNTHESIZERS[st](n))
        sc = schedule_asap(body, durations)
        print(f"{st.value:<14}{two_qubit_count(body):>9}{two_qubit_depth(body):>9}{sc.total_duration * 1e6:>15.3f}")

    # without noise all three give the same sinusoid, peaking at 2*sqrt(2)
    cfg = ExperimentConfig(shots=args.shots, calibration="ideal", phase_count=9)
    print(f"\nnoiseless S(phi), {args.shots} shots per circuit")
    curves = {st.value: run_scurve(cfg, st, n) for st in CnotStrategy}
    phases = cfg.phases()
    print("phi     " + "".join(f"{s:>15}" for s in curves) + f"{'2√2 sin(φ+π/4)':>17}")
    for k, phi in enumerate(phases):
        row = "".join(f"{c.s[k]:>15.3f}" for c in curves.values())
        print(f"{phi:>6.3f}  {row}{2 * math.sqrt(2) * math.sin(phi + math.pi / 4):>17.3f}")
    post = curves[CnotStrategy.POSTPROCESSED.value]
    print(f"\npost-selection kept {post.mean_retention:.3f} of the shots")


if __name__ == "__main__":
    main()
