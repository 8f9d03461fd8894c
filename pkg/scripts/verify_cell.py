"""Run the theory checks on one cell over many seeds and print pass rates.

    python3 scripts/verify_cell.py --gamma 0.5 --gamma-prime 0 --m 2000 --seeds 20
"""

import argparse
from collections import defaultdict

from relu_phase import datasets, theory
from relu_phase.scaling import PhaseCoordinates


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--gamma-prime", type=float, default=0.0)
    p.add_argument("--m", type=int, default=2000)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--delta", type=float, default=0.05)
    args = p.parse_args()

    ds = datasets.default_dataset()
    coords = PhaseCoordinates(args.gamma, args.gamma_prime)
    by_name = defaultdict(list)
    for seed in range(args.seeds):
        for r in theory.verify(coords, args.m, ds, seed, delta=args.delta):
            by_name[r.bound_name].append(r)
    print(f"{'bound':<20} pass rate")
    for name, reports in by_name.items():
        print(f"{name:<20} {theory.pass_rate(reports):.2f}")
    print("width precondition (constants symbolic):", theory.width_precondition())


if __name__ == "__main__":
    main()
