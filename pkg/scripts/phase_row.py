"""Scan one gamma' row of the phase diagram and print S_w, S_theta, S_a per cell.

    python3 scripts/phase_row.py --gamma-prime 0 --gammas 0.5,0.75,1,1.25,1.5,1.75 --out out/row0
"""

import argparse

from relu_phase import datasets, scan


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--gamma-prime", type=float, default=0.0)
    p.add_argument("--gammas", default="0.5,0.75,1,1.25,1.5,1.75")
    p.add_argument("--widths", default=",".join(map(str, scan.DEFAULT_WIDTHS)))
    p.add_argument("--replicates", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="out/row")
    args = p.parse_args()

    grid = scan.ScanGrid(tuple(float(g) for g in args.gammas.split(",")), (args.gamma_prime,),
                         tuple(int(w) for w in args.widths.split(",")), args.replicates, args.seed)
    pm = scan.scan(grid, datasets.default_dataset(), jobs=args.jobs, cache_dir=f"{args.out}/cache")
    scan.write_phase_map(pm, args.out)
    print(f"{'gamma':>6} {'S_w':>8} {'S_theta':>8} {'S_a':>8}  regime")
    for c in pm.row(0):
        print(f"{c.coords.gamma:>6g} {c.slope('w'):>+8.3f} {c.slope('theta'):>+8.3f} {c.slope('a'):>+8.3f}  "
              f"{c.regime.value}")
    for block in scan.BLOCKS:
        zeros = [round(g, 3) for _, g in scan.boundary_zeros(pm, block)]
        print(f"zeros of S_{block}: {zeros}")


if __name__ == "__main__":
    main()
