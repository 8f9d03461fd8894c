"""Train one cell at several widths and compare feature clouds before and after.

    python3 scripts/condensation.py --gamma 1.75 --gamma-prime 0 --widths 1000,10000
"""

import argparse
import math
import os

from relu_phase import datasets, dynamics, features, network, scan
from relu_phase.scaling import PhaseCoordinates, classify_regime, realize


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--gamma", type=float, default=1.75)
    p.add_argument("--gamma-prime", type=float, default=0.0)
    p.add_argument("--widths", default="1000,10000")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="directory for per-width scatter CSVs")
    args = p.parse_args()

    ds = datasets.default_dataset()
    coords = PhaseCoordinates(args.gamma, args.gamma_prime)
    print(f"cell {coords}, {classify_regime(coords).value}")
    for m in (int(w) for w in args.widths.split(",")):
        kappa, kappa_prime = realize(coords, m)
        asi = coords.gamma <= 0.5
        p0 = network.init_params(network.InitConfig(m // 2 if asi else m, ds.d, args.seed, asi))
        res = dynamics.integrate(p0, kappa, kappa_prime, ds, scan.RunPlan().flow_for(p0, kappa, kappa_prime, ds))
        c0, c1 = features.extract_features(res.initial_params), features.extract_features(res.final_params)
        s0, s1 = features.condensation_summary(c0), features.condensation_summary(c1)
        print(f"m={m}: {res.stop_reason.value} after {res.steps} steps, sup RD_w {res.sup_rd_w:.3g}; "
              f"clusters {s0.cluster_count} -> {s1.cluster_count}, "
              f"entropy {s0.angular_entropy:.3f} -> {s1.angular_entropy:.3f} (max {math.log(64):.3f})")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            features.scatter_to_csv(os.path.join(args.out, f"features_m{m}.csv"), {"initial": c0, "final": c1})


if __name__ == "__main__":
    main()
