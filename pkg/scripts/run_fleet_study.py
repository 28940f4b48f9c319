"""Fleet screening on synthetic fleets: same-distribution share and divergent-battery power.

Each seed renders a fleet whose last battery gains capacity instead of
fading, screens the others against the first battery, then tests the
divergent one on its own.

    python3 scripts/run_fleet_study.py --seeds 20 --out fleet_study.csv
"""

import argparse

import pandas as pd

from sohcast.fleet import fleet_wilcoxon
from sohcast.pipeline import analyze_battery
from sohcast.synth import generate_battery, same_distribution_config


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--batteries", type=int, default=14)
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--out", default="fleet_study.csv")
    args = parser.parse_args()

    rows = []
    last = args.batteries - 1
    for seed in range(args.seeds):
        cfg = same_distribution_config(seed=seed, n_batteries=args.batteries, divergent=(last,))
        sohs = [analyze_battery(generate_battery(cfg, b)[0], with_features=False).soh for b in range(args.batteries)]
        same = fleet_wilcoxon(sohs[0], sohs[1:last], args.alpha)
        odd = fleet_wilcoxon(sohs[0], [sohs[last]], args.alpha).comparisons[0]
        rows.append(
            {
                "seed": seed,
                "fraction_same": same.fraction_same,
                "min_p_same": min(c.p_value for c in same.comparisons),
                "divergent_p": odd.p_value,
                "divergent_rejected": odd.status == "different",
            }
        )
        print(f"seed {seed:3d}  same {same.fraction_same:.2f}  divergent p {odd.p_value:.2e}")

    frame = pd.DataFrame(rows)
    frame.to_csv(args.out, index=False, float_format="%.6g")
    print(f"mean fraction_same {frame['fraction_same'].mean():.3f}; divergent rejected in {frame['divergent_rejected'].mean():.0%}")


if __name__ == "__main__":
    main()
