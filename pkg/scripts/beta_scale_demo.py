"""How the confidence radius drives the alg1 regret slope.

The radius from the concentration bound is in the hundreds for the standard
scenario, so every valuation interval is clipped to the parameter ball and
the focal price never adapts.  This script reruns the standard scenario with
the radius fixed to smaller values and reports the fitted slope and how often
the true parameters stay inside the (shrunken) ellipsoids.

    python3 scripts/beta_scale_demo.py [--seeds 5] [--horizons 1000,10000,30000]
"""

import argparse

import numpy as np

from ancillary_pricing import run_episode
from ancillary_pricing.acceptance import STANDARD
from ancillary_pricing.bench import fit_regret_slope
from ancillary_pricing.pricing import PricingModel


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--horizons", default="1000,10000,30000")
    ap.add_argument("--betas", default="formula,10,3,1")
    args = ap.parse_args()
    horizons = [int(h) for h in args.horizons.split(",")]
    inst = STANDARD.instance()
    model = PricingModel(inst.dists, inst.box)
    for b in args.betas.split(","):
        override = None if b == "formula" else float(b)
        means, cover = [], []
        for T in horizons:
            runs = [run_episode(inst, "alg1", T, s, model=model, beta_override=override)
                    for s in range(args.seeds)]
            means.append(float(np.mean([r.cumulative_regret for r in runs])))
            cover.append(float(np.mean([r.good_event_held for r in runs])))
        slope = fit_regret_slope(list(zip(horizons, means)))
        cells = "  ".join(f"T={T}: {m:8.2f}" for T, m in zip(horizons, means))
        print(f"beta={b:8s} slope={slope:.3f}  good event at largest T: {cover[-1]:.0%}  {cells}")


if __name__ == "__main__":
    main()
