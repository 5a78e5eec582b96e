"""Scan Normal-intercept instances for their bundling profile.

For each (focal mean, ancillary mean) pair, prints the share of features for
which bundling is optimal and the gap between the average optimal bundled
and unbundled revenues.  This is how the mixed and dominant instances of the
acceptance suite were picked.

    python3 scripts/instance_scan.py [--sd 1.0] [--samples 20000]
"""

import argparse

import numpy as np

from ancillary_pricing import IIDUnitBall, Normal, PriceBox, PricingModel, convolve
from ancillary_pricing.pricing import ShockTriple


def profile(m_f, m_a, sd, theta_f, theta_a, box, X):
    f, a = Normal(m_f, sd), Normal(m_a, sd)
    model = PricingModel(ShockTriple(f, a, convolve(f, a)), box)
    v_f, v_a = X @ theta_f, X @ theta_a
    r_u, r_b = model.r_u_many(v_f, v_a), model.r_b_many(v_f + v_a)
    return float(np.mean(r_b > r_u)), float(np.mean(r_b - r_u))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sd", type=float, default=1.0)
    ap.add_argument("--samples", type=int, default=20_000)
    ap.add_argument("--p-high", type=float, default=3.0)
    args = ap.parse_args()
    box = PriceBox(0.1, args.p_high)
    X = IIDUnitBall(2).sample_many(args.samples, np.random.default_rng(0))
    setups = {"standard": (np.array([0.3, -0.2]), np.array([0.1, 0.2])),
              "opposed": (np.array([0.5, 0.0]), np.array([-0.5, 0.0]))}
    print("theta     m_f    m_a   frac_bundle  mean_gap")
    for name, (tf, ta) in setups.items():
        for m_f in (-1.0, -0.5, 0.0, 0.5):
            for m_a in (-1.5, -1.0, -0.5, 0.0, 0.5):
                frac, gap = profile(m_f, m_a, args.sd, tf, ta, box, X)
                print(f"{name:9s} {m_f:5.1f} {m_a:6.1f}   {frac:9.3f}  {gap:+8.4f}")


if __name__ == "__main__":
    main()
