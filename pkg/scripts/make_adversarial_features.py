"""Write the fixed feature stream used for the i.i.d.-versus-fixed comparison.

    python3 scripts/make_adversarial_features.py [--rows N] [--out PATH]
"""

import argparse
from pathlib import Path

from ancillary_pricing.acceptance import STANDARD, adversarial_features
from ancillary_pricing.market import write_feature_file


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=100_000)
    ap.add_argument("--out", default=str(Path(__file__).parent / "configs" / "adversarial_features.csv"))
    args = ap.parse_args()
    X = adversarial_features(args.rows, STANDARD.theta_f, STANDARD.theta_a)
    print(write_feature_file(args.out, X))


if __name__ == "__main__":
    main()
