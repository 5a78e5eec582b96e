"""Run a config and report log-log regret slopes per policy.

    python3 scripts/run_scaling.py scripts/configs/standard_scaling.ini --out results/scaling
"""

import argparse
from pathlib import Path

from ancillary_pricing.bench import (aggregate, bounds_for, default_workers, emit, estimate_q_star,
                                     fit_regret_slope, run_experiment)
from ancillary_pricing.config import load_config
from ancillary_pricing.errors import DegenerateError


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--out", default="results/scaling")
    ap.add_argument("--workers", type=int, default=default_workers())
    args = ap.parse_args()
    cfg = load_config(args.config)
    res = run_experiment(cfg, workers=args.workers, episode_dir=Path(args.out) / "episodes")
    q = estimate_q_star(cfg)
    emit(res, args.out, bounds_for(cfg, None if q is None else q[0]), q, plots=True)
    rows = aggregate(res)
    for p in cfg.policies:
        series = [(r.T, r.mean_regret) for r in rows if r.policy == p]
        for T, m in series:
            print(f"{p:22s} T={T:<8d} mean regret {m:.3f}")
        try:
            print(f"{p:22s} slope {fit_regret_slope(series):.3f}")
        except DegenerateError as exc:
            print(f"{p:22s} slope n/a ({exc})")


if __name__ == "__main__":
    main()
