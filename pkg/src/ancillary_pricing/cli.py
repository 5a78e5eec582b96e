"""Command-line entry point: ``ancillary-bench``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import DegenerateError, ParseError, PricingError, ValidationError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_EPISODE = 2
EXIT_ACCEPTANCE = 3

log = logging.getLogger("ancillary_pricing")


def _load(path):
    from .config import load_config

    return load_config(path)


def _report_validation(err: PricingError) -> int:
    print(f"error: {err}", file=sys.stderr)
    for item in getattr(err, "errors", None) or []:
        print(f"  - {item}", file=sys.stderr)
    return EXIT_VALIDATION


def cmd_validate(args) -> int:
    try:
        cfg = _load(args.config)
    except (ParseError, ValidationError) as err:
        return _report_validation(err)
    n = len(cfg.policies) * len(cfg.horizons) * len(cfg.seeds)
    print(f"ok: {args.config} ({n} episodes, d={cfg.dim})")
    return EXIT_OK


def cmd_run(args) -> int:
    from .bench import bounds_for, default_workers, emit, estimate_q_star, run_experiment

    try:
        cfg = _load(args.config)
    except (ParseError, ValidationError) as err:
        return _report_validation(err)
    out = Path(args.out or Path(cfg.base_dir) / cfg.output)
    episode_dir = out / "episodes"
    episode_dir.mkdir(parents=True, exist_ok=True)
    workers = args.workers or default_workers()
    log.info("running %d episodes with %d worker(s)",
             len(cfg.policies) * len(cfg.horizons) * len(cfg.seeds), workers)
    result = run_experiment(cfg, workers=workers, episode_dir=episode_dir)
    q_star = estimate_q_star(cfg)
    bounds = bounds_for(cfg, None if q_star is None else q_star[0])
    files = emit(result, out, bounds, q_star, plots=args.plots)
    for f in files:
        print(f)
    for s in result.failures:
        print(f"episode failed: policy={s.policy} T={s.horizon} seed={s.seed}: {s.error}", file=sys.stderr)
    return EXIT_EPISODE if result.failures else EXIT_OK


def cmd_accept(args) -> int:
    from .acceptance import run_acceptance

    numbers = None
    if args.only:
        numbers = [int(n) for n in args.only.split(",") if n.strip()]
    results = run_acceptance(numbers, workers=args.workers or 1, work_dir=args.out)
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed")
    return EXIT_OK if n_pass == len(results) else EXIT_ACCEPTANCE


def cmd_slope(args) -> int:
    from .bench import fit_regret_slope, read_aggregate_csv

    try:
        series = read_aggregate_csv(args.aggregate)
    except (OSError, ValueError, KeyError) as err:
        print(f"error: cannot read {args.aggregate}: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    status = EXIT_OK
    for policy, pts in series.items():
        try:
            print(f"{policy}\t{fit_regret_slope(pts):.4f}")
        except DegenerateError as err:
            print(f"{policy}\tn/a ({err})")
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ancillary-bench",
                                 description="Simulate online bundling and pricing policies.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every episode of a config")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (default: the config's output key)")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: CPU count)")
    p.add_argument("--plots", action="store_true", help="also write regret plots")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("accept", help="run the acceptance suite")
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", help="keep intermediate files here")
    p.set_defaults(func=cmd_accept)

    p = sub.add_parser("slope", help="log-log regret slope per policy from an aggregate CSV")
    p.add_argument("aggregate")
    p.set_defaults(func=cmd_slope)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
