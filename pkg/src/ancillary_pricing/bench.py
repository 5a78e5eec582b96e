"""Multi-seed experiment runner, aggregation, bound curves and output files."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dump_config
from .errors import DegenerateError, PricingError
from .market import EpisodeResult, MarketInstance, compute_q_star, run_episode
from .mle import beta_bar
from .pricing import PricingModel, Strategy
from .shocks import ShockConstants, combine_constants, compute_constants

EPISODE_COLUMNS = ("t", "strategy", "p_f", "p_a", "p_b", "d_f", "d_a", "d_b", "exp_regret",
                   "strategy_regret", "n_focal", "good_event")
AGGREGATE_COLUMNS = ("policy", "T", "n_seeds", "n_failed", "mean_regret", "median_regret",
                     "q25_regret", "q75_regret", "mean_strategy_regret", "good_event_rate",
                     "switch_rate", "lcb_violations")
N_CHECKPOINTS = 20


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


# -- episode summaries -----------------------------------------------------------------


def checkpoints(T: int, n: int = N_CHECKPOINTS) -> np.ndarray:
    """Log-spaced period indices ending at ``T``."""
    pts = np.unique(np.round(np.geomspace(1, T, n)).astype(int))
    return pts[pts >= 1]


@dataclass
class EpisodeSummary:
    policy: str
    horizon: int
    seed: int
    cumulative_regret: float = math.nan
    cumulative_strategy_regret: float = math.nan
    good_event_held: bool = False
    good_event_fraction: float = math.nan
    lcb_violations: int = 0
    mismatch_tail: float = math.nan
    switch_time: int | None = None
    switch_monotone: bool = True
    n_focal: int = 0
    ancillary_count: int = 0
    estimator_clamps: int = 0
    pricing_clamps: int = 0
    checkpoints: list = field(default_factory=list)
    regret_curve: list = field(default_factory=list)
    strategy_regret_curve: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @classmethod
    def from_result(cls, res: EpisodeResult) -> "EpisodeSummary":
        cps = checkpoints(res.horizon)
        creg = np.cumsum(res.exp_regret)
        csreg = np.cumsum(res.strategy_regret)
        return cls(
            policy=res.policy, horizon=res.horizon, seed=res.seed,
            cumulative_regret=res.cumulative_regret,
            cumulative_strategy_regret=res.cumulative_strategy_regret,
            good_event_held=res.good_event_held,
            good_event_fraction=float(np.mean(res.good_event)),
            lcb_violations=res.lcb_violations(),
            mismatch_tail=res.mismatch_fraction(0.1),
            switch_time=res.switch_time,
            switch_monotone=switch_monotone(res),
            n_focal=int(res.n_focal[-1]),
            ancillary_count=res.ancillary_count,
            estimator_clamps=res.estimator_clamps,
            pricing_clamps=res.pricing_clamps,
            checkpoints=cps.tolist(),
            regret_curve=creg[cps - 1].tolist(),
            strategy_regret_curve=csreg[cps - 1].tolist(),
        )


def switch_monotone(res: EpisodeResult) -> bool:
    """No bundling before the switch time and no unbundling after it."""
    is_b = res.strategy == Strategy.BUNDLE.value
    if res.switch_time is None:
        return not (res.policy == "alg3" and is_b.any())
    # the switch is decided at the end of period switch_time
    return (not is_b[: res.switch_time].any()) and bool(is_b[res.switch_time:].all())


def write_episode_csv(res: EpisodeResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS)
        for row in res.rows():
            w.writerow([_fmt(v) if not isinstance(v, (np.integer, int)) or v >= 0 else "" for v in row])
    return path


def episode_filename(policy: str, T: int, seed: int) -> str:
    return f"{policy}_T{T}_seed{seed}.csv"


# -- running -------------------------------------------------------------------------------

_INSTANCE_CACHE: dict = {}


def _instance_and_model(cfg: ExperimentConfig) -> tuple[MarketInstance, PricingModel]:
    key = dump_config(cfg) + cfg.base_dir
    if key not in _INSTANCE_CACHE:
        inst = cfg.instance()
        _INSTANCE_CACHE.clear()
        _INSTANCE_CACHE[key] = (inst, PricingModel(inst.dists, inst.box))
    return _INSTANCE_CACHE[key]


def run_one(cfg: ExperimentConfig, policy: str, T: int, seed: int, episode_dir=None) -> EpisodeSummary:
    """Run one episode; failures are captured in the summary's ``error``."""
    try:
        inst, model = _instance_and_model(cfg)
        res = run_episode(inst, policy, T, seed, lam=cfg.lam, refit=cfg.refit, model=model,
                          benchmark=cfg.benchmark_for(policy))
    except PricingError as exc:
        return EpisodeSummary(policy, T, seed, error=f"{type(exc).__name__}: {exc}")
    if episode_dir is not None:
        write_episode_csv(res, Path(episode_dir) / episode_filename(policy, T, seed))
    return EpisodeSummary.from_result(res)


def _task(args):
    return run_one(*args)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    summaries: dict  # (policy, T, seed) -> EpisodeSummary

    @property
    def failures(self) -> list:
        return [s for s in self.summaries.values() if not s.ok]

    def select(self, policy: str, T: int | None = None) -> list:
        return [s for (p, h, _), s in sorted(self.summaries.items())
                if p == policy and (T is None or h == T)]


def experiment_keys(cfg: ExperimentConfig) -> list[tuple]:
    return [(p, T, s) for p in cfg.policies for T in cfg.horizons for s in cfg.seeds]


def run_experiment(cfg: ExperimentConfig, workers: int = 1, episode_dir=None) -> ExperimentResult:
    """Run every (policy, horizon, seed) episode of ``cfg``.

    Results are keyed and merged in sorted order, so the outcome does not
    depend on ``workers``.  Episode CSVs are written to ``episode_dir`` when
    given.
    """
    keys = experiment_keys(cfg)
    tasks = [(cfg, p, T, s, episode_dir) for p, T, s in keys]
    if workers <= 1 or len(tasks) <= 1:
        out = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_task, tasks, chunksize=1))
    return ExperimentResult(cfg, {k: s for k, s in sorted(zip(keys, out))})


# -- aggregation -------------------------------------------------------------------------


@dataclass(frozen=True)
class AggregateRow:
    policy: str
    T: int
    n_seeds: int
    n_failed: int
    mean_regret: float
    median_regret: float
    q25_regret: float
    q75_regret: float
    mean_strategy_regret: float
    good_event_rate: float
    switch_rate: float
    lcb_violations: int

    def cells(self) -> list[str]:
        return [_fmt(getattr(self, c)) for c in AGGREGATE_COLUMNS]


def aggregate(result: ExperimentResult) -> list[AggregateRow]:
    rows = []
    cfg = result.config
    for p in cfg.policies:
        for T in cfg.horizons:
            group = result.select(p, T)
            ok = [s for s in group if s.ok]
            reg = np.array([s.cumulative_regret for s in ok])
            if ok:
                q25, med, q75 = np.percentile(reg, [25, 50, 75])
                rows.append(AggregateRow(
                    p, T, len(group), len(group) - len(ok), float(reg.mean()), float(med), float(q25),
                    float(q75), float(np.mean([s.cumulative_strategy_regret for s in ok])),
                    float(np.mean([s.good_event_held for s in ok])),
                    float(np.mean([s.switch_time is not None for s in ok])),
                    int(sum(s.lcb_violations for s in ok))))
            else:
                nan = math.nan
                rows.append(AggregateRow(p, T, len(group), len(group), nan, nan, nan, nan, nan, nan,
                                         nan, 0))
    return rows


def write_aggregate_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for r in rows:
            w.writerow(r.cells())
    return path


def read_aggregate_csv(path) -> dict:
    """``policy -> [(T, mean_regret), ...]`` from an aggregate CSV."""
    out: dict = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"policy", "T", "mean_regret"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            if row["mean_regret"] == "":
                continue
            out.setdefault(row["policy"], []).append((int(row["T"]), float(row["mean_regret"])))
    return out


def fit_regret_slope(series) -> float:
    """Least-squares slope of ``log(regret)`` against ``log(T)``.

    Raises
    ------
    DegenerateError
        With fewer than three distinct horizons or any nonpositive regret.
    """
    pts = sorted((float(T), float(r)) for T, r in series)
    if len({T for T, _ in pts}) < 3:
        raise DegenerateError(f"need at least three distinct horizons, got {len(pts)} points")
    bad = [(T, r) for T, r in pts if not r > 0 or not math.isfinite(r)]
    if bad:
        raise DegenerateError(f"regret must be positive and finite for a log-log fit; got {bad[:3]}")
    x = np.log([T for T, _ in pts])
    y = np.log([r for _, r in pts])
    return float(np.polyfit(x, y, 1)[0])


def concave_in_T(series, tol: float = 0.0) -> bool:
    """Whether successive chord slopes of the curve do not increase."""
    pts = sorted(series)
    slopes = [(r2 - r1) / (T2 - T1) for (T1, r1), (T2, r2) in zip(pts, pts[1:])]
    return all(b - a <= tol for a, b in zip(slopes, slopes[1:]))


# -- theoretical bounds --------------------------------------------------------------------


@dataclass(frozen=True)
class TheoreticalBounds:
    """Regret upper-bound curves.

    ``b_bar`` fixes the confidence-radius bound; when omitted it is evaluated
    per horizon from ``constants``, ``theta_bar`` and ``lam``.
    """

    d: int
    p_high: float
    eta: float
    q_star: float | None = None
    b_bar: float | None = None
    constants: ShockConstants | None = None
    theta_bar: float = 1.0
    lam: float = 1.0

    def beta(self, T: int) -> float:
        if self.b_bar is not None:
            return self.b_bar
        if self.constants is None:
            raise ValueError("need b_bar or constants")
        return beta_bar(self.d, T, self.lam, self.theta_bar, self.constants)

    def _log(self, T):
        return math.log((self.d + T) / self.d)

    def alg1_worst(self, T: int) -> float:
        b, d = self.beta(T), self.d
        return (2 * self.p_high + 6 * math.sqrt(2) * b * math.sqrt(d * T * self._log(T))
                + 2 * d * self.eta * b * b * self._log(T))

    def alg1_iid(self, T: int) -> float:
        if not self.q_star:
            return math.nan
        b, d = self.beta(T), self.d
        return 2 * self.p_high + 288 * d * self.eta * b * b / self.q_star * math.log((d + T + 1) / d)

    def alg2(self, T: int) -> float:
        b, d, L = self.beta(T), self.d, self._log(T)
        root = math.sqrt(d * T * L)
        return (6 * self.p_high + 24 * b * root + 6 * math.sqrt(2) * b * root
                + 2 * d * self.eta * b * b * L + 2 * d * self.eta * b * b * L)

    def alg3(self, T: int) -> float:
        if not self.q_star:
            return math.nan
        b, d, L, p = self.beta(T), self.d, self._log(T), self.p_high
        return (22 * p + 16 * p * math.sqrt(T * math.log(T))
                + 8 * p * math.sqrt(2 * d * T / self.q_star * L)
                + 6 * math.sqrt(2) * b * math.sqrt(d * T * L)
                + 2 * d * self.eta * b * b * L + 2 * d * self.eta * b * b * L)

    def for_policy(self, policy: str, T: int) -> float:
        if policy == "alg1":
            return self.alg1_worst(T)
        if policy == "alg2":
            return self.alg2(T)
        if policy == "alg3":
            return self.alg3(T)
        return math.nan


def bounds_for(cfg: ExperimentConfig, q_star: float | None = None) -> TheoreticalBounds:
    dists = cfg.dists()
    consts = combine_constants(*(compute_constants(d, cfg.p_low, cfg.p_high, cfg.theta_bar) for d in dists))
    return TheoreticalBounds(cfg.dim, cfg.p_high, consts.eta, q_star, None, consts, cfg.theta_bar, cfg.lam)


# -- emission ------------------------------------------------------------------------------

SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["config", "episodes", "failures", "slopes", "q_star", "switch_times",
                 "good_event_frequency", "bounds"],
    "properties": {
        "config": {"type": "string"},
        "episodes": {"type": "integer", "minimum": 0},
        "failures": {"type": "array", "items": {
            "type": "object", "required": ["policy", "T", "seed", "error"],
            "properties": {"policy": {"type": "string"}, "T": {"type": "integer"},
                           "seed": {"type": "integer"}, "error": {"type": "string"}}}},
        "slopes": {"type": "object", "additionalProperties": {"type": ["number", "null"]}},
        "q_star": {"oneOf": [
            {"type": "null"},
            {"type": "object", "required": ["estimate", "stderr"],
             "properties": {"estimate": {"type": "number", "minimum": 0, "maximum": 1},
                            "stderr": {"type": "number", "minimum": 0}}}]},
        "switch_times": {"type": "object", "additionalProperties": {
            "type": "object", "required": ["edges", "counts", "never"],
            "properties": {"edges": {"type": "array", "items": {"type": "number"}},
                           "counts": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                           "never": {"type": "integer", "minimum": 0}}}},
        "good_event_frequency": {"type": "object", "additionalProperties": {
            "type": "object", "additionalProperties": {"type": "number", "minimum": 0, "maximum": 1}}},
        "bounds": {"type": "object", "additionalProperties": {
            "type": "object", "additionalProperties": {
                "type": "object", "required": ["bound", "mean_regret", "dominates"],
                "properties": {"bound": {"type": ["number", "null"]},
                               "mean_regret": {"type": ["number", "null"]},
                               "dominates": {"type": ["boolean", "null"]}}}}},
    },
}


def _none_if_nan(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


def build_summary(result: ExperimentResult, rows, bounds: TheoreticalBounds | None,
                  q_star: tuple | None) -> dict:
    cfg = result.config
    slopes = {}
    for p in cfg.policies:
        series = [(r.T, r.mean_regret) for r in rows if r.policy == p]
        try:
            slopes[p] = fit_regret_slope(series)
        except DegenerateError:
            slopes[p] = None
    switch = {}
    for p in cfg.policies:
        if p != "alg3":
            continue
        for T in cfg.horizons:
            times = [s.switch_time for s in result.select(p, T) if s.ok]
            hit = [t for t in times if t is not None]
            edges = np.linspace(0, T, 11)
            counts = np.histogram(hit, bins=edges)[0] if hit else np.zeros(10, dtype=int)
            switch[f"{p}@{T}"] = {"edges": edges.tolist(), "counts": [int(c) for c in counts],
                                  "never": len(times) - len(hit)}
    good = {p: {str(r.T): r.good_event_rate for r in rows if r.policy == p and math.isfinite(r.good_event_rate)}
            for p in cfg.policies}
    bnd = {}
    for r in rows:
        b = bounds.for_policy(r.policy, r.T) if bounds is not None else math.nan
        b = _none_if_nan(b)
        m = _none_if_nan(r.mean_regret)
        bnd.setdefault(r.policy, {})[str(r.T)] = {
            "bound": b, "mean_regret": m, "dominates": None if b is None or m is None else bool(b >= m)}
    return {
        "config": dump_config(cfg),
        "episodes": len(result.summaries),
        "failures": [{"policy": s.policy, "T": s.horizon, "seed": s.seed, "error": s.error}
                     for s in result.failures],
        "slopes": slopes,
        "q_star": None if q_star is None else {"estimate": q_star[0], "stderr": q_star[1]},
        "switch_times": switch,
        "good_event_frequency": good,
        "bounds": bnd,
    }


def validate_summary(summary: dict) -> None:
    import jsonschema

    jsonschema.validate(summary, SUMMARY_SCHEMA)


def estimate_q_star(cfg: ExperimentConfig, n_samples: int = 100_000, seed: int = 0):
    if cfg.features == "fixed_sequence":
        return None
    inst, model = _instance_and_model(cfg)
    return compute_q_star(inst, n_samples, np.random.default_rng(seed), model)


def emit(result: ExperimentResult, out_dir, bounds: TheoreticalBounds | None = None,
         q_star: tuple | None = None, plots: bool = False) -> list[Path]:
    """Write aggregate CSV, JSON summary and optional plots; returns the files written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = aggregate(result)
    files = [write_aggregate_csv(rows, out / "aggregate.csv")]
    summary = build_summary(result, rows, bounds, q_star)
    validate_summary(summary)
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    files.append(path)
    if plots:
        files.extend(plot_regret(result, rows, bounds, out))
    return files


def plot_regret(result: ExperimentResult, rows, bounds, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    files = []
    for p in result.config.policies:
        fig, ax = plt.subplots(figsize=(5, 4))
        pr = [r for r in rows if r.policy == p and math.isfinite(r.mean_regret)]
        if not pr:
            plt.close(fig)
            continue
        Ts = [r.T for r in pr]
        ax.plot(Ts, [r.mean_regret for r in pr], "o-", label="mean regret")
        ax.fill_between(Ts, [r.q25_regret for r in pr], [r.q75_regret for r in pr], alpha=0.25)
        # per-seed curves from the largest horizon
        big = max(Ts)
        for s in result.select(p, big):
            if s.ok:
                ax.plot(s.checkpoints, s.regret_curve, color="0.7", lw=0.6, zorder=0)
        if bounds is not None:
            grid = np.geomspace(min(Ts), big, 30)
            bvals = [bounds.for_policy(p, int(T)) for T in grid]
            if all(math.isfinite(b) for b in bvals):
                ax.plot(grid, bvals, "--", label="upper bound")
        ax.set_xscale("log")
        if all(r.mean_regret > 0 for r in pr):
            ax.set_yscale("log")
        ax.set_xlabel("T")
        ax.set_ylabel("cumulative expected regret")
        ax.set_title(p)
        ax.legend()
        fig.tight_layout()
        path = out / f"regret_{p}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        files.append(path)
    return files


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
