"""Experiment configuration files.

Configs are INI files with three sections::

    [instance]
    theta_f = 0.3, -0.2
    theta_a = 0.1, 0.2
    theta_bar = 0.5
    p_low = 0.1
    p_high = 1.0
    features = iid_unit_ball

    [shocks]
    focal = uniform lo=-2 hi=2
    ancillary = uniform lo=-2 hi=2
    bundle = convolution

    [experiment]
    policies = alg1, alg2
    horizons = 1000, 10000
    seeds = 20
    output = results

``theta_f``/``theta_a`` may be replaced by ``generator_seed`` (plus ``dim``)
to draw parameters at random inside the ball.  ``features`` is one of
``iid_unit_ball``, ``iid_gaussian_normalized``, ``point_mass`` (with
``feature_point``) or ``fixed_sequence`` (with ``feature_file``, resolved
relative to the config file).  ``seeds`` is a count (seeds ``0..n-1``) or an
explicit comma-separated list.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .market import (FixedSequence, IIDGaussianNormalized, IIDUnitBall, MarketInstance, PointMass,
                     load_feature_file)
from .policies import OracleMode, PolicyKind, RefitCadence
from .pricing import PriceBox, ShockTriple
from .shocks import ShockDistribution, convolve, make_shock

FEATURE_KINDS = ("iid_unit_ball", "iid_gaussian_normalized", "point_mass", "fixed_sequence")
BENCHMARK_AUTO = "auto"


@dataclass(frozen=True)
class ShockSpec:
    """A shock law as written in a config: kind plus keyword parameters."""

    kind: str
    params: tuple = ()

    @classmethod
    def parse(cls, text: str) -> "ShockSpec":
        parts = text.split()
        if not parts:
            raise ValueError("empty distribution")
        params = []
        for item in parts[1:]:
            key, sep, val = item.partition("=")
            if not sep:
                raise ValueError(f"expected key=value, got {item!r}")
            params.append((key.strip(), float(val)))
        return cls(parts[0].lower(), tuple(params))

    def __str__(self) -> str:
        return " ".join([self.kind] + [f"{k}={v!r}" for k, v in self.params])

    def to_record(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    def build(self) -> ShockDistribution:
        return make_shock(self.kind, **dict(self.params))


@dataclass(frozen=True)
class ExperimentConfig:
    theta_f: tuple
    theta_a: tuple
    theta_bar: float
    p_low: float
    p_high: float
    focal: ShockSpec
    ancillary: ShockSpec
    bundle: ShockSpec | None  # None: convolution of focal and ancillary
    features: str = "iid_unit_ball"
    feature_file: str | None = None
    feature_point: tuple | None = None
    generator_seed: int | None = None
    policies: tuple = ("alg1",)
    horizons: tuple = (1000,)
    seeds: tuple = (0,)
    output: str = "results"
    benchmark_mode: str = BENCHMARK_AUTO
    lam: float = 1.0
    refit: str = "every"
    base_dir: str = field(default=".", compare=False)

    @property
    def dim(self) -> int:
        return len(self.theta_f)

    def feature_path(self) -> Path | None:
        if self.feature_file is None:
            return None
        p = Path(self.feature_file)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def dists(self) -> ShockTriple:
        f, a = self.focal.build(), self.ancillary.build()
        b = convolve(f, a) if self.bundle is None else self.bundle.build()
        return ShockTriple(f, a, b)

    def source(self):
        if self.features == "iid_unit_ball":
            return IIDUnitBall(self.dim)
        if self.features == "iid_gaussian_normalized":
            return IIDGaussianNormalized(self.dim)
        if self.features == "point_mass":
            return PointMass(self.feature_point)
        return FixedSequence(str(self.feature_path()))

    def instance(self) -> MarketInstance:
        return MarketInstance(np.array(self.theta_f), np.array(self.theta_a), self.dists(),
                              PriceBox(self.p_low, self.p_high), self.theta_bar, self.source())

    def benchmark_for(self, policy: str):
        """Benchmark override for ``policy``, or None to use its natural one."""
        return None if self.benchmark_mode == BENCHMARK_AUTO else OracleMode(self.benchmark_mode)


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _names(text: str) -> tuple:
    return tuple(v.strip().lower() for v in text.split(",") if v.strip())


def random_parameters(dim: int, theta_bar: float, seed: int) -> tuple[tuple, tuple]:
    """Parameters with ``||theta_f||, ||theta_a||, ||theta_f + theta_a|| <= theta_bar``.

    Each vector is drawn uniformly in the ball of radius ``theta_bar / 2``.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(2):
        z = rng.standard_normal(dim)
        z *= rng.random() ** (1.0 / dim) * 0.5 * theta_bar / np.linalg.norm(z)
        out.append(tuple(float(v) for v in z))
    return out[0], out[1]


def parse_config(text: str, base_dir=".", source: str = "<string>") -> ExperimentConfig:
    """Parse and validate config text; all problems are reported together.

    Raises
    ------
    ParseError
        If the text is not a well-formed INI file.
    ValidationError
        Listing every invalid field as ``section.key: message``.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ParseError(f"{source}: {exc}") from exc
    errors: list[str] = []
    values: dict = {"base_dir": str(base_dir)}

    def get(section, key, conv, default=None, required=False):
        name = f"{section}.{key}"
        if not cp.has_section(section) or not cp.has_option(section, key):
            if required:
                errors.append(f"{name}: missing")
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            errors.append(f"{name}: cannot parse {raw!r} ({exc})")
            return default

    for section in ("instance", "shocks", "experiment"):
        if not cp.has_section(section):
            errors.append(f"{section}: section missing")
    known = {
        "instance": {"theta_f", "theta_a", "theta_bar", "p_low", "p_high", "features", "feature_file",
                     "feature_point", "generator_seed", "dim"},
        "shocks": {"focal", "ancillary", "bundle"},
        "experiment": {"policies", "horizons", "seeds", "output", "benchmark_mode", "lambda", "refit"},
    }
    for section in cp.sections():
        if section not in known:
            errors.append(f"{section}: unknown section")
            continue
        for key in cp.options(section):
            if key not in known[section]:
                errors.append(f"{section}.{key}: unknown key")

    theta_bar = get("instance", "theta_bar", float, required=True)
    p_low = get("instance", "p_low", float, required=True)
    p_high = get("instance", "p_high", float, required=True)
    gen_seed = get("instance", "generator_seed", int)
    theta_f = get("instance", "theta_f", _floats)
    theta_a = get("instance", "theta_a", _floats)
    dim = get("instance", "dim", int)
    if gen_seed is not None:
        if theta_f is not None or theta_a is not None:
            errors.append("instance.generator_seed: give either generator_seed or theta_f/theta_a, not both")
        elif dim is None or dim < 1:
            errors.append("instance.dim: a positive dimension is required with generator_seed")
        elif theta_bar is not None and theta_bar > 0:
            theta_f, theta_a = random_parameters(dim, theta_bar, gen_seed)
    else:
        if theta_f is None:
            errors.append("instance.theta_f: missing")
        if theta_a is None:
            errors.append("instance.theta_a: missing")
    if theta_f is not None and theta_a is not None:
        if len(theta_f) != len(theta_a) or not theta_f:
            errors.append("instance.theta_a: must have the same positive length as theta_f")
        elif dim is not None and len(theta_f) != dim:
            errors.append(f"instance.dim: {dim} does not match parameter length {len(theta_f)}")
        elif theta_bar is not None:
            for key, th in (("theta_f", theta_f), ("theta_a", theta_a),
                            ("theta_f+theta_a", np.add(theta_f, theta_a))):
                nrm = float(np.linalg.norm(th))
                if not nrm <= theta_bar + 1e-12:
                    errors.append(f"instance.{key}: norm {nrm:.6g} exceeds theta_bar {theta_bar:g} "
                                  "(parameters must lie in the ball)")
    if theta_bar is not None and not (theta_bar > 0 and math.isfinite(theta_bar)):
        errors.append(f"instance.theta_bar: must be positive and finite, got {theta_bar}")
    if p_low is not None and p_high is not None and not (0 < p_low < p_high < math.inf):
        errors.append(f"instance.p_low/p_high: need 0 < p_low < p_high < inf, got [{p_low}, {p_high}]")

    features = get("instance", "features", lambda s: s.strip().lower(), "iid_unit_ball")
    feature_file = get("instance", "feature_file", str.strip)
    feature_point = get("instance", "feature_point", _floats)
    if features not in FEATURE_KINDS:
        errors.append(f"instance.features: unknown kind {features!r}; expected one of {', '.join(FEATURE_KINDS)}")
    elif features == "fixed_sequence":
        if feature_file is None:
            errors.append("instance.feature_file: required for fixed_sequence features")
        else:
            path = Path(feature_file) if Path(feature_file).is_absolute() else Path(base_dir) / feature_file
            try:
                X = load_feature_file(path)
                if theta_f is not None and X.shape[1] != len(theta_f):
                    errors.append(f"instance.feature_file: {X.shape[1]} columns, parameters have {len(theta_f)}")
            except OSError as exc:
                errors.append(f"instance.feature_file: cannot read {path} ({exc.strerror})")
            except (ValueError, ValidationError) as exc:
                errors.append(f"instance.feature_file: {exc}")
    elif features == "point_mass":
        if feature_point is None:
            errors.append("instance.feature_point: required for point_mass features")
        else:
            if np.linalg.norm(feature_point) > 1 + 1e-12:
                errors.append("instance.feature_point: norm exceeds 1")
            if theta_f is not None and len(feature_point) != len(theta_f):
                errors.append("instance.feature_point: length does not match parameters")

    shocks = {}
    for key in ("focal", "ancillary", "bundle"):
        raw = get("shocks", key, str, required=key != "bundle")
        if raw is None or (key == "bundle" and raw.strip().lower() == "convolution"):
            shocks[key] = None
            continue
        try:
            spec = ShockSpec.parse(raw)
            spec.build()
            shocks[key] = spec
        except (ValueError, TypeError) as exc:
            errors.append(f"shocks.{key}: {exc}")
            shocks[key] = None

    policies = get("experiment", "policies", _names, required=True) or ()
    for name in policies:
        try:
            PolicyKind(name)
        except ValueError:
            errors.append(f"experiment.policies: unknown policy {name!r}; expected one of "
                          + ", ".join(k.value for k in PolicyKind))
    if not policies and cp.has_option("experiment", "policies"):
        errors.append("experiment.policies: empty")
    horizons = get("experiment", "horizons", _ints, required=True) or ()
    if any(h < 1 for h in horizons) or (not horizons and cp.has_option("experiment", "horizons")):
        errors.append(f"experiment.horizons: need positive integers, got {horizons}")

    def seeds_conv(s):
        vals = _ints(s)
        if len(vals) == 1 and "," not in s:
            if vals[0] < 1:
                raise ValueError("seed count must be positive")
            return tuple(range(vals[0]))
        return vals

    seeds = get("experiment", "seeds", seeds_conv, required=True) or ()
    if len(set(seeds)) != len(seeds):
        errors.append("experiment.seeds: duplicate seeds")
    if any(s < 0 for s in seeds):
        errors.append("experiment.seeds: seeds must be nonnegative")
    output = get("experiment", "output", str.strip, "results")
    bench = get("experiment", "benchmark_mode", lambda s: s.strip().lower(), BENCHMARK_AUTO)
    if bench != BENCHMARK_AUTO and bench not in {m.value for m in OracleMode}:
        errors.append(f"experiment.benchmark_mode: unknown mode {bench!r}")
    lam = get("experiment", "lambda", float, 1.0)
    if lam is not None and not lam >= 1.0:
        errors.append(f"experiment.lambda: must be at least 1, got {lam}")
    refit = get("experiment", "refit", lambda s: s.strip().lower(), "every")
    if refit not in {c.value for c in RefitCadence}:
        errors.append(f"experiment.refit: unknown cadence {refit!r}")
    if "fixed_sequence" == features and horizons and feature_file is not None:
        try:
            n_rows = len(load_feature_file(Path(feature_file) if Path(feature_file).is_absolute()
                                           else Path(base_dir) / feature_file))
            if max(horizons) > n_rows:
                errors.append(f"experiment.horizons: {max(horizons)} exceeds the {n_rows} feature rows")
        except (OSError, ValueError, ValidationError):
            pass

    if not errors:
        # checks that need the assembled instance (support vs working interval etc.)
        cfg = ExperimentConfig(
            theta_f=tuple(theta_f), theta_a=tuple(theta_a), theta_bar=theta_bar, p_low=p_low,
            p_high=p_high, focal=shocks["focal"], ancillary=shocks["ancillary"], bundle=shocks["bundle"],
            features=features, feature_file=feature_file,
            feature_point=None if feature_point is None else tuple(feature_point),
            generator_seed=gen_seed, policies=tuple(policies), horizons=tuple(horizons),
            seeds=tuple(seeds), output=output, benchmark_mode=bench, lam=lam, refit=refit,
            base_dir=str(base_dir))
        try:
            _check_constants(cfg)
        except ValidationError as exc:
            errors.extend(exc.errors)
        if not errors:
            return cfg
    raise ValidationError(f"{source}: {len(errors)} invalid field(s): " + "; ".join(errors), errors)


def _check_constants(cfg: ExperimentConfig) -> None:
    from .shocks import compute_constants

    errors = []
    try:
        dists = cfg.dists()
    except (ValueError, ValidationError) as exc:
        raise ValidationError(f"shocks: {exc}") from exc
    for key, dist in zip(("focal", "ancillary", "bundle"), dists):
        try:
            compute_constants(dist, cfg.p_low, cfg.p_high, cfg.theta_bar)
        except ValidationError as exc:
            errors.append(f"shocks.{key}: {exc}")
    if errors:
        raise ValidationError("; ".join(errors), errors)


def load_config(path) -> ExperimentConfig:
    """Read and validate a config file.

    Raises
    ------
    ParseError
        If the file is missing, unreadable, or malformed.
    ValidationError
        If any field is invalid.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text, base_dir=path.parent, source=str(path))


def _fmt_floats(vals) -> str:
    return ", ".join(repr(float(v)) for v in vals)


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize to INI text that :func:`parse_config` reads back to an equal config."""
    lines = ["[instance]"]
    if cfg.generator_seed is not None:
        lines += [f"generator_seed = {cfg.generator_seed}", f"dim = {cfg.dim}"]
    else:
        lines += [f"theta_f = {_fmt_floats(cfg.theta_f)}", f"theta_a = {_fmt_floats(cfg.theta_a)}"]
    lines += [f"theta_bar = {cfg.theta_bar!r}", f"p_low = {cfg.p_low!r}", f"p_high = {cfg.p_high!r}",
              f"features = {cfg.features}"]
    if cfg.feature_file is not None:
        lines.append(f"feature_file = {cfg.feature_file}")
    if cfg.feature_point is not None:
        lines.append(f"feature_point = {_fmt_floats(cfg.feature_point)}")
    lines += ["", "[shocks]", f"focal = {cfg.focal}", f"ancillary = {cfg.ancillary}",
              f"bundle = {'convolution' if cfg.bundle is None else cfg.bundle}",
              "", "[experiment]",
              f"policies = {', '.join(cfg.policies)}",
              f"horizons = {', '.join(str(h) for h in cfg.horizons)}",
              f"seeds = {', '.join(str(s) for s in cfg.seeds)},",
              f"output = {cfg.output}",
              f"benchmark_mode = {cfg.benchmark_mode}",
              f"lambda = {cfg.lam!r}",
              f"refit = {cfg.refit}", ""]
    return "\n".join(lines)


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(dump_config(cfg))
    return path
