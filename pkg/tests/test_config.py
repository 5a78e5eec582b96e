import numpy as np
import pytest
from hypothesis import given, strategies as st

from ancillary_pricing import ParseError, ValidationError, load_config, parse_config, save_config
from ancillary_pricing.config import ExperimentConfig, ShockSpec, dump_config, random_parameters

GOOD = """
[instance]
theta_f = 0.3, -0.2
theta_a = 0.1, 0.2
theta_bar = 0.5
p_low = 0.1
p_high = 1.0

[shocks]
focal = uniform lo=-2 hi=2
ancillary = uniform lo=-2 hi=2
bundle = convolution

[experiment]
policies = alg1, oracle_unbundle
horizons = 100, 1000
seeds = 3
"""


def test_parse_good_config():
    cfg = parse_config(GOOD)
    assert cfg.theta_f == (0.3, -0.2)
    assert cfg.seeds == (0, 1, 2)
    assert cfg.bundle is None
    assert cfg.policies == ("alg1", "oracle_unbundle")
    assert cfg.dists().bundle.kind == "convolution"


def test_round_trip(tmp_path):
    cfg = parse_config(GOOD, base_dir=tmp_path)
    path = save_config(cfg, tmp_path / "c.ini")
    assert load_config(path) == cfg
    one = ExperimentConfig(**{**cfg.__dict__, "seeds": (7,)})
    assert load_config(save_config(one, tmp_path / "one.ini")).seeds == (7,)


def test_missing_file_names_path(tmp_path):
    missing = tmp_path / "nope.ini"
    with pytest.raises(ParseError, match="nope.ini"):
        load_config(missing)


def test_malformed_ini():
    with pytest.raises(ParseError):
        parse_config("theta_f = 1\n[instance")


def test_parameter_outside_ball_is_field_addressed():
    with pytest.raises(ValidationError) as info:
        parse_config(GOOD.replace("theta_f = 0.3, -0.2", "theta_f = 0.6, 0.0"))
    assert any(e.startswith("instance.theta_f:") for e in info.value.errors)


def test_all_errors_reported_together():
    bad = (GOOD.replace("p_low = 0.1", "p_low = 2.0")
               .replace("alg1, oracle_unbundle", "alg1, alg7")
               .replace("seeds = 3", "seeds = 1, 1")
               .replace("focal = uniform lo=-2 hi=2", "focal = uniform lo=2 hi=-2"))
    with pytest.raises(ValidationError) as info:
        parse_config(bad)
    fields = {e.split(":")[0] for e in info.value.errors}
    assert {"instance.p_low/p_high", "experiment.policies", "experiment.seeds", "shocks.focal"} <= fields


def test_working_interval_checked_against_support():
    with pytest.raises(ValidationError) as info:
        parse_config(GOOD.replace("p_high = 1.0", "p_high = 1.8"))
    assert any(e.startswith("shocks.focal") for e in info.value.errors)


def test_unknown_keys_and_sections():
    with pytest.raises(ValidationError) as info:
        parse_config(GOOD + "\n[extra]\nx = 1\n")
    assert "extra: unknown section" in info.value.errors


def test_lambda_must_be_at_least_one():
    with pytest.raises(ValidationError):
        parse_config(GOOD + "lambda = 0.5\n")


def test_generator_seed(tmp_path):
    text = GOOD.replace("theta_f = 0.3, -0.2\ntheta_a = 0.1, 0.2", "generator_seed = 4\ndim = 3")
    cfg = parse_config(text)
    assert len(cfg.theta_f) == 3
    assert np.linalg.norm(np.add(cfg.theta_f, cfg.theta_a)) <= 0.5
    assert parse_config(text) == cfg


@given(st.integers(1, 6), st.floats(0.1, 2.0), st.integers(0, 10_000))
def test_random_parameters_stay_in_ball(d, theta_bar, seed):
    f, a = random_parameters(d, theta_bar, seed)
    for v in (f, a, np.add(f, a)):
        assert np.linalg.norm(v) <= theta_bar + 1e-12


def test_fixed_sequence_config(tmp_path):
    (tmp_path / "x.csv").write_text("0.1,0.2\n0.3,0.4\n")
    text = GOOD.replace("p_high = 1.0", "p_high = 1.0\nfeatures = fixed_sequence\nfeature_file = x.csv")
    with pytest.raises(ValidationError, match="feature rows"):
        parse_config(text, base_dir=tmp_path)
    cfg = parse_config(text.replace("horizons = 100, 1000", "horizons = 2"), base_dir=tmp_path)
    assert cfg.source().rows.shape == (2, 2)


def test_shock_spec_round_trip():
    s = ShockSpec.parse("Normal mean=0.5 sd=1")
    assert s == ShockSpec("normal", (("mean", 0.5), ("sd", 1.0)))
    assert ShockSpec.parse(str(s)) == s
    with pytest.raises(ValueError):
        ShockSpec.parse("normal mean")


def test_dump_is_stable():
    cfg = parse_config(GOOD)
    assert dump_config(cfg) == dump_config(parse_config(dump_config(cfg)))
