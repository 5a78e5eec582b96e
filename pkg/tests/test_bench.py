import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ancillary_pricing import DegenerateError
from ancillary_pricing.acceptance import STANDARD
from ancillary_pricing.bench import (AGGREGATE_COLUMNS, TheoreticalBounds, aggregate, bounds_for, checkpoints,
                                     concave_in_T, emit, fit_regret_slope, read_aggregate_csv,
                                     run_experiment, validate_summary, write_aggregate_csv)

GRID = (1_000, 10_000, 100_000)


def test_slope_examples():
    assert fit_regret_slope([(T, math.sqrt(T)) for T in GRID]) == pytest.approx(0.5, abs=1e-9)
    assert fit_regret_slope([(T, float(T)) for T in GRID]) == pytest.approx(1.0, abs=1e-9)
    s = fit_regret_slope([(T, math.sqrt(T) * math.log(T)) for T in GRID])
    assert 0.5 <= s <= 0.65


def test_slope_degenerate_inputs():
    with pytest.raises(DegenerateError):
        fit_regret_slope([(10, 1.0), (100, 2.0)])
    with pytest.raises(DegenerateError):
        fit_regret_slope([(10, 1.0), (100, 0.0), (1000, 3.0)])


def test_concavity_check():
    assert concave_in_T([(T, math.sqrt(T)) for T in GRID])
    assert concave_in_T([(T, math.sqrt(T) * math.log(T)) for T in GRID])
    assert not concave_in_T([(T, T ** 1.2) for T in GRID])


def test_bound_spot_check():
    b = TheoreticalBounds(d=2, p_high=1.0, eta=0.25, b_bar=203.5)
    L = math.log(102 / 2)
    hand = 2 + 6 * math.sqrt(2) * 203.5 * math.sqrt(2 * 100 * L) + 2 * 2 * 0.25 * 203.5**2 * L
    assert b.alg1_worst(100) == pytest.approx(hand, abs=1e-6)
    iid = TheoreticalBounds(d=2, p_high=1.0, eta=0.25, b_bar=203.5, q_star=0.3)
    assert iid.alg1_iid(100) == pytest.approx(2 + 288 * 2 * 0.25 * 203.5**2 / 0.3 * math.log(103 / 2))


@given(st.integers(2, 10**6))
def test_bounds_nonnegative_and_nondecreasing(T):
    b = bounds_for(STANDARD, q_star=0.3)
    for name in ("alg1_worst", "alg1_iid", "alg2", "alg3"):
        f = getattr(b, name)
        assert 0 <= f(T) <= f(T + 1)


def test_checkpoints():
    cps = checkpoints(20_000)
    assert cps[0] >= 1 and cps[-1] == 20_000
    assert np.all(np.diff(cps) > 0)


@pytest.fixture(scope="module")
def small_result():
    cfg = replace(STANDARD, policies=("alg2", "oracle_per_customer"), horizons=(50, 120), seeds=(0, 1))
    return run_experiment(cfg)


def test_oracle_aggregate_is_zero(small_result):
    rows = [r for r in aggregate(small_result) if r.policy == "oracle_per_customer"]
    assert all(r.mean_regret == 0.0 and r.q75_regret == 0.0 for r in rows)


def test_aggregate_shape_and_csv(small_result, tmp_path):
    rows = aggregate(small_result)
    assert len(rows) == 2 * 2
    path = write_aggregate_csv(rows, tmp_path / "agg.csv")
    header = path.read_text().splitlines()[0]
    assert header == ",".join(AGGREGATE_COLUMNS)
    series = read_aggregate_csv(path)
    assert [T for T, _ in series["alg2"]] == [50, 120]


def test_identical_seeds_give_identical_rows():
    cfg = replace(STANDARD, horizons=(80,), seeds=(5, 6))
    a, b = run_experiment(cfg), run_experiment(cfg)
    assert a.summaries == b.summaries


def test_worker_count_does_not_change_output(tmp_path):
    cfg = replace(STANDARD, policies=("alg1", "alg3"), horizons=(60,), seeds=(0, 1, 2))
    one = write_aggregate_csv(aggregate(run_experiment(cfg, workers=1)), tmp_path / "a.csv")
    two = write_aggregate_csv(aggregate(run_experiment(cfg, workers=2)), tmp_path / "b.csv")
    assert one.read_bytes() == two.read_bytes()


def test_emit_writes_valid_summary(small_result, tmp_path):
    bounds = bounds_for(small_result.config, 0.3)
    files = emit(small_result, tmp_path, bounds, (0.3, 0.001), plots=True)
    names = {f.name for f in files}
    assert {"aggregate.csv", "summary.json"} <= names
    assert any(n.endswith(".png") for n in names)
    summary = json.loads((tmp_path / "summary.json").read_text())
    validate_summary(summary)
    dom = summary["bounds"]["alg2"]
    assert all(v["dominates"] for v in dom.values())


def test_failed_episodes_are_recorded(tmp_path):
    rows = np.zeros((30, 2))
    (tmp_path / "f.csv").write_text("\n".join("0,0" for _ in rows) + "\n")
    cfg = replace(STANDARD, features="fixed_sequence", feature_file=str(tmp_path / "f.csv"),
                  horizons=(20, 40), seeds=(0,))
    res = run_experiment(cfg)
    assert len(res.failures) == 1 and res.failures[0].horizon == 40
    agg = {r.T: r for r in aggregate(res)}
    assert agg[40].n_failed == 1 and agg[20].n_failed == 0


@pytest.mark.slow
def test_sublinearity_smoke():
    # mean regret at 1e4 below 10x the mean at 1e3 (a sqrt(T) log T curve gives about 4.2x)
    res = run_experiment(replace(STANDARD, horizons=(1_000, 10_000), seeds=tuple(range(20))))
    means = {r.T: r.mean_regret for r in aggregate(res)}
    ratio = means[10_000] / means[1_000]
    print(f"mean regret ratio 1e4/1e3 = {ratio:.3f}")
    assert ratio < 10
