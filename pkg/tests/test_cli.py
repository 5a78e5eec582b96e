import subprocess
import sys

import pytest

from ancillary_pricing import acceptance
from ancillary_pricing.cli import EXIT_ACCEPTANCE, EXIT_EPISODE, EXIT_OK, EXIT_VALIDATION, main

from test_config import GOOD

TINY = GOOD.replace("horizons = 100, 1000", "horizons = 30, 60, 90").replace("seeds = 3", "seeds = 2")


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    return p


def test_validate_ok(cfg_path, capsys):
    assert main(["validate", str(cfg_path)]) == EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_validate_reports_fields(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text(TINY.replace("theta_bar = 0.5", "theta_bar = 0.1"))
    assert main(["validate", str(p)]) == EXIT_VALIDATION
    assert "instance.theta_f" in capsys.readouterr().err


def test_validate_missing_file(tmp_path):
    assert main(["validate", str(tmp_path / "none.ini")]) == EXIT_VALIDATION


def test_run_and_slope(cfg_path, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(cfg_path), "--out", str(out), "--workers", "1"]) == EXIT_OK
    assert (out / "aggregate.csv").exists() and (out / "summary.json").exists()
    eps = sorted(p.name for p in (out / "episodes").iterdir())
    assert len(eps) == 2 * 3 * 2
    header = (out / "episodes" / eps[0]).read_text().splitlines()[0]
    assert header == "t,strategy,p_f,p_a,p_b,d_f,d_a,d_b,exp_regret,strategy_regret,n_focal,good_event"
    capsys.readouterr()
    assert main(["slope", str(out / "aggregate.csv")]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("alg1\t")
    float(lines[0].split("\t")[1])
    assert "n/a" in lines[1]


def test_run_episode_failure_exit_code(cfg_path, tmp_path, monkeypatch, capsys):
    from ancillary_pricing import bench
    from ancillary_pricing.errors import EpisodeError

    real = bench.run_episode

    def flaky(instance, kind, T, seed, **kw):
        if seed == 1:
            raise EpisodeError("injected failure", period=3)
        return real(instance, kind, T, seed, **kw)

    monkeypatch.setattr(bench, "run_episode", flaky)
    assert main(["run", str(cfg_path), "--out", str(tmp_path / "o"), "--workers", "1"]) == EXIT_EPISODE
    assert "injected failure" in capsys.readouterr().err
    assert (tmp_path / "o" / "aggregate.csv").exists()


def test_accept_subset(capsys):
    assert main(["accept", "--only", "2,10"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "[PASS]  2." in out and "[PASS] 10." in out


def test_accept_failure_exit_code(monkeypatch):
    fake = acceptance.CriterionResult(99, "always fails", False, "forced")
    monkeypatch.setitem(acceptance.CRITERIA, 99, lambda run: fake)
    assert main(["accept", "--only", "99"]) == EXIT_ACCEPTANCE


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "ancillary_pricing", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "accept" in r.stdout
