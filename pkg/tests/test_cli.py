import subprocess
import sys

import numpy as np
import pytest

from siteaddress import config as runconfig
from siteaddress.cli import main
from siteaddress.physics import ApparatusConfig
from siteaddress.planner import SequencePlan, is_commensurate


def _run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def _report(path):
    out = {}
    for line in path.read_text().splitlines():
        if "=" in line and not line.startswith("["):
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


@pytest.fixture(scope="module")
def pair_plan(tmp_path_factory):
    d = tmp_path_factory.mktemp("plan")
    code = main(["plan", "--pattern", "0,2,16,18,32,34", "--loops", "2", "--p-max", "0.843",
                 "--sigma-omega", "6400", "--out", str(d)])
    assert code == 0
    return d / "plan.plan"


# --- exit codes ------------------------------------------------------------------------

def test_unknown_flag_is_usage_error(tmp_path):
    assert _run(tmp_path, "calibrate", "--bogus") == 1


def test_missing_subcommand_is_usage_error(tmp_path):
    assert main([]) == 1


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[apparatus]\nflux_capacitor = 1\n")
    assert _run(tmp_path, "calibrate", "--config", str(cfg)) == 1


def test_missing_plan_file_is_usage_error(tmp_path):
    assert _run(tmp_path, "simulate", "--plan", str(tmp_path / "nope.plan")) == 1


def test_infeasible_deconvolution_is_numeric_failure(tmp_path):
    assert _run(tmp_path, "analyze", "deconvolve", "--sigma", "0.25") == 2


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "siteaddress.cli", "calibrate", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "Hz/(site A)" in res.stdout


# --- calibrate, plan, spectrum, mott-plane ------------------------------------------------------

def test_calibrate_report(tmp_path):
    assert _run(tmp_path, "calibrate") == 0
    rep = _report(tmp_path / "calibration.txt")
    assert rep["frequency_shift_per_um"] == "671 Hz/(um A)"
    # [DERIVED] 671 * 0.433 and its product with 45 A
    assert float(rep["frequency_shift_per_site"].split()[0]) == pytest.approx(290.543, abs=1e-3)
    assert float(rep["site_splitting"].split()[0]) == pytest.approx(13074.4, abs=0.1)
    assert (tmp_path / "manifest.txt").exists()


def test_calibrate_exact_gamma(tmp_path):
    assert _run(tmp_path, "calibrate", "--exact-gamma") == 0
    rep = _report(tmp_path / "calibration.txt")
    # [PAPER] -(274 +- 1) uG/(um A)
    assert float(rep["field_gradient_per_current"].split()[0]) == pytest.approx(-274, abs=2)


def test_eight_site_plan_is_commensurate(tmp_path):
    sites = ",".join(str(17 * i) for i in range(8))
    assert _run(tmp_path, "plan", "--pattern", sites, "--p-max", "0.843", "--sigma-omega", "6400") == 0
    plan = SequencePlan.from_text((tmp_path / "plan.plan").read_text())
    assert len(plan.pulses) == 8
    assert is_commensurate(plan.frequencies, plan.current, ApparatusConfig())


def test_plan_fills_response_from_bloch_route(tmp_path):
    assert _run(tmp_path, "plan", "--pattern", "0,2") == 0
    plan = SequencePlan.from_text((tmp_path / "plan.plan").read_text())
    assert plan.pulses[0].p_max == pytest.approx(0.922, abs=2e-3)


def test_spectrum_with_pinned_response(tmp_path):
    assert _run(tmp_path, "spectrum", "--p-max", "0.843", "--sigma-omega", "6400", "--loops", "2") == 0
    rows = np.genfromtxt(tmp_path / "spectrum.csv", delimiter=",", names=True)
    assert rows["transfer"].max() == pytest.approx(0.843 ** 2, abs=1e-6)


def test_mott_plane_report(tmp_path):
    assert _run(tmp_path, "mott-plane") == 0
    rep = _report(tmp_path / "mott_plane.txt")
    assert float(rep["atoms_in_plane"]) == pytest.approx(2500, abs=500)


# --- simulate, analyze, replay ----------------------------------------------------------------

def _sim(tmp_path, plan, *extra):
    return _run(tmp_path, "simulate", "--plan", str(plan), "--shots", "30", "--seed", "5", "--rho0", "64e-6",
                *extra)


def test_simulate_is_bit_identical_across_runs_and_workers(tmp_path, pair_plan):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert _sim(a, pair_plan, "--localize", "--images", "2") == 0
    assert _sim(b, pair_plan, "--localize", "--images", "2") == 0
    assert _sim(c, pair_plan, "--localize", "--images", "2", "--workers", "3") == 0
    for name in ("atoms.csv", "survival.csv", "shots.csv", "positions.csv", "images/shot_00001.pgm"):
        assert (a / name).read_bytes() == (b / name).read_bytes() == (c / name).read_bytes()


def test_seed_changes_output(tmp_path, pair_plan):
    assert _sim(tmp_path / "a", pair_plan) == 0
    assert _run(tmp_path / "b", "simulate", "--plan", str(pair_plan), "--shots", "30", "--seed", "6",
                "--rho0", "64e-6") == 0
    assert (tmp_path / "a" / "atoms.csv").read_bytes() != (tmp_path / "b" / "atoms.csv").read_bytes()


def test_replay_reproduces_outputs(tmp_path, pair_plan):
    assert _sim(tmp_path / "orig", pair_plan, "--localize") == 0
    assert main(["replay", str(tmp_path / "orig" / "manifest.txt"), "--out", str(tmp_path / "again")]) == 0
    for name in ("atoms.csv", "positions.csv", "shots.csv"):
        assert (tmp_path / "orig" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_histogram_from_positions(tmp_path, pair_plan):
    assert _run(tmp_path, "simulate", "--plan", str(pair_plan), "--shots", "150", "--seed", "5",
                "--rho0", "64e-6", "--localize") == 0
    assert _run(tmp_path, "analyze", "histogram", "--positions", str(tmp_path / "positions.csv"),
                "--pattern", "0,2,16,18,32,34", "--shots", "150") == 0
    rep = _report(tmp_path / "analyze_histogram.txt")
    counts = np.genfromtxt(tmp_path / "histogram.csv", delimiter=",", names=True)["count"]
    assert counts.sum() == int(rep["paired"])
    assert int(rep["paired"]) + int(rep["skipped"]) == 450
    assert 0 < float(rep["center_sites"]) < 4


def test_sparse_histogram_is_numeric_failure(tmp_path, pair_plan):
    # a handful of pairs in two bins cannot fix a three-parameter Gaussian
    assert _sim(tmp_path, pair_plan, "--localize") == 0
    assert _run(tmp_path, "analyze", "histogram", "--positions", str(tmp_path / "positions.csv"),
                "--pattern", "0,2,16,18,32,34", "--shots", "30") == 2
    counts = np.genfromtxt(tmp_path / "histogram.csv", delimiter=",", names=True)["count"]
    assert 0 < counts.sum() <= 90


def test_deconvolve_report(tmp_path):
    assert _run(tmp_path, "analyze", "deconvolve", "--sigma", "0.6") == 0
    rep = _report(tmp_path / "analyze_deconvolve.txt")
    assert float(rep["drift_free_sites"]) == pytest.approx(0.52, abs=0.01)


# --- configuration ---------------------------------------------------------------------------

def test_config_round_trip():
    run = runconfig.RunConfig()
    text = runconfig.dumps(run)
    back = runconfig.loads(text)
    assert back == run
    assert runconfig.dumps(back) == text
    assert back.apparatus_config() == ApparatusConfig()


def test_config_overrides_reach_physics(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[apparatus]\ncoil_current = 30 A\n")
    assert _run(tmp_path, "calibrate", "--config", str(cfg)) == 0
    rep = _report(tmp_path / "calibration.txt")
    assert float(rep["site_splitting"].split()[0]) == pytest.approx(671 * 0.433 * 30, rel=1e-6)
