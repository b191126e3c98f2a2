import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siteaddress.montecarlo import (Atoms, ShotConfig, State, apply_inner_loop, load_lattice, run_ensemble,
                                    run_shot, shot_rng, wrap_drift)
from siteaddress.physics import ApparatusConfig
from siteaddress.planner import SequencePlan, TargetPattern, build_plan, pattern_success_probability
from siteaddress.pulses import PulseDescriptor

TWO_PI = 2 * math.pi
SIGMA_OMEGA = TWO_PI * 6.4e3


@pytest.fixture(scope="module")
def cfg():
    return ApparatusConfig()


def _plan(cfg, sites=(0,), loops=1, f4=0.0, f3=1.0, p_max=0.843, init=1.0):
    pulse = PulseDescriptor.gaussian(20e-6, p_max=p_max, sigma_omega=SIGMA_OMEGA)
    plan = build_plan(TargetPattern(sites), pulse, loops, 45, cfg)
    return SequencePlan(plan.pulses, loops, 45, f4, f3, init, plan.pattern)


def _on_site(n, site=0):
    z = np.zeros(n)
    return Atoms(np.full(n, site, dtype=np.int64), z, z.copy(), z.copy(), np.zeros(n, dtype=np.int8))


@settings(max_examples=100, deadline=None)
@given(offset=st.floats(-1e-5, 1e-5))
def test_wrap_drift_range_and_period(offset):
    a = 0.433e-6
    w = wrap_drift(offset, a)
    assert -a / 2 < w <= a / 2 + 1e-18
    assert (offset - w) / a == pytest.approx(round((offset - w) / a), abs=1e-6)


def test_wrap_drift_of_ten_nm_per_shot():
    a = 0.433e-6
    cfg = ShotConfig(plan=SequencePlan(()), drift_rate=10e-9, shot_interval=10.0)
    offsets = [cfg.drift_offset(i, a) for i in range(500)]
    assert offsets[1] == pytest.approx(100e-9)
    assert max(offsets) <= a / 2 and min(offsets) > -a / 2


def test_shot_streams_are_independent_and_reproducible():
    a = shot_rng(7, 3).random(5)
    assert np.array_equal(a, shot_rng(7, 3).random(5))
    assert not np.array_equal(a, shot_rng(7, 4).random(5))
    assert not np.array_equal(a, shot_rng(7, 3, stream=1).random(5))


def test_loading_fraction(cfg):
    rng = np.random.default_rng(0)
    atoms = load_lattice(np.arange(100_000), 0.5, cfg, rng)
    se = math.sqrt(0.25 / 1e5)
    assert abs(len(atoms) / 1e5 - 0.5) < 3 * se
    assert np.all(atoms.state == State.ZERO)


def test_two_loop_peak_transfer_monte_carlo(cfg):
    # [PAPER] P_max(2) = (71 +- 2) %; [DERIVED] 0.843^2 with ideal push-out
    n = 100_000
    plan = _plan(cfg, loops=2)
    out = apply_inner_loop(_on_site(n), plan, 0.0, cfg, np.random.default_rng(5), rho0=0.0,
                           thermal_mode="frozen")
    # zero displacements, kept frozen, put every atom exactly on resonance
    frac = out.alive.mean()
    p = 0.843 ** 2
    assert abs(frac - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_pulses_toggle_state(cfg):
    # two coincident pi-pulses flip twice and return the atom to |0>
    pulse = PulseDescriptor.gaussian(20e-6, p_max=1.0, sigma_omega=SIGMA_OMEGA)
    plan = SequencePlan((pulse, pulse), 1, 45, 0.0, 1.0)
    out = apply_inner_loop(_on_site(1000), plan, 0.0, cfg, np.random.default_rng(1), rho0=0.0)
    # survivors are only the atoms that ended in |1>, which needs an odd number of flips
    assert out.alive.mean() < 0.05


def test_unpumped_atoms_are_removed(cfg):
    plan = _plan(cfg, p_max=1.0, init=0.0)
    out = apply_inner_loop(_on_site(1000), plan, 0.0, cfg, np.random.default_rng(2), rho0=0.0)
    assert not out.alive.any()


def test_far_detuned_atoms_are_pushed_out(cfg):
    plan = _plan(cfg, f4=0.01, f3=0.99)
    out = apply_inner_loop(_on_site(20_000, site=10), plan, 0.0, cfg, np.random.default_rng(3), rho0=0.0)
    assert abs(out.alive.mean() - 0.01) < 3 * math.sqrt(0.01 * 0.99 / 20_000)


def test_thermal_modes_differ_only_after_first_loop(cfg):
    plan1 = _plan(cfg, loops=1)
    atoms = load_lattice(np.arange(-5, 6), 1.0, cfg, np.random.default_rng(4))
    a = apply_inner_loop(atoms, plan1, 0.0, cfg, np.random.default_rng(9), thermal_mode="frozen")
    b = apply_inner_loop(atoms, plan1, 0.0, cfg, np.random.default_rng(9), thermal_mode="resampled")
    assert np.array_equal(a.state, b.state)
    plan2 = _plan(cfg, loops=2)
    b2 = apply_inner_loop(atoms, plan2, 0.0, cfg, np.random.default_rng(9), thermal_mode="resampled")
    assert not np.array_equal(b2.axial, atoms.axial)
    a2 = apply_inner_loop(atoms, plan2, 0.0, cfg, np.random.default_rng(9), thermal_mode="frozen")
    assert np.array_equal(a2.axial, atoms.axial)


def test_shot_config_validation():
    plan = SequencePlan(())
    with pytest.raises(ValueError):
        ShotConfig(plan, lattice_extent=0)
    with pytest.raises(ValueError):
        ShotConfig(plan, p_a=1.5)
    with pytest.raises(ValueError):
        ShotConfig(plan, thermal_mode="mixed")


def test_sites_centred_on_pattern(cfg):
    sc = ShotConfig(_plan(cfg, sites=(0, 2, 16, 18, 32, 34)), lattice_extent=200)
    s = sc.sites()
    assert len(s) == 200 and s[0] == 17 - 100


def test_ensemble_reproducible_across_workers(cfg):
    sc = ShotConfig(_plan(cfg, sites=(0, 2, 16, 18), loops=2, f4=0.01, f3=0.99), lattice_extent=60,
                    radial_offset=64e-6, seed=11)
    one = run_ensemble(sc, 40, cfg, workers=1)
    three = run_ensemble(sc, 40, cfg, workers=3)
    assert one.to_csv() == three.to_csv()
    assert one.summary_csv() == three.summary_csv()
    assert run_shot(sc, cfg, 17).survivors.site.tolist() == one.shots[17].survivors.site.tolist()


def test_all_sites_occupied_frequency(cfg):
    # [PAPER] p_ini about 0.4 % for eight atoms; agreement within 3 binomial SE at 1e5 shots
    n = 100_000
    sites = np.arange(0, 8 * 17, 17)
    hits = sum(len(load_lattice(sites, 0.5, cfg, shot_rng(0, i))) == 8 for i in range(n))
    p = 0.5 ** 8
    assert abs(hits / n - p) < 3 * math.sqrt(p * (1 - p) / n)


def test_full_pattern_frequency_matches_closed_form(cfg):
    # [DERIVED] (p_a P_keep)^N with P_keep = 0.843^2 after two ideal loops
    shots, n_sites = 100_000, 6
    rng = np.random.default_rng(8)
    loaded = rng.random((shots, n_sites)) < 0.5
    atoms = _on_site(int(loaded.sum()))
    out = apply_inner_loop(atoms, _plan(cfg, loops=2), 0.0, cfg, rng, rho0=0.0, thermal_mode="frozen")
    kept = np.zeros(loaded.shape, dtype=bool)
    kept[loaded] = out.alive
    freq = kept.all(axis=1).mean()
    p = pattern_success_probability(n_sites, 0.5, 0.843 ** 2).p_full
    assert abs(freq - p) < 3 * math.sqrt(p * (1 - p) / shots)
