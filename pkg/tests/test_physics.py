import math
import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import constants as const

from siteaddress.errors import ValidityViolation
from siteaddress.physics import (ApparatusConfig, Position, calibrate_gradient, check_validity, detuning,
                                 exact_gyromagnetic_ratio, exact_transition_frequency, field_gradient,
                                 gradient_frequency, lande_gf, magnetic_field, radial_curvature,
                                 site_splitting, thermal_widths, transition_frequency)

from .oracles import cs_gamma_closed_form

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def cfg():
    return ApparatusConfig()


# --- calibration ---------------------------------------------------------------

def test_calibration_per_site_from_per_micron(cfg):
    cal = calibrate_gradient(cfg)
    # [DERIVED] 671 Hz/(um A) * 0.433 um
    assert cal.hz_per_site_per_amp == pytest.approx(671 * 0.433, rel=1e-12)
    # [PAPER] (291 +- 2) Hz per site and amp, (671 +- 3) Hz/(um A)
    assert abs(cal.hz_per_site_per_amp - 291) < 2
    assert cal.hz_per_um_per_amp == pytest.approx(671)


def test_site_splitting_at_max_current(cfg):
    # [DERIVED] 290.543 Hz/(site A) * 45 A
    assert site_splitting(45, cfg) / TWO_PI == pytest.approx(671 * 0.433 * 45, rel=1e-12)
    # [PAPER] ~13 kHz between neighbouring sites at 45 A
    assert site_splitting(45, cfg) / TWO_PI == pytest.approx(13.0e3, rel=0.01)


def test_gradient_in_gauss_per_cm(cfg):
    # [PAPER] approximately 120 G/cm at 45 A; [DERIVED] 671e6*45/2.5e6 G/m
    g = calibrate_gradient(cfg).gradient_gauss_per_cm
    assert g == pytest.approx(671e6 * 45 / 2.5e6 / 100, rel=1e-12)
    assert g == pytest.approx(120, rel=0.02)


def test_exact_gamma_matches_closed_form():
    # [DERIVED] closed-form hyperfine g-factors for I = 7/2
    assert exact_gyromagnetic_ratio() == pytest.approx(cs_gamma_closed_form(), rel=1e-12)
    assert exact_gyromagnetic_ratio() / TWO_PI == pytest.approx(-2.4524e6, rel=1e-4)


def test_lande_factors_closed_form():
    gj, gi = 2.00254032, -0.00039885395
    assert lande_gf(4.0) == pytest.approx(gj / 8 + 7 * gi / 8, rel=1e-12)
    assert lande_gf(3.0) == pytest.approx(-gj / 8 + 9 * gi / 8, rel=1e-12)


def test_exact_gamma_gradient_per_current(cfg):
    cal = calibrate_gradient(cfg.with_exact_gamma())
    # [PAPER] B'/I = -(274 +- 1) uG/(um A)
    assert cal.microgauss_per_um_per_amp == pytest.approx(-274, abs=2)
    # [DERIVED] 671 Hz/(um A) / gamma
    assert cal.microgauss_per_um_per_amp == pytest.approx(
        671 / (cs_gamma_closed_form() / TWO_PI) * 1e6, rel=1e-12)


def test_report_lines_contain_units(cfg):
    text = "\n".join(calibrate_gradient(cfg).report_lines())
    assert "Hz/(site A)" in text and "Hz/(um A)" in text and "G/cm" in text


# --- field and transition frequency ----------------------------------------------

def test_field_on_axis_is_guiding_plus_gradient(cfg):
    bp = field_gradient(45, cfg)
    b = magnetic_field(Position(z=1e-6), 45, cfg)
    assert b[0] == 0 and b[1] == 0
    assert b[2] == pytest.approx(cfg.guiding_field + bp * 1e-6, rel=1e-14)


def test_field_is_divergence_free(cfg):
    # dBx/dx + dBy/dy + dBz/dz = -B'/2 - B'/2 + B'
    h = 1e-6
    bp = field_gradient(45, cfg)
    bx = (magnetic_field(Position(x=h), 45, cfg)[0] - magnetic_field(Position(x=-h), 45, cfg)[0]) / (2 * h)
    by = (magnetic_field(Position(y=h), 45, cfg)[1] - magnetic_field(Position(y=-h), 45, cfg)[1]) / (2 * h)
    bz = (magnetic_field(Position(z=h), 45, cfg)[2] - magnetic_field(Position(z=-h), 45, cfg)[2]) / (2 * h)
    assert bx + by + bz == pytest.approx(0, abs=1e-9 * abs(bp))


@pytest.mark.parametrize("rho", [5e-6, 20e-6, 64e-6])
def test_second_order_expansion_against_exact_norm(cfg, rho):
    # the neglected term is O(omega'^4 rho^4 / delta0^3); check the residual
    # is far below the quadratic term and shrinks as rho^4
    r = Position(z=0.0, x=rho)
    exact = exact_transition_frequency(r, 45, cfg)
    approx = transition_frequency(r, 45, cfg)
    quad = radial_curvature(45, cfg) * rho ** 2
    assert abs(exact - approx) < 0.05 * quad
    wp = gradient_frequency(45, cfg)
    bound = wp ** 4 * rho ** 4 / (128 * cfg.delta0 ** 3)
    assert abs(exact - approx) == pytest.approx(bound, rel=0.05)


def test_validity_violation_strict_and_warning(cfg):
    far = Position(x=5e-3)
    with pytest.raises(ValidityViolation):
        transition_frequency(far, 45, cfg)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        transition_frequency(far, 45, cfg, strict=False)
    assert any(issubclass(w.category, RuntimeWarning) for w in rec)
    assert check_validity(Position(x=64e-6), 45, cfg)


@settings(max_examples=60, deadline=None)
@given(z1=st.floats(-20e-6, 20e-6), z2=st.floats(-20e-6, 20e-6), c=st.floats(-3.0, 3.0))
def test_detuning_linear_in_axial_displacement(z1, z2, c):
    cfg = ApparatusConfig()
    r0 = Position(x=30e-6)
    d = lambda z: detuning(Position(z=z), r0, 45, cfg)
    assert d(0.0) == 0.0
    assert d(z1 + c * z2) == pytest.approx(d(z1) + c * d(z2), rel=1e-9, abs=1e-6)
    assert d(z1) == pytest.approx(gradient_frequency(45, cfg) * z1, rel=1e-12, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(x=st.floats(-10e-6, 10e-6), y=st.floats(-10e-6, 10e-6))
def test_detuning_even_in_radial_displacement_on_axis(x, y):
    cfg = ApparatusConfig()
    r0 = Position()
    a = detuning(Position(x=x, y=y), r0, 45, cfg)
    b = detuning(Position(x=-x, y=-y), r0, 45, cfg)
    assert a == pytest.approx(b, rel=1e-12, abs=1e-12)
    assert a == pytest.approx(radial_curvature(45, cfg) * (x * x + y * y), rel=1e-12, abs=1e-12)


def test_detuning_matches_difference_of_transition_frequencies(cfg):
    r0 = Position(x=64e-6, y=10e-6)
    rp = Position(z=0.3e-6, x=1.5e-6, y=-2e-6)
    direct = transition_frequency(rp + r0, 45, cfg) - transition_frequency(r0, 45, cfg)
    assert detuning(rp, r0, 45, cfg) == pytest.approx(direct, rel=1e-7)


def test_zero_current_gives_no_detuning(cfg):
    assert detuning(Position(z=1e-6, x=1e-6), Position(x=64e-6), 0.0, cfg) == 0.0


# --- thermal widths ----------------------------------------------------------------

def test_thermal_widths_from_oscillator_formula(cfg):
    ax, rad = thermal_widths(cfg)
    m = 132.905451931 * const.atomic_mass
    # [DERIVED] sqrt(hbar (2n+1) / (2 m omega))
    assert ax == pytest.approx(math.sqrt(const.hbar * 3.4 / (2 * m * TWO_PI * 115e3)), rel=1e-12)
    assert rad == pytest.approx(math.sqrt(const.hbar * 401 / (2 * m * TWO_PI * 1.2e3)), rel=1e-12)
    assert ax / cfg.site_spacing == pytest.approx(0.0774, abs=5e-4)


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        ApparatusConfig(lattice_wavelength=-1)
    with pytest.raises(ValueError):
        ApparatusConfig(pushout_survival_f4=1.5)
    with pytest.raises(ValueError):
        ApparatusConfig(gyromagnetic_ratio=0)
