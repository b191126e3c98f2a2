"""Static field model: quadrupole + guiding field, Zeeman-shifted transition
frequency, position-dependent detuning and gradient calibration.

Internal units are SI (m, s, rad/s) except magnetic fields, which are kept in
gauss as in the usual lab bookkeeping. Functions are numpy-vectorised: any
coordinate may be an array and broadcasting applies.
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import constants as const

from .errors import ValidityViolation

TWO_PI = 2.0 * np.pi
ATOMIC_MASS_CS133 = 132.905451931 * const.atomic_mass

# Cs 6S1/2 Lande factors, nuclear g-factor quoted in Bohr magnetons.
G_J_CS = 2.00254032
G_I_CS = -0.00039885395
NUCLEAR_SPIN_CS = 3.5
GAUSS_PER_TESLA = 1.0e4


def lande_gf(f: float, g_j: float = G_J_CS, g_i: float = G_I_CS,
             nuclear_spin: float = NUCLEAR_SPIN_CS, j: float = 0.5) -> float:
    """Hyperfine Lande factor g_F including the nuclear contribution."""
    ff, ii, jj = f * (f + 1), nuclear_spin * (nuclear_spin + 1), j * (j + 1)
    return (g_j * (ff - ii + jj) + g_i * (ff + ii - jj)) / (2.0 * ff)


def exact_gyromagnetic_ratio() -> float:
    """(3 g_3 - 4 g_4) mu_B / hbar for |F=4,mF=4> <-> |F=3,mF=3>, in rad/s/G.

    Negative: the transition frequency decreases with field strength.
    """
    g3, g4 = lande_gf(3.0), lande_gf(4.0)
    return (3.0 * g3 - 4.0 * g4) * const.physical_constants["Bohr magneton"][0] / const.hbar / GAUSS_PER_TESLA


@dataclass(frozen=True)
class ApparatusConfig:
    """Apparatus parameters. Defaults are the 1D-lattice setup values.

    ``gradient_slope`` is the calibrated frequency shift per length and per
    coil current, in Hz/(m A). ``gyromagnetic_ratio`` is signed; the rounded
    default is positive, :meth:`with_exact_gamma` switches to the signed
    value from tabulated g-factors.
    """

    lattice_wavelength: float = 866e-9
    guiding_field: float = 3.0  # G
    gradient_slope: float = 671e6  # Hz / (m A)
    gyromagnetic_ratio: float = TWO_PI * 2.5e6  # rad / (s G)
    coil_current: float = 45.0  # A
    radial_offset: float = 0.0  # m, along x
    axial_offset: float = 0.0  # m
    trap_freq_axial: float = TWO_PI * 115e3
    trap_freq_radial: float = TWO_PI * 1.2e3
    temperature: float = 10e-6  # K
    mean_occupation_axial: float = 1.2
    mean_occupation_radial: float = 200.0
    rabi_peak: float = TWO_PI * 60e3
    t2: float = 200e-6
    pushout_survival_f4: float = 0.01
    pushout_survival_f3: float = 0.99
    atom_mass: float = ATOMIC_MASS_CS133
    validity_factor: float = 10.0

    def __post_init__(self):
        positive = ("lattice_wavelength", "guiding_field", "gradient_slope", "trap_freq_axial",
                    "trap_freq_radial", "rabi_peak", "t2", "atom_mass", "validity_factor")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if self.gyromagnetic_ratio == 0:
            raise ValueError("gyromagnetic_ratio must be non-zero")
        if self.coil_current < 0:
            raise ValueError(f"coil_current must be >= 0, got {self.coil_current!r}")
        if self.temperature < 0 or self.mean_occupation_axial < 0 or self.mean_occupation_radial < 0:
            raise ValueError("temperature and mean occupations must be >= 0")
        if self.radial_offset < 0:
            raise ValueError("radial_offset is a radius and must be >= 0")
        for name in ("pushout_survival_f4", "pushout_survival_f3"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p!r}")

    @property
    def site_spacing(self) -> float:
        return self.lattice_wavelength / 2.0

    @property
    def delta0(self) -> float:
        """Guiding-field contribution gamma * B0 (rad/s)."""
        return self.gyromagnetic_ratio * self.guiding_field

    def replace(self, **changes) -> "ApparatusConfig":
        return dataclasses.replace(self, **changes)

    def with_exact_gamma(self) -> "ApparatusConfig":
        return self.replace(gyromagnetic_ratio=exact_gyromagnetic_ratio())


@dataclass(frozen=True)
class Position:
    """Point in the coil frame: axial ``z`` and transverse ``x``, ``y`` (m)."""

    z: float | np.ndarray = 0.0
    x: float | np.ndarray = 0.0
    y: float | np.ndarray = 0.0

    @property
    def rho(self):
        return np.hypot(self.x, self.y)

    def __add__(self, other: "Position") -> "Position":
        return Position(self.z + other.z, self.x + other.x, self.y + other.y)


def gradient_frequency(current: float, cfg: ApparatusConfig) -> float:
    """omega'(I): angular frequency shift per metre along the lattice."""
    return TWO_PI * cfg.gradient_slope * current


def field_gradient(current: float, cfg: ApparatusConfig) -> float:
    """Axial field gradient B'(I) in G/m; its sign follows gamma."""
    return gradient_frequency(current, cfg) / cfg.gyromagnetic_ratio


def magnetic_field(r: Position, current: float, cfg: ApparatusConfig) -> np.ndarray:
    """Field vector (Bx, By, Bz) in gauss; components stacked on the first axis."""
    bp = field_gradient(current, cfg)
    z, x, y = np.broadcast_arrays(*(np.asarray(c, dtype=float) for c in (r.z, r.x, r.y)))
    return np.stack([-bp * x / 2.0, -bp * y / 2.0, cfg.guiding_field + bp * z])


def check_validity(r: Position, current: float, cfg: ApparatusConfig, strict: bool = True) -> bool:
    """Second-order expansion check: (B0 + B'z)^2 > factor * B'^2 rho^2 / 4."""
    bp = field_gradient(current, cfg)
    axial = (cfg.guiding_field + bp * np.asarray(r.z)) ** 2
    radial = cfg.validity_factor * bp ** 2 * (np.asarray(r.x) ** 2 + np.asarray(r.y) ** 2) / 4.0
    ok = bool(np.all(axial > radial))
    if not ok:
        msg = "quadratic field expansion outside its validity range"
        if strict:
            raise ValidityViolation(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return ok


def transition_frequency(r: Position, current: float, cfg: ApparatusConfig, strict: bool = True):
    """Transition frequency offset from the hyperfine splitting (rad/s).

    delta0 + omega' z + omega'^2 rho^2 / (8 delta0).
    """
    check_validity(r, current, cfg, strict=strict)
    wp = gradient_frequency(current, cfg)
    rho2 = np.asarray(r.x) ** 2 + np.asarray(r.y) ** 2
    return cfg.delta0 + wp * np.asarray(r.z) + wp ** 2 * rho2 / (8.0 * cfg.delta0)


def exact_transition_frequency(r: Position, current: float, cfg: ApparatusConfig):
    """gamma |B(r)| without expansion; used as a cross-check."""
    b = magnetic_field(r, current, cfg)
    return cfg.gyromagnetic_ratio * np.sqrt(np.sum(b ** 2, axis=0))


def detuning(r_prime: Position, r0: Position, current: float, cfg: ApparatusConfig, strict: bool = True):
    """Spatial detuning omega0(r' + r0) - omega0(r0) (rad/s).

    Expanded so the constant parts cancel analytically, which keeps the
    result free of round-off from delta0.
    """
    check_validity(r_prime + r0, current, cfg, strict=strict)
    check_validity(r0, current, cfg, strict=strict)
    wp = gradient_frequency(current, cfg)
    k = wp ** 2 / (8.0 * cfg.delta0)
    xp, yp = np.asarray(r_prime.x), np.asarray(r_prime.y)
    radial = 2.0 * (np.asarray(r0.x) * xp + np.asarray(r0.y) * yp) + xp ** 2 + yp ** 2
    return wp * np.asarray(r_prime.z) + k * radial


def radial_curvature(current: float, cfg: ApparatusConfig) -> float:
    """Quadratic coefficient omega'^2 / (8 delta0) in rad/s/m^2."""
    return gradient_frequency(current, cfg) ** 2 / (8.0 * cfg.delta0)


@dataclass(frozen=True)
class GradientCalibration:
    hz_per_um_per_amp: float
    hz_per_site_per_amp: float
    microgauss_per_um_per_amp: float
    current: float
    site_splitting_hz: float
    gradient_gauss_per_cm: float

    def report_lines(self) -> list[str]:
        return [
            f"frequency_shift_per_um = {self.hz_per_um_per_amp:.6g} Hz/(um A)",
            f"frequency_shift_per_site = {self.hz_per_site_per_amp:.6g} Hz/(site A)",
            f"field_gradient_per_current = {self.microgauss_per_um_per_amp:.6g} uG/(um A)",
            f"current = {self.current:.6g} A",
            f"site_splitting = {self.site_splitting_hz:.6g} Hz",
            f"field_gradient = {self.gradient_gauss_per_cm:.6g} G/cm",
        ]


def calibrate_gradient(cfg: ApparatusConfig, current: float | None = None) -> GradientCalibration:
    """Unit conversions of the gradient calibration at ``current`` (default cfg)."""
    current = cfg.coil_current if current is None else current
    per_um = cfg.gradient_slope * 1e-6
    per_site = per_um * cfg.site_spacing * 1e6
    gamma_hz_per_gauss = cfg.gyromagnetic_ratio / TWO_PI
    ug_per_um = per_um / gamma_hz_per_gauss * 1e6
    return GradientCalibration(
        hz_per_um_per_amp=per_um,
        hz_per_site_per_amp=per_site,
        microgauss_per_um_per_amp=ug_per_um,
        current=current,
        site_splitting_hz=per_site * current,
        gradient_gauss_per_cm=field_gradient(current, cfg) * 1e-2,
    )


def site_splitting(current: float, cfg: ApparatusConfig) -> float:
    """Angular-frequency separation of neighbouring sites (rad/s)."""
    return gradient_frequency(current, cfg) * cfg.site_spacing


def thermal_widths(cfg: ApparatusConfig) -> tuple[float, float]:
    """1/sqrt(e) widths (axial, radial) of a thermal oscillator state, in m."""
    def width(nbar, omega):
        return float(np.sqrt(const.hbar * (2.0 * nbar + 1.0) / (2.0 * cfg.atom_mass * omega)))
    return (width(cfg.mean_occupation_axial, cfg.trap_freq_axial),
            width(cfg.mean_occupation_radial, cfg.trap_freq_radial))
