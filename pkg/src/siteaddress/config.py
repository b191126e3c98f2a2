"""Run configuration: apparatus, pulse, simulation and imaging sections.

Every key has a fixed unit. Values are held in SI with frequencies in Hz
(not rad/s) so that parsing and serialising are exact inverses; the 2 pi
is applied only when the physics objects are built. An empty file gives
the built-in apparatus defaults.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

from . import textformat as tf
from .imaging import ImagingConfig
from .physics import ApparatusConfig, exact_gyromagnetic_ratio

TWO_PI = 2.0 * math.pi

# key -> (unit written on output, divide by 2 pi when read from ApparatusConfig)
_APPARATUS_UNITS = {
    "lattice_wavelength": ("m", False),
    "guiding_field": ("G", False),
    "gradient_slope": ("Hz/(m A)", False),
    "gyromagnetic_ratio": ("Hz/G", True),
    "coil_current": ("A", False),
    "radial_offset": ("m", False),
    "axial_offset": ("m", False),
    "trap_freq_axial": ("Hz", True),
    "trap_freq_radial": ("Hz", True),
    "temperature": ("K", False),
    "mean_occupation_axial": ("", False),
    "mean_occupation_radial": ("", False),
    "rabi_peak": ("Hz", True),
    "t2": ("s", False),
    "pushout_survival_f4": ("", False),
    "pushout_survival_f3": ("", False),
    "atom_mass": ("kg", False),
    "validity_factor": ("", False),
}

_PULSE_UNITS = {"sigma_t": "s", "duration": "s", "truncation": "", "p_max": "", "sigma_omega": "Hz"}
_SIM_UNITS = {"lattice_extent": "", "p_a": "", "drift_rate": "m/s", "shot_interval": "s",
              "init_efficiency": ""}
_IMAGING_UNITS = {"psf_fwhm": "m", "pixel_size": "m", "photons_per_atom": "", "background_rate": "",
                  "margin": "m"}


def _apparatus_defaults() -> dict[str, float]:
    base = ApparatusConfig()
    # rounding strips the ulp noise of the 2 pi division
    return {k: float(f"{getattr(base, k) / TWO_PI:.15g}") if ang else getattr(base, k)
            for k, (_, ang) in _APPARATUS_UNITS.items()}


@dataclass
class RunConfig:
    apparatus: dict = field(default_factory=_apparatus_defaults)
    gamma_mode: str = "rounded"
    pulse_shape: str = "gaussian"
    pulse: dict = field(default_factory=lambda: {"sigma_t": 20e-6, "truncation": 4.0})
    simulation: dict = field(default_factory=lambda: {"lattice_extent": 200.0, "p_a": 0.5,
                                                      "drift_rate": 10e-9, "shot_interval": 10.0,
                                                      "init_efficiency": 1.0})
    thermal_mode: str = "resampled"
    imaging: dict = field(default_factory=lambda: {
        k: getattr(ImagingConfig(), k) for k in _IMAGING_UNITS})

    def __post_init__(self):
        if self.gamma_mode not in ("rounded", "exact"):
            raise tf.FormatError(f"gamma_mode must be 'rounded' or 'exact', got {self.gamma_mode!r}")
        if self.pulse_shape not in ("gaussian", "rect"):
            raise tf.FormatError(f"pulse shape must be 'gaussian' or 'rect', got {self.pulse_shape!r}")
        if self.thermal_mode not in ("resampled", "frozen"):
            raise tf.FormatError(f"thermal_mode must be 'resampled' or 'frozen', got {self.thermal_mode!r}")

    def apparatus_config(self, **overrides) -> ApparatusConfig:
        values = {k: v * (TWO_PI if _APPARATUS_UNITS[k][1] else 1.0) for k, v in self.apparatus.items()}
        if self.gamma_mode == "exact":
            values["gyromagnetic_ratio"] = exact_gyromagnetic_ratio()
        values.update(overrides)
        return ApparatusConfig(**values)

    def imaging_config(self, **overrides) -> ImagingConfig:
        return ImagingConfig(**{**self.imaging, **overrides})

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def _quantity(value: float, unit: str) -> str:
    text = tf.format_float(value)
    return f"{text} {unit}" if unit else text


def _read_section(name, items, units) -> dict[str, float]:
    tf.check_keys(name, items, units)
    return {k: tf.parse_quantity(v) for k, v in items.items()}


def loads(text: str) -> RunConfig:
    """Parse a configuration file; unknown sections and keys are errors."""
    sections = tf.loads(text)
    known = {"apparatus", "pulse", "simulation", "imaging"}
    extra = sorted(set(sections) - known)
    if extra:
        raise tf.FormatError(f"unknown section [{extra[0]}]")
    run = RunConfig()
    if "apparatus" in sections:
        items = dict(sections["apparatus"])
        run.gamma_mode = items.pop("gamma_mode", run.gamma_mode)
        run.apparatus.update(_read_section("apparatus", items, _APPARATUS_UNITS))
    if "pulse" in sections:
        items = dict(sections["pulse"])
        run.pulse_shape = items.pop("shape", run.pulse_shape)
        run.pulse = _read_section("pulse", items, _PULSE_UNITS) or run.pulse
    if "simulation" in sections:
        items = dict(sections["simulation"])
        run.thermal_mode = items.pop("thermal_mode", run.thermal_mode)
        run.simulation.update(_read_section("simulation", items, _SIM_UNITS))
    if "imaging" in sections:
        run.imaging.update(_read_section("imaging", sections["imaging"], _IMAGING_UNITS))
    run.__post_init__()
    return run


def dumps(run: RunConfig) -> str:
    app = {"gamma_mode": run.gamma_mode}
    app.update({k: _quantity(v, _APPARATUS_UNITS[k][0]) for k, v in run.apparatus.items()})
    pulse = {"shape": run.pulse_shape}
    pulse.update({k: _quantity(v, _PULSE_UNITS[k]) for k, v in run.pulse.items()})
    sim = {"thermal_mode": run.thermal_mode}
    sim.update({k: _quantity(v, _SIM_UNITS[k]) for k, v in run.simulation.items()})
    img = {k: _quantity(v, _IMAGING_UNITS[k]) for k, v in run.imaging.items()}
    return tf.dumps({"apparatus": app, "pulse": pulse, "simulation": sim, "imaging": img})
