"""Single-site microwave addressing of atoms in a 1D optical lattice.

Field model and calibration (:mod:`physics`), pulse spectra and Bloch
integration (:mod:`pulses`), sequence planning (:mod:`planner`), seeded
Monte Carlo (:mod:`montecarlo`), synthetic imaging (:mod:`imaging`),
spectral analysis (:mod:`analysis`) and the command line (:mod:`cli`).
"""
from .analysis import (addressed_region, drift_convolve, drift_deconvolve, effective_spectrum,
                       infer_radial_offset, offset_calibration_fit, remove_transverse_offset,
                       selectivity_from_histogram)
from .errors import (DegenerateFit, FitFailure, Infeasible, IntegrationFailure, SiteAddressError,
                     ValidityViolation, ZeroGradient)
from .fitting import GaussianFit, fit_gaussian
from .imaging import (Histogram, ImagingConfig, SyntheticImage, estimate_positions,
                      pair_distance_histogram, render_image, render_shot)
from .montecarlo import AtomRecord, ShotConfig, State, run_ensemble, run_shot
from .physics import (ApparatusConfig, Position, calibrate_gradient, detuning, site_splitting,
                      thermal_widths, transition_frequency)
from .planner import (SequencePlan, TargetPattern, build_plan, mott_plane_yield,
                      optimize_loop_count, pattern_success_probability, plan_selectivity)
from .pulses import (PulseDescriptor, Spectrum, bloch_integrate, compose_loops, rect_transfer,
                     sample_spectrum)

__all__ = [
    "ApparatusConfig", "AtomRecord", "DegenerateFit", "FitFailure", "GaussianFit", "Histogram",
    "ImagingConfig", "Infeasible", "IntegrationFailure", "Position", "PulseDescriptor",
    "SequencePlan", "ShotConfig", "SiteAddressError", "Spectrum", "State", "SyntheticImage",
    "TargetPattern", "ValidityViolation", "ZeroGradient", "addressed_region", "bloch_integrate",
    "build_plan", "calibrate_gradient", "compose_loops", "detuning", "drift_convolve",
    "drift_deconvolve", "effective_spectrum", "estimate_positions", "fit_gaussian",
    "infer_radial_offset", "mott_plane_yield", "offset_calibration_fit", "optimize_loop_count",
    "pair_distance_histogram", "pattern_success_probability", "plan_selectivity",
    "rect_transfer", "remove_transverse_offset", "render_image", "render_shot", "run_ensemble",
    "run_shot", "sample_spectrum", "selectivity_from_histogram", "site_splitting",
    "thermal_widths", "transition_frequency",
]
