"""Least-squares Gaussian fitting shared by the pulse and analysis modules."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .errors import FitFailure


def gaussian(x, amplitude, center, sigma):
    return amplitude * np.exp(-((x - center) ** 2) / (2.0 * sigma ** 2))


@dataclass(frozen=True)
class GaussianFit:
    amplitude: float
    center: float
    sigma: float
    covariance: np.ndarray

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def __call__(self, x):
        return gaussian(x, self.amplitude, self.center, self.sigma)


def moment_guess(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    w = np.clip(y, 0.0, None)
    total = w.sum()
    if total <= 0:
        raise FitFailure("no positive weight to initialise the fit")
    center = float(np.sum(x * w) / total)
    sigma = float(np.sqrt(np.sum((x - center) ** 2 * w) / total))
    if sigma == 0.0:
        sigma = float(np.min(np.diff(np.unique(x)))) if len(np.unique(x)) > 1 else 1.0
    return float(w.max()), center, sigma


def fit_gaussian(x, y, yerr=None) -> GaussianFit:
    """Fit ``amplitude * exp(-(x - center)^2 / (2 sigma^2))``.

    Initial parameters come from the weighted moments of ``y``, so the
    result is deterministic. ``yerr`` (optional) gives absolute 1-sigma
    uncertainties per sample.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 5:
        raise FitFailure("need at least 5 samples of matching shape")
    p0 = moment_guess(x, y)
    try:
        with warnings.catch_warnings():
            # exact-model fits have a singular residual Jacobian scale
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(gaussian, x, y, p0=p0, sigma=yerr, absolute_sigma=yerr is not None,
                                   xtol=1e-14, ftol=1e-14, gtol=1e-14, maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitFailure(str(exc)) from exc
    if not np.all(np.isfinite(popt)) or popt[2] == 0:
        raise FitFailure("fit did not converge to finite parameters")
    return GaussianFit(float(popt[0]), float(popt[1]), float(abs(popt[2])), pcov)
