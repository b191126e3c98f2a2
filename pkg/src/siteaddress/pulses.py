"""Microwave pi-pulse transfer models.

Three routes to the |0> -> |1> transfer probability:

* :func:`rect_transfer` -- closed-form Rabi formula for a square envelope,
* :func:`gaussian_spectrum` -- Gaussian spectral model with peak ``p_max``
  and 1/sqrt(e) half-width ``sigma_omega``,
* :func:`bloch_integrate` -- numerical optical-Bloch integration with
  transverse decay, used as the reference for the other two.

:func:`compose_loops` applies the M-fold repetition of
initialise / pulse / push-out, which raises a spectrum to the M-th power.
"""
from __future__ import annotations

import functools
import io
import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from scipy.integrate import solve_ivp

from .errors import IntegrationFailure
from .fitting import GaussianFit, fit_gaussian

TWO_PI = 2.0 * np.pi

Shape = Literal["rectangular", "gaussian"]


@dataclass(frozen=True)
class PulseDescriptor:
    """One microwave pulse.

    ``duration`` is t_pulse for a rectangular envelope and sigma_t for a
    Gaussian one. ``center_offset`` is the carrier offset (rad/s) from the
    reference-site resonance. The peak Rabi rate follows from ``area``;
    Gaussian envelopes are truncated at ``truncation * sigma_t`` and
    renormalised so the truncated area is exact.

    ``p_max`` / ``sigma_omega`` optionally pin the spectral response used by
    the fast Gaussian model; when absent it is fitted from the Bloch route.
    """

    shape: Shape
    duration: float
    center_offset: float = 0.0
    area: float = np.pi
    truncation: float = 4.0
    p_max: float | None = None
    sigma_omega: float | None = None

    def __post_init__(self):
        if self.shape not in ("rectangular", "gaussian"):
            raise ValueError(f"unknown pulse shape {self.shape!r}")
        if not self.duration > 0:
            raise ValueError("pulse duration must be > 0")
        if not self.truncation > 0:
            raise ValueError("truncation must be > 0")
        if self.p_max is not None and not 0.0 <= self.p_max <= 1.0:
            raise ValueError("p_max must lie in [0, 1]")
        if self.sigma_omega is not None and not self.sigma_omega > 0:
            raise ValueError("sigma_omega must be > 0")

    @classmethod
    def rectangular(cls, t_pulse: float, **kw) -> "PulseDescriptor":
        return cls("rectangular", t_pulse, **kw)

    @classmethod
    def gaussian(cls, sigma_t: float, **kw) -> "PulseDescriptor":
        return cls("gaussian", sigma_t, **kw)

    @property
    def support(self) -> tuple[float, float]:
        if self.shape == "rectangular":
            return 0.0, self.duration
        half = self.truncation * self.duration
        return -half, half

    @property
    def peak_rabi(self) -> float:
        if self.shape == "rectangular":
            return self.area / self.duration
        s = self.duration
        integral = s * math.sqrt(2.0 * math.pi) * math.erf(self.truncation / math.sqrt(2.0))
        return self.area / integral

    def envelope(self, t):
        """Rabi rate Omega(t) in rad/s; zero outside the support."""
        t = np.asarray(t, dtype=float)
        lo, hi = self.support
        inside = (t >= lo) & (t <= hi)
        if self.shape == "rectangular":
            return np.where(inside, self.peak_rabi, 0.0)
        return np.where(inside, self.peak_rabi * np.exp(-t ** 2 / (2.0 * self.duration ** 2)), 0.0)

    def integrated_area(self) -> float:
        if self.shape == "rectangular":
            return self.peak_rabi * self.duration
        a = self.truncation / math.sqrt(2.0)
        return self.peak_rabi * self.duration * math.sqrt(2.0 * math.pi) * math.erf(a)

    def with_offset(self, center_offset: float) -> "PulseDescriptor":
        return replace(self, center_offset=center_offset)

    def transfer(self, delta, t2: float = np.inf):
        """Fast transfer probability at carrier-atom detuning ``delta``."""
        if self.shape == "rectangular":
            p = rect_transfer(delta, self.peak_rabi, self.duration)
            return p if self.p_max is None else self.p_max * p
        p_max, sigma = self.p_max, self.sigma_omega
        if p_max is None or sigma is None:
            fit_p, fit_s = spectral_response(self, t2)
            p_max = fit_p if p_max is None else p_max
            sigma = fit_s if sigma is None else sigma
        return gaussian_spectrum(delta, sigma, p_max)


def rect_transfer(delta, omega, t):
    """Rabi formula Omega^2 / W^2 sin^2(W t / 2), W^2 = Omega^2 + delta^2."""
    delta = np.asarray(delta, dtype=float)
    w2 = omega ** 2 + delta ** 2
    w = np.sqrt(w2)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(w2 > 0, omega ** 2 / w2 * np.sin(w * t / 2.0) ** 2, 0.0)
    return p if p.ndim else float(p)


def gaussian_spectrum(delta, sigma_omega, p_max):
    """P_max exp(-delta^2 / (2 sigma_omega^2))."""
    if not sigma_omega > 0:
        raise ValueError("sigma_omega must be > 0")
    if not 0.0 <= p_max <= 1.0:
        raise ValueError("p_max must lie in [0, 1]")
    delta = np.asarray(delta, dtype=float)
    p = p_max * np.exp(-delta ** 2 / (2.0 * sigma_omega ** 2))
    return p if p.ndim else float(p)


def perturbative_sigma_omega(sigma_t: float) -> float:
    """Weak-pulse estimate 1/(sqrt(2) sigma_t); ignores saturation and decay."""
    return 1.0 / (math.sqrt(2.0) * sigma_t)


@dataclass(frozen=True)
class BlochTrajectory:
    t: np.ndarray
    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    @property
    def population_one(self) -> np.ndarray:
        return (1.0 + self.w) / 2.0

    @property
    def bloch_length(self) -> np.ndarray:
        return np.sqrt(self.u ** 2 + self.v ** 2 + self.w ** 2)


def _bloch_solve(pulse: PulseDescriptor, delta: np.ndarray, t2: float, rtol: float, atol: float):
    n = delta.size
    gamma = 0.0 if np.isinf(t2) else 1.0 / t2
    omega_peak = pulse.peak_rabi
    s2 = 2.0 * pulse.duration ** 2
    gaussian_env = pulse.shape == "gaussian"

    def rhs(t, y):
        u, v, w = y[:n], y[n:2 * n], y[2 * n:]
        om = omega_peak * math.exp(-t * t / s2) if gaussian_env else omega_peak
        return np.concatenate((-delta * v - gamma * u, delta * u - om * w - gamma * v, om * v))

    y0 = np.concatenate((np.zeros(n), np.zeros(n), -np.ones(n)))
    lo, hi = pulse.support
    # step cap resolves the fastest generalised Rabi precession
    max_step = (hi - lo) / 50.0
    fastest = math.hypot(omega_peak, float(np.max(np.abs(delta))) if n else 0.0)
    if fastest > 0:
        max_step = min(max_step, 0.5 / fastest)
    sol = solve_ivp(rhs, (lo, hi), y0, method="DOP853", rtol=rtol, atol=atol, max_step=max_step)
    if sol.status != 0:
        raise IntegrationFailure(sol.message)
    return sol


def bloch_integrate(pulse: PulseDescriptor, delta, t2: float = np.inf, rtol: float = 1e-8,
                    atol: float = 1e-10):
    """Final |1> population after ``pulse`` at detuning(s) ``delta``.

    Optical-Bloch equations in the rotating frame, starting in |0>, with
    transverse decay rate 1/t2 (``np.inf`` disables decay). Arrays of
    detunings are integrated together as one system.
    """
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    sol = _bloch_solve(pulse, d.ravel(), t2, rtol, atol)
    n = d.size
    p = np.clip((1.0 + sol.y[2 * n:, -1]) / 2.0, 0.0, 1.0).reshape(d.shape)
    return p if np.ndim(delta) else float(p[0])


def bloch_trajectory(pulse: PulseDescriptor, delta: float, t2: float = np.inf, rtol: float = 1e-8,
                     atol: float = 1e-10) -> BlochTrajectory:
    """Bloch vector at every accepted integrator step (single detuning)."""
    sol = _bloch_solve(pulse, np.array([float(delta)]), t2, rtol, atol)
    return BlochTrajectory(sol.t, sol.y[0], sol.y[1], sol.y[2])


@dataclass(frozen=True)
class Spectrum:
    """Sampled transfer probability versus detuning (rad/s)."""

    detunings: np.ndarray
    transfer: np.ndarray
    fit: GaussianFit | None = field(default=None, compare=False)

    def __post_init__(self):
        d = np.asarray(self.detunings, dtype=float)
        p = np.asarray(self.transfer, dtype=float)
        if d.shape != p.shape or d.ndim != 1:
            raise ValueError("detunings and transfer must be 1D arrays of equal length")
        if np.any(np.diff(d) <= 0):
            raise ValueError("detunings must be strictly increasing")
        if np.any((p < 0) | (p > 1)):
            raise ValueError("transfer probabilities must lie in [0, 1]")
        object.__setattr__(self, "detunings", d)
        object.__setattr__(self, "transfer", p)
        if self.fit is None and d.size >= 5 and p.max() > 0:
            object.__setattr__(self, "fit", fit_gaussian(d, p))

    @property
    def p_max(self) -> float:
        return self.fit.amplitude

    @property
    def sigma_omega(self) -> float:
        return self.fit.sigma

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("detuning_hz,transfer\r\n")
        for d, p in zip(self.detunings / TWO_PI, self.transfer):
            buf.write(f"{d:.17g},{p:.17g}\r\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Spectrum":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if lines[0].strip() != "detuning_hz,transfer":
            raise ValueError("unexpected spectrum CSV header")
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        return cls(rows[:, 0] * TWO_PI, rows[:, 1])


def sampling_grid(sigma_omega: float, points_per_sigma: int = 25, span: float = 6.0) -> np.ndarray:
    """Uniform grid, ``points_per_sigma`` samples per sigma over +-``span`` sigma."""
    n_half = int(math.ceil(points_per_sigma * span))
    return np.linspace(-span * sigma_omega, span * sigma_omega, 2 * n_half + 1)


def sample_spectrum(pulse: PulseDescriptor, t2: float = np.inf, points_per_sigma: int = 25,
                    span: float = 6.0, rtol: float = 1e-8) -> Spectrum:
    """Bloch-integrated spectrum on a grid adapted to the fitted width.

    The grid is built from a width guess with spacing guess/points_per_sigma
    and half-width 1.5 * span * guess, so any fitted sigma in
    [guess, 1.5 guess] satisfies both density and span. Otherwise the guess
    is updated from the fit and the spectrum resampled.
    """
    if pulse.shape == "gaussian":
        guess = perturbative_sigma_omega(pulse.duration)
    else:
        guess = 1.6 / pulse.duration
    spec = None
    for _ in range(6):
        grid = sampling_grid(guess, points_per_sigma, 1.5 * span)
        spec = Spectrum(grid, bloch_integrate(pulse, grid, t2, rtol=rtol))
        fitted = spec.sigma_omega
        if guess <= fitted <= 1.5 * guess:
            return spec
        guess = 0.95 * fitted
    return spec


@functools.lru_cache(maxsize=256)
def _cached_response(shape, duration, truncation, area, t2):
    pulse = PulseDescriptor(shape, duration, truncation=truncation, area=area)
    spec = sample_spectrum(pulse, t2)
    return spec.p_max, spec.sigma_omega


def spectral_response(pulse: PulseDescriptor, t2: float = np.inf) -> tuple[float, float]:
    """Fitted (P_max, sigma_omega) of the Bloch spectrum; cached per shape."""
    return _cached_response(pulse.shape, pulse.duration, pulse.truncation, pulse.area, float(t2))


def compose_loops(spectrum: Spectrum, loops: int) -> Spectrum:
    """Spectrum after ``loops`` repetitions of the inner loop (pointwise power)."""
    if int(loops) != loops or loops < 1:
        raise ValueError("loop count must be a positive integer")
    if loops == 1:
        return spectrum
    return Spectrum(spectrum.detunings, spectrum.transfer ** int(loops))
