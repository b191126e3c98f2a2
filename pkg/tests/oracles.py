"""Independent reference computations used by the tests.

Nothing here imports the package under test: each oracle is a separate
route to the same quantity (closed forms, matrix propagators, brute-force
grids).
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import constants as const
from scipy.optimize import OptimizeWarning, curve_fit

TWO_PI = 2.0 * math.pi


def gaussian(x, a, mu, s):
    return a * np.exp(-((x - mu) ** 2) / (2.0 * s ** 2))


def fit_width(x, y, p0):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        popt, _ = curve_fit(gaussian, x, y, p0=p0, maxfev=20000)
    return popt


# --- hyperfine ---------------------------------------------------------------

def cs_gamma_closed_form(g_j=2.00254032, g_i=-0.00039885395):
    """(3 g_3 - 4 g_4) mu_B / hbar in rad/(s G) with the I = 7/2 closed forms
    g_4 = g_J/8 + 7 g_I/8 and g_3 = -g_J/8 + 9 g_I/8."""
    g4 = g_j / 8.0 + 7.0 * g_i / 8.0
    g3 = -g_j / 8.0 + 9.0 * g_i / 8.0
    mu_b = const.physical_constants["Bohr magneton"][0]
    return (3.0 * g3 - 4.0 * g4) * mu_b / const.hbar * 1e-4


# --- two-level propagation ----------------------------------------------------

def su2_step(omega, delta, dt):
    """Exact propagator of H = (delta sz + omega sx)/2 (hbar = 1) over dt."""
    w = math.hypot(omega, delta)
    if w == 0.0:
        return np.eye(2, dtype=complex)
    c, s = math.cos(w * dt / 2.0), math.sin(w * dt / 2.0)
    return np.array([[c - 1j * delta / w * s, -1j * omega / w * s],
                     [-1j * omega / w * s, c + 1j * delta / w * s]])


def piecewise_transfer(envelope, t0, t1, delta, steps=4000):
    """|1> population after a piecewise-constant (midpoint) product of SU(2)
    propagators, starting in |0>. Converges as steps^-2."""
    dt = (t1 - t0) / steps
    u = np.eye(2, dtype=complex)
    for k in range(steps):
        t = t0 + (k + 0.5) * dt
        u = su2_step(envelope(t), delta, dt) @ u
    psi = u @ np.array([1.0, 0.0])
    return float(abs(psi[1]) ** 2)


def gaussian_envelope(sigma_t, truncation=4.0, area=math.pi):
    norm = sigma_t * math.sqrt(2.0 * math.pi) * math.erf(truncation / math.sqrt(2.0))
    peak = area / norm
    return (lambda t: peak * math.exp(-t * t / (2.0 * sigma_t ** 2))), -truncation * sigma_t, truncation * sigma_t


# --- convolution ---------------------------------------------------------------

def box_convolved_width(sigma, half_span=None, n=20001):
    """Width of a unit-height Gaussian convolved with a unit box, by direct
    discrete convolution on a fine grid and a Gaussian refit."""
    half_span = half_span or (6.0 * sigma + 2.0)
    z = np.linspace(-half_span, half_span, n)
    dz = z[1] - z[0]
    g = np.exp(-z ** 2 / (2.0 * sigma ** 2))
    m = int(round(0.5 / dz))
    box = np.ones(2 * m + 1)
    box /= box.size
    conv = np.convolve(g, box, mode="same")
    popt = fit_width(z, conv, (conv.max(), 0.0, math.hypot(sigma, 0.3)))
    return abs(popt[2])


# --- thermal averaging -------------------------------------------------------

def monte_carlo_effective(z_sites, rho0, sigma_omega, p_max, loops, omega_prime, k_curv, a,
                          sigma_ax, sigma_rad, n=400_000, seed=1):
    """Sampled thermal average of the M-loop Gaussian spectrum."""
    rng = np.random.default_rng(seed)
    dz = rng.normal(0.0, sigma_ax, n)
    x = rng.normal(0.0, sigma_rad, n)
    y = rng.normal(0.0, sigma_rad, n)
    out = []
    for z in np.atleast_1d(z_sites):
        d = omega_prime * (z * a + dz) + k_curv * (2.0 * rho0 * x + x ** 2 + y ** 2)
        out.append(np.mean((p_max * np.exp(-d ** 2 / (2.0 * sigma_omega ** 2))) ** loops))
    return np.array(out)
