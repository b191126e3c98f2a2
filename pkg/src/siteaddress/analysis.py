"""Spectral and statistical analysis.

Gaussian fits, lattice-drift convolution and its inverse, thermally averaged
position-space spectra under a radial offset of the lattice axis, addressed
regions, and the transverse-offset calibration from resonance-position scans.
Lengths are in metres unless the name says ``sites``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre
from scipy.optimize import brentq
from scipy.special import erf

from .errors import DegenerateFit, FitFailure, Infeasible
from .fitting import GaussianFit, fit_gaussian
from .physics import (ApparatusConfig, field_gradient, gradient_frequency, radial_curvature,
                      site_splitting, thermal_widths)
from .pulses import gaussian_spectrum

__all__ = [
    "fit_gaussian", "GaussianFit", "DriftConvolution", "drift_convolve", "drift_deconvolve",
    "kernel_width", "EffectiveSpectrum", "effective_spectrum", "infer_radial_offset",
    "AddressedRegion", "addressed_region", "OffsetCalibration", "offset_calibration_fit",
    "offset_scan", "remove_transverse_offset", "selectivity_from_histogram",
]


# --- lattice drift -----------------------------------------------------------

@dataclass(frozen=True)
class DriftConvolution:
    z_sites: np.ndarray
    profile: np.ndarray
    fitted_sigma: float


def _box_convolved(z, sigma):
    """Unit-peak Gaussian convolved with a unit-width box (unit-area kernel)."""
    if sigma == 0:
        return (np.abs(z) <= 0.5).astype(float)
    s = np.sqrt(2.0) * sigma
    return sigma * np.sqrt(np.pi / 2.0) * (erf((z + 0.5) / s) - erf((z - 0.5) / s))


def _drift_grid(sigma):
    half = 6.0 * np.sqrt(sigma ** 2 + 1.0 / 12.0) + 1.0
    step = min(2e-3, sigma / 5.0) if sigma > 0 else 2e-4
    n = int(np.ceil(half / step))
    return np.linspace(-half, half, 2 * n + 1)


def drift_convolve(sigma_z: float) -> DriftConvolution:
    """Broaden a Gaussian peak (1/sqrt(e) width ``sigma_z`` sites) by a
    uniform drift over one site and refit a Gaussian to the result.

    Drift is only defined modulo one site, so the kernel is a box of unit
    width. ``sigma_z = 0`` returns the bare kernel.
    """
    if sigma_z < 0:
        raise ValueError("sigma_z must be >= 0")
    z = _drift_grid(sigma_z)
    profile = _box_convolved(z, sigma_z)
    return DriftConvolution(z, profile, fit_gaussian(z, profile).sigma)


def kernel_width() -> float:
    """Fitted Gaussian width of the drift kernel alone (sites)."""
    return drift_convolve(0.0).fitted_sigma


def drift_deconvolve(measured_sigma: float, tol: float = 1e-6) -> float:
    """Drift-free width whose drift-broadened fit equals ``measured_sigma``."""
    floor = kernel_width()
    if measured_sigma <= floor:
        raise Infeasible(f"measured width {measured_sigma:.4g} sites is not above the "
                         f"drift-kernel width {floor:.4g} sites")

    def mismatch(s):
        return drift_convolve(s).fitted_sigma - measured_sigma

    hi = max(1.0, 2.0 * measured_sigma)
    return float(brentq(mismatch, 0.0, hi, xtol=tol))


# --- thermally averaged spectra ----------------------------------------------

@dataclass(frozen=True)
class EffectiveSpectrum:
    """Thermally averaged transfer versus axial displacement (sites)."""

    z_sites: np.ndarray
    transfer: np.ndarray
    fit: GaussianFit
    reference_p_max: float

    @property
    def p_max(self) -> float:
        return self.fit.amplitude

    @property
    def p_max_normalized(self) -> float:
        """Fitted peak relative to the un-averaged peak transfer."""
        return self.fit.amplitude / self.reference_p_max

    @property
    def sigma_z(self) -> float:
        return self.fit.sigma

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("z_sites,transfer\r\n")
        for z, p in zip(self.z_sites, self.transfer):
            buf.write(f"{z:.12g},{p:.12g}\r\n")
        return buf.getvalue()


def _legendre_gauss_nodes(n: int, width: float = 5.0):
    """Nodes/weights integrating against a standard normal on +-width."""
    x, w = legendre.leggauss(n)
    x = x * width
    w = w * width * np.exp(-x ** 2 / 2.0) / np.sqrt(2.0 * np.pi)
    return x, w


def _thermal_average(z_m, rho0, sigma_omega, p_max, loops, current, cfg, n):
    s_ax, s_rad = thermal_widths(cfg)
    wp = gradient_frequency(current, cfg)
    k = radial_curvature(current, cfg)
    u, wu = _legendre_gauss_nodes(n)
    dz = u * s_ax
    x = u * s_rad
    # detuning = wp (z + dz) + k (2 rho0 x + x^2 + y^2); sum y first, then x, then dz
    radial = k * (2.0 * rho0 * x[:, None] + x[:, None] ** 2 + x[None, :] ** 2)  # (x, y)
    radial_w = wu[:, None] * wu[None, :]
    out = np.empty(len(z_m))
    sm = sigma_omega / np.sqrt(loops)
    pm = p_max ** loops
    for i, z in enumerate(z_m):
        axial = wp * (z + dz)  # (dz,)
        det = axial[:, None, None] + radial[None, :, :]
        vals = gaussian_spectrum(det, sm, pm)
        out[i] = float(np.sum(wu * np.sum(vals * radial_w[None, :, :], axis=(1, 2))))
    return out


def effective_spectrum(rho0: float, sigma_omega: float, p_max: float, current: float,
                       cfg: ApparatusConfig, loops: int = 1, z_sites=None,
                       tol: float = 1e-4, max_nodes: int = 256) -> EffectiveSpectrum:
    """Transfer of a Gaussian pi-pulse averaged over the thermal wave packet.

    The pulse spectrum (``sigma_omega``, ``p_max``), raised to the power
    ``loops`` for an M-fold inner loop with displacements held fixed across
    loops, is averaged over Gaussian axial and two-dimensional radial
    displacements at radial offset ``rho0`` along x. The product
    Gauss-Legendre rule on +-5 sigma per axis doubles its node count until the
    largest change is below ``tol``.
    """
    if rho0 < 0:
        raise ValueError("rho0 must be >= 0")
    a = cfg.site_spacing
    split = site_splitting(current, cfg)
    if z_sites is None:
        s_ax, s_rad = thermal_widths(cfg)
        k = radial_curvature(current, cfg)
        spread = np.sqrt(sigma_omega ** 2 / loops + (2 * k * rho0 * s_rad) ** 2
                         + (2 * k * s_rad ** 2) ** 2 + (split * s_ax / a) ** 2) / split
        z_sites = np.linspace(-5.0 * spread, 5.0 * spread, 121)
    z_sites = np.asarray(z_sites, dtype=float)
    z_m = z_sites * a
    n = 16
    prev = _thermal_average(z_m, rho0, sigma_omega, p_max, loops, current, cfg, n)
    while True:
        n *= 2
        cur = _thermal_average(z_m, rho0, sigma_omega, p_max, loops, current, cfg, n)
        if np.max(np.abs(cur - prev)) < tol:
            break
        if n >= max_nodes:
            raise FitFailure("thermal quadrature did not reach tolerance")
        prev = cur
    cur = np.clip(cur, 0.0, 1.0)
    return EffectiveSpectrum(z_sites, cur, fit_gaussian(z_sites, cur), p_max ** loops)


def infer_radial_offset(target_p_max_normalized: float, sigma_omega: float, p_max: float,
                        current: float, cfg: ApparatusConfig, loops: int = 1,
                        bracket: tuple[float, float] = (0.0, 200e-6)) -> float:
    """Radial offset at which the normalised effective peak equals the target."""
    def mismatch(rho0):
        spec = effective_spectrum(rho0, sigma_omega, p_max, current, cfg, loops=loops, tol=1e-5)
        return spec.p_max_normalized - target_p_max_normalized

    lo, hi = bracket
    f_lo, f_hi = mismatch(lo), mismatch(hi)
    if f_lo * f_hi > 0:
        raise Infeasible("target peak transfer not reachable inside the offset bracket")
    return float(brentq(mismatch, lo, hi, xtol=1e-8))


# --- addressed regions -------------------------------------------------------

@dataclass(frozen=True)
class AddressedRegion:
    """Mask of |delta| <= k sigma_omega on an (axial sites, transverse x) grid."""

    z_sites: np.ndarray
    x: np.ndarray
    mask: np.ndarray  # shape (len(x), len(z_sites))
    detuning: np.ndarray
    threshold: float

    def boundary(self) -> np.ndarray:
        """(z_sites, x) of mask cells that border an unaddressed cell."""
        m = self.mask
        inner = m.copy()
        inner[1:, :] &= m[:-1, :]
        inner[:-1, :] &= m[1:, :]
        inner[:, 1:] &= m[:, :-1]
        inner[:, :-1] &= m[:, 1:]
        edge = m & ~inner
        ix, iz = np.nonzero(edge)
        return np.column_stack([self.z_sites[iz], self.x[ix]])

    def axial_center(self, x) -> np.ndarray:
        """Axial position (sites) of zero detuning at transverse offset x."""
        zc = np.empty(len(self.x))
        for i in range(len(self.x)):
            zc[i] = self.z_sites[np.argmin(np.abs(self.detuning[i]))]
        return np.interp(x, self.x, zc)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("z_sites,x_um\r\n")
        for z, x in self.boundary():
            buf.write(f"{z:.12g},{x * 1e6:.12g}\r\n")
        return buf.getvalue()


def addressed_region(rho0: float, sigma_omega: float, current: float, cfg: ApparatusConfig,
                     k: float = 1.0, z_range: float = 3.0, x_range: float | None = None,
                     dz_sites: float = 0.02, dx_rad: float = 0.05) -> AddressedRegion:
    """Region in the (z', x') plane through the symmetry axis addressed by a pulse.

    Grid spacing ``dz_sites`` along the lattice and ``dx_rad`` radial thermal
    widths across it; x' is measured along the offset direction.
    """
    _, s_rad = thermal_widths(cfg)
    x_range = 3.0 * s_rad if x_range is None else x_range
    nz = int(round(z_range / dz_sites))
    nx = int(round(x_range / (dx_rad * s_rad)))
    z_sites = np.linspace(-z_range, z_range, 2 * nz + 1)
    x = np.linspace(-x_range, x_range, 2 * nx + 1)
    wp = gradient_frequency(current, cfg)
    kq = radial_curvature(current, cfg)
    det = wp * z_sites[None, :] * cfg.site_spacing + kq * (2 * rho0 * x[:, None] + x[:, None] ** 2)
    return AddressedRegion(z_sites, x, np.abs(det) <= k * sigma_omega, det, k * sigma_omega)


# --- transverse offset calibration -------------------------------------------

@dataclass(frozen=True)
class OffsetCalibration:
    """Quadratic fit z_res(b) = c2 b^2 + c1 b + c0 of a transverse-field scan."""

    coefficients: np.ndarray  # (c2, c1, c0)
    covariance: np.ndarray
    vertex_field: float  # G, field that centres the lattice on the coil axis
    vertex_position: float  # m
    rho0_estimate: float  # m, signed offset along the scan direction
    expected_curvature: float

    @property
    def curvature(self) -> float:
        return float(self.coefficients[0])

    @property
    def curvature_ratio(self) -> float:
        """Fitted over model curvature; 1 for a consistent field model."""
        return self.curvature / self.expected_curvature

    def report(self) -> str:
        c2, c1, c0 = self.coefficients
        return "\n".join([
            "[offset_calibration]",
            f"curvature = {c2:.12g} m/G^2",
            f"linear = {c1:.12g} m/G",
            f"constant = {c0:.12g} m",
            f"vertex_field = {self.vertex_field:.12g} G",
            f"vertex_position = {self.vertex_position:.12g} m",
            f"rho0_estimate = {self.rho0_estimate:.12g} m",
            f"expected_curvature = {self.expected_curvature:.12g} m/G^2",
            f"curvature_ratio = {self.curvature_ratio:.12g}",
        ]) + "\n"


def offset_scan(fields, rho0_along: float, rho0_across: float, current: float,
                cfg: ApparatusConfig, pulse_offset: float = 0.0) -> np.ndarray:
    """Resonance axial position (m) for homogeneous transverse fields ``fields`` (G).

    A transverse field b moves the coil symmetry axis by 2 b / B', so the
    lattice sits at offset rho0_along - 2 b / B' along the scan direction.
    """
    b = np.asarray(fields, dtype=float)
    bp = field_gradient(current, cfg)
    wp = gradient_frequency(current, cfg)
    kq = radial_curvature(current, cfg)
    along = rho0_along - 2.0 * b / bp
    return (pulse_offset - kq * (along ** 2 + rho0_across ** 2)) / wp


def offset_calibration_fit(fields, positions, current: float, cfg: ApparatusConfig,
                           significance: float = 3.0) -> OffsetCalibration:
    """Least-squares parabola through (transverse field, resonance position)."""
    b = np.asarray(fields, dtype=float)
    z = np.asarray(positions, dtype=float)
    if b.size < 4 or b.shape != z.shape:
        raise DegenerateFit("need at least 4 (field, position) pairs")
    coeffs, cov = _polyfit_cov(b, z)
    c2, c1, c0 = coeffs
    err = np.sqrt(max(cov[0, 0], 0.0))
    if c2 == 0 or (err > 0 and abs(c2) / err < significance):
        raise DegenerateFit("curvature of the scan is not significant")
    bp = field_gradient(current, cfg)
    wp = gradient_frequency(current, cfg)
    kq = radial_curvature(current, cfg)
    vertex = -c1 / (2.0 * c2)
    return OffsetCalibration(
        coefficients=np.array([c2, c1, c0]),
        covariance=cov,
        vertex_field=float(vertex),
        vertex_position=float(c0 - c1 ** 2 / (4.0 * c2)),
        rho0_estimate=float(2.0 * vertex / bp),
        expected_curvature=float(-kq * 4.0 / (bp ** 2 * wp)),
    )


def _polyfit_cov(b, z):
    design = np.vander(b, 3)
    coeffs, *_ = np.linalg.lstsq(design, z, rcond=None)
    resid = z - design @ coeffs
    dof = max(b.size - 3, 1)
    s2 = float(resid @ resid) / dof
    cov = np.linalg.pinv(design.T @ design) * s2
    return coeffs, cov


def remove_transverse_offset(scan_x: tuple, scan_y: tuple, current: float,
                             cfg: ApparatusConfig) -> tuple[float, float]:
    """Compensation fields (bx, by) in G from two orthogonal scans."""
    fx = offset_calibration_fit(*scan_x, current, cfg)
    fy = offset_calibration_fit(*scan_y, current, cfg)
    return fx.vertex_field, fy.vertex_field


# --- histogram analysis ------------------------------------------------------

def selectivity_from_histogram(hist) -> float:
    """Single-atom selectivity width sigma_dist / sqrt(2) from a distance histogram.

    ``hist`` needs ``centers`` and ``counts`` arrays (site units).
    """
    fit = fit_gaussian(hist.centers, hist.counts)
    return fit.sigma / np.sqrt(2.0)
