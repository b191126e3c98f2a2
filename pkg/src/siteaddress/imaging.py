"""Synthetic fluorescence images and atom localisation.

Images are rendered on a pixel grid with the lattice axis horizontal. Each
atom is a pixel-integrated Gaussian spot; shot noise is Poisson per pixel.
Positions are recovered from the vertically binned profile by a
Poisson maximum-likelihood fit of a sum of fixed-width Gaussians with one
shared amplitude (every atom scatters the same expected photon number). The
component count is either given or grown until the reduced chi-square stops
improving.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import erf

from .errors import FitFailure
from .montecarlo import AtomRecord, Atoms, shot_rng

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))


@dataclass(frozen=True)
class ImagingConfig:
    psf_fwhm: float = 1.8e-6
    pixel_size: float = 0.1e-6
    photons_per_atom: float = 6000.0
    background_rate: float = 0.05  # counts / pixel
    margin: float = 6e-6  # image border around the outermost atom, and minimum half-height
    noiseless: bool = False

    def __post_init__(self):
        if not self.psf_fwhm > 0 or not self.pixel_size > 0:
            raise ValueError("psf_fwhm and pixel_size must be > 0")
        if self.photons_per_atom < 0 or self.background_rate < 0:
            raise ValueError("photon numbers must be >= 0")

    @property
    def psf_sigma(self) -> float:
        return self.psf_fwhm * FWHM_TO_SIGMA

    @property
    def rows(self) -> int:
        return 2 * int(math.ceil(self.margin / self.pixel_size))


@dataclass(frozen=True)
class SyntheticImage:
    intensity: np.ndarray  # (rows, cols)
    origin: float  # axial position of the left edge of pixel column 0 (m)
    pixel_size: float
    psf_sigma: float
    background_rate: float = 0.0

    @property
    def profile(self) -> np.ndarray:
        return self.intensity.sum(axis=0)

    @property
    def columns(self) -> int:
        return self.intensity.shape[1]

    @property
    def centers(self) -> np.ndarray:
        return self.origin + (np.arange(self.columns) + 0.5) * self.pixel_size

    def to_pgm(self) -> bytes:
        """Binary P5 greymap, 16-bit big-endian, values clipped to 65535."""
        data = np.clip(np.rint(self.intensity), 0, 65535).astype(">u2")
        rows, cols = data.shape
        return f"P5\n{cols} {rows}\n65535\n".encode("ascii") + data.tobytes()

    def profile_csv(self) -> str:
        buf = io.StringIO()
        buf.write("position_um,counts\r\n")
        for x, c in zip(self.centers, self.profile):
            buf.write(f"{x * 1e6:.6f},{c:.12g}\r\n")
        return buf.getvalue()


def _pixel_fractions(edges: np.ndarray, centers: np.ndarray, sigma: float) -> np.ndarray:
    """Fraction of a unit Gaussian at each center falling in each pixel."""
    c = erf((edges[None, :] - np.asarray(centers)[:, None]) / (math.sqrt(2.0) * sigma))
    return 0.5 * np.diff(c, axis=1)


def image_positions(atoms: Atoms, site_spacing: float, drift_offset: float = 0.0) -> np.ndarray:
    """Axial positions of atoms as seen by the camera (m)."""
    return atoms.site * site_spacing + atoms.axial + drift_offset


def render_shot(atoms, cfg: ImagingConfig, rng: np.random.Generator | None, site_spacing: float,
                drift_offset: float = 0.0, extent: tuple[float, float] | None = None) -> SyntheticImage:
    """Render the surviving atoms of one shot, given as ``Atoms`` or ``AtomRecord`` list."""
    if not isinstance(atoms, Atoms):
        records = [r for r in atoms if isinstance(r, AtomRecord)]
        atoms = Atoms(np.array([r.site for r in records], dtype=np.int64),
                      np.array([r.axial_displacement for r in records], dtype=float),
                      np.array([r.radial_displacement[0] for r in records], dtype=float),
                      np.array([r.radial_displacement[1] for r in records], dtype=float),
                      np.array([int(r.internal_state) for r in records], dtype=np.int8))
    atoms = atoms.survivors()
    return render_image(image_positions(atoms, site_spacing, drift_offset), cfg, rng,
                        lateral=atoms.radial_y, extent=extent)


def render_image(positions, cfg: ImagingConfig, rng: np.random.Generator | None = None,
                 lateral=None, extent: tuple[float, float] | None = None) -> SyntheticImage:
    """Render atoms at axial ``positions`` (m) with optional transverse offsets."""
    positions = np.asarray(positions, dtype=float)
    lateral = np.zeros_like(positions) if lateral is None else np.asarray(lateral, dtype=float)
    if extent is None:
        lo = (positions.min() if positions.size else 0.0) - cfg.margin
        hi = (positions.max() if positions.size else 0.0) + cfg.margin
    else:
        lo, hi = extent
    ncols = max(int(math.ceil((hi - lo) / cfg.pixel_size)), 1)
    xedges = lo + np.arange(ncols + 1) * cfg.pixel_size
    # the frame grows vertically so no atom's spot is clipped by the top or bottom edge
    reach = float(np.abs(lateral).max()) if lateral.size else 0.0
    rows = 2 * int(math.ceil((cfg.margin + reach) / cfg.pixel_size))
    yedges = (np.arange(rows + 1) - rows / 2.0) * cfg.pixel_size
    s = cfg.psf_sigma
    fx = _pixel_fractions(xedges, positions, s)  # (atoms, cols)
    fy = _pixel_fractions(yedges, lateral, s)  # (atoms, rows)
    expected = cfg.photons_per_atom * np.einsum("ar,ac->rc", fy, fx) + cfg.background_rate
    if cfg.noiseless or rng is None:
        img = expected
    else:
        img = rng.poisson(expected).astype(float)
    return SyntheticImage(img, lo, cfg.pixel_size, s, cfg.background_rate * rows)


@dataclass(frozen=True)
class PositionEstimate:
    position: float
    uncertainty: float
    amplitude: float


class _ProfileModel:
    def __init__(self, x_edges, sigma):
        self.edges = x_edges
        self.sigma = sigma

    def shape(self, mu):
        return _pixel_fractions(self.edges, mu, self.sigma)  # (k, n)

    def __call__(self, params):
        # params: shared amplitude, k positions, background
        return params[-1] + params[0] * self.shape(params[1:-1]).sum(axis=0)


def _fit_components(y, model: _ProfileModel, starts, background):
    k = len(starts)
    amp0 = max(float(np.sum(y) - background * len(y)), 1.0) / k
    p0 = np.concatenate([[amp0], np.asarray(starts, dtype=float), [background]])
    lo = np.concatenate([[0.0], np.full(k, model.edges[0]), [0.0]])
    hi = np.concatenate([[np.inf], np.full(k, model.edges[-1]), [np.inf]])
    p0 = np.clip(p0, lo, hi)
    def resid(p):
        # signed Poisson deviance residuals; their squared sum is minimised by the MLE
        m = np.maximum(model(p), 1e-12)
        with np.errstate(divide="ignore", invalid="ignore"):
            term = np.where(y > 0, y * np.log(y / m), 0.0)
        return np.sign(m - y) * np.sqrt(np.maximum(2.0 * (m - y + term), 0.0))

    sol = least_squares(resid, p0, bounds=(lo, hi), x_scale="jac", xtol=1e-10, ftol=1e-10, max_nfev=2000)
    if not sol.success and sol.status <= 0:
        raise FitFailure(sol.message)
    chi2 = float(np.sum(sol.fun ** 2))
    dof = max(len(y) - len(p0), 1)
    return sol, chi2 / dof


def _covariance(sol, red_chi2):
    j = sol.jac
    try:
        cov = np.linalg.pinv(j.T @ j) * max(red_chi2, 1.0)
    except np.linalg.LinAlgError:
        cov = np.full((j.shape[1], j.shape[1]), np.inf)
    return cov


def _clusters(profile, background, sigma_px, threshold_sigma=5.0):
    """Column index ranges holding signal, split where the profile falls to background."""
    kernel_x = np.arange(-3 * int(math.ceil(sigma_px)), 3 * int(math.ceil(sigma_px)) + 1)
    kernel = np.exp(-kernel_x ** 2 / (2 * sigma_px ** 2))
    kernel /= kernel.sum()
    smooth = np.convolve(profile, kernel, mode="same")
    thresh = background + threshold_sigma * math.sqrt(max(background, 1.0))
    hot = smooth > thresh
    pad = int(math.ceil(5 * sigma_px))
    ranges, i, n = [], 0, len(profile)
    while i < n:
        if hot[i]:
            j = i
            while j < n and hot[j]:
                j += 1
            ranges.append([max(i - pad, 0), min(j + pad, n)])
            i = j
        else:
            i += 1
    merged = []
    for r in ranges:
        if merged and r[0] <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], r[1])
        else:
            merged.append(r)
    return merged, smooth


def _quantile_starts(y, centers, background, k):
    """Positions splitting the background-subtracted profile into k equal parts."""
    w = np.clip(y - background, 0.0, None)
    cdf = np.cumsum(w)
    if cdf[-1] <= 0:
        return list(np.linspace(centers[0], centers[-1], k + 2)[1:-1])
    q = (np.arange(k) + 0.5) / k * cdf[-1]
    return list(np.interp(q, cdf, centers))


def _best_fit(y, model, candidates, background):
    best = None
    for starts in candidates:
        try:
            sol, chi2 = _fit_components(y, model, starts, background)
        except FitFailure:
            continue
        if best is None or chi2 < best[1]:
            best = (sol, chi2, starts)
    if best is None:
        raise FitFailure("no starting configuration converged")
    return best


def _fit_region(y, edges, sigma, background, hint, max_atoms, improvement):
    model = _ProfileModel(edges, sigma)
    centers = 0.5 * (edges[:-1] + edges[1:])
    starts = [centers[int(np.argmax(y))]]
    sol, chi2 = _fit_components(y, model, starts, background)
    target = hint if hint is not None else max_atoms
    while len(starts) < target:
        resid = y - model(sol.x)
        k = len(starts)
        # grow greedily at the largest residual, and also try evenly filled starts
        greedy = list(sol.x[1:k + 1]) + [centers[int(np.argmax(resid))]]
        try:
            trial, trial_chi2, trial_starts = _best_fit(
                y, model, [greedy, _quantile_starts(y, centers, background, k + 1)], background)
        except FitFailure:
            break
        if hint is None and not trial_chi2 < (1.0 - improvement) * chi2:
            break
        sol, chi2, starts = trial, trial_chi2, trial_starts
    k = len(starts)
    cov = _covariance(sol, chi2)
    mus = sol.x[1:k + 1]
    errs = np.sqrt(np.abs(np.diag(cov)))[1:k + 1]
    return [PositionEstimate(float(m), float(e), float(sol.x[0])) for m, e in zip(mus, errs)]


def estimate_positions(image: SyntheticImage, atom_count_hint: int | None = None,
                       max_atoms: int = 12, improvement: float = 0.05) -> list[PositionEstimate]:
    """Least-squares localisation on the binned profile, sorted by position.

    Without a hint, components are added one at a time, started either at
    the largest residual or evenly through the cluster (whichever fits
    better), while the reduced chi-square improves by more than
    ``improvement``. Separate clusters are fitted independently; a hint
    forces a single fit over the whole profile.
    """
    y = image.profile
    if not np.any(y > 0):
        raise FitFailure("image holds no counts")
    edges = image.origin + np.arange(image.columns + 1) * image.pixel_size
    sigma_px = image.psf_sigma / image.pixel_size
    bg = image.background_rate
    if atom_count_hint is not None:
        if atom_count_hint < 1:
            return []
        out = _fit_region(y, edges, image.psf_sigma, bg, atom_count_hint, max_atoms, improvement)
    else:
        regions, _ = _clusters(y, bg, sigma_px)
        out = []
        for lo, hi in regions:
            out.extend(_fit_region(y[lo:hi], edges[lo:hi + 1], image.psf_sigma, bg, None,
                                   max_atoms, improvement))
    return sorted(out, key=lambda e: e.position)


@dataclass(frozen=True)
class Localization:
    shot_index: int
    estimates: tuple[PositionEstimate, ...]
    failed: bool = False

    @property
    def positions(self) -> np.ndarray:
        return np.array([e.position for e in self.estimates])


def localize_shots(shots, cfg: ImagingConfig, seed: int, site_spacing: float,
                   stream: int = 1) -> list[Localization]:
    """Render and localise every shot of an ensemble.

    Camera noise for shot ``i`` comes from its own generator (seed, i,
    ``stream``). A failed fit marks the shot instead of aborting the batch.
    """
    out = []
    for shot in shots:
        image = render_shot(shot.survivors, cfg, shot_rng(seed, shot.index, stream), site_spacing,
                            shot.drift_offset)
        if len(shot.survivors) == 0:
            out.append(Localization(shot.index, ()))
            continue
        try:
            out.append(Localization(shot.index, tuple(estimate_positions(image))))
        except FitFailure:
            out.append(Localization(shot.index, (), failed=True))
    return out


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray
    distances: list[float] = field(default_factory=list)
    paired: int = 0
    skipped: int = 0

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def count_near(self, value: float, half_width: float = 0.5) -> int:
        d = np.asarray(self.distances)
        return int(np.sum(np.abs(d - value) < half_width))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("distance_sites,count\r\n")
        for c, n in zip(self.centers, self.counts):
            buf.write(f"{c:.6g},{int(n)}\r\n")
        return buf.getvalue()


def pair_distance_histogram(shot_positions, pairs, site_spacing: float, bin_width: float = 1.0,
                            window: float | None = None) -> Histogram:
    """Histogram of intra-pair distances (sites) over many shots.

    ``shot_positions`` is one array of estimated positions (m) per shot and
    ``pairs`` the predefined (site_a, site_b) pairs. Estimates within
    ``window`` sites of a pair's centre are grouped with it; each predefined
    member takes its nearest remaining estimate. Pairs with fewer than two
    estimates in the window are skipped and counted.
    """
    if window is None:
        if len(pairs) > 1:
            gaps = np.diff(sorted(0.5 * (a + b) for a, b in pairs))
            window = 0.5 * float(np.min(gaps))
        else:
            window = 8.0
    distances, skipped = [], 0
    for positions in shot_positions:
        pos_sites = np.asarray(positions, dtype=float) / site_spacing
        for a, b in pairs:
            c = 0.5 * (a + b)
            group = list(pos_sites[np.abs(pos_sites - c) < window])
            if len(group) < 2:
                skipped += 1
                continue
            pa = min(group, key=lambda p: abs(p - a))
            group.remove(pa)
            pb = min(group, key=lambda p: abs(p - b))
            distances.append(abs(pb - pa))
    # a pair inside the window is at most 2 * window apart
    n_bins = int(math.ceil((2.0 * window + bin_width / 2) / bin_width))
    edges = (np.arange(n_bins + 1) - 0.5) * bin_width
    counts, _ = np.histogram(distances, bins=edges)
    return Histogram(edges, counts, distances, len(distances), skipped)
