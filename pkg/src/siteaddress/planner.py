"""Pattern -> pulse-train planning, selectivity/yield prediction and the
(sigma_t, M) trade-off."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import textformat as tf
from .errors import Infeasible, ZeroGradient
from .physics import ApparatusConfig, site_splitting
from .pulses import PulseDescriptor, gaussian_spectrum, spectral_response

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TargetPattern:
    site_indices: tuple[int, ...]

    def __post_init__(self):
        sites = tuple(int(s) for s in self.site_indices)
        if not sites:
            raise ValueError("pattern must contain at least one site")
        if any(b <= a for a, b in zip(sites, sites[1:])):
            raise ValueError("pattern sites must be strictly increasing")
        object.__setattr__(self, "site_indices", sites)

    @classmethod
    def parse(cls, text: str) -> "TargetPattern":
        return cls(tuple(sorted(int(v) for v in text.replace(" ", "").split(",") if v)))

    def __len__(self):
        return len(self.site_indices)

    def pairs(self) -> list[tuple[int, int]]:
        """Consecutive sites grouped two by two (pair patterns)."""
        s = self.site_indices
        return [(s[i], s[i + 1]) for i in range(0, len(s) - 1, 2)]


def frequencies_for_pattern(pattern: TargetPattern, current: float, cfg: ApparatusConfig) -> np.ndarray:
    """Carrier offsets (rad/s) resonant with each pattern site, ascending."""
    if current == 0:
        raise ZeroGradient("a pattern needs a non-zero gradient current")
    split = site_splitting(current, cfg)
    return np.array(pattern.site_indices, dtype=float) * split


def is_commensurate(frequencies, current: float, cfg: ApparatusConfig, rtol: float = 1e-6) -> bool:
    """All pairwise differences are integer multiples of the site splitting."""
    split = site_splitting(current, cfg)
    f = np.asarray(frequencies, dtype=float)
    for a, b in itertools.combinations(f, 2):
        n = abs(a - b) / split
        if n < 0.5 or abs(n - round(n)) > rtol * max(n, 1.0):
            return False
    return True


@dataclass(frozen=True)
class SequencePlan:
    """Pulse train plus loop count and push-out settings."""

    pulses: tuple[PulseDescriptor, ...]
    loop_count: int = 1
    current: float = 45.0
    pushout_survival_f4: float = 0.01
    pushout_survival_f3: float = 0.99
    init_efficiency: float = 1.0
    pattern: TargetPattern | None = None
    seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "pulses", tuple(self.pulses))
        if int(self.loop_count) != self.loop_count or self.loop_count < 1:
            raise ValueError("loop_count must be a positive integer")
        for name in ("pushout_survival_f4", "pushout_survival_f3", "init_efficiency"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        shapes = {(p.shape, p.duration, p.area, p.truncation, p.p_max, p.sigma_omega) for p in self.pulses}
        if len(shapes) > 1:
            raise ValueError("all pulses of a train must share their shape parameters")

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([p.center_offset for p in self.pulses])

    def validate(self, cfg: ApparatusConfig) -> bool:
        return len(self.pulses) < 2 or is_commensurate(self.frequencies, self.current, cfg)

    # serialisation -------------------------------------------------------
    _PLAN_KEYS = ("loop_count", "current", "pushout_survival_f4", "pushout_survival_f3",
                  "init_efficiency", "pattern", "seed", "pulse_count")
    _PULSE_KEYS = ("shape", "duration", "frequency_offset", "area", "truncation", "p_max",
                   "sigma_omega")

    def to_text(self) -> str:
        head = {
            "loop_count": str(self.loop_count),
            "current": f"{tf.format_float(self.current)} A",
            "pushout_survival_f4": tf.format_float(self.pushout_survival_f4),
            "pushout_survival_f3": tf.format_float(self.pushout_survival_f3),
            "init_efficiency": tf.format_float(self.init_efficiency),
            "pulse_count": str(len(self.pulses)),
        }
        if self.pattern is not None:
            head["pattern"] = ", ".join(str(s) for s in self.pattern.site_indices)
        if self.seed is not None:
            head["seed"] = str(self.seed)
        sections = {"plan": head}
        for i, p in enumerate(self.pulses):
            sec = {
                "shape": p.shape,
                "duration": f"{tf.format_float(p.duration)} s",
                "frequency_offset": f"{tf.format_float(p.center_offset / TWO_PI)} Hz",
                "area": tf.format_float(p.area),
                "truncation": tf.format_float(p.truncation),
            }
            if p.p_max is not None:
                sec["p_max"] = tf.format_float(p.p_max)
            if p.sigma_omega is not None:
                sec["sigma_omega"] = f"{tf.format_float(p.sigma_omega / TWO_PI)} Hz"
            sections[f"pulse.{i}"] = sec
        return tf.dumps(sections)

    @classmethod
    def from_text(cls, text: str) -> "SequencePlan":
        sections = tf.loads(text)
        if "plan" not in sections:
            raise tf.FormatError("missing [plan] section")
        head = sections["plan"]
        tf.check_keys("plan", head, cls._PLAN_KEYS)
        n = int(head.get("pulse_count", 0))
        expected = {"plan"} | {f"pulse.{i}" for i in range(n)}
        extra = sorted(set(sections) - expected)
        if extra:
            raise tf.FormatError(f"unknown section [{extra[0]}]")
        pulses = []
        for i in range(n):
            name = f"pulse.{i}"
            if name not in sections:
                raise tf.FormatError(f"missing section [{name}]")
            sec = sections[name]
            tf.check_keys(name, sec, cls._PULSE_KEYS)
            pulses.append(PulseDescriptor(
                shape=sec["shape"],
                duration=tf.parse_quantity(sec["duration"]),
                center_offset=TWO_PI * tf.parse_quantity(sec.get("frequency_offset", "0")),
                area=tf.parse_quantity(sec.get("area", repr(math.pi))),
                truncation=tf.parse_quantity(sec.get("truncation", "4")),
                p_max=tf.parse_quantity(sec["p_max"]) if "p_max" in sec else None,
                sigma_omega=TWO_PI * tf.parse_quantity(sec["sigma_omega"]) if "sigma_omega" in sec else None,
            ))
        return cls(
            pulses=tuple(pulses),
            loop_count=int(head.get("loop_count", 1)),
            current=tf.parse_quantity(head.get("current", "45")),
            pushout_survival_f4=tf.parse_quantity(head.get("pushout_survival_f4", "0.01")),
            pushout_survival_f3=tf.parse_quantity(head.get("pushout_survival_f3", "0.99")),
            init_efficiency=tf.parse_quantity(head.get("init_efficiency", "1")),
            pattern=TargetPattern.parse(head["pattern"]) if "pattern" in head else None,
            seed=int(head["seed"]) if "seed" in head else None,
        )


def build_plan(pattern: TargetPattern, pulse: PulseDescriptor, loop_count: int, current: float,
               cfg: ApparatusConfig, seed: int | None = None) -> SequencePlan:
    """One pulse per pattern site, ascending in frequency.

    Warns when neighbouring pattern frequencies lie closer than four
    loop-narrowed spectral widths.
    """
    freqs = frequencies_for_pattern(pattern, current, cfg)
    if len(freqs) > 1:
        sigma = pulse.sigma_omega
        if sigma is None and pulse.shape == "gaussian":
            sigma = spectral_response(pulse, cfg.t2)[1]
        if sigma is not None and np.min(np.diff(freqs)) < 4.0 * sigma / math.sqrt(loop_count):
            warnings.warn("pattern frequencies closer than 4 sigma_omega(M); pulses will overlap",
                          RuntimeWarning, stacklevel=2)
    plan = SequencePlan(
        pulses=tuple(pulse.with_offset(float(f)) for f in freqs),
        loop_count=loop_count,
        current=current,
        pushout_survival_f4=cfg.pushout_survival_f4,
        pushout_survival_f3=cfg.pushout_survival_f3,
        pattern=pattern,
        seed=seed,
    )
    assert plan.validate(cfg)
    return plan


@dataclass(frozen=True)
class Selectivity:
    p_max_single: float
    sigma_omega_single: float
    loops: int
    p_max: float
    sigma_omega: float
    sigma_z: float  # sites


def plan_selectivity(sigma_t: float | None, loops: int, current: float, cfg: ApparatusConfig,
                     p_max: float | None = None, sigma_omega: float | None = None) -> Selectivity:
    """Peak transfer and widths after ``loops`` inner loops.

    The single-pulse response comes from the Bloch route with the
    configured T2 unless ``p_max`` / ``sigma_omega`` are supplied.
    """
    if loops < 1:
        raise ValueError("loops must be >= 1")
    if current <= 0:
        raise ZeroGradient("selectivity needs a non-zero gradient current")
    if p_max is None or sigma_omega is None:
        if sigma_t is None or not sigma_t > 0:
            raise ValueError("sigma_t > 0 is required when the spectral response is not given")
        fit_p, fit_s = spectral_response(PulseDescriptor.gaussian(sigma_t), cfg.t2)
        p_max = min(fit_p, 1.0) if p_max is None else p_max
        sigma_omega = fit_s if sigma_omega is None else sigma_omega
    sig_m = sigma_omega / math.sqrt(loops)
    return Selectivity(p_max, sigma_omega, loops, p_max ** loops, sig_m,
                       sig_m / site_splitting(current, cfg))


@dataclass(frozen=True)
class LoopChoice:
    sigma_t: float
    loops: int
    selectivity: Selectivity
    candidates: tuple[tuple[float, int, float, float], ...] = field(repr=False, default=())


def optimize_loop_count(target_sigma_z: float, min_p: float, current: float, cfg: ApparatusConfig,
                        sigma_ts, loop_counts=range(1, 6)) -> LoopChoice:
    """Feasible (sigma_t, M) with the largest P_max(M) subject to
    sigma_z(M) <= target and P_max(M) >= min_p.

    Ties go to the smaller M, then the smaller sigma_t.
    """
    sigma_ts = sorted(float(s) for s in sigma_ts)
    loop_counts = sorted(int(m) for m in loop_counts)
    if not sigma_ts or not loop_counts:
        raise ValueError("empty search domain")
    table = []
    best = None
    for m in loop_counts:
        for st in sigma_ts:
            sel = plan_selectivity(st, m, current, cfg)
            table.append((st, m, sel.p_max, sel.sigma_z))
            if sel.sigma_z > target_sigma_z or sel.p_max < min_p:
                continue
            if best is None or sel.p_max > best[2].p_max * (1 + 1e-12):
                best = (st, m, sel)
    if best is None:
        raise Infeasible("no (sigma_t, M) in the domain meets the selectivity and transfer targets")
    return LoopChoice(best[0], best[1], best[2], tuple(table))


@dataclass(frozen=True)
class PatternProbability:
    p_ini: float
    p_full: float


def pattern_success_probability(n_atoms: int, p_a: float, p_keep: float = 1.0) -> PatternProbability:
    """All N target sites loaded (p_a^N) and additionally retained ((p_a P_keep)^N)."""
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    return PatternProbability(p_a ** n_atoms, (p_a * p_keep) ** n_atoms)


@dataclass(frozen=True)
class MottPlaneYield:
    atoms_in_plane: int
    retained_target: float
    retained_neighbors: float
    neighbor_plane_fraction: float
    plane_sites: dict = field(repr=False)


def mott_plane_yield(cloud_diameter: float, sigma_omega: float, loops: int, current: float,
                     cfg: ApparatusConfig, p_max: float = 1.0) -> MottPlaneYield:
    """Plane selection from a unit-filled spherical cloud on a cubic lattice.

    Sites sit at integer multiples of the site spacing inside the sphere;
    plane n is detuned by n site splittings from the pulse, which addresses
    the central plane with the M-loop spectrum.
    """
    a = cfg.site_spacing
    r_sites = cloud_diameter / 2.0 / a
    n_max = int(math.floor(r_sites))
    split = site_splitting(current, cfg)
    plane_sites, retained = {}, {}
    for n in range(-n_max, n_max + 1):
        r2 = r_sites ** 2 - n ** 2
        i_max = int(math.floor(math.sqrt(max(r2, 0.0))))
        i = np.arange(-i_max, i_max + 1)
        count = int(np.sum(np.floor(np.sqrt(np.maximum(r2 - i ** 2, 0.0))) * 2 + 1)) if r2 >= 0 else 0
        plane_sites[n] = count
        retained[n] = count * gaussian_spectrum(n * split, sigma_omega, p_max) ** loops
    total = sum(retained.values())
    neighbors = total - retained[0]
    return MottPlaneYield(plane_sites[0], retained[0], neighbors,
                          neighbors / total if total > 0 else 0.0, plane_sites)
