"""Seeded Monte Carlo of the patterning experiment.

A shot loads the lattice with Bernoulli filling, samples thermal
displacements, then runs the inner loop M times: optical pumping to |0>,
the pulse train (each pulse toggles an atom with its transfer probability)
and the state-selective push-out. Lattice drift shifts every atom of a shot
by the same amount, reduced modulo one site.

Every shot draws from its own generator derived from (seed, shot index), so
results do not depend on how shots are distributed over workers.
"""
from __future__ import annotations

import enum
import io
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .physics import ApparatusConfig, gradient_frequency, radial_curvature, thermal_widths
from .planner import SequencePlan

ThermalMode = Literal["resampled", "frozen"]


class State(enum.IntEnum):
    ZERO = 0
    ONE = 1
    LOST = 2


@dataclass(frozen=True)
class AtomRecord:
    site: int
    axial_displacement: float
    radial_displacement: tuple[float, float]
    internal_state: State


@dataclass
class Atoms:
    """Column storage for the atoms of one shot."""

    site: np.ndarray
    axial: np.ndarray
    radial_x: np.ndarray
    radial_y: np.ndarray
    state: np.ndarray

    @classmethod
    def empty(cls) -> "Atoms":
        return cls(np.zeros(0, dtype=np.int64), *(np.zeros(0) for _ in range(3)), np.zeros(0, dtype=np.int8))

    def __len__(self):
        return len(self.site)

    def select(self, mask) -> "Atoms":
        return Atoms(self.site[mask], self.axial[mask], self.radial_x[mask], self.radial_y[mask],
                     self.state[mask])

    @property
    def alive(self) -> np.ndarray:
        return self.state != State.LOST

    def survivors(self) -> "Atoms":
        return self.select(self.alive)

    def records(self) -> list[AtomRecord]:
        return [AtomRecord(int(s), float(z), (float(x), float(y)), State(int(q)))
                for s, z, x, y, q in zip(self.site, self.axial, self.radial_x, self.radial_y, self.state)]


def sample_thermal_displacement(cfg: ApparatusConfig, rng: np.random.Generator, n: int = 1):
    """Axial and two radial displacements (m) of ``n`` thermal atoms."""
    s_ax, s_rad = thermal_widths(cfg)
    axial = rng.normal(0.0, s_ax, n)
    radial = rng.normal(0.0, s_rad, (2, n))
    return axial, radial[0], radial[1]


def load_lattice(sites, p_a: float, cfg: ApparatusConfig, rng: np.random.Generator) -> Atoms:
    """Occupy each site independently with probability ``p_a``; atoms start in |0>."""
    sites = np.asarray(sites, dtype=np.int64)
    occupied = sites[rng.random(len(sites)) < p_a]
    axial, rx, ry = sample_thermal_displacement(cfg, rng, len(occupied))
    return Atoms(occupied, axial, rx, ry, np.zeros(len(occupied), dtype=np.int8))


def wrap_drift(offset, site_spacing: float):
    """Reduce a drift offset to the interval (-a/2, a/2]."""
    return offset - site_spacing * np.ceil(offset / site_spacing - 0.5)


def atomic_detuning(atoms: Atoms, drift_offset: float, rho0: float, current: float,
                    cfg: ApparatusConfig) -> np.ndarray:
    """Resonance of each atom relative to the unshifted reference site (rad/s)."""
    wp = gradient_frequency(current, cfg)
    k = radial_curvature(current, cfg)
    z = atoms.site * cfg.site_spacing + atoms.axial + drift_offset
    return wp * z + k * (2.0 * rho0 * atoms.radial_x + atoms.radial_x ** 2 + atoms.radial_y ** 2)


def apply_inner_loop(atoms: Atoms, plan: SequencePlan, drift_offset: float, cfg: ApparatusConfig,
                     rng: np.random.Generator, rho0: float | None = None,
                     thermal_mode: ThermalMode = "resampled") -> Atoms:
    """Run the plan's M inner loops on ``atoms``; returns the updated atoms.

    ``thermal_mode="resampled"`` draws fresh displacements before every loop
    after the first; ``"frozen"`` keeps each atom's displacement.
    """
    rho0 = cfg.radial_offset if rho0 is None else rho0
    atoms = Atoms(atoms.site.copy(), atoms.axial.copy(), atoms.radial_x.copy(),
                  atoms.radial_y.copy(), atoms.state.copy())
    for loop in range(plan.loop_count):
        alive = atoms.alive
        n = len(atoms)
        if thermal_mode == "resampled" and loop > 0:
            ax, rx, ry = sample_thermal_displacement(cfg, rng, n)
            atoms.axial, atoms.radial_x, atoms.radial_y = ax, rx, ry
        pumped = rng.random(n) < plan.init_efficiency
        # unpumped atoms end in another F=4 sublevel and are pushed out
        atoms.state = np.where(alive, State.ZERO, State.LOST).astype(np.int8)
        dark = alive & ~pumped
        resonance = atomic_detuning(atoms, drift_offset, rho0, plan.current, cfg)
        for pulse in plan.pulses:
            p = pulse.transfer(pulse.center_offset - resonance, cfg.t2)
            flip = (rng.random(n) < p) & alive & ~dark
            atoms.state = np.where(flip, 1 - atoms.state, atoms.state).astype(np.int8)
        keep_p = np.where(atoms.state == State.ONE, plan.pushout_survival_f3, plan.pushout_survival_f4)
        keep_p = np.where(dark, plan.pushout_survival_f4, keep_p)
        kept = (rng.random(n) < keep_p) & alive
        atoms.state = np.where(kept, atoms.state, State.LOST).astype(np.int8)
    return atoms


@dataclass(frozen=True)
class ShotConfig:
    plan: SequencePlan
    lattice_extent: int = 200
    p_a: float = 0.5
    drift_rate: float = 10e-9  # m/s
    shot_interval: float = 10.0  # s
    radial_offset: float = 0.0
    axial_offset: float = 0.0
    seed: int = 0
    first_site: int | None = None
    thermal_mode: ThermalMode = "resampled"

    def __post_init__(self):
        if self.lattice_extent < 1:
            raise ValueError("lattice_extent must be >= 1")
        if not 0.0 <= self.p_a <= 1.0:
            raise ValueError("p_a must lie in [0, 1]")
        if self.thermal_mode not in ("resampled", "frozen"):
            raise ValueError(f"unknown thermal mode {self.thermal_mode!r}")

    def sites(self) -> np.ndarray:
        first = self.first_site
        if first is None:
            pattern = self.plan.pattern.site_indices if self.plan.pattern else (0,)
            first = int(round((pattern[0] + pattern[-1]) / 2.0)) - self.lattice_extent // 2
        return np.arange(first, first + self.lattice_extent, dtype=np.int64)

    def drift_offset(self, shot_index: int, site_spacing: float) -> float:
        return float(wrap_drift(self.drift_rate * shot_index * self.shot_interval, site_spacing))


def shot_rng(seed: int, shot_index: int, stream: int = 0) -> np.random.Generator:
    """Counter-style generator for (seed, shot, stream)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(shot_index, stream)))


@dataclass(frozen=True)
class ShotResult:
    index: int
    drift_offset: float
    loaded: Atoms
    survivors: Atoms


def run_shot(config: ShotConfig, cfg: ApparatusConfig, index: int) -> ShotResult:
    rng = shot_rng(config.seed, index)
    drift = config.drift_offset(index, cfg.site_spacing)
    loaded = load_lattice(config.sites(), config.p_a, cfg, rng)
    final = apply_inner_loop(loaded, config.plan, drift, cfg, rng, rho0=config.radial_offset,
                             thermal_mode=config.thermal_mode)
    return ShotResult(index, drift, loaded, final.survivors())


def _run_chunk(args):
    config, cfg, indices = args
    return [run_shot(config, cfg, i) for i in indices]


@dataclass
class EnsembleResult:
    shots: list[ShotResult]
    survival_counts: Counter = field(default_factory=Counter)
    loaded_counts: Counter = field(default_factory=Counter)

    @property
    def drift_offsets(self) -> np.ndarray:
        return np.array([s.drift_offset for s in self.shots])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("shot_index,site,axial_nm,radial_nm,state\r\n")
        for s in self.shots:
            a = s.survivors
            radial = np.hypot(a.radial_x, a.radial_y)
            for site, z, r, q in zip(a.site, a.axial, radial, a.state):
                buf.write(f"{s.index},{site},{z * 1e9:.6f},{r * 1e9:.6f},{State(int(q)).name}\r\n")
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        buf.write("site,survival_count\r\n")
        for site in sorted(self.survival_counts):
            buf.write(f"{site},{self.survival_counts[site]}\r\n")
        return buf.getvalue()


def run_ensemble(config: ShotConfig, n_shots: int, cfg: ApparatusConfig | None = None,
                 workers: int = 1) -> EnsembleResult:
    """Run ``n_shots`` independent shots, optionally across worker processes."""
    if n_shots < 1:
        raise ValueError("n_shots must be >= 1")
    cfg = cfg or ApparatusConfig(radial_offset=config.radial_offset, axial_offset=config.axial_offset)
    indices = list(range(n_shots))
    if workers <= 1:
        shots = [run_shot(config, cfg, i) for i in indices]
    else:
        chunks = [indices[w::workers] for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            shots = [s for part in pool.map(_run_chunk, [(config, cfg, c) for c in chunks]) for s in part]
        shots.sort(key=lambda s: s.index)
    result = EnsembleResult(shots)
    for s in shots:
        result.survival_counts.update(int(x) for x in s.survivors.site)
        result.loaded_counts.update(int(x) for x in s.loaded.site)
    return result
