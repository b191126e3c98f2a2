"""Command-line front end.

Subcommands: calibrate, spectrum, plan, simulate, analyze, mott-plane and
replay. Every run writes a ``manifest.txt`` next to its outputs; feeding it
to ``replay`` regenerates the same files byte for byte. All randomness
derives from ``--seed``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import shlex
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import config as runconfig
from . import textformat as tf
from .analysis import (addressed_region, drift_convolve, drift_deconvolve, effective_spectrum,
                       offset_calibration_fit, selectivity_from_histogram)
from .errors import SiteAddressError
from .fitting import fit_gaussian
from .imaging import localize_shots, pair_distance_histogram, render_shot
from .montecarlo import ShotConfig, run_ensemble, shot_rng
from .physics import calibrate_gradient, site_splitting
from .planner import SequencePlan, TargetPattern, build_plan, mott_plane_yield
from .pulses import (PulseDescriptor, Spectrum, compose_loops, sample_spectrum, sampling_grid,
                     spectral_response)

TWO_PI = 2.0 * math.pi
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass(frozen=True)
class RunManifest:
    command: str
    arguments: tuple[str, ...]
    config: str
    seed: int
    output_dir: str
    version: str
    timestamp: str

    def to_text(self) -> str:
        return tf.dumps({"run": {
            "command": self.command,
            "arguments": shlex.join(self.arguments),
            "config": self.config,
            "seed": str(self.seed),
            "output_dir": self.output_dir,
            "version": self.version,
            "timestamp": self.timestamp,
        }})

    @classmethod
    def from_text(cls, text: str) -> "RunManifest":
        sections = tf.loads(text)
        if set(sections) != {"run"}:
            raise tf.FormatError("a manifest holds exactly one [run] section")
        run = sections["run"]
        keys = ("command", "arguments", "config", "seed", "output_dir", "version", "timestamp")
        tf.check_keys("run", run, keys)
        missing = [k for k in keys if k not in run]
        if missing:
            raise tf.FormatError(f"manifest lacks key {missing[0]!r}")
        return cls(run["command"], tuple(shlex.split(run["arguments"])), run["config"],
                   int(run["seed"]), run["output_dir"], run["version"], run["timestamp"])


# --- helpers -----------------------------------------------------------------

def _write(out: Path, name: str, data: str | bytes) -> Path:
    path = out / name
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(data)
    return path


def _report(pairs: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs.items())


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _g(x) -> str:
    return f"{x:.12g}"


def _load_run_config(path: str | None) -> runconfig.RunConfig:
    if not path:
        return runconfig.RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    return runconfig.loads(text)


def _pulse_from(run: runconfig.RunConfig, args) -> PulseDescriptor:
    p = dict(run.pulse)
    if getattr(args, "sigma_t", None) is not None:
        p["sigma_t"] = args.sigma_t
    if getattr(args, "duration", None) is not None:
        p["duration"] = args.duration
    if getattr(args, "p_max", None) is not None:
        p["p_max"] = args.p_max
    if getattr(args, "sigma_omega", None) is not None:
        p["sigma_omega"] = args.sigma_omega
    shape = getattr(args, "shape", None) or run.pulse_shape
    extra = {"truncation": p.get("truncation", 4.0)}
    if "p_max" in p:
        extra["p_max"] = p["p_max"]
    if "sigma_omega" in p:
        extra["sigma_omega"] = TWO_PI * p["sigma_omega"]
    if shape == "rect":
        if "duration" not in p:
            raise UsageError("a rectangular pulse needs --duration")
        return PulseDescriptor.rectangular(p["duration"], p_max=extra.get("p_max"))
    if "sigma_t" not in p:
        raise UsageError("a Gaussian pulse needs --sigma-t")
    return PulseDescriptor.gaussian(p["sigma_t"], **extra)


# --- subcommands ---------------------------------------------------------------

def cmd_calibrate(args, run, out: Path) -> int:
    if args.exact_gamma:
        run = run.replace(gamma_mode="exact")
    cfg = run.apparatus_config()
    cal = calibrate_gradient(cfg, args.current)
    text = "\n".join(cal.report_lines()) + "\n"
    _write(out, "calibration.txt", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_spectrum(args, run, out: Path) -> int:
    cfg = run.apparatus_config()
    if args.t2 is not None:
        cfg = cfg.replace(t2=args.t2)
    current = cfg.coil_current if args.current is None else args.current
    pulse = _pulse_from(run, args)
    if pulse.p_max is not None and pulse.sigma_omega is not None and pulse.shape == "gaussian":
        grid = sampling_grid(pulse.sigma_omega)
        spec = Spectrum(grid, pulse.transfer(grid))
    else:
        spec = sample_spectrum(PulseDescriptor(pulse.shape, pulse.duration, truncation=pulse.truncation),
                               cfg.t2)
    spec = compose_loops(spec, args.loops)
    split = site_splitting(current, cfg) if current > 0 else float("nan")
    rows = [(_g(d / TWO_PI), _g(d / split), _g(p)) for d, p in zip(spec.detunings, spec.transfer)]
    _write(out, "spectrum.csv", _csv(("detuning_hz", "detuning_sites", "transfer"), rows))
    report = _report({
        "loops": args.loops,
        "p_max": _g(spec.p_max),
        "sigma_omega_hz": _g(spec.sigma_omega / TWO_PI),
        "sigma_z_sites": _g(spec.sigma_omega / split),
        "current_a": _g(current),
    })
    _write(out, "spectrum_fit.txt", report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_plan(args, run, out: Path) -> int:
    cfg = run.apparatus_config()
    current = cfg.coil_current if args.current is None else args.current
    try:
        pattern = TargetPattern.parse(args.pattern)
    except ValueError as exc:
        raise UsageError(f"bad --pattern: {exc}") from exc
    pulse = _pulse_from(run, args)
    if pulse.shape == "gaussian" and (pulse.p_max is None or pulse.sigma_omega is None):
        p, s = spectral_response(pulse, cfg.t2)
        pulse = PulseDescriptor.gaussian(pulse.duration, truncation=pulse.truncation,
                                         p_max=pulse.p_max if pulse.p_max is not None else min(p, 1.0),
                                         sigma_omega=pulse.sigma_omega or s)
    plan = build_plan(pattern, pulse, args.loops, current, cfg, seed=args.seed)
    plan = SequencePlan(plan.pulses, plan.loop_count, plan.current, plan.pushout_survival_f4,
                        plan.pushout_survival_f3, run.simulation.get("init_efficiency", 1.0),
                        plan.pattern, plan.seed)
    _write(out, args.plan_file, plan.to_text())
    sys.stdout.write(f"{len(plan.pulses)} pulses, commensurate = {plan.validate(cfg)}\n")
    return EXIT_OK


def cmd_simulate(args, run, out: Path) -> int:
    try:
        plan = SequencePlan.from_text(Path(args.plan).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read plan {args.plan}: {exc.strerror}") from exc
    sim = run.simulation
    rho0 = run.apparatus["radial_offset"] if args.rho0 is None else args.rho0
    cfg = run.apparatus_config(radial_offset=rho0)
    if not plan.validate(cfg):
        raise UsageError("plan frequencies are not commensurate with the site splitting")
    shot = ShotConfig(
        plan=plan,
        lattice_extent=int(sim["lattice_extent"]),
        p_a=sim["p_a"] if args.p_a is None else args.p_a,
        drift_rate=sim["drift_rate"] if args.drift is None else args.drift,
        shot_interval=sim["shot_interval"],
        radial_offset=rho0,
        seed=args.seed,
        thermal_mode=args.thermal_mode or run.thermal_mode,
    )
    ens = run_ensemble(shot, args.shots, cfg, workers=args.workers)
    _write(out, "atoms.csv", ens.to_csv())
    _write(out, "survival.csv", ens.summary_csv())
    rows = [(s.index, _g(s.drift_offset), _g(s.drift_offset / cfg.site_spacing), len(s.loaded),
             len(s.survivors)) for s in ens.shots]
    _write(out, "shots.csv", _csv(("shot_index", "drift_m", "drift_sites", "loaded", "survivors"), rows))
    icfg = run.imaging_config()
    for s in ens.shots[:args.images]:
        img = render_shot(s.survivors, icfg, shot_rng(args.seed, s.index, 1), cfg.site_spacing,
                          s.drift_offset)
        _write(out, f"images/shot_{s.index:05d}.pgm", img.to_pgm())
        _write(out, f"images/shot_{s.index:05d}_profile.csv", img.profile_csv())
    if args.localize:
        locs = localize_shots(ens.shots, icfg, args.seed, cfg.site_spacing)
        rows = []
        for loc in locs:
            for e in loc.estimates:
                rows.append((loc.shot_index, _g(e.position), _g(e.position / cfg.site_spacing),
                             _g(e.uncertainty)))
        _write(out, "positions.csv", _csv(("shot_index", "position_m", "position_sites",
                                           "uncertainty_m"), rows))
        failed = [str(loc.shot_index) for loc in locs if loc.failed]
        if failed:
            sys.stderr.write(f"localisation failed for shots {', '.join(failed)}\n")
    sys.stdout.write(f"{args.shots} shots, {sum(len(s.survivors) for s in ens.shots)} surviving atoms\n")
    return EXIT_OK


def _read_positions(path: str, site_spacing: float):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    shots: dict[int, list[float]] = {}
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "shot_index" not in reader.fieldnames:
            raise UsageError(f"{path}: expected a positions.csv with a shot_index column")
        for row in reader:
            pos = float(row["position_m"]) if "position_m" in row else float(row["position_sites"]) * site_spacing
            shots.setdefault(int(row["shot_index"]), []).append(pos)
    return shots


def cmd_analyze(args, run, out: Path) -> int:
    cfg = run.apparatus_config()
    current = cfg.coil_current if getattr(args, "current", None) is None else args.current
    task = args.task
    if task == "histogram":
        shots = _read_positions(args.positions, cfg.site_spacing)
        n = max(shots) + 1 if args.shots is None else args.shots
        per_shot = [np.array(shots.get(i, [])) for i in range(n)]
        pattern = TargetPattern.parse(args.pattern)
        hist = pair_distance_histogram(per_shot, pattern.pairs(), cfg.site_spacing, args.bin_width)
        _write(out, "histogram.csv", hist.to_csv())
        fit = fit_gaussian(hist.centers, hist.counts)
        sigma_meas = selectivity_from_histogram(hist)
        report = _report({
            "paired": hist.paired,
            "skipped": hist.skipped,
            "count_at_target": hist.count_near(pattern.site_indices[1] - pattern.site_indices[0]),
            "center_sites": _g(fit.center),
            "sigma_dist_sites": _g(fit.sigma),
            "sigma_meas_sites": _g(sigma_meas),
        })
    elif task == "deconvolve":
        free = drift_deconvolve(args.sigma)
        report = _report({"measured_sites": _g(args.sigma),
                          "drift_free_sites": _g(free),
                          "round_trip_sites": _g(drift_convolve(free).fitted_sigma)})
    elif task == "effective":
        eff = effective_spectrum(args.rho0, TWO_PI * args.sigma_omega, args.p_max, current, cfg,
                                 loops=args.loops)
        _write(out, "effective_spectrum.csv", eff.to_csv())
        report = _report({"p_max": _g(eff.p_max), "p_max_normalized": _g(eff.p_max_normalized),
                          "sigma_z_sites": _g(eff.sigma_z)})
    elif task == "region":
        reg = addressed_region(args.rho0, TWO_PI * args.sigma_omega, current, cfg, k=args.k)
        _write(out, "region.csv", reg.to_csv())
        report = _report({"cells_addressed": int(reg.mask.sum()), "k": args.k})
    elif task == "offset":
        try:
            data = np.loadtxt(args.scan, delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read scan {args.scan}: {exc}") from exc
        cal = offset_calibration_fit(data[:, 0], data[:, 1] * cfg.site_spacing, current, cfg)
        report = cal.report()
        if not report.endswith("\n"):
            report += "\n"
    else:  # fit
        try:
            data = np.loadtxt(args.samples, delimiter=",", skiprows=1, ndmin=2)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read samples {args.samples}: {exc}") from exc
        fit = fit_gaussian(data[:, 0], data[:, -1])
        err = fit.errors
        report = _report({"amplitude": _g(fit.amplitude), "center": _g(fit.center),
                          "sigma": _g(fit.sigma), "amplitude_err": _g(err[0]),
                          "center_err": _g(err[1]), "sigma_err": _g(err[2])})
    _write(out, f"analyze_{task}.txt", report)
    sys.stdout.write(report)
    return EXIT_OK


def cmd_mott_plane(args, run, out: Path) -> int:
    cfg = run.apparatus_config()
    current = cfg.coil_current if args.current is None else args.current
    y = mott_plane_yield(args.diameter, TWO_PI * args.sigma_omega, args.loops, current, cfg,
                         p_max=args.p_max)
    report = _report({"atoms_in_plane": y.atoms_in_plane,
                      "retained_target": _g(y.retained_target),
                      "retained_neighbors": _g(y.retained_neighbors),
                      "neighbor_plane_fraction": _g(y.neighbor_plane_fraction)})
    _write(out, "mott_plane.txt", report)
    sys.stdout.write(report)
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def _common(p):
    p.add_argument("--seed", type=int, default=0, help="master seed for all randomness")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--config", default=None, help="configuration file")


def _pulse_opts(p):
    p.add_argument("--shape", choices=("gaussian", "rect"), default=None)
    p.add_argument("--sigma-t", type=float, default=None, help="Gaussian pulse width (s)")
    p.add_argument("--duration", type=float, default=None, help="rectangular pulse length (s)")
    p.add_argument("--p-max", type=float, default=None, help="single-pulse peak transfer")
    p.add_argument("--sigma-omega", type=float, default=None, help="single-pulse spectral width (Hz)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="siteaddress", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", help="gradient calibration report")
    _common(p)
    p.add_argument("--current", type=float, default=None, help="coil current (A)")
    p.add_argument("--exact-gamma", action="store_true", help="signed gamma from g-factors")

    p = sub.add_parser("spectrum", help="pulse spectrum and its M-loop composition")
    _common(p)
    _pulse_opts(p)
    p.add_argument("--loops", type=int, default=1)
    p.add_argument("--t2", type=float, default=None, help="transverse coherence time (s)")
    p.add_argument("--current", type=float, default=None)

    p = sub.add_parser("plan", help="pattern to SequencePlan file")
    _common(p)
    _pulse_opts(p)
    p.add_argument("--pattern", required=True, help="comma separated site indices")
    p.add_argument("--current", type=float, default=None)
    p.add_argument("--loops", type=int, default=1)
    p.add_argument("--plan-file", default="plan.plan")

    p = sub.add_parser("simulate", help="ensemble Monte Carlo")
    _common(p)
    p.add_argument("--plan", required=True)
    p.add_argument("--shots", type=int, default=500)
    p.add_argument("--rho0", type=float, default=None, help="radial offset (m)")
    p.add_argument("--drift", type=float, default=None, help="axial drift rate (m/s)")
    p.add_argument("--p-a", type=float, default=None, help="filling factor")
    p.add_argument("--thermal-mode", choices=("resampled", "frozen"), default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--images", type=int, default=0, help="export images of the first N shots")
    p.add_argument("--localize", action="store_true", help="fit atom positions in every shot")

    p = sub.add_parser("analyze", help="histograms, fits, deconvolution, effective spectra")
    tasks = p.add_subparsers(dest="task", required=True, parser_class=_Parser)
    t = tasks.add_parser("histogram")
    _common(t)
    t.add_argument("--positions", required=True)
    t.add_argument("--pattern", required=True)
    t.add_argument("--shots", type=int, default=None)
    t.add_argument("--bin-width", type=float, default=1.0)
    t = tasks.add_parser("deconvolve")
    _common(t)
    t.add_argument("--sigma", type=float, required=True, help="measured width (sites)")
    for name in ("effective", "region"):
        t = tasks.add_parser(name)
        _common(t)
        t.add_argument("--rho0", type=float, required=True)
        t.add_argument("--sigma-omega", type=float, required=True, help="Hz")
        t.add_argument("--current", type=float, default=None)
        if name == "effective":
            t.add_argument("--p-max", type=float, default=1.0)
            t.add_argument("--loops", type=int, default=1)
        else:
            t.add_argument("--k", type=int, choices=(1, 2), default=1)
    t = tasks.add_parser("offset")
    _common(t)
    t.add_argument("--scan", required=True, help="CSV of field_g,position_sites")
    t.add_argument("--current", type=float, default=None)
    t = tasks.add_parser("fit")
    _common(t)
    t.add_argument("--samples", required=True, help="CSV with x in the first and y in the last column")

    p = sub.add_parser("mott-plane", help="plane-selection yield")
    _common(p)
    p.add_argument("--diameter", type=float, default=25e-6, help="cloud diameter (m)")
    p.add_argument("--sigma-omega", type=float, default=6.4e3, help="single-pulse width (Hz)")
    p.add_argument("--loops", type=int, default=2)
    p.add_argument("--p-max", type=float, default=1.0)
    p.add_argument("--current", type=float, default=None)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="write to this directory instead")
    return parser


COMMANDS = {"calibrate": cmd_calibrate, "spectrum": cmd_spectrum, "plan": cmd_plan,
            "simulate": cmd_simulate, "analyze": cmd_analyze, "mott-plane": cmd_mott_plane}


def _replay(args) -> list[str]:
    try:
        manifest = RunManifest.from_text(Path(args.manifest).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read manifest {args.manifest}: {exc.strerror}") from exc
    argv = list(manifest.arguments)
    if args.out is not None:
        argv += ["--out", args.out]
    return argv


def _run(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        return _run(_replay(args))
    if getattr(args, "shots", None) is not None and args.shots < 1:
        raise UsageError("--shots must be >= 1")
    if getattr(args, "loops", 1) < 1:
        raise UsageError("--loops must be >= 1")
    run = _load_run_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    code = COMMANDS[args.command](args, run, out)
    manifest = RunManifest(
        command=args.command if args.command != "analyze" else f"analyze {args.task}",
        arguments=tuple(argv),
        config=str(Path(args.config).resolve()) if args.config else "",
        seed=args.seed,
        output_dir=str(out.resolve()),
        version=_version(),
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    _write(out, "manifest.txt", manifest.to_text())
    return code


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _run(argv)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except SiteAddressError as exc:
        sys.stderr.write(f"numerical failure: {type(exc).__name__}: {exc}\n")
        return EXIT_NUMERIC
    except ValueError as exc:
        # FormatError and invalid parameter values
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE
    except ArithmeticError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
