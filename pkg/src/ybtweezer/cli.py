"""Command-line front end.

Exit status: 0 on success, 2 for configuration errors, 3 when a numerical
stage fails (artifacts written up to that point are kept).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import artifacts as art
from . import collision, gate, hologram, imaging, loading
from .config import SUBCOMMAND_SECTIONS, ConfigError, apply_overrides, config_hash, load_config
from .species import TWOPI, YB174, TrapConfig

log = logging.getLogger("ybtweezer")

FORMATS = ("csv", "json", "svg")


class NumericalFailure(RuntimeError):
    pass


class Run:
    """Resolved configuration plus output helpers for one subcommand."""

    def __init__(self, command: str, cfg: dict, out: Path, formats):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.formats = set(formats or FORMATS)
        self.seed = cfg["run"]["seed"]
        self.threads = cfg["run"]["threads"]
        self.meta = art.stamp(config_hash(cfg, SUBCOMMAND_SECTIONS[command]), self.seed)
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        return self.out / name

    def csv(self, name, header, rows):
        if "csv" in self.formats:
            self.written.append(art.write_csv(self.path(name), header, rows, self.meta))

    def json(self, name, payload, force: bool = False):
        if force or "json" in self.formats:
            self.written.append(art.write_json(self.path(name), payload, self.meta))

    def svg(self, name, text):
        if "svg" in self.formats:
            self.written.append(art.atomic_write(self.path(name), text))

    def raw(self, name, array, extra):
        self.written.append(art.write_raw_stack(self.path(name), array, self.meta, extra))

    def rng(self, *stream) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, *stream]))


def _trap(cfg) -> TrapConfig:
    t = cfg["trap"]
    return TrapConfig(t["depth_hz"], t["temperature"], t["wavelength"], t["spacing"])


def _drive(sec) -> collision.DriveConfig:
    pol = tuple(complex(a, b) for a, b in sec["polarization"])
    return collision.DriveConfig(
        saturation=1.0,
        detuning=1.0,
        polarization=pol,
        magnetic_field=sec["magnetic_field_gauss"],
        tensor_light_shift=TWOPI * sec["tensor_light_shift_hz"],
    )


def cmd_pic_sweep(run: Run) -> None:
    sec = run.cfg["pic_sweep"]
    trap = _trap(run.cfg)
    drive = _drive(sec)
    s_values = np.array(sec["saturation"])
    ratios = np.array(sec["delta_over_ftrap"])
    log.info("sweeping %d x %d cells", s_values.size, ratios.size)
    res = collision.pic_sweep(
        drive, s_values, ratios, YB174, trap, sec["n_theta"], sec["n_phi"], sec["tol"], sec["channel_rule"], run.threads
    )
    prof_drive = replace(
        drive,
        saturation=sec["profile_saturation"],
        detuning=collision.detuning_from_ratio(sec["profile_delta_over_ftrap"], trap),
    )
    thetas = np.radians(sec["profile_thetas_deg"])
    _, f = collision.angular_profile(prof_drive, YB174, trap, thetas, channel_rule=sec["channel_rule"])
    peak = float(np.nanmax(res.pic)) if res.argmax is not None else math.nan
    levels = [0.9 * peak, 0.7 * peak] if peak > 0 else []
    contours = art.contour_lines(ratios, s_values, res.pic, levels) if levels and min(res.pic.shape) > 1 else {}
    argmax = None
    if res.argmax is not None:
        i, j = res.argmax
        argmax = {"index": [i, j], "saturation": s_values[i], "delta_over_ftrap": ratios[j], "pic": res.pic[i, j]}
    run.csv("pic_map.csv", ["saturation", "delta_over_ftrap", "pic"], ((s, x, res.pic[i, j]) for i, s in enumerate(s_values) for j, x in enumerate(ratios)))
    run.csv("angular_profile.csv", ["theta_deg", "f"], zip(sec["profile_thetas_deg"], f))
    run.json(
        "pic_map.json",
        {
            "saturation": s_values,
            "delta_over_ftrap": ratios,
            "pic": res.pic,
            "argmax": argmax,
            "contours": {"levels_fraction_of_max": [0.9, 0.7], "lines": contours},
            "failed_cells": {f"{i},{j}": msg for (i, j), msg in sorted(res.errors.items())},
            "quadrature": res.metadata,
            "profile": {"theta_deg": sec["profile_thetas_deg"], "f": f},
        },
        force=True,
    )
    run.svg(
        "pic_map.svg",
        art.heatmap_svg(ratios, s_values, res.pic, run.meta, "P_ic", "detuning / trap depth", "I / I_sat", contours, res.argmax),
    )
    if res.errors:
        raise NumericalFailure(f"{len(res.errors)} sweep cells failed; see pic_map.json")


def _loading_params(cfg, seed) -> loading.LoadingParams:
    sec = cfg["loading"]
    keys = (
        "mean_initial_occupancy",
        "pair_event_rate",
        "enhancement_duration",
        "red_pa_prob",
        "detuning_energy_over_trap",
        "single_atom_loss_rate",
        "trials",
        "initial_distribution",
        "max_initial",
    )
    return loading.LoadingParams(**{k: sec[k] for k in keys}, rng_seed=seed)


def _estimate_dict(est: loading.EfficiencyEstimate) -> dict:
    return {"efficiency": est.p_single, "wilson_low": est.low, "wilson_high": est.high, "trials": est.trials, "successes": est.successes}


def cmd_load_sim(run: Run) -> None:
    sec = run.cfg["loading"]
    params = _loading_params(run.cfg, run.seed)
    pic = sec["pic"]
    est = loading.loading_efficiency(params, pic)
    p0 = loading.initial_distribution(params)
    summary = {
        "pic": pic,
        "monte_carlo": _estimate_dict(est),
        "exact": loading.exact_efficiency(params, pic),
        "red_only_baseline": loading.red_only_baseline(params),
        "initial_distribution": p0,
        "initial_single_fraction": float(p0[1]) if len(p0) > 1 else 0.0,
        "final_distribution_exact": loading.exact_final_distribution(params, pic),
        "params": {k: getattr(params, k) for k in params.__dataclass_fields__},
    }

    sizes = []
    for n_sites in sec["array_sizes"]:
        reps = max(1, params.trials // n_sites)
        p = replace(params, trials=max(100, reps * n_sites), rng_seed=int(np.random.SeedSequence([run.seed, n_sites]).generate_state(1)[0]))
        e = loading.loading_efficiency(p, pic)
        sizes.append({"sites": n_sites, "arrays": p.trials // n_sites, **_estimate_dict(e), "exact_per_site": loading.exact_efficiency(p, pic)})
    summary["array_sizes"] = sizes
    run.csv("array_size_sweep.csv", ["sites", "efficiency", "wilson_low", "wilson_high", "exact_per_site"], ((s["sites"], s["efficiency"], s["wilson_low"], s["wilson_high"], s["exact_per_site"]) for s in sizes))

    sites = loading.grid_sites(sec["mot_rows"], sec["mot_cols"])
    lam0 = params.mean_initial_occupancy
    fixed = loading.mot_overlap_profile(sites, "fixed", sec["mot_radius_sites"], peak=lam0)
    rot = loading.mot_overlap_profile(sites, "rotating", sec["mot_radius_sites"], sec["rotation_radius_sites"], peak=lam0)
    rows, cols = np.divmod(np.arange(len(sites)), sec["mot_cols"])
    run.csv("lambda_map.csv", ["row", "col", "x", "y", "lambda_fixed", "lambda_rotating"], zip(rows, cols, sites[:, 0], sites[:, 1], fixed, rot))
    summary["mot"] = {
        "cv_fixed": loading.coefficient_of_variation(fixed),
        "cv_rotating": loading.coefficient_of_variation(rot),
        "center_fixed": float(loading.mot_overlap_profile([[0, 0]], "fixed", sec["mot_radius_sites"], peak=lam0)[0]),
        "center_rotating": float(loading.mot_overlap_profile([[0, 0]], "rotating", sec["mot_radius_sites"], sec["rotation_radius_sites"], peak=lam0)[0]),
    }

    if sec["pic_map"]:
        summary["efficiency_map"] = _efficiency_map(run, params, sec["pic_map"])
    run.json("loading.json", summary, force=True)


def _efficiency_map(run: Run, params, path) -> dict:
    import json

    try:
        with open(path) as fh:
            data = json.load(fh)
        s_values = np.array(data["saturation"], dtype=float)
        ratios = np.array(data["delta_over_ftrap"], dtype=float)
        pic = np.array([[np.nan if v is None else v for v in row] for row in data["pic"]], dtype=float)
    except (OSError, KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"loading.pic_map: cannot read {path} ({exc})") from None
    eff = loading.sweep_loading(pic, params, ratios)
    i, j = np.unravel_index(np.nanargmax(eff), eff.shape)
    best = loading.loading_efficiency(replace(params, detuning_energy_over_trap=float(ratios[j])), float(pic[i, j]))
    peak = float(np.nanmax(eff))
    contours = art.contour_lines(ratios, s_values, eff, [0.9 * peak, 0.7 * peak]) if min(eff.shape) > 1 else {}
    run.csv("efficiency_map.csv", ["saturation", "delta_over_ftrap", "pic", "efficiency"], ((s, x, pic[a, b], eff[a, b]) for a, s in enumerate(s_values) for b, x in enumerate(ratios)))
    run.svg("efficiency_map.svg", art.heatmap_svg(ratios, s_values, eff, run.meta, "loading efficiency", "detuning / trap depth", "I / I_sat", contours, (int(i), int(j))))
    return {
        "source": str(path),
        "efficiency": eff,
        "argmax": {"index": [int(i), int(j)], "saturation": s_values[i], "delta_over_ftrap": ratios[j], "pic": pic[i, j], "exact": eff[i, j]},
        "monte_carlo_at_argmax": _estimate_dict(best),
        "contours": contours,
    }


def cmd_holo(run: Run) -> None:
    sec = run.cfg["holo"]
    try:
        res_hw = tuple(sec["resolution"])
        spots = hologram.target_grid(sec["rows"], sec["cols"], sec["spacing_px"], res_hw)
    except ValueError as exc:
        raise ConfigError(f"holo: {exc}") from None
    incident = hologram.gaussian_incident(res_hw, sec["waist_fraction"])
    res = hologram.run_wgs(spots, res_hw, sec["max_iter"], sec["u_goal"], incident, run.seed, sec["soft_constraint"])
    text = {k: str(v) for k, v in run.meta.items()}
    run.written.append(art.atomic_write(run.path("phase.png"), hologram.phase_png_bytes(res.phase, text)))
    run.raw("phase.f64", res.phase, {"unit": "rad", "range": "[0, 2pi)", "png_levels": "round(phase / 2pi * 65535)"})
    run.json(
        "holo_report.json",
        {
            "uniformity": res.report.uniformity,
            "efficiency": res.report.efficiency,
            "spot_intensities": res.report.intensities,
            "converged": res.converged,
            "iterations": res.iterations,
            "uniformity_history": res.history,
            "max_power_error": max(res.power_error) if res.power_error else 0.0,
            "spots": spots,
            "soft_constraint": sec["soft_constraint"],
        },
        force=True,
    )
    if not res.converged:
        raise NumericalFailure(f"uniformity {res.report.uniformity:.4f} below goal after {res.iterations} iterations")


def _geometry(sec):
    centers = imaging.grid_centers(sec["rows"], sec["cols"], sec["spacing_px"], sec["origin_px"])
    shape = tuple(sec["frame_shape"])
    try:
        imaging._check_windows(shape, centers)
    except ValueError as exc:
        raise ConfigError(f"imaging: {exc}") from None
    return centers, shape


def _background(sec, scale=None):
    blobs = [imaging.Blob((r, c), s, a) for r, c, s, a in sec["blobs"]]
    bg = imaging.BackgroundModel(blobs, sec["offset"], sec["read_noise"])
    return bg.scaled(sec["background_scale"] if scale is None else scale)


def cmd_img_sim(run: Run) -> None:
    sec = run.cfg["imaging"]
    centers, shape = _geometry(sec)
    bg = _background(sec)
    rng = run.rng(1)
    n_sites = len(centers)
    truth = []
    for _ in range(sec["calibration_frames"]):
        truth.append(rng.random(n_sites) < sec["fill_fraction"])
    for _ in range(sec["triples"]):
        occ = rng.random(n_sites) < sec["fill_fraction"]
        for k in range(3):
            if k:
                occ = occ & (rng.random(n_sites) >= sec["loss_per_image"])
            truth.append(occ)
    frames = np.stack([synth.pixels for synth in (imaging.synthesize_frame(shape, centers, o, sec["psf_sigma"], sec["photons_per_atom"], bg, rng) for o in truth)])
    run.raw(
        "frames.f64",
        frames,
        {"calibration_frames": sec["calibration_frames"], "triples": sec["triples"], "centers": centers, "offset": sec["offset"]},
    )
    truth = np.array(truth)
    run.csv("truth.csv", ["frame_id", "site_id", "occupied"], ((f, s, truth[f, s]) for f in range(truth.shape[0]) for s in range(n_sites)))
    times = np.array(sec["lifetime_times_s"])
    surv = run.rng(2).binomial(sec["lifetime_sites"], np.exp(-times / sec["lifetime_s"])) / sec["lifetime_sites"]
    run.csv("survival.csv", ["t_s", "survival"], zip(times, surv))


def cmd_img_analyze(run: Run) -> None:
    sec = run.cfg["imaging"]
    centers, shape = _geometry(sec)
    src = Path(sec["frames_dir"]) if sec["frames_dir"] else run.out
    try:
        frames, side = art.read_raw_stack(src / "frames.f64")
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"imaging.frames_dir: cannot read frames from {src} ({exc})") from None
    if tuple(frames.shape[1:]) != shape:
        raise ConfigError(f"imaging.frame_shape {list(shape)} does not match frames {list(frames.shape[1:])}")
    n_cal = side["calibration_frames"]
    try:
        params = imaging.FilterParams(sec["sigma_sharp"], sec["sigma_wide1"], sec["sigma_wide2"])
    except ValueError as exc:
        raise ConfigError(f"imaging filter widths: {exc}") from None
    filtered = [imaging.filter_frame(f - sec["offset"], params) for f in frames]
    try:
        rois = imaging.calibrate_weights(filtered[:n_cal], centers)
    except ValueError as exc:
        raise NumericalFailure(str(exc)) from None
    bright = imaging.brightness_matrix(filtered[n_cal:], rois)
    if bright.size < 200:
        raise ConfigError(f"imaging: {bright.size} site readouts is too few for a threshold fit (need 200; raise triples or the site count)")
    try:
        threshold, fit = imaging.fit_threshold(bright.ravel())
    except imaging.UnimodalError as exc:
        raise NumericalFailure(str(exc)) from None
    occ = imaging.classify(bright, threshold)
    run.csv("classification.csv", ["site_id", "frame_id", "occupied"], ((s, n_cal + f, occ[f, s]) for f in range(occ.shape[0]) for s in range(occ.shape[1])))
    triples = occ.reshape(-1, 3, occ.shape[1]).transpose(0, 2, 1).reshape(-1, 3)
    try:
        est = imaging.estimate_fidelity(triples)
    except imaging.InsufficientStatistics as exc:
        raise NumericalFailure(str(exc)) from None
    report = {
        "threshold": threshold,
        "mixture": {"weights": fit.weights, "means": fit.means, "sigmas": fit.sigmas},
        "false_positive": est.false_positive,
        "false_negative": est.false_negative,
        "loss_per_image": est.loss_per_image,
        "fidelity": est.fidelity,
        "pattern_counts": est.counts,
    }
    truth_path = src / "truth.csv"
    if truth_path.exists():
        _, _, rows = art.read_csv(truth_path)
        truth = rows[:, 2].reshape(-1, len(centers)).astype(bool)[n_cal:]
        report["accuracy_vs_truth"] = float(np.mean(truth == occ))
    surv_path = src / "survival.csv"
    if surv_path.exists():
        _, _, rows = art.read_csv(surv_path)
        try:
            tau, resid = imaging.imaging_lifetime(rows[:, 0], rows[:, 1])
            report["lifetime_s"], report["lifetime_rms_residual"] = tau, resid
        except imaging.LifetimeFitError as exc:
            raise NumericalFailure(str(exc)) from None
    run.json("fidelity.json", report, force=True)


def cmd_gate_opt(run: Run) -> None:
    sec = run.cfg["gate"]
    model = gate.GateModel(
        rabi=TWOPI * sec["rabi_hz"],
        lifetime=math.inf if sec["lifetime_s"] is None else sec["lifetime_s"],
        blockade=None if sec["blockade_hz"] is None else TWOPI * sec["blockade_hz"],
    )
    opt = gate.optimize_pulse(model, sec["n_segments"], sec["max_iters"], sec["restarts"], run.seed, threads=run.threads)
    pulse = opt.pulse
    run.csv("waveform.csv", ["t_s", "phase_rad"], zip(pulse.times(), pulse.phases))
    run.json(
        "gate_result.json",
        {
            "bell_fidelity": opt.result.fidelity,
            "omega_t": pulse.duration * model.rabi,
            "duration_s": pulse.duration,
            "correction_phase": opt.result.correction_phase,
            "rydberg_time_s": opt.result.rydberg_time,
            "error_budget": gate.error_budget(model, pulse),
            "converged": opt.converged,
            "restarts": opt.restarts,
            "phases": pulse.phases,
        },
        force=True,
    )


COMMANDS = {
    "pic-sweep": cmd_pic_sweep,
    "load-sim": cmd_load_sim,
    "holo": cmd_holo,
    "img-sim": cmd_img_sim,
    "img-analyze": cmd_img_analyze,
    "gate-opt": cmd_gate_opt,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ybtweezer", description="Tweezer-array loading, imaging and gate toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML configuration file")
        p.add_argument("--out", default="out", help="output directory (default: ./out)")
        p.add_argument("--seed", type=int, help="RNG seed (overrides run.seed)")
        p.add_argument("--threads", type=int, help="worker threads (overrides run.threads)")
        p.add_argument("--format", action="append", choices=FORMATS, help="artifact formats to write; repeatable (default: all)")
        p.add_argument("-v", "--verbose", action="count", default=0)
        if name == "img-analyze":
            p.add_argument("--filter-sigmas", nargs=3, type=float, metavar=("SHARP", "WIDE1", "WIDE2"), help="filter widths in px (default 2.4 16.8 91.9)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args.seed, args.threads)
        if getattr(args, "filter_sigmas", None):
            cfg["imaging"].update(zip(("sigma_sharp", "sigma_wide1", "sigma_wide2"), args.filter_sigmas))
        run = Run(args.command, cfg, Path(args.out), args.format)
        COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, collision.CrossingError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    for p in run.written:
        log.info("wrote %s", p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
