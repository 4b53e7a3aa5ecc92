"""Command-line entry point.

Every subcommand reads defaults, then an optional flat TOML file given with
``--config``, then explicit flags (flags win). Results are printed as
``key=value`` lines. Exit status is 0 on success, 2 for usage or
configuration errors, 1 for computation errors.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import io as qio
from .config import ConfigError, Option, default_outdir, load_file, preset_path, resolve
from .correlator import (
    DEFAULT_BIN_WIDTH_PS,
    DEFAULT_PERIOD_PS,
    DEFAULT_TAIL_START_PS,
    PAIR_MODES,
    cross_correlate,
    normalize,
    rebin_to_periods,
    start_stop_correction,
)
from .g2 import (
    THREE_LEVEL,
    TWO_LEVEL,
    BackgroundMix,
    FitError,
    _invert,
    cw_correct,
    error_budget,
    fit_antibunching,
    pulsed_correct,
)
from .synth import RNG_ALGORITHM, EmitterModel, PulseTrain, simulate_cw, simulate_pulsed
from .wgm import (
    ResonatorGeometry,
    find_dips,
    fit_dip,
    fsr_geometric,
    normalize_transmission,
    segmented_fourier,
)

TAIL_SPAN_PS = 256 * DEFAULT_PERIOD_PS

_MIX = [
    Option("a", float, 1 / 3, "relative emitter intensity"),
    Option("b", float, 2 / 3, "relative background intensity"),
    Option("da", float, 0.0, "uncertainty of a"),
    Option("db", float, 0.0, "uncertainty of b"),
    Option("dr", float, 0.0, "absolute uncertainty of b/a"),
]
_TAIL = [
    Option("tail_start_ps", int, DEFAULT_TAIL_START_PS, "start of the normalization tail"),
    Option("tail_span_ps", int, TAIL_SPAN_PS, "length of the normalization tail"),
]
_PAIR = [
    Option("stream_a", str, None, "start-channel stream file (CSV or PHST)"),
    Option("stream_b", str, None, "stop-channel stream file; default: same file as stream_a"),
    Option("channel_a", int, None, "channel to use from stream_a"),
    Option("channel_b", int, None, "channel to use from stream_b"),
    Option("mode", str, "all_pairs", "pair counting mode", PAIR_MODES),
    Option("correct_start_stop", bool, True, "apply the start-stop survival correction"),
    Option("n_jobs", int, 1, "worker threads"),
]
_EMITTER = [
    Option("seed", int, 0, "random seed"),
    Option("excited_lifetime_ps", float, 20_000.0, "excited-state lifetime"),
    Option("detected_fraction", float, 0.05, "detection efficiency"),
    Option("dead_time_ps", int, 0, "detector dead time (0 = off)"),
    Option("format", str, "csv", "stream file format", ("csv", "bin")),
    Option("out_prefix", str, "stream", "output file prefix"),
]

COMMANDS = {
    "sim-cw": [
        *_EMITTER,
        Option("duration_ps", float, 1e12, "simulated record length"),
        Option("pump_rate_per_s", float, 5e7, "cw pump rate"),
        Option("shelving_rate_per_s", float, 0.0, "excited-to-shelf rate"),
        Option("shelf_lifetime_ps", float, 300_000.0, "shelf lifetime"),
        Option("background_rate_per_s", float, 0.0, "Poisson background rate"),
    ],
    "sim-pulsed": [
        *_EMITTER,
        Option("pulses", int, 1_000_000, "number of laser pulses"),
        Option("repetition_period_ps", int, DEFAULT_PERIOD_PS, "laser repetition period"),
        Option("excitation_probability", float, 0.5, "emitter excitation probability per pulse"),
        Option("background_per_pulse", float, 0.0, "mean background counts per pulse"),
    ],
    "correlate": [
        *_PAIR, *_TAIL,
        Option("bin_width_ps", int, DEFAULT_BIN_WIDTH_PS, "histogram bin width"),
        Option("window_ps", int, None, "half width of the lag window (multiple of the bin width)"),
        Option("out", str, "correlation", "output file prefix"),
    ],
    "rebin": [
        *_PAIR, *_TAIL,
        Option("period_ps", int, DEFAULT_PERIOD_PS, "laser repetition period"),
        Option("period_count", int, None, "periods on each side of zero"),
        Option("out", str, "periods", "output file prefix"),
    ],
    "g2-correct": [
        Option("mode", str, "cw", "correction procedure", ("cw", "pulsed")),
        Option("g2ab", float, None, "measured joint g2 value"),
        Option("g2b", float, 1.0, "background autocorrelation value (pulsed)"),
        Option("joint", str, None, "normalized joint curve CSV (pulsed)"),
        Option("background", str, None, "normalized background curve CSV (pulsed)"),
        *_MIX,
        Option("out", str, None, "report file prefix"),
    ],
    "g2-fit": [
        Option("curve", str, None, "histogram or curve CSV"),
        Option("model", str, THREE_LEVEL, "fit model", (TWO_LEVEL, THREE_LEVEL)),
        *_TAIL,
    ],
    "propagate-error": [
        Option("g2ab", float, None, "measured joint g2 value"),
        Option("g2b", float, 1.0, "background autocorrelation value"),
        *_MIX,
    ],
    "normalize-trace": [
        Option("coupled", str, None, "coupled-taper transmission CSV"),
        Option("reference", str, None, "uncoupled reference CSV"),
        Option("out", str, "normalized_trace.csv", "output CSV"),
    ],
    "q-fit": [
        Option("trace", str, None, "normalized transmission CSV"),
        Option("window_lo_nm", float, None, "fit window start (default: search dips)"),
        Option("window_hi_nm", float, None, "fit window end"),
        Option("prominence", float, 0.05, "minimum dip depth for the dip search"),
    ],
    "fsr": [
        Option("diameter_um", float, 20.0, "disc diameter"),
        Option("n", float, 1.5, "effective refractive index"),
        Option("wavelength_nm", float, 770.0, "wavelength"),
    ],
    "modes-fft": [
        Option("spectrum", str, None, "spectrum CSV"),
        Option("segment_width_nm", float, 25.0, "segment width"),
        Option("overlap_fraction", float, 0.5, "segment overlap (0 = disjoint)"),
        Option("reference_nm", float, 770.0, "wavelength at which the base track is reported"),
        Option("out", str, "modes", "output file prefix"),
    ],
}

PIPELINE_OPTIONS = [
    Option("scenario", str, "pulsed_measured", "pipeline scenario",
           ("pulsed_measured", "pulsed_sim", "cw_sim")),
    Option("seed", int, 0, "seed of the emitter measurement"),
    Option("background_seed", int, 1, "seed of the background-only measurement"),
    Option("pulses", int, 10_000_000, "laser pulses per measurement"),
    Option("repetition_period_ps", int, DEFAULT_PERIOD_PS, "laser repetition period"),
    Option("excited_lifetime_ps", float, 2_000.0, "excited-state lifetime"),
    Option("excitation_probability", float, 0.5, "excitation probability per pulse"),
    Option("detected_fraction", float, 0.2, "detection efficiency"),
    Option("background_per_pulse", float, None, "background counts per pulse (default from b/a)"),
    Option("duration_ps", float, 4e12, "cw record length"),
    Option("pump_rate_per_s", float, 5e7, "cw pump rate"),
    Option("shelving_rate_per_s", float, 0.0, "excited-to-shelf rate"),
    Option("shelf_lifetime_ps", float, 300_000.0, "shelf lifetime"),
    Option("bin_width_ps", int, DEFAULT_BIN_WIDTH_PS, "fine histogram bin width"),
    Option("model", str, THREE_LEVEL, "antibunching fit model", (TWO_LEVEL, THREE_LEVEL)),
    Option("g2ab_zero", float, None, "measured joint zero-period value (pulsed_measured)"),
    Option("g2b_zero", float, 1.0, "measured background zero-period value (pulsed_measured)"),
    *_TAIL,
    *_MIX,
    Option("out", str, "pipeline", "output file prefix"),
]
COMMANDS["pipeline"] = PIPELINE_OPTIONS

_OUTPUTS = []


def _out(outdir, name):
    path = Path(outdir) / name
    path.parent.mkdir(parents=True, exist_ok=True)
    _OUTPUTS.append(str(path))
    return str(path)


def _require(params, *names):
    missing = [n for n in names if params.get(n) is None]
    if missing:
        raise ConfigError("missing required option(s): "
                          + ", ".join("--" + n.replace("_", "-") for n in missing))


def _mix(p):
    return BackgroundMix(p["a"], p["b"], p["da"], p["db"], p["dr"])


def _emitter(p, **extra):
    keys = ("excited_lifetime_ps", "detected_fraction", "pump_rate_per_s",
            "shelving_rate_per_s", "shelf_lifetime_ps", "excitation_probability")
    return EmitterModel(**{k: p[k] for k in keys if k in p and p[k] is not None}, **extra)


def _write_streams(p, outdir, streams):
    summary = {}
    for s in streams:
        if p["format"] == "csv":
            path = _out(outdir, f"{p['out_prefix']}_ch{s.channel}.csv")
            qio.write_stream_csv(path, s)
        else:
            path = _out(outdir, f"{p['out_prefix']}_ch{s.channel}.phst")
            qio.write_stream_binary(path, s)
        summary[f"events_ch{s.channel}"] = len(s)
        summary[f"file_ch{s.channel}"] = path
    total = sum(len(s) for s in streams)
    emitter = sum(s.count(0) for s in streams)
    summary.update(emitter_events=emitter, background_events=total - emitter,
                   duration_ps=streams[0].duration_ps, rng=RNG_ALGORITHM, seed=p["seed"])
    return summary


def cmd_sim_cw(p, outdir):
    em = _emitter(p)
    streams = simulate_cw(em, p["background_rate_per_s"], p["duration_ps"], p["seed"],
                          dead_time_ps=p["dead_time_ps"])
    return _write_streams(p, outdir, streams)


def cmd_sim_pulsed(p, outdir):
    em = _emitter(p)
    pulses = PulseTrain(p["repetition_period_ps"], p["pulses"])
    streams = simulate_pulsed(em, pulses, p["background_per_pulse"], p["seed"],
                              dead_time_ps=p["dead_time_ps"])
    return _write_streams(p, outdir, streams)


def _load_pair(p):
    _require(p, "stream_a")
    first = qio.read_streams(p["stream_a"])
    ch_a = p["channel_a"] if p["channel_a"] is not None else min(first)
    if ch_a not in first:
        raise ValueError(f"{p['stream_a']} holds no channel {ch_a}")
    a = first[ch_a]
    if p["stream_b"] is None:
        rest = sorted(c for c in first if c != ch_a)
        ch_b = p["channel_b"] if p["channel_b"] is not None else (rest[0] if rest else ch_a)
        b = first[ch_b]
    else:
        second = qio.read_streams(p["stream_b"])
        ch_b = p["channel_b"] if p["channel_b"] is not None else min(second)
        b = second[ch_b]
    return a, (None if b is a else b)


def _zero_summary(curve):
    i = curve.at(0)
    return {"g2_zero": float(curve.g2[i]), "sigma_zero": float(curve.sigma[i]),
            "lag_zero_ps": float(curve.lag_ps[i]), "normalization": curve.normalization}


def _histogram_outputs(p, outdir, hist):
    corrected = start_stop_correction(hist) if p["correct_start_stop"] else hist
    curve = normalize(corrected, p["tail_start_ps"], p["tail_span_ps"])
    qio.write_histogram_csv(_out(outdir, f"{p['out']}_hist.csv"), hist, curve.normalization)
    qio.write_curve_csv(_out(outdir, f"{p['out']}_g2.csv"), curve)
    return {"pairs": int(hist.counts.sum()), "bins": len(hist), **_zero_summary(curve)}


def cmd_correlate(p, outdir):
    a, b = _load_pair(p)
    hist = cross_correlate(a, b, p["bin_width_ps"], p["window_ps"], p["mode"], n_jobs=p["n_jobs"])
    return _histogram_outputs(p, outdir, hist)


def cmd_rebin(p, outdir):
    a, b = _load_pair(p)
    hist = rebin_to_periods(a, b, p["period_ps"], p["period_count"], p["mode"],
                            n_jobs=p["n_jobs"])
    return _histogram_outputs(p, outdir, hist)


def _correction_summary(result, prefix="g2a"):
    budget = result.budget_at_zero()
    out = {prefix: result.g2_a_zero, "dg2a": budget["total"]}
    out.update({f"dg2a_{k}": v for k, v in budget.items() if k != "total"})
    return out


def cmd_g2_correct(p, outdir):
    mix = _mix(p)
    if p["mode"] == "pulsed" and p["joint"] is not None:
        _require(p, "background")
        result = pulsed_correct(qio.read_curve_csv(p["joint"]),
                                qio.read_curve_csv(p["background"]), mix)
        if p["out"]:
            qio.write_correction_csv(_out(outdir, f"{p['out']}_corrected.csv"), result)
        summary = _correction_summary(result)
    else:
        _require(p, "g2ab")
        g2b = p["g2b"] if p["mode"] == "pulsed" else 1.0
        summary = _scalar_correction(p["g2ab"], mix, g2b)
    if p["out"]:
        qio.write_kv(_out(outdir, f"{p['out']}_report.txt"), {**_inputs(p), **summary})
    return summary


def _scalar_correction(g2ab, mix, g2b=1.0):
    g2a = float(_invert(g2ab, mix, g2b))
    budget = {k: float(v) for k, v in error_budget(g2ab, mix, g2b).items()}
    out = {"g2a": g2a, "dg2a": budget["total"]}
    out.update({f"dg2a_{k}": v for k, v in budget.items()
                if k != "total" and not k.endswith("statistics")})
    return out


def _inputs(p):
    return {f"input_{k}": v for k, v in p.items() if v is not None}


def cmd_g2_fit(p, outdir):
    _require(p, "curve")
    with open(p["curve"], encoding="utf-8") as fh:
        text = fh.read(4096)
    if "lag_bin_center_ns,counts" in text:
        hist = start_stop_correction(qio.read_histogram_csv(p["curve"]))
        curve = normalize(hist, p["tail_start_ps"], p["tail_span_ps"])
    else:
        curve = qio.read_curve_csv(p["curve"])
    fit = fit_antibunching(curve, p["model"])
    return {"g0": fit.g0, "g0_err": fit.g0_err, "tau1_ps": fit.tau1_ps,
            "tau1_err_ps": fit.tau1_err_ps, "beta": fit.beta, "tau2_ps": fit.tau2_ps,
            "chi2_dof": fit.chi2_dof, "model": fit.model}


def cmd_propagate_error(p, outdir):
    _require(p, "g2ab")
    budget = error_budget(p["g2ab"], _mix(p), p["g2b"])
    out = {"dg2a": float(budget["total"])}
    out.update({f"dg2a_{k}": float(v) for k, v in budget.items()
                if k != "total" and not k.endswith("statistics")})
    return out


def cmd_normalize_trace(p, outdir):
    _require(p, "coupled", "reference")
    trace = normalize_transmission(qio.read_trace_csv(p["coupled"]),
                                   qio.read_trace_csv(p["reference"]))
    path = _out(outdir, p["out"])
    qio.write_spectrum_csv(path, trace)
    return {"samples": len(trace), "min_transmission": float(trace.transmission.min()),
            "file": path}


def cmd_q_fit(p, outdir):
    _require(p, "trace")
    trace = qio.read_trace_csv(p["trace"])
    if p["window_lo_nm"] is not None or p["window_hi_nm"] is not None:
        _require(p, "window_lo_nm", "window_hi_nm")
        windows = [(p["window_lo_nm"], p["window_hi_nm"])]
    else:
        windows = find_dips(trace, p["prominence"])
        if not windows:
            raise ValueError(f"no dips deeper than {p['prominence']} found")
    summary = {"dips": len(windows)}
    for k, w in enumerate(windows):
        fit = fit_dip(trace, w)
        tag = "" if len(windows) == 1 else f"_{k}"
        summary.update({f"q{tag}": fit.q, f"q_err{tag}": fit.q_err,
                        f"center_nm{tag}": fit.center_nm, f"fwhm_nm{tag}": fit.fwhm_nm,
                        f"depth{tag}": fit.depth, f"low_confidence{tag}": int(fit.low_confidence)})
        if getattr(w, "merged", False):
            summary[f"merged{tag}"] = 1
    return summary


def cmd_fsr(p, outdir):
    fsr = fsr_geometric(ResonatorGeometry(p["diameter_um"], p["n"]), p["wavelength_nm"])
    return {"fsr_nm": f"{fsr:.2f}", "fsr_nm_exact": f"{fsr:.6f}"}


def cmd_modes_fft(p, outdir):
    _require(p, "spectrum")
    spectrum = qio.read_spectrum_csv(p["spectrum"])
    modes = segmented_fourier(spectrum, p["segment_width_nm"], p["overlap_fraction"])
    qio.write_mode_map_csv(_out(outdir, f"{p['out']}_map.csv"), modes)
    qio.write_tracks_csv(_out(outdir, f"{p['out']}_tracks.csv"), modes)
    summary = {"segments": len(modes.segment_centers_nm),
               "frequency_bin_inv_nm": modes.frequency_bin_inv_nm, "tracks": len(modes.tracks)}
    ref = p["reference_nm"]
    for track in modes.tracks:
        summary[f"track{track.order}_frequency_inv_nm"] = float(track.frequency_at(ref))
    if modes.tracks:
        summary["fsr_nm"] = float(1.0 / modes.tracks[0].frequency_at(ref))
        summary["reference_nm"] = ref
    return summary


def cmd_pipeline(p, outdir):
    mix = _mix(p)
    scenario = p["scenario"]
    prefix = p["out"]
    if scenario == "pulsed_measured":
        _require(p, "g2ab_zero")
        summary = _scalar_correction(p["g2ab_zero"], mix, p["g2b_zero"])
        summary = {"g2a_zero": summary.pop("g2a"), **summary}
    elif scenario == "pulsed_sim":
        period = p["repetition_period_ps"]
        p_detect = p["excitation_probability"] * p["detected_fraction"]
        bg = p["background_per_pulse"]
        if bg is None:
            bg = mix.ratio * p_detect
        pulses = PulseTrain(period, p["pulses"])
        joint_streams = simulate_pulsed(_emitter(p), pulses, bg, p["seed"])
        dark = EmitterModel(excited_lifetime_ps=p["excited_lifetime_ps"])
        bg_streams = simulate_pulsed(dark, pulses, bg, p["background_seed"])
        count = -(-p["tail_start_ps"] // period) + p["tail_span_ps"] // period
        curves = []
        for name, (a, b) in (("joint", joint_streams), ("background", bg_streams)):
            hist = rebin_to_periods(a, b, period, count)
            curve = normalize(hist, p["tail_start_ps"], p["tail_span_ps"])
            qio.write_curve_csv(_out(outdir, f"{prefix}_{name}_periods.csv"), curve)
            curves.append(curve)
        result = pulsed_correct(curves[0], curves[1], mix)
        qio.write_correction_csv(_out(outdir, f"{prefix}_corrected.csv"), result)
        zero = result.zero
        summary = {"g2a_zero": result.g2_a_zero, "dg2a": result.dg2_a_zero,
                   "g2ab_zero": float(curves[0].g2[zero]),
                   "g2ab_zero_sigma": float(curves[0].sigma[zero]),
                   "g2b_zero": float(curves[1].g2[zero]),
                   "emitter_events": sum(s.count(0) for s in joint_streams),
                   "background_events": sum(s.count(1) for s in joint_streams),
                   "background_per_pulse": bg}
        summary.update({f"dg2a_{k}": v for k, v in result.budget_at_zero().items() if k != "total"})
    else:
        em = _emitter(p)
        rate_e = em.cw_detected_rate_per_s()
        rate_b = mix.ratio * rate_e
        a, b = simulate_cw(em, rate_b, p["duration_ps"], p["seed"])
        hist = cross_correlate(a, b, p["bin_width_ps"])
        curve = normalize(hist, p["tail_start_ps"], p["tail_span_ps"])
        qio.write_curve_csv(_out(outdir, f"{prefix}_g2.csv"), curve)
        fit = fit_antibunching(curve, p["model"])
        corrected = cw_correct(fit.g0, mix)
        summary = {"g0_fit": fit.g0, "g0_fit_err": fit.g0_err, "tau1_ps": fit.tau1_ps,
                   "chi2_dof": fit.chi2_dof, "g2a_zero": corrected.g2_a,
                   "dg2a": corrected.dg2_a, "background_rate_per_s": rate_b}
    qio.write_kv(_out(outdir, f"{prefix}_report.txt"), {**_inputs(p), **summary})
    return summary


HANDLERS = {
    "sim-cw": cmd_sim_cw, "sim-pulsed": cmd_sim_pulsed, "correlate": cmd_correlate,
    "rebin": cmd_rebin, "g2-correct": cmd_g2_correct, "g2-fit": cmd_g2_fit,
    "propagate-error": cmd_propagate_error, "normalize-trace": cmd_normalize_trace,
    "q-fit": cmd_q_fit, "fsr": cmd_fsr, "modes-fft": cmd_modes_fft, "pipeline": cmd_pipeline,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="quphot", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"quphot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, options in COMMANDS.items():
        cmd = sub.add_parser(name, help=HANDLERS[name].__name__[4:].replace("_", " "))
        cmd.add_argument("--config", help="flat TOML file (path or packaged preset name)")
        cmd.add_argument("--out-dir", default=None,
                         help="output directory (default: $QUPHOT_OUTDIR or .)")
        for opt in options:
            kwargs = {"dest": opt.name, "default": None, "help": opt.help}
            if opt.type is bool:
                kwargs["type"] = str
                kwargs["metavar"] = "{true,false}"
            else:
                kwargs["type"] = str
                if opt.choices:
                    kwargs["choices"] = opt.choices
            cmd.add_argument(opt.flag, **kwargs)
    return parser


def _manifest(command, params, summary, config_path, outdir):
    items = {
        "command": command,
        "quphot_version": __version__,
        "python_version": platform.python_version(),
        "numpy_version": np.__version__,
        "rng": RNG_ALGORITHM,
        "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    if config_path:
        items["config_file"] = config_path
        items["config_sha256"] = qio.sha256(config_path)
    items.update({f"param_{k}": v for k, v in params.items() if v is not None})
    for key in ("stream_a", "stream_b", "curve", "trace", "spectrum", "joint", "background",
                "coupled", "reference"):
        if params.get(key):
            items[f"input_sha256_{key}"] = qio.sha256(params[key])
    items.update({f"output_{k}": v for k, v in enumerate(_OUTPUTS)})
    items.update({f"result_{k}": v for k, v in summary.items()})
    path = Path(outdir) / f"{params.get('out') or command}_manifest.txt"
    qio.write_kv(path, items)
    return str(path)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    options = COMMANDS[args.command]
    _OUTPUTS.clear()
    try:
        config_path = args.config
        if config_path and not os.path.exists(config_path):
            config_path = preset_path(config_path)
        file_values = load_file(config_path) if config_path else {}
        flags = {o.name: getattr(args, o.name) for o in options}
        params = resolve(options, file_values, flags)
    except ConfigError as exc:
        parser.exit(2, f"quphot {args.command}: error: {exc}\n")
    outdir = args.out_dir or default_outdir()
    try:
        summary = HANDLERS[args.command](params, outdir)
        if args.command == "pipeline":
            summary["manifest"] = _manifest(args.command, params, summary, config_path, outdir)
    except ConfigError as exc:
        parser.exit(2, f"quphot {args.command}: error: {exc}\n")
    except (ValueError, FitError, MemoryError, OSError, KeyError) as exc:
        print(f"quphot {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for key, value in summary.items():
        print(f"{key}={qio.format_value(value)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
