"""Command-line driver.

Subcommands wire the library modules into file-based pipelines:

    photonstats simulate  config.txt out.ptag
    photonstats g2        in.ptag --mode cw --bin-ns 0.5 --window-us 12 --fit
    photonstats lifetime  in.ptag --irf-ps 40
    photonstats fitspec   spectrum.csv|spectrum.json
    photonstats saturation sweep.csv --t1-ns 2.54
    photonstats michelson --spectrum-json model.json --highpass-ev ... --shape auto

Configs are flat ``key = value`` text with units spelled in the key names
(t1_ns, psat_mw, ...); every command writes a ``<out>.manifest.json`` next
to its outputs recording the resolved inputs, so reruns are reproducible.
Exit codes: 2 config error, 3 I/O error, 4 too few coincidences.
"""

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__, core
from .correlate import (
    TooFewCoincidencesError,
    blinking_exclusion,
    correlate,
    fit_g2,
    g2_zero_cw,
    lifetime_histogram,
    fit_lifetime,
    normalize_cw,
    normalize_pulsed,
    rebinned_cw_curve,
    save_histogram_csv,
)
from .fitting import FitProblem, lm_minimize
from .interferometry import extract_visibility, fit_envelope, interferogram_from_spectrum
from .presets import default_energy_grid
from .simulate import (
    CW,
    PULSED,
    DetectorModel,
    EmitterParams,
    PulseTrain,
    SimConfig,
    cw_pump_rate,
    pulse_excitation_prob,
    simulate_stream,
)
from .tags import PtagFormatError, read_ptag, write_ptag


class ConfigError(ValueError):
    """Bad or missing configuration values; maps to exit code 2."""


def _json_dump(payload, path):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _write_manifest(out_base, command, settings, inputs, outputs, started):
    manifest = {
        "command": command,
        "config": settings,
        "inputs": sorted(inputs),
        "outputs": sorted(outputs),
        "tool_version": __version__,
        "wall_time_s": round(time.monotonic() - started, 6),
    }
    _json_dump(manifest, f"{out_base}.manifest.json")


def parse_config(path):
    """Read flat ``key = value`` config text (hash comments allowed)."""
    settings = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, value = (part.strip() for part in line.split("=", 1))
                if not key:
                    raise ConfigError(f"{path}:{lineno}: empty key")
                settings[key.lower()] = value
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return settings


def _get(settings, key, cast=float, default=None, required=False):
    if key not in settings:
        if required:
            raise ConfigError(f"missing config key {key!r}")
        return default
    try:
        if cast is bool:
            return settings[key].lower() in ("1", "true", "yes", "on")
        return cast(settings[key])
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def build_run(settings):
    """Emitter, detector and run config from a parsed config dict."""
    mode = _get(settings, "mode", str, CW).lower()
    if mode not in (CW, PULSED):
        raise ConfigError(f"mode must be 'cw' or 'pulsed', got {mode!r}")
    t1_s = _get(settings, "t1_ns", required=True) * 1e-9
    t2_star_fs = _get(settings, "t2star_fs")
    power_mw = _get(settings, "power_mw")
    pulses = None
    pump = 0.0
    if mode == CW:
        pump = _get(settings, "pump_rate_hz")
        if pump is None:
            psat = _get(settings, "psat_mw")
            if power_mw is None or psat is None:
                raise ConfigError("cw drive needs pump_rate_hz or power_mw + psat_mw")
            pump = cw_pump_rate(power_mw * 1e-3, psat * 1e-3, t1_s)
    else:
        rep = _get(settings, "rep_rate_mhz", required=True) * 1e6
        prob = _get(settings, "excitation_prob")
        if prob is None:
            pref = _get(settings, "pref_mw")
            if power_mw is None or pref is None:
                raise ConfigError(
                    "pulsed drive needs excitation_prob or power_mw + pref_mw"
                )
            prob = pulse_excitation_prob(power_mw * 1e-3, pref * 1e-3)
        pulses = PulseTrain(
            rep_rate_hz=rep,
            excitation_prob=prob,
            width_s=_get(settings, "pulse_width_ps", default=0.0) * 1e-12,
        )
    try:
        emitter = EmitterParams(
            t1_s=t1_s,
            pump_rate_hz=pump,
            pulses=pulses,
            shelve_rate_hz=_get(settings, "shelve_rate_hz", default=0.0),
            deshelve_rate_hz=_get(settings, "deshelve_rate_hz", default=0.0),
            t2_star_s=None if t2_star_fs is None else t2_star_fs * 1e-15,
        )
        detector = DetectorModel(
            efficiency=_get(settings, "det_efficiency", default=1.0),
            jitter_fwhm_s=_get(settings, "det_jitter_ps", default=0.0) * 1e-12,
            dead_time_s=_get(settings, "det_dead_time_ns", default=0.0) * 1e-9,
            dark_rate_hz=_get(settings, "det_dark_hz", default=0.0),
        )
        config = SimConfig(
            duration_s=_get(settings, "duration_s", required=True),
            seed=_get(settings, "seed", int, required=True),
            mode=mode,
            power_w=None if power_mw is None else power_mw * 1e-3,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    extras = {
        "channels": _get(settings, "channels", int, 2),
        "resolution_s": _get(settings, "resolution_ps", default=1.0) * 1e-12,
        "sync": _get(settings, "sync", bool, mode == PULSED),
    }
    return emitter, detector, config, extras


def cmd_simulate(args):
    started = time.monotonic()
    settings = parse_config(args.config)
    emitter, detector, config, extras = build_run(settings)
    stream = simulate_stream(
        emitter,
        config,
        detector,
        n_channels=extras["channels"],
        resolution_s=extras["resolution_s"],
        include_sync=extras["sync"] and config.mode == PULSED,
    )
    write_ptag(stream, args.out)
    out_base, _ = os.path.splitext(args.out)
    summary = {
        "n_tags": len(stream),
        "duration_s": config.duration_s,
        "mode": config.mode,
        "mean_rate_hz": {
            str(ch): stream.rate_hz(ch, config.duration_s)
            for ch in range(stream.n_channels)
        },
        "seed": config.seed,
        "output": args.out,
    }
    _write_manifest(out_base, "simulate", settings, [args.config], [args.out], started)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_g2(args):
    started = time.monotonic()
    stream = read_ptag(args.input)
    if stream.n_channels < 2:
        raise ConfigError("g2 needs a stream with at least two channels")
    bin_s = args.bin_ns * 1e-9
    window_s = args.window_us * 1e-6
    hist = correlate(stream, args.ch_a, args.ch_b, bin_s, window_s)
    if int(hist.counts.sum()) < 100:
        raise TooFewCoincidencesError(
            f"only {int(hist.counts.sum())} coincidences in the window"
        )
    out_base = args.out or os.path.splitext(args.input)[0]
    outputs = [f"{out_base}.hist.csv"]
    save_histogram_csv(hist, outputs[0])
    duration = args.duration_s or stream.span_s()
    report = {"mode": args.mode, "bin_s": hist.bin_width_s, "window_s": window_s}
    if args.mode == "cw":
        rates = (
            stream.rate_hz(args.ch_a, duration),
            stream.rate_hz(args.ch_b, duration),
        )
        curve = normalize_cw(hist, rates, duration)
        path = f"{out_base}.g2.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("tau_s,g2\n")
            for tau, val in zip(curve.lag_s, curve.value):
                fh.write(f"{tau!r},{val!r}\n")
        outputs.append(path)
        report["g2_0"] = g2_zero_cw(hist, rates, duration)
        if args.fit:
            fit = fit_g2(rebinned_cw_curve(hist, rates, duration))
            report["fit"] = fit.to_dict()
    else:
        if not args.rep_period_ns:
            raise ConfigError("pulsed mode needs --rep-period-ns")
        rep_period = args.rep_period_ns * 1e-9
        exclude = args.exclude
        if exclude is None and args.tau2_us:
            exclude = blinking_exclusion(rep_period, args.tau2_us * 1e-6)
        g2_0, (ks, areas) = normalize_pulsed(hist, rep_period, exclude or 0)
        report["g2_0"] = g2_0
        report["excluded_peaks"] = exclude or 0
        report["peak_areas"] = {str(int(k)): int(a) for k, a in zip(ks, areas)}
    path = f"{out_base}.g2.json"
    _json_dump(report, path)
    outputs.append(path)
    _write_manifest(out_base, "g2", vars(args), [args.input], outputs, started)
    print(json.dumps({"g2_0": report.get("g2_0"), "outputs": outputs}, indent=2, sort_keys=True))
    return 0


def cmd_lifetime(args):
    started = time.monotonic()
    stream = read_ptag(args.input)
    hist = lifetime_histogram(
        stream,
        sync_ch=args.sync_ch,
        det_ch=args.det_ch,
        bin_width_s=args.bin_ps * 1e-12,
        offset_s=args.offset_ns * 1e-9,
    )
    out_base = args.out or os.path.splitext(args.input)[0]
    csv_path = f"{out_base}.decay.csv"
    save_histogram_csv(hist, csv_path)
    fit = fit_lifetime(hist, args.irf_ps * 1e-12)
    json_path = f"{out_base}.lifetime.json"
    _json_dump(fit.to_dict(), json_path)
    _write_manifest(
        out_base, "lifetime", vars(args), [args.input], [csv_path, json_path], started
    )
    print(
        json.dumps(
            {
                "t1_ns": fit.params["t1_s"] * 1e9,
                "stderr_ns": fit.stderr["t1_s"] * 1e9,
                "converged": fit.converged,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def _classify_components(params, zpl_hint_ev):
    """Tag fitted Lorentzians: nearest-to-hint (or tallest) is the ZPL,
    anything further than 0.1 eV is LO, the rest LE."""
    comps = np.asarray(params, dtype=float).reshape(-1, 3)
    heights = comps[:, 2] * 2.0 / (math.pi * comps[:, 1])
    if zpl_hint_ev is not None:
        zpl_idx = int(np.argmin(np.abs(comps[:, 0] - zpl_hint_ev)))
    else:
        zpl_idx = int(np.argmax(heights))
    kinds = []
    for i, (center, _, _) in enumerate(comps):
        if i == zpl_idx:
            kinds.append(core.ZPL)
        elif abs(center - comps[zpl_idx, 0]) > 0.1:
            kinds.append(core.LO_PHONON)
        else:
            kinds.append(core.LE_PHONON)
    return [
        core.LorentzianComponent(c, f, max(a, 0.0), k)
        for (c, f, a), k in zip(comps, kinds)
    ]


def cmd_fitspec(args):
    started = time.monotonic()
    out_base = args.out or os.path.splitext(args.input)[0]
    report = {}
    if args.input.endswith(".json"):
        spectrum = core.load_spectrum_json(args.input)
        report["source"] = "parametric"
    else:
        sampled = core.load_spectrum_csv(args.input)
        n = args.components
        from .models import _lorentz_init

        p0 = _lorentz_init(sampled.energy_ev, sampled.counts, n_components=n)
        npar = p0.size
        lo = np.tile([sampled.energy_ev[0], 1e-6, 0.0], npar // 3)
        hi = np.tile(
            [sampled.energy_ev[-1], sampled.energy_ev[-1] - sampled.energy_ev[0], np.inf],
            npar // 3,
        )
        sigma = np.maximum(np.sqrt(np.abs(sampled.counts)), 1e-3 * sampled.counts.max())
        fit = lm_minimize(
            FitProblem(
                model="lorentzian_sum",
                x=sampled.energy_ev,
                y=sampled.counts,
                sigma=sigma,
                p0=p0,
                lo=lo,
                hi=hi,
                max_iter=400,
            )
        )
        spectrum = core.ParametricSpectrum(
            tuple(_classify_components(list(fit.params.values()), args.zpl_center_ev))
        )
        report["source"] = "fit"
        report["fit"] = fit.to_dict()
    report["dw_factor"] = core.dw_factor(spectrum)
    report["components"] = [
        {
            "center_eV": c.center_ev,
            "fwhm_eV": c.fwhm_ev,
            "area": c.area,
            "kind": c.kind,
        }
        for c in spectrum.components
    ]
    path = f"{out_base}.fitspec.json"
    _json_dump(report, path)
    _write_manifest(out_base, "fitspec", vars(args), [args.input], [path], started)
    print(json.dumps({"dw_factor": report["dw_factor"]}, indent=2, sort_keys=True))
    return 0


def cmd_saturation(args):
    started = time.monotonic()
    try:
        with open(args.input, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            rows = [
                [float(v) for v in line.strip().split(",")]
                for line in fh
                if line.strip()
            ]
    except OSError:
        raise
    if [h.strip() for h in header[:2]] != ["power_mw", "intensity_hz"]:
        raise ConfigError("saturation CSV needs header 'power_mw,intensity_hz'")
    if len(rows) < 3:
        raise ConfigError("need at least three sweep points")
    data = np.asarray(rows, dtype=float)
    power_w = data[:, 0] * 1e-3
    intensity = data[:, 1]
    sigma = data[:, 2] if data.shape[1] > 2 else None
    fit = lm_minimize(
        FitProblem(
            model="saturation",
            x=power_w,
            y=intensity,
            sigma=sigma,
            lo=[0.0, 0.0],
            hi=[np.inf, np.inf],
        )
    )
    report = fit.to_dict()
    if args.t1_ns:
        report["source_to_detector_efficiency"] = core.source_to_detector_efficiency(
            fit.params["i_inf_hz"], args.t1_ns * 1e-9
        )
    out_base = args.out or os.path.splitext(args.input)[0]
    path = f"{out_base}.saturation.json"
    _json_dump(report, path)
    _write_manifest(out_base, "saturation", vars(args), [args.input], [path], started)
    print(
        json.dumps(
            {
                "i_inf_khz": fit.params["i_inf_hz"] / 1e3,
                "p_sat_mw": fit.params["p_sat_w"] * 1e3,
                "b_d": report.get("source_to_detector_efficiency"),
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def cmd_michelson(args):
    started = time.monotonic()
    if bool(args.spectrum_csv) == bool(args.spectrum_json):
        raise ConfigError("pass exactly one of --spectrum-csv / --spectrum-json")
    if args.spectrum_json:
        parametric = core.load_spectrum_json(args.spectrum_json)
        sampled = core.evaluate_spectrum(parametric, default_energy_grid(parametric))
        source = args.spectrum_json
    else:
        sampled = core.load_spectrum_csv(args.spectrum_csv)
        source = args.spectrum_csv
    filt = core.FilterSpec(
        low_edge_ev=args.highpass_ev, high_edge_ev=args.lowpass_ev
    )
    filtered = core.apply_filter(sampled, filt)
    if not np.any(filtered.counts > 0):
        raise ConfigError("filter blocks the whole spectrum")
    peak_ev = float(filtered.energy_ev[int(np.argmax(filtered.counts))])
    omega0 = 2.0 * math.pi * core.ev_to_hz(peak_ev)
    period = 2.0 * math.pi / omega0
    delays = np.arange(0.0, args.max_delay_fs * 1e-15, period / args.points_per_period)
    interferogram = interferogram_from_spectrum(filtered, args.v0, delays)
    trace = extract_visibility(interferogram, omega0)
    fit = fit_envelope(trace, shape=args.shape)
    out_base = args.out or os.path.splitext(source)[0]
    ig_path = f"{out_base}.interferogram.csv"
    with open(ig_path, "w", encoding="utf-8") as fh:
        fh.write("delay_s,n_out\n")
        for d, v in zip(interferogram.delays_s, interferogram.n_out):
            fh.write(f"{d!r},{v!r}\n")
    vis_path = f"{out_base}.visibility.csv"
    with open(vis_path, "w", encoding="utf-8") as fh:
        fh.write("delay_s,visibility\n")
        for d, v in zip(trace.delays_s, trace.visibility):
            fh.write(f"{d!r},{v!r}\n")
    fit_path = f"{out_base}.envelope.json"
    _json_dump(fit.to_dict(), fit_path)
    _write_manifest(
        out_base,
        "michelson",
        vars(args),
        [source],
        [ig_path, vis_path, fit_path],
        started,
    )
    print(
        json.dumps(
            {
                "t2_star_fs": fit.params["t2_star_s"] * 1e15,
                "v0": fit.params["v0"],
                "flags": fit.flags,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="photonstats",
        description="Single-photon emitter simulation and time-tag analysis.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a detection tag stream")
    p.add_argument("config", help="key = value run configuration")
    p.add_argument("out", help="output PTAG path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("g2", help="correlate a tag stream")
    p.add_argument("input", help="PTAG stream")
    p.add_argument("--mode", choices=("cw", "pulsed"), default="cw")
    p.add_argument("--bin-ns", type=float, default=0.5)
    p.add_argument("--window-us", type=float, default=10.0)
    p.add_argument("--rep-period-ns", type=float, default=None)
    p.add_argument("--exclude", type=int, default=None,
                   help="blinking-affected peaks to skip per side (pulsed)")
    p.add_argument("--tau2-us", type=float, default=None,
                   help="blinking timescale used to pick --exclude automatically")
    p.add_argument("--ch-a", type=int, default=0)
    p.add_argument("--ch-b", type=int, default=1)
    p.add_argument("--duration-s", type=float, default=None)
    p.add_argument("--fit", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_g2)

    p = sub.add_parser("lifetime", help="sync-referenced decay histogram and fit")
    p.add_argument("input")
    p.add_argument("--sync-ch", type=int, default=2)
    p.add_argument("--det-ch", type=int, default=0)
    p.add_argument("--bin-ps", type=float, default=10.0)
    p.add_argument("--irf-ps", type=float, default=0.0)
    p.add_argument("--offset-ns", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_lifetime)

    p = sub.add_parser("fitspec", help="Lorentzian decomposition and DW factor")
    p.add_argument("input", help="sampled CSV or parametric JSON spectrum")
    p.add_argument("--components", type=int, default=None)
    p.add_argument("--zpl-center-ev", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_fitspec)

    p = sub.add_parser("saturation", help="fit a power sweep")
    p.add_argument("input", help="CSV with header power_mw,intensity_hz[,sigma_hz]")
    p.add_argument("--t1-ns", type=float, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_saturation)

    p = sub.add_parser("michelson", help="interferogram, visibility and envelope fit")
    p.add_argument("--spectrum-csv", default=None)
    p.add_argument("--spectrum-json", default=None)
    p.add_argument("--lowpass-ev", type=float, default=None,
                   help="keep energies below this edge")
    p.add_argument("--highpass-ev", type=float, default=None,
                   help="keep energies above this edge")
    p.add_argument("--shape", choices=("exp", "gauss", "auto"), default="auto")
    p.add_argument("--v0", type=float, default=0.8)
    p.add_argument("--max-delay-fs", type=float, default=1350.0)
    p.add_argument("--points-per-period", type=int, default=16)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_michelson)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TooFewCoincidencesError as exc:
        print(f"too few coincidences: {exc}", file=sys.stderr)
        return 4
    except PtagFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
