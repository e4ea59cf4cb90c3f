"""Command-line front end.

Exit status is 0 on success, 1 on bad input and 2 when a fit fails to
converge or is unidentifiable.  Failures also write one JSON object to
stderr: ``{"error": <kind>, "message": <text>, "exit": <status>}``.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

import numpy as np

from . import io
from .analysis import extrapolate_power, propagate_delta_b, upper_limits
from .fieldfit import (
    AXES,
    AxialFitResult,
    CoilCalibration,
    currents_for_zero,
    field_magnitude,
    fit_axial,
    fit_global,
)
from .levels import F_HYPERFINE_REF, MODES, predict_peaks
from .lsq import FitError, IdentifiabilityError
from .minimize import run_minimization
from .peaks import assign_labels, detect_peaks, labeled_points
from .synth import BeamConfig, Environment, frequency_grid, simulate_scan

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _report("usage", message, EXIT_INPUT)
        raise SystemExit(EXIT_INPUT)


def _report(kind: str, message: str, status: int) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit": status}) + "\n")


def _emit(obj, out: Optional[str]) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _calibration(source: str):
    """A calibration file, or ``published`` / ``published-axial`` for the published values."""
    if source == "published":
        return CoilCalibration.published()
    if source == "published-axial":
        return AxialFitResult.published()
    return io.read_fit_result(source)


def _environment(path: Optional[str]) -> Environment:
    return Environment() if path is None else io.environment_from_config(io.read_config(path), path)


def _beam(path: Optional[str], power: Optional[float] = None, mode: Optional[str] = None) -> BeamConfig:
    beam = BeamConfig() if path is None else io.beam_from_config(io.read_config(path), path)
    if power is not None:
        beam = beam.with_power(power)
    if mode is not None:
        beam = BeamConfig(beam.power, mode, beam.lightshift_slope, beam.broadening_slope,
                          beam.base_linewidth, beam.amplitude)
    return beam


# --- subcommands -------------------------------------------------------------

def cmd_simulate(args) -> int:
    env = _environment(args.env)
    beam = _beam(args.beam, args.power, args.mode)
    grid = frequency_grid(args.center, args.halfwidth, args.step)
    counts = None if args.noiseless else args.counts
    scan = simulate_scan(env, beam, args.currents, grid, noise_seed=args.seed, counts_per_point=counts)
    io.write_scan(scan, args.out or sys.stdout)
    return EXIT_OK


def cmd_detect_peaks(args) -> int:
    stream = open(args.out, "w") if args.out else sys.stdout
    points = []
    ambiguous_any = False
    try:
        for path in args.scans:
            scan = io.read_scan(path)
            fits = detect_peaks(scan, args.min_prominence, args.max_peaks, smooth=args.smooth)
            labeled, ambiguous = assign_labels(fits, args.mode, args.missing_side)
            if ambiguous:
                ambiguous_any = True
                sys.stderr.write(json.dumps({"warning": "ambiguous_labels", "scan": path,
                                             "n_peaks": len(fits)}) + "\n")
            io.write_peaks(labeled, stream, scan.currents)
            points.extend(labeled_points(labeled, scan.currents))
    finally:
        if args.out:
            stream.close()
    if args.points_out:
        io.write_points(points, args.points_out)
    if args.strict and ambiguous_any:
        raise InputError("peak labels were ambiguous for at least one scan")
    return EXIT_OK


def cmd_fit_field(args) -> int:
    points = io.read_points(args.points)
    init = None if args.init is None else _calibration(args.init)
    cal = fit_global(points, init=init)
    _emit(io.calibration_to_dict(cal), args.out)
    return EXIT_OK


def cmd_fit_axial(args) -> int:
    points = io.read_points(args.points)
    result = fit_axial(points, axis=args.axis)
    _emit(io.axial_to_dict(result), args.out)
    return EXIT_OK


def cmd_minimize(args) -> int:
    env = _environment(args.env)
    beam = _beam(args.beam)
    cfg = io.minimize_from_config(io.read_config(args.config), args.config) if args.config else None
    trace = run_minimization(env, cfg, seed=args.seed, beam=beam) if cfg else run_minimization(
        env, seed=args.seed, beam=beam)
    out = trace.to_dict()
    out = {"final_currents_a": out.pop("final_currents"), "final_field_g": out.pop("final_field"),
           "final_field_sigma_g": out.pop("final_field_sigma"), "true_field_g": out.pop("true_field"),
           "round_estimates_g": out.pop("round_estimates"), "steps": out.pop("steps")}
    _emit(out, args.out)
    return EXIT_OK


def cmd_power_extrapolate(args) -> int:
    ext = extrapolate_power(io.read_power_series(args.series))
    _emit({
        "f_intercept_mhz": ext.f_intercept, "f_intercept_sigma_mhz": ext.f_intercept_sigma,
        "shift_slope_mhz_per_uw": ext.shift_slope, "shift_slope_sigma_mhz_per_uw": ext.shift_slope_sigma,
        "width_intercept_khz": ext.width_intercept, "width_intercept_sigma_khz": ext.width_intercept_sigma,
        "width_slope_khz_per_uw": ext.width_slope, "width_slope_sigma_khz_per_uw": ext.width_slope_sigma,
    }, args.out)
    return EXIT_OK


def cmd_propagate(args) -> int:
    cal = _calibration(args.calibration)
    zero, zero_sigma = currents_for_zero(cal)
    _emit({
        "delta_b_g": propagate_delta_b(cal),
        "zero_currents_a": [None if np.isnan(v) else float(v) for v in zero],
        "zero_currents_sigma_a": [None if np.isnan(v) else float(v) for v in zero_sigma],
    }, args.out)
    return EXIT_OK


def cmd_limits(args) -> int:
    f_int, f_sig, min_fwhm = args.f_intercept, args.f_sigma, args.min_fwhm
    if args.series:
        series = io.read_power_series(args.series)
        ext = extrapolate_power(series)
        f_int = ext.f_intercept if f_int is None else f_int
        f_sig = ext.f_intercept_sigma if f_sig is None else f_sig
        min_fwhm = float(np.min(series.fwhm)) if min_fwhm is None else min_fwhm
    missing = [n for n, v in (("--f-intercept", f_int), ("--f-sigma", f_sig), ("--min-fwhm", min_fwhm))
               if v is None]
    if missing:
        raise InputError(f"missing {', '.join(missing)} (or give --series)")
    lim = upper_limits(f_int, f_sig, min_fwhm, args.ensemble_length, args.f_reference)
    _emit({
        "field_limit_g": lim.field_limit, "gradient_limit_g": lim.gradient_limit,
        "gradient_limit_g_per_mm": lim.gradient_per_mm, "discrepancy_mhz": lim.discrepancy,
        "discrepancy_sigma_mhz": lim.discrepancy_sigma, "min_fwhm_khz": lim.min_fwhm,
        "ensemble_length_mm": lim.ensemble_length,
    }, args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    cal = _calibration(args.calibration)
    if not isinstance(cal, CoilCalibration):
        raise InputError("predict needs a three-axis calibration")
    b = cal.field(args.currents)
    mag, mag_sigma = field_magnitude(cal, args.currents)
    f_offset = cal.f_offset if args.f_offset is None else args.f_offset
    peaks = predict_peaks(b, f_offset, args.mode)
    _emit({
        "currents_a": list(args.currents),
        "b_x_g": b.x, "b_y_g": b.y, "b_z_g": b.z,
        "b_magnitude_g": mag, "b_magnitude_sigma_g": mag_sigma,
        "f_offset_mhz": f_offset,
        "peaks": [{"label": p.label, "eta": float(p.eta), "f_mhz": p.frequency} for p in peaks],
    }, args.out)
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bezeeman", description="Zeeman-resolved Raman spectra of trapped ions.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    s = sub.add_parser("simulate", help="write a synthetic scan CSV")
    s.add_argument("--env", help="environment config (key = value)")
    s.add_argument("--beam", help="beam config (key = value)")
    s.add_argument("--currents", type=float, nargs=3, required=True, metavar=("IX_A", "IY_A", "IZ_A"))
    s.add_argument("--power", type=float, help="override beam power (uW)")
    s.add_argument("--mode", choices=MODES, help="override polarization mode")
    s.add_argument("--center", type=float, default=1250.0, help="grid centre (MHz)")
    s.add_argument("--halfwidth", type=float, default=10.0, help="grid half width (MHz)")
    s.add_argument("--step", type=float, default=0.06, help="grid step (MHz)")
    s.add_argument("--counts", type=float, default=2000.0, help="mean background counts per gate")
    s.add_argument("--noiseless", action="store_true")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("detect-peaks", help="fit and label peaks (JSON lines)")
    s.add_argument("scans", nargs="+")
    s.add_argument("--mode", choices=MODES, default="all")
    s.add_argument("--missing-side", choices=("L", "H"))
    s.add_argument("--min-prominence", type=float, default=0.1)
    s.add_argument("--max-peaks", type=int, default=7)
    s.add_argument("--smooth", type=int, default=0)
    s.add_argument("--points-out", help="labelled points CSV for fit-field")
    s.add_argument("--strict", action="store_true", help="exit 1 if any scan is ambiguous")
    s.add_argument("--out")
    s.set_defaults(func=cmd_detect_peaks)

    s = sub.add_parser("fit-field", help="global three-coil fit (calibration JSON)")
    s.add_argument("points")
    s.add_argument("--init", help="starting calibration file or 'published'")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_field)

    s = sub.add_parser("fit-axial", help="single-coil fit with transverse field")
    s.add_argument("points")
    s.add_argument("--axis", choices=AXES, default="z")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fit_axial)

    s = sub.add_parser("minimize", help="closed-loop field nulling (trace JSON)")
    s.add_argument("--env", required=True)
    s.add_argument("--beam")
    s.add_argument("--config", help="minimize config (key = value)")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_minimize)

    s = sub.add_parser("power-extrapolate", help="zero-power intercepts of shift and width")
    s.add_argument("series")
    s.add_argument("--out")
    s.set_defaults(func=cmd_power_extrapolate)

    s = sub.add_parser("propagate", help="field uncertainty at the zero-crossing currents")
    s.add_argument("calibration", help="calibration/axial file, 'published' or 'published-axial'")
    s.add_argument("--out")
    s.set_defaults(func=cmd_propagate)

    s = sub.add_parser("limits", help="upper limits on residual field and gradient")
    s.add_argument("--f-intercept", type=float, help="zero-power centre (MHz)")
    s.add_argument("--f-sigma", type=float, help="1-sigma of the intercept (MHz)")
    s.add_argument("--min-fwhm", type=float, help="narrowest FWHM (kHz)")
    s.add_argument("--series", help="power series CSV to derive the above")
    s.add_argument("--ensemble-length", type=float, default=2.0, help="mm")
    s.add_argument("--f-reference", type=float, default=F_HYPERFINE_REF, help="MHz")
    s.add_argument("--out")
    s.set_defaults(func=cmd_limits)

    s = sub.add_parser("predict", help="field vector and peak table at given currents")
    s.add_argument("--calibration", default="published", help="calibration file or 'published'")
    s.add_argument("--currents", type=float, nargs=3, required=True, metavar=("IX_A", "IY_A", "IZ_A"))
    s.add_argument("--f-offset", type=float, help="MHz; defaults to the calibration's")
    s.add_argument("--mode", choices=MODES, default="all")
    s.add_argument("--out")
    s.set_defaults(func=cmd_predict)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        _report("usage", "no subcommand given", EXIT_INPUT)
        return EXIT_INPUT
    try:
        return args.func(args)
    except IdentifiabilityError as exc:
        _report("unidentifiable", f"{exc} ({', '.join(exc.unidentifiable)})", EXIT_NUMERIC)
        return EXIT_NUMERIC
    except FitError as exc:
        _report("numerical", str(exc), EXIT_NUMERIC)
        return EXIT_NUMERIC
    except io.FormatError as exc:
        _report("format", str(exc), EXIT_INPUT)
        return EXIT_INPUT
    except (InputError, ValueError, OSError, KeyError) as exc:
        _report("input", str(exc), EXIT_INPUT)
        return EXIT_INPUT


if __name__ == "__main__":
    raise SystemExit(main())
