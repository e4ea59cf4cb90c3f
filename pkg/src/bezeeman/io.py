"""File formats: scan CSV, calibration JSON, peak JSON lines, labelled
points and power series CSV, and flat ``key = value`` config files."""
from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path
from typing import Iterable, Optional, TextIO

import numpy as np

from .analysis import PowerSeries
from .fieldfit import AXES, AxialFitResult, CoilCalibration, LabeledPoint
from .levels import FieldVector
from .minimize import MinimizeConfig
from .peaks import PeakFit
from .synth import BeamConfig, Environment, Scan, inconsistent_rows

SCAN_HEADER = ["f_mod_mhz", "signal", "n_f", "n_b"]
SCAN_REQUIRED = ("ix_a", "iy_a", "iz_a", "power_uw")
POINTS_HEADER = ["ix_a", "iy_a", "iz_a", "eta", "f_mhz", "sigma_mhz"]
SERIES_HEADER = ["power_uw", "center_mhz", "center_sigma_mhz", "fwhm_khz", "fwhm_sigma_khz"]
CALIBRATION_SCHEMA = "calibration/v1"
AXIAL_SCHEMA = "axial/v1"


class FormatError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message: str, path=None, line: Optional[int] = None):
        where = f"{path}:{line}: " if line is not None else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.path = path
        self.line = line


def _num(x: float) -> str:
    return repr(float(x))


def _json_float(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else float(x)


# --- scans -----------------------------------------------------------------

def write_scan(scan: Scan, path) -> None:
    """Write ``scan`` to a path or an open text stream."""
    if hasattr(path, "write"):
        _write_scan(scan, path)
    else:
        with open(path, "w", newline="") as fh:
            _write_scan(scan, fh)


def _write_scan(scan: Scan, fh: TextIO) -> None:
    meta = {"ix_a": scan.currents[0], "iy_a": scan.currents[1], "iz_a": scan.currents[2], "power_uw": scan.power}
    for key, value in meta.items():
        fh.write(f"# {key}={_num(value)}\n")
    for key, value in scan.metadata.items():
        fh.write(f"# {key}={value}\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SCAN_HEADER)
    for i in range(scan.f_mod.size):
        counts = [_num(scan.n_f[i]), _num(scan.n_b[i])] if scan.has_counts else ["", ""]
        writer.writerow([_num(scan.f_mod[i]), _num(scan.signal[i]), *counts])


def read_scan(path) -> Scan:
    meta: dict[str, str] = {}
    rows: list[tuple[int, list[str]]] = []
    header_line = None
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if header_line is not None:
                    raise FormatError("comment after the header row", path, lineno)
                key, sep, value = line[1:].strip().partition("=")
                if not sep:
                    raise FormatError(f"metadata line is not key=value: {line!r}", path, lineno)
                meta[key.strip()] = value.strip()
                continue
            if header_line is None:
                if [c.strip() for c in line.split(",")] != SCAN_HEADER:
                    raise FormatError(f"expected header {','.join(SCAN_HEADER)!r}, got {line!r}", path, lineno)
                header_line = lineno
                continue
            rows.append((lineno, next(csv.reader([line]))))
    if header_line is None:
        raise FormatError("missing header row", path)
    missing = [k for k in SCAN_REQUIRED if k not in meta]
    if missing:
        raise FormatError(f"missing required metadata: {', '.join(missing)}", path, 1)
    if not rows:
        raise FormatError("no data rows", path, header_line)
    f, sig, nf, nb, linenos = [], [], [], [], []
    with_counts = None
    for lineno, cols in rows:
        if len(cols) not in (2, 4):
            raise FormatError(f"expected 2 or 4 columns, got {len(cols)}", path, lineno)
        cols = cols + [""] * (4 - len(cols))
        filled = (cols[2].strip() != "", cols[3].strip() != "")
        if filled[0] != filled[1]:
            raise FormatError("n_f and n_b must be given together", path, lineno)
        has = filled[0]
        try:
            f.append(float(cols[0]))
            sig.append(float(cols[1]))
            if has:
                nf.append(float(cols[2]))
                nb.append(float(cols[3]))
        except ValueError as exc:
            raise FormatError(f"non-numeric field: {exc}", path, lineno) from None
        if with_counts is None:
            with_counts = has
        elif with_counts != has:
            raise FormatError("n_f/n_b present on some rows only", path, lineno)
        linenos.append(lineno)
    f_arr = np.array(f)
    bad = np.flatnonzero(np.diff(f_arr) <= 0)
    if bad.size:
        raise FormatError("f_mod_mhz is not strictly increasing", path, linenos[bad[0] + 1])
    if with_counts:
        bad = inconsistent_rows(np.array(sig), np.array(nf), np.array(nb))
        if bad.size:
            raise FormatError("signal is inconsistent with (n_f - n_b)/n_b", path, linenos[bad[0]])
    try:
        currents = tuple(float(meta[k]) for k in ("ix_a", "iy_a", "iz_a"))
        power = float(meta["power_uw"])
    except ValueError as exc:
        raise FormatError(f"non-numeric metadata: {exc}", path, 1) from None
    extra = {k: v for k, v in meta.items() if k not in SCAN_REQUIRED}
    return Scan(f_arr, np.array(sig), currents, power,
                np.array(nf) if with_counts else None, np.array(nb) if with_counts else None, extra)


# --- calibration -------------------------------------------------------------

def calibration_to_dict(cal: CoilCalibration) -> dict:
    out = {"schema": CALIBRATION_SCHEMA}
    for j, axis in enumerate(AXES):
        out[axis] = {"k_g_per_a": cal.k[j], "k_sigma": cal.k_sigma[j], "i0_a": cal.i0[j], "i0_sigma": cal.i0_sigma[j]}
    out["f_offset_mhz"] = cal.f_offset
    out["f_offset_sigma"] = cal.f_offset_sigma
    out["covariance"] = [float(v) for v in np.asarray(cal.covariance).ravel()]
    out["fit_stats"] = {"chi2_reduced": _json_float(cal.chi2_reduced), "n_points": int(cal.n_points),
                        "converged": bool(cal.converged)}
    return out


def calibration_from_dict(data: dict, path=None) -> CoilCalibration:
    if data.get("schema") != CALIBRATION_SCHEMA:
        raise FormatError(f"schema must be {CALIBRATION_SCHEMA!r}, got {data.get('schema')!r}", path)
    try:
        cov = data.get("covariance")
        if cov is not None and len(cov) != 49:
            raise FormatError(f"covariance must have 49 entries, got {len(cov)}", path)
        stats = data.get("fit_stats", {})
        chi2 = stats.get("chi2_reduced")
        return CoilCalibration(
            k=tuple(data[a]["k_g_per_a"] for a in AXES),
            i0=tuple(data[a]["i0_a"] for a in AXES),
            f_offset=data["f_offset_mhz"],
            k_sigma=tuple(data[a]["k_sigma"] for a in AXES),
            i0_sigma=tuple(data[a]["i0_sigma"] for a in AXES),
            f_offset_sigma=data["f_offset_sigma"],
            covariance=None if cov is None else np.array(cov, dtype=float).reshape(7, 7),
            chi2_reduced=float("nan") if chi2 is None else chi2,
            n_points=stats.get("n_points", 0),
            converged=stats.get("converged", True),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"missing or malformed calibration field: {exc}", path) from None


def axial_to_dict(ax: AxialFitResult) -> dict:
    return {
        "schema": AXIAL_SCHEMA,
        "axis": ax.axis,
        "k_g_per_a": ax.k, "k_sigma": ax.k_sigma,
        "i0_a": ax.i0, "i0_sigma": ax.i0_sigma,
        "b_perp_g": ax.b_perp, "b_perp_sigma": ax.b_perp_sigma,
        "b_perp_sq_g2": _json_float(ax.b_perp_sq), "b_perp_sq_sigma": _json_float(ax.b_perp_sq_sigma),
        "f_offset_mhz": ax.f_offset, "f_offset_sigma": ax.f_offset_sigma,
        "fixed_currents_a": list(ax.fixed_currents),
        "covariance": None if ax.covariance is None else [float(v) for v in np.asarray(ax.covariance).ravel()],
        "fit_stats": {"chi2_reduced": _json_float(ax.chi2_reduced), "n_points": ax.n_points},
    }


def axial_from_dict(data: dict, path=None) -> AxialFitResult:
    if data.get("schema") != AXIAL_SCHEMA:
        raise FormatError(f"schema must be {AXIAL_SCHEMA!r}", path)
    try:
        cov = data.get("covariance")
        nan = float("nan")
        return AxialFitResult(
            axis=data["axis"], k=data["k_g_per_a"], k_sigma=data["k_sigma"], i0=data["i0_a"],
            i0_sigma=data["i0_sigma"], b_perp=data["b_perp_g"], b_perp_sigma=data["b_perp_sigma"],
            f_offset=data.get("f_offset_mhz", 0.0), f_offset_sigma=data.get("f_offset_sigma", 0.0),
            b_perp_sq=nan if data.get("b_perp_sq_g2") is None else data["b_perp_sq_g2"],
            b_perp_sq_sigma=nan if data.get("b_perp_sq_sigma") is None else data["b_perp_sq_sigma"],
            covariance=None if cov is None else np.array(cov, dtype=float).reshape(4, 4),
            fixed_currents=tuple(data.get("fixed_currents_a", (0.0, 0.0))),
            chi2_reduced=nan if data.get("fit_stats", {}).get("chi2_reduced") is None
            else data["fit_stats"]["chi2_reduced"],
            n_points=data.get("fit_stats", {}).get("n_points", 0),
        )
    except (KeyError, TypeError) as exc:
        raise FormatError(f"missing or malformed axial field: {exc}", path) from None


def write_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None


def write_calibration(cal: CoilCalibration, path) -> None:
    write_json(calibration_to_dict(cal), path)


def read_calibration(path) -> CoilCalibration:
    return calibration_from_dict(read_json(path), path)


def read_fit_result(path):
    """Either a calibration or an axial result, dispatched on ``schema``."""
    data = read_json(path)
    if data.get("schema") == AXIAL_SCHEMA:
        return axial_from_dict(data, path)
    return calibration_from_dict(data, path)


# --- peaks and labelled points --------------------------------------------------

def peak_to_dict(p: PeakFit, currents=None) -> dict:
    out = {
        "center_mhz": p.center, "center_sigma_mhz": p.center_sigma,
        "fwhm_khz": p.fwhm, "fwhm_sigma_khz": p.fwhm_sigma,
        "amplitude": p.amplitude, "amplitude_sigma": p.amplitude_sigma,
        "chi2_reduced": _json_float(p.goodness), "label": p.label, "eta": p.eta,
    }
    if currents is not None:
        out["currents_a"] = [float(c) for c in currents]
    return out


def peak_from_dict(d: dict) -> PeakFit:
    nan = float("nan")
    return PeakFit(center=d["center_mhz"], center_sigma=d["center_sigma_mhz"], fwhm=d["fwhm_khz"],
                   fwhm_sigma=d["fwhm_sigma_khz"], amplitude=d["amplitude"], amplitude_sigma=d["amplitude_sigma"],
                   goodness=nan if d.get("chi2_reduced") is None else d["chi2_reduced"], label=d.get("label"))


def write_peaks(fits: Iterable[PeakFit], stream: TextIO, currents=None) -> None:
    for p in fits:
        stream.write(json.dumps(peak_to_dict(p, currents)) + "\n")


def read_peaks(path) -> list[PeakFit]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    out.append(peak_from_dict(json.loads(line)))
                except (json.JSONDecodeError, KeyError) as exc:
                    raise FormatError(f"bad peak record: {exc}", path, lineno) from None
    return out


def write_points(points: Iterable[LabeledPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(POINTS_HEADER)
        for p in points:
            writer.writerow([*map(_num, p.currents), _num(p.eta), _num(p.frequency),
                             "" if p.sigma is None else _num(p.sigma)])


def _read_table(path, header):
    with open(path, newline="") as fh:
        lines = [(n, ln) for n, ln in enumerate(fh, start=1) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise FormatError("empty file", path)
    lineno, first = lines[0]
    got = [c.strip() for c in first.strip().split(",")]
    if got != header:
        raise FormatError(f"expected header {','.join(header)!r}, got {first.strip()!r}", path, lineno)
    for lineno, line in lines[1:]:
        cols = next(csv.reader([line.strip()]))
        if len(cols) != len(header):
            raise FormatError(f"expected {len(header)} columns, got {len(cols)}", path, lineno)
        yield lineno, cols


def read_points(path) -> list[LabeledPoint]:
    points = []
    for lineno, cols in _read_table(path, POINTS_HEADER):
        try:
            sigma = float(cols[5]) if cols[5].strip() else None
            points.append(LabeledPoint((float(cols[0]), float(cols[1]), float(cols[2])), float(cols[3]),
                                       float(cols[4]), sigma))
        except ValueError as exc:
            raise FormatError(str(exc), path, lineno) from None
    return points


def write_power_series(series: PowerSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SERIES_HEADER)
        for i in range(series.power.size):
            cs = "" if series.center_sigma is None else _num(series.center_sigma[i])
            ws = "" if series.fwhm_sigma is None else _num(series.fwhm_sigma[i])
            writer.writerow([_num(series.power[i]), _num(series.center[i]), cs, _num(series.fwhm[i]), ws])


def read_power_series(path) -> PowerSeries:
    cols = {h: [] for h in SERIES_HEADER}
    for lineno, row in _read_table(path, SERIES_HEADER):
        try:
            for h, v in zip(SERIES_HEADER, row):
                cols[h].append(float(v) if v.strip() else None)
        except ValueError as exc:
            raise FormatError(str(exc), path, lineno) from None

    def optional(name):
        values = cols[name]
        if all(v is None for v in values):
            return None
        if any(v is None for v in values):
            raise FormatError(f"column {name} is only partly filled", path)
        return np.array(values)

    try:
        return PowerSeries(np.array(cols["power_uw"]), np.array(cols["center_mhz"]), np.array(cols["fwhm_khz"]),
                           optional("center_sigma_mhz"), optional("fwhm_sigma_khz"))
    except ValueError as exc:
        raise FormatError(str(exc), path) from None


# --- key = value configs -------------------------------------------------------

def read_config(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(f"expected key = value, got {line!r}", path, lineno)
            out[key.strip()] = value.strip()
    return out


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


ENV_KEYS = {
    "ambient_x_g": 0.0, "ambient_y_g": 0.0, "ambient_z_g": 0.0,
    "k_x_g_per_a": 0.362, "k_y_g_per_a": 0.434, "k_z_g_per_a": 3.586,
    "i0_x_a": 0.985, "i0_y_a": 1.681, "i0_z_a": -0.145,
    "gradient_g_per_mm": 0.0, "ensemble_length_mm": 2.0, "f_hyperfine_mhz": None,
}
BEAM_KEYS = {
    "power_uw": 70.0, "polarization_mode": "all", "lightshift_slope_mhz_per_uw": 0.002,
    "broadening_slope_khz_per_uw": 3.0, "base_linewidth_khz": 30.0, "amplitude": 0.3,
}


def _check_keys(cfg: dict, allowed, path, kind):
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise FormatError(f"unknown {kind} key(s): {', '.join(unknown)}", path)


def environment_from_config(cfg: dict, path=None) -> Environment:
    _check_keys(cfg, ENV_KEYS, path, "environment")
    try:
        v = {k: float(cfg[k]) if k in cfg else d for k, d in ENV_KEYS.items()}
        truth = CoilCalibration(k=(v["k_x_g_per_a"], v["k_y_g_per_a"], v["k_z_g_per_a"]),
                                i0=(v["i0_x_a"], v["i0_y_a"], v["i0_z_a"]))
        kw = {} if v["f_hyperfine_mhz"] is None else {"f_hyperfine": v["f_hyperfine_mhz"]}
        return Environment(FieldVector(v["ambient_x_g"], v["ambient_y_g"], v["ambient_z_g"]), truth,
                           v["gradient_g_per_mm"], v["ensemble_length_mm"], **kw)
    except ValueError as exc:
        raise FormatError(str(exc), path) from None


def beam_from_config(cfg: dict, path=None) -> BeamConfig:
    _check_keys(cfg, BEAM_KEYS, path, "beam")
    try:
        get = lambda k: cfg.get(k, BEAM_KEYS[k])  # noqa: E731
        return BeamConfig(float(get("power_uw")), str(get("polarization_mode")),
                          float(get("lightshift_slope_mhz_per_uw")), float(get("broadening_slope_khz_per_uw")),
                          float(get("base_linewidth_khz")), float(get("amplitude")))
    except ValueError as exc:
        raise FormatError(str(exc), path) from None


MINIMIZE_KEYS = {
    "axis_order": lambda s: tuple(a.strip() for a in s.split(",")),
    "sweep_points": int,
    "sweep_span_a": _floats,
    "rounds": int,
    "power_schedule_uw": _floats,
    "splitting_metric": str,
    "start_currents_a": _floats,
    "scan_center_mhz": float,
    "scan_halfwidth_mhz": _floats,
    "points_per_fwhm": float,
    "counts_per_point": float,
    "min_prominence": float,
    "smooth": int,
}
_MINIMIZE_FIELDS = {
    "sweep_span_a": "sweep_span", "power_schedule_uw": "power_schedule", "start_currents_a": "start_currents",
    "scan_center_mhz": "scan_center", "scan_halfwidth_mhz": "scan_halfwidth",
}


def minimize_from_config(cfg: dict, path=None) -> MinimizeConfig:
    _check_keys(cfg, MINIMIZE_KEYS, path, "minimize")
    try:
        kw = {_MINIMIZE_FIELDS.get(k, k): MINIMIZE_KEYS[k](v) for k, v in cfg.items()}
        return MinimizeConfig(**kw)
    except (ValueError, TypeError) as exc:
        raise FormatError(str(exc), path) from None


def dumps_config(values: dict) -> str:
    buf = _io.StringIO()
    for k, v in values.items():
        if isinstance(v, (tuple, list)):
            v = ",".join(str(x) for x in v)
        buf.write(f"{k} = {v}\n")
    return buf.getvalue()
