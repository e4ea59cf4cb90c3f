"""Peak location, line-shape refinement and H/C/L labelling for one scan."""
from __future__ import annotations

import logging
from fractions import Fraction
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy.signal import find_peaks

from .fieldfit import LabeledPoint
from .levels import ETA_LABEL, LABEL_ETA, MODES
from .lsq import FitError, levenberg_marquardt
from .synth import Scan

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PeakFit:
    """A fitted resonance.  ``center`` in MHz, ``fwhm`` in kHz."""

    center: float
    center_sigma: float
    fwhm: float
    fwhm_sigma: float
    amplitude: float
    amplitude_sigma: float
    goodness: float = float("nan")
    prominence: float = float("nan")
    label: Optional[str] = None

    @property
    def eta(self) -> Optional[float]:
        return None if self.label is None else float(LABEL_ETA[self.label])


def _lorentz_model(p, f):
    center, width, amp, base = p
    x = 2.0 * (f - center) / width
    den = 1.0 + x * x
    model = amp / den + base
    jac = np.empty((f.size, 4))
    common = amp * 2.0 * x / den**2
    jac[:, 0] = common * 2.0 / width
    jac[:, 1] = common * x / width
    jac[:, 2] = 1.0 / den
    jac[:, 3] = 1.0
    return model, jac


def fit_lorentzian(f, y, sigma=None, p0=None) -> tuple[np.ndarray, np.ndarray, float]:
    """Fit ``amp / (1 + (2 (f - c) / w)^2) + base``; ``w`` in the units of ``f``.

    Returns (params, covariance, reduced chi-square).  Without ``sigma``
    the covariance is scaled by the reduced chi-square.
    """
    f = np.asarray(f, dtype=float)
    y = np.asarray(y, dtype=float)
    weighted = sigma is not None
    s = np.asarray(sigma, dtype=float) if weighted else np.ones_like(y)
    if p0 is None:
        i = int(np.argmax(y))
        p0 = (f[i], (f[-1] - f[0]) / 4.0, y[i] - np.min(y), np.min(y))
    res = levenberg_marquardt(
        lambda p: (y - _lorentz_model(p, f)[0]) / s,
        lambda p: -_lorentz_model(p, f)[1] / s[:, None],
        p0,
        names=("center", "fwhm", "amplitude", "baseline"),
    )
    params = res.params.copy()
    params[1] = abs(params[1])
    chi2r = res.chi2_reduced if res.dof > 0 else 0.0
    cov = res.covariance if weighted else res.covariance * chi2r
    return params, cov, chi2r


def _smooth(y: np.ndarray, half: int) -> np.ndarray:
    if half <= 0:
        return y
    kernel = np.ones(2 * half + 1) / (2 * half + 1)
    return np.convolve(np.pad(y, half, mode="edge"), kernel, mode="valid")


def detect_peaks(scan: Scan, min_prominence: float = 0.1, max_peaks: int = 7, smooth: int = 0) -> list[PeakFit]:
    """Locate and refine up to ``max_peaks`` resonances in ``scan``.

    Candidates are local maxima of the (optionally boxcar-smoothed) signal
    with at least ``min_prominence``.  Candidates closer than one width to a
    more prominent one are dropped.  Each survivor is refined by a
    Lorentzian-plus-constant fit over +-2 estimated FWHM.  Results are
    sorted by centre frequency; an empty list means nothing was found.
    """
    if scan.f_mod.size < 5:
        raise ValueError("scan needs at least 5 points for peak detection")
    if not min_prominence > 0:
        raise ValueError("min_prominence must be positive")
    if not 1 <= max_peaks <= 7:
        raise ValueError("max_peaks must lie in [1, 7]")
    f, y = scan.f_mod, scan.signal
    sigma = scan.signal_sigma()
    idx, props = find_peaks(_smooth(y, smooth), prominence=min_prominence, width=0)
    if idx.size == 0:
        return []
    step = np.gradient(f)
    widths = np.maximum(props["widths"], 1.0) * step[idx]
    order = np.argsort(-props["prominences"], kind="stable")
    kept: list[int] = []
    for i in order:
        if all(abs(f[idx[i]] - f[idx[j]]) > max(widths[i], widths[j]) for j in kept):
            kept.append(i)
        if len(kept) == max_peaks:
            break
    fits = []
    for i in kept:
        fit = _refine(f, y, sigma, idx[i], widths[i], props["prominences"][i])
        if fit is not None:
            fits.append(fit)
    return sorted(fits, key=lambda p: p.center)


def _refine(f, y, sigma, i, width, prominence) -> Optional[PeakFit]:
    lo = np.searchsorted(f, f[i] - 2.0 * width)
    hi = np.searchsorted(f, f[i] + 2.0 * width, side="right")
    if hi - lo < 5:
        lo, hi = max(0, i - 2), min(f.size, i + 3)
        if hi - lo < 5:
            lo, hi = max(0, hi - 5), min(f.size, lo + 5)
    window = slice(lo, hi)
    base = float(np.min(y[window]))
    p0 = (f[i], width, y[i] - base, base)
    try:
        params, cov, chi2r = fit_lorentzian(f[window], y[window], None if sigma is None else sigma[window], p0)
    except FitError as exc:
        log.debug("dropping candidate at %.6f MHz: %s", f[i], exc)
        return None
    center, fwhm, amp, _ = params
    if not (f[lo] <= center <= f[hi - 1]) or amp <= 0:
        log.debug("dropping candidate at %.6f MHz: fit left the window", f[i])
        return None
    sig = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return PeakFit(center=float(center), center_sigma=float(sig[0]), fwhm=float(fwhm * 1e3),
                   fwhm_sigma=float(sig[1] * 1e3), amplitude=float(amp), amplitude_sigma=float(sig[2]),
                   goodness=float(chi2r), prominence=float(prominence))


def assign_labels(fits: Sequence[PeakFit], mode: str = "all", missing_side: Optional[str] = None,
                  tol: float = 0.2) -> tuple[list[PeakFit], bool]:
    """Attach H/C/L labels to fitted peaks.

    Returns the fits sorted by centre and an ambiguity flag; ambiguous
    fits carry no label.  The outermost pair is split into the smallest
    integer number of units (at most six) that puts every peak within
    ``tol`` of a lattice site; overlapping lines pull neighbouring centres
    together, so the smallest gap alone is a biased unit.  The anchor is
    fixed when the outermost pair spans six units (L3..H3), when the set is
    symmetric with an odd count (centre peak = C), or when the caller
    states which side went undetected (``missing_side`` = "L" or "H").
    A lone peak is C in ``all`` mode and the stretched line otherwise.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    fits = sorted(fits, key=lambda p: p.center)
    bare = [replace(p, label=None) for p in fits]
    if not fits:
        return [], False
    if mode != "all":
        if len(fits) > 1:
            return bare, True
        return [replace(fits[0], label="H2" if mode == "sigma_minus_only" else "L2")], False
    if len(fits) == 1:
        return [replace(fits[0], label="C")], False
    c = np.array([p.center for p in fits])
    if c[-1] <= c[0]:
        return bare, True
    # smallest integer span of the outer pair that puts every peak on the lattice
    for span in range(len(fits) - 1, 7):
        rel = (c - c[0]) * span / (c[-1] - c[0])
        steps = np.round(rel).astype(int)
        if np.max(np.abs(rel - steps)) <= tol and np.all(np.diff(steps) > 0):
            break
    else:
        return bare, True
    if span == 6:
        first = -3
    elif missing_side == "L":
        first = 0
    elif missing_side == "H":
        first = -span
    elif len(fits) % 2 == 1 and np.array_equal(steps, span - steps[::-1]):
        first = -span // 2
    else:
        return bare, True
    m = steps + first
    if m.min() < -3 or m.max() > 3:
        return bare, True
    return [replace(p, label=ETA_LABEL[Fraction(int(k), 2)]) for p, k in zip(fits, m)], False


def labeled_points(fits: Sequence[PeakFit], currents) -> list[LabeledPoint]:
    """Labelled fits of one scan as calibration data points."""
    out = []
    for p in fits:
        if p.label is None:
            continue
        sigma = p.center_sigma if p.center_sigma > 0 else None
        out.append(LabeledPoint(tuple(currents), p.eta, p.center, sigma))
    return out
