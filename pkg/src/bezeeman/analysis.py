"""Derived numbers: field uncertainty at the null, zero-power extrapolation
of light shift and power broadening, and upper limits on the residual
field and on the field gradient across the ion cloud."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .fieldfit import AxialFitResult, CoilCalibration
from .levels import F_HYPERFINE_REF, ZEEMAN_RATE


def propagate_delta_b(cal) -> float:
    """Field uncertainty (G) when every coil sits at its fitted zero crossing.

    For a :class:`CoilCalibration` this is sqrt(sum_j (k_j dI_j0)^2).  For an
    :class:`AxialFitResult` the transverse field uncertainty is added in
    quadrature to the swept coil's term.
    """
    if isinstance(cal, AxialFitResult):
        return float(np.hypot(cal.k * cal.i0_sigma, cal.b_perp_sigma))
    if isinstance(cal, CoilCalibration):
        terms = np.asarray(cal.k) * np.asarray(cal.i0_sigma)
        return float(np.sqrt(np.sum(terms**2)))
    raise TypeError(f"cannot propagate {type(cal).__name__}")


@dataclass(frozen=True)
class LineFit:
    intercept: float
    intercept_sigma: float
    slope: float
    slope_sigma: float
    covariance: np.ndarray
    chi2: float
    weighted: bool


def weighted_line_fit(x, y, sigma=None) -> LineFit:
    """Straight-line fit y = a + b x with inverse-variance weights.

    Without ``sigma`` the fit is unweighted and the covariance is scaled by
    the residual variance (n - 2 degrees of freedom).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    weighted = sigma is not None
    w = 1.0 / np.asarray(sigma, dtype=float) ** 2 if weighted else np.ones_like(x)
    S, Sx, Sy = w.sum(), (w * x).sum(), (w * y).sum()
    Sxx, Sxy = (w * x * x).sum(), (w * x * y).sum()
    det = S * Sxx - Sx * Sx
    if not det > 1e-12 * S * max(Sxx, 1e-300):
        raise ValueError("degenerate abscissae: all x equal")
    intercept = (Sxx * Sy - Sx * Sxy) / det
    slope = (S * Sxy - Sx * Sy) / det
    cov = np.array([[Sxx, -Sx], [-Sx, S]]) / det
    chi2 = float((w * (y - intercept - slope * x) ** 2).sum())
    if not weighted:
        cov = cov * chi2 / max(x.size - 2, 1)
    return LineFit(float(intercept), float(np.sqrt(cov[0, 0])), float(slope), float(np.sqrt(cov[1, 1])),
                   cov, chi2, weighted)


@dataclass(frozen=True)
class PowerSeries:
    """Peak centre (MHz) and FWHM (kHz) of one line versus beam power (uW)."""

    power: np.ndarray
    center: np.ndarray
    fwhm: np.ndarray
    center_sigma: Optional[np.ndarray] = None
    fwhm_sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("power", "center", "fwhm", "center_sigma", "fwhm_sigma"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=float))
        n = self.power.size
        if any(getattr(self, a) is not None and getattr(self, a).size != n
               for a in ("center", "fwhm", "center_sigma", "fwhm_sigma")):
            raise ValueError("power series columns differ in length")
        if np.any(self.power <= 0):
            raise ValueError("powers must be strictly positive")
        if np.unique(self.power).size != n:
            raise ValueError("powers must be distinct")


@dataclass(frozen=True)
class PowerExtrapolation:
    f_intercept: float  # MHz
    f_intercept_sigma: float
    shift_slope: float  # MHz/uW
    shift_slope_sigma: float
    width_intercept: float  # kHz
    width_intercept_sigma: float
    width_slope: float  # kHz/uW
    width_slope_sigma: float


def extrapolate_power(series: PowerSeries) -> PowerExtrapolation:
    """Zero-power intercepts of the light shift and the power broadening."""
    if series.power.size < 3:
        raise ValueError("power extrapolation needs at least 3 entries")
    shift = weighted_line_fit(series.power, series.center, series.center_sigma)
    width = weighted_line_fit(series.power, series.fwhm, series.fwhm_sigma)
    return PowerExtrapolation(shift.intercept, shift.intercept_sigma, shift.slope, shift.slope_sigma,
                              width.intercept, width.intercept_sigma, width.slope, width.slope_sigma)


def field_upper_limit(f_intercept: float, sigma: float, f_reference: float = F_HYPERFINE_REF) -> float:
    """Residual field bound (G): (|f_intercept - f_reference| + sigma) / 1.4 MHz/G."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return (abs(f_intercept - f_reference) + sigma) / ZEEMAN_RATE


def gradient_upper_limit(min_fwhm: float, ensemble_length: float) -> tuple[float, float]:
    """Field spread across the cloud (G) and gradient (G/mm) from the narrowest FWHM (kHz).

    Attributes the whole linewidth to an inhomogeneous field.
    """
    if not min_fwhm > 0:
        raise ValueError("min_fwhm must be positive")
    if not ensemble_length > 0:
        raise ValueError("ensemble_length must be positive")
    spread = min_fwhm * 1e-3 / ZEEMAN_RATE
    return spread, spread / ensemble_length


@dataclass(frozen=True)
class UpperLimits:
    field_limit: float  # G
    gradient_limit: float  # G across the cloud
    gradient_per_mm: float
    discrepancy: float  # MHz
    discrepancy_sigma: float
    min_fwhm: float  # kHz
    ensemble_length: float  # mm
    zeeman_rate: float = ZEEMAN_RATE


def upper_limits(f_intercept: float, f_sigma: float, min_fwhm: float, ensemble_length: float = 2.0,
                 f_reference: float = F_HYPERFINE_REF) -> UpperLimits:
    spread, grad = gradient_upper_limit(min_fwhm, ensemble_length)
    return UpperLimits(
        field_limit=field_upper_limit(f_intercept, f_sigma, f_reference),
        gradient_limit=spread,
        gradient_per_mm=grad,
        discrepancy=f_intercept - f_reference,
        discrepancy_sigma=f_sigma,
        min_fwhm=min_fwhm,
        ensemble_length=ensemble_length,
    )


def synthetic_power_series(powers: Sequence[float], f_intercept: float, shift_slope: float,
                           width_intercept: float, width_slope: float, center_sigma: float = 0.0,
                           fwhm_sigma: float = 0.0, seed: int = 0) -> PowerSeries:
    """Linear light-shift/broadening truth plus Gaussian scatter."""
    rng = np.random.default_rng(seed)
    p = np.asarray(powers, dtype=float)
    center = f_intercept + shift_slope * p
    fwhm = width_intercept + width_slope * p
    if center_sigma > 0:
        center = center + rng.normal(0.0, center_sigma, p.size)
    if fwhm_sigma > 0:
        fwhm = fwhm + rng.normal(0.0, fwhm_sigma, p.size)
    return PowerSeries(p, center, fwhm,
                       np.full(p.size, center_sigma) if center_sigma > 0 else None,
                       np.full(p.size, fwhm_sigma) if fwhm_sigma > 0 else None)
