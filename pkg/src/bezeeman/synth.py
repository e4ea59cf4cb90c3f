"""Synthetic Raman scans.

Forward model of one sideband-frequency sweep: peak centres from the
linear Zeeman model, Lorentzian lines whose width and common shift grow
linearly with beam power, optional broadening from a field gradient over
the ion cloud, and Poisson photon counts for the sideband-on (N_f) and
sideband-off (N_b) gates.  The recorded signal is (N_f - N_b) / N_b.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .fieldfit import CoilCalibration
from .levels import (
    F_HYPERFINE_REF,
    MODES,
    ZEEMAN_RATE,
    FieldVector,
    predict_peaks,
)


@dataclass(frozen=True)
class BeamConfig:
    """Cooling beam plus sideband.

    Slopes are phenomenological: the light shift in MHz/uW and the power
    broadening in kHz/uW, both referred to the power at the exit window.
    """

    power: float = 70.0
    polarization_mode: str = "all"
    lightshift_slope: float = 0.002
    broadening_slope: float = 3.0
    base_linewidth: float = 30.0
    amplitude: float = 0.3
    amplitudes: Optional[Mapping[str, float]] = None

    def __post_init__(self):
        if self.power < 0:
            raise ValueError("beam power must be non-negative")
        if self.base_linewidth <= 0:
            raise ValueError("base_linewidth must be positive")
        if self.polarization_mode not in MODES:
            raise ValueError(f"unknown polarization mode {self.polarization_mode!r}")
        if not (np.isfinite(self.lightshift_slope) and np.isfinite(self.broadening_slope)):
            raise ValueError("slopes must be finite")
        if self.amplitude < 0:
            raise ValueError("amplitude must be non-negative")

    @property
    def f_shift(self) -> float:
        """Common light shift in MHz."""
        return self.lightshift_slope * self.power

    @property
    def power_width(self) -> float:
        """Homogeneous FWHM in kHz at this power."""
        return self.base_linewidth + self.broadening_slope * self.power

    def with_power(self, power: float) -> BeamConfig:
        return BeamConfig(power, self.polarization_mode, self.lightshift_slope, self.broadening_slope,
                          self.base_linewidth, self.amplitude, self.amplitudes)


@dataclass(frozen=True)
class Environment:
    """Simulated trap: ambient field, true coil response and field gradient."""

    ambient_field: FieldVector = FieldVector(0.0, 0.0, 0.0)
    calibration_truth: CoilCalibration = field(default_factory=CoilCalibration.published)
    gradient: float = 0.0  # G/mm along z
    ensemble_length: float = 2.0  # mm
    f_hyperfine: float = F_HYPERFINE_REF

    def __post_init__(self):
        if self.gradient < 0:
            raise ValueError("gradient must be non-negative")
        if self.ensemble_length < 0:
            raise ValueError("ensemble_length must be non-negative")

    @property
    def gradient_width(self) -> float:
        """FWHM in kHz added to an |eta| = 1 line by the field spread."""
        return ZEEMAN_RATE * 1e3 * self.gradient * self.ensemble_length

    def zero_currents(self) -> np.ndarray:
        """Coil currents (A) that cancel the total field."""
        cal = self.calibration_truth
        return np.asarray(cal.i0) - self.ambient_field.as_array() / np.asarray(cal.k)


@dataclass
class Scan:
    """One sweep of the sideband frequency.

    ``f_mod`` in MHz, ``signal`` the relative fluorescence, ``currents``
    the coil currents in A and ``power`` the beam power in uW.
    """

    f_mod: np.ndarray
    signal: np.ndarray
    currents: tuple[float, float, float]
    power: float
    n_f: Optional[np.ndarray] = None
    n_b: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.f_mod = np.asarray(self.f_mod, dtype=float)
        self.signal = np.asarray(self.signal, dtype=float)
        self.currents = tuple(float(c) for c in self.currents)
        if len(self.currents) != 3:
            raise ValueError("currents must have three components")
        if self.f_mod.ndim != 1 or self.f_mod.size == 0:
            raise ValueError("frequency grid must be a non-empty 1-d array")
        if self.signal.shape != self.f_mod.shape:
            raise ValueError("signal and grid lengths differ")
        if np.any(np.diff(self.f_mod) <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        if (self.n_f is None) != (self.n_b is None):
            raise ValueError("n_f and n_b must be given together")
        if self.n_f is not None:
            self.n_f = np.asarray(self.n_f, dtype=float)
            self.n_b = np.asarray(self.n_b, dtype=float)
            bad = inconsistent_rows(self.signal, self.n_f, self.n_b)
            if bad.size:
                raise ValueError(f"signal differs from (n_f - n_b)/n_b at row {bad[0]}")

    @property
    def has_counts(self) -> bool:
        return self.n_f is not None

    def signal_sigma(self) -> Optional[np.ndarray]:
        """Poisson standard error of the signal, if raw counts are present."""
        if not self.has_counts:
            return None
        n_f = np.maximum(self.n_f, 1.0)
        n_b = np.maximum(self.n_b, 1.0)
        return np.sqrt(n_f / n_b**2 + n_f**2 / n_b**3)


def inconsistent_rows(signal, n_f, n_b, rtol: float = 1e-9) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        expected = (n_f - n_b) / n_b
    ok = np.isfinite(expected) & (np.abs(signal - expected) <= rtol * np.maximum(np.abs(expected), 1.0))
    return np.flatnonzero(~ok)


def field_at(env: Environment, currents: Sequence[float]) -> FieldVector:
    """Field at the ions for the given coil currents."""
    return FieldVector.from_array(env.calibration_truth.field_array(currents) + env.ambient_field.as_array())


def line_profile(center: float, fwhm: float, amplitude: float, f) -> np.ndarray:
    """Lorentzian of peak height ``amplitude``; ``center``, ``f`` in MHz, ``fwhm`` in kHz."""
    if fwhm <= 0:
        raise ValueError("fwhm must be positive")
    x = 2.0 * (np.asarray(f, dtype=float) - center) / (fwhm * 1e-3)
    return amplitude / (1.0 + x * x)


def gaussian_profile(center: float, fwhm: float, amplitude: float, f) -> np.ndarray:
    """Gaussian with the same parametrization as :func:`line_profile`."""
    if fwhm <= 0:
        raise ValueError("fwhm must be positive")
    x = (np.asarray(f, dtype=float) - center) / (fwhm * 1e-3)
    return amplitude * np.exp(-4.0 * np.log(2.0) * x * x)


@dataclass(frozen=True)
class SyntheticLine:
    label: str
    eta: float
    center: float  # MHz
    fwhm: float  # kHz
    amplitude: float


def scan_lines(env: Environment, beam: BeamConfig, currents: Sequence[float]) -> list[SyntheticLine]:
    """Resonances the simulator places for a given setting."""
    B = field_at(env, currents)
    f_offset = env.f_hyperfine + beam.f_shift
    lines = []
    for peak in predict_peaks(B, f_offset, beam.polarization_mode):
        eta = float(peak.eta)
        fwhm = beam.power_width + abs(eta) * env.gradient_width
        amp = beam.amplitude
        if beam.amplitudes is not None:
            amp = beam.amplitudes.get(peak.label, amp)
        lines.append(SyntheticLine(peak.label, eta, peak.frequency, fwhm, amp))
    return lines


def simulate_scan(
    env: Environment,
    beam: BeamConfig,
    currents: Sequence[float],
    grid,
    noise_seed: int = 0,
    counts_per_point: Optional[float] = 2000.0,
    profile: Callable = line_profile,
) -> Scan:
    """Simulate a scan over ``grid`` (MHz).

    ``counts_per_point`` is the expected background count per gate; pass
    ``None`` for the noiseless limit, in which case no raw counts are
    attached.  Output is a deterministic function of the arguments.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty frequency grid")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("frequency grid must be strictly increasing")
    lines = scan_lines(env, beam, currents)
    model = np.zeros_like(grid)
    for ln in lines:
        model += profile(ln.center, ln.fwhm, ln.amplitude, grid)
    meta = {"mode": beam.polarization_mode, "seed": int(noise_seed)}
    if counts_per_point is None:
        return Scan(grid, model, tuple(currents), beam.power, metadata=meta)
    if counts_per_point <= 0:
        raise ValueError("counts_per_point must be positive")
    rng = np.random.default_rng(noise_seed)
    n_b = rng.poisson(counts_per_point, size=grid.size).astype(float)
    n_f = rng.poisson(counts_per_point * (1.0 + model)).astype(float)
    if np.any(n_b == 0):
        raise ValueError("background gate recorded zero counts; raise counts_per_point")
    signal = (n_f - n_b) / n_b
    meta["counts_per_point"] = float(counts_per_point)
    return Scan(grid, signal, tuple(currents), beam.power, n_f=n_f, n_b=n_b, metadata=meta)


def frequency_grid(center: float, halfwidth: float, step: float) -> np.ndarray:
    """Uniform grid in MHz covering ``center +- halfwidth``."""
    n = int(np.floor(2.0 * halfwidth / step + 1e-9)) + 1
    return center - halfwidth + step * np.arange(n)


# Coil settings of the three global-calibration sweeps (data sets I-III).
# Each sweep varies one coil around the setting of the 7-peak spectrum at
# (-5.74, 1.70, 0.14) A and keeps the other two fixed.
REFERENCE_CURRENTS = (-5.74, 1.70, 0.14)


def calibration_settings(n_per_axis: int = 12) -> dict[str, np.ndarray]:
    """Current triples (A) of data sets I, II and III."""
    spans = {"I": (0, -5.74, 5.0), "II": (1, -3.0, 6.0), "III": (2, -0.8, 0.6)}
    sets = {}
    for name, (axis, lo, hi) in spans.items():
        rows = np.tile(REFERENCE_CURRENTS, (n_per_axis, 1))
        rows[:, axis] = np.linspace(lo, hi, n_per_axis)
        sets[name] = rows
    return sets


def axial_settings(i0: float = -0.166, half_range: float = 0.3, n: int = 12,
                   fixed: tuple[float, float] = (0.985, 1.681)) -> np.ndarray:
    """Current triples (A) of a z-coil sweep with x and y held at ``fixed``.

    An even ``n`` keeps the sweep from sampling the zero crossing itself.
    """
    rows = np.empty((n, 3))
    rows[:, 0], rows[:, 1] = fixed
    rows[:, 2] = np.linspace(i0 - half_range, i0 + half_range, n)
    return rows


def synthetic_points(field_of, currents, f_offset: float, sigma: float, seed: int, etas=None):
    """Labelled peak frequencies with Gaussian frequency noise.

    ``field_of`` maps a current triple to |B| in G.  One point per (setting,
    eta); ``sigma`` is in MHz (0 gives exact frequencies).
    """
    from .fieldfit import LabeledPoint

    etas = (1.5, 1.0, 0.5, 0.0, -0.5, -1.0, -1.5) if etas is None else etas
    rng = np.random.default_rng(seed)
    points = []
    for row in np.asarray(currents, dtype=float):
        b = float(field_of(row))
        for eta in etas:
            f = eta * ZEEMAN_RATE * b + f_offset
            if sigma > 0:
                f += rng.normal(0.0, sigma)
            points.append(LabeledPoint(tuple(row), eta, f, sigma if sigma > 0 else None))
    return points
