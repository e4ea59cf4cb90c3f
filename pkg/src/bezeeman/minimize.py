"""Closed-loop field nulling by coordinate descent over the three coils.

Each step sweeps one coil current while the other two stay fixed, records
a Raman scan at every setting, converts the resolved Zeeman pattern into a
field magnitude, and moves the coil to the apex of the fitted hyperbola
``sqrt(a^2 (I - I*)^2 + b^2)``.  The sweep span halves every round and
the beam power follows a decreasing schedule so the lines get narrower as
the field gets smaller.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .analysis import propagate_delta_b, weighted_line_fit
from .fieldfit import AXES, AxialFitResult, LabeledPoint, fit_axial, soft_root
from .levels import F_HYPERFINE_NOMINAL, ZEEMAN_RATE
from .lsq import FitError, levenberg_marquardt
from .peaks import assign_labels, detect_peaks, labeled_points
from .synth import BeamConfig, Environment, field_at, frequency_grid, simulate_scan

log = logging.getLogger(__name__)

METRICS = ("fitted_B_magnitude", "max_peak_spread")


class MinimizationError(FitError):
    pass


@dataclass(frozen=True)
class MinimizeConfig:
    axis_order: tuple[str, ...] = ("x", "y", "z")
    sweep_points: int = 7
    sweep_span: tuple[float, float, float] = (20.0, 16.0, 2.0)  # A, full width in round 1
    rounds: int = 2
    power_schedule: tuple[float, ...] = (70.0, 6.0)  # uW
    splitting_metric: str = "fitted_B_magnitude"
    start_currents: tuple[float, float, float] = (0.0, 0.0, 0.0)
    scan_center: float = F_HYPERFINE_NOMINAL  # MHz
    scan_halfwidth: tuple[float, ...] = (18.0, 6.0)  # MHz, per round
    points_per_fwhm: float = 4.0
    counts_per_point: Optional[float] = 5000.0
    min_prominence: float = 0.12
    smooth: int = 1

    def __post_init__(self):
        if sorted(self.axis_order) != sorted(AXES):
            raise ValueError("axis_order must be a permutation of x, y, z")
        if self.sweep_points < 3:
            raise ValueError("sweep_points must be at least 3")
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        if len(self.power_schedule) != self.rounds:
            raise ValueError("power_schedule needs one entry per round")
        if len(self.scan_halfwidth) != self.rounds:
            raise ValueError("scan_halfwidth needs one entry per round")
        if self.splitting_metric not in METRICS:
            raise ValueError(f"unknown splitting metric {self.splitting_metric!r}")
        if len(self.sweep_span) != 3 or min(self.sweep_span) <= 0:
            raise ValueError("sweep_span needs three positive entries")


@dataclass
class MinimizeStep:
    round: int
    axis: str
    power: float
    currents: list[list[float]]
    metric: list[Optional[float]]
    metric_sigma: list[Optional[float]]
    chosen_current: float
    apex_sigma: float
    floor: float


@dataclass
class MinimizeTrace:
    steps: list[MinimizeStep] = field(default_factory=list)
    round_estimates: list[tuple[float, float]] = field(default_factory=list)
    final_currents: tuple[float, float, float] = (0.0, 0.0, 0.0)
    final_field: float = float("nan")
    final_field_sigma: float = float("nan")
    true_field: Optional[float] = None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["round_estimates"] = [list(r) for r in self.round_estimates]
        out["final_currents"] = list(self.final_currents)
        return out


def splitting_metric(fits, metric: str) -> tuple[Optional[float], Optional[float]]:
    """|B| in G (and 1-sigma) from the labelled peaks of one scan, or (None, None)."""
    labeled = [p for p in fits if p.label is not None]
    if len(labeled) < 2:
        return None, None
    eta = np.array([p.eta for p in labeled])
    center = np.array([p.center for p in labeled])
    sigma = np.array([max(p.center_sigma, 1e-9) for p in labeled])
    if np.ptp(eta) == 0:
        return None, None
    if metric == "max_peak_spread":
        lo, hi = np.argmin(center), np.argmax(center)
        span = (eta[hi] - eta[lo]) * ZEEMAN_RATE
        value = (center[hi] - center[lo]) / span
        return abs(value), float(np.hypot(sigma[hi], sigma[lo]) / abs(span))
    if len(labeled) == 2:
        slope = (center[1] - center[0]) / (eta[1] - eta[0])
        return abs(slope) / ZEEMAN_RATE, float(np.hypot(*sigma) / abs(eta[1] - eta[0]) / ZEEMAN_RATE)
    line = weighted_line_fit(eta, center, sigma)
    return abs(line.slope) / ZEEMAN_RATE, line.slope_sigma / ZEEMAN_RATE


def fit_hyperbola(current, value, sigma) -> tuple[np.ndarray, np.ndarray]:
    """Fit value = sqrt(a^2 (I - I*)^2 + b^2); returns (a, I*, b^2) and covariance."""
    current = np.asarray(current, dtype=float)
    value = np.asarray(value, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    i_min = int(np.argmin(value))
    dist = np.abs(current - current[i_min])
    far = dist > 0
    a0 = float(np.max(value[far] / dist[far])) if np.any(far) else 1.0
    x0 = np.array([a0, current[i_min], value[i_min] ** 2])

    def model(p):
        d = current - p[1]
        b, db = soft_root((p[0] * d) ** 2 + p[2])
        jac = np.column_stack([db * 2 * p[0] * d**2, -db * 2 * p[0] ** 2 * d, db])
        return b, jac

    res = levenberg_marquardt(lambda p: (value - model(p)[0]) / sigma,
                              lambda p: -model(p)[1] / sigma[:, None], x0, names=("a", "I_star", "b_sq"))
    params = res.params.copy()
    params[0] = abs(params[0])
    return params, res.covariance


def _measure(env, beam, cfg, currents, grid, seed, axis):
    scan = simulate_scan(env, beam, currents, grid, noise_seed=seed, counts_per_point=cfg.counts_per_point)
    fits = detect_peaks(scan, cfg.min_prominence, 7, smooth=cfg.smooth)
    labeled, ambiguous = assign_labels(fits, "all")
    if ambiguous:
        log.debug("ambiguous labels at %s", currents)
        return None, None, []
    value, sigma = splitting_metric(labeled, cfg.splitting_metric)
    return value, sigma, labeled_points(labeled, currents)


def final_axial_estimate(points: Sequence[LabeledPoint], axis: str, set_current: float):
    """|B| (G) and 1-sigma at ``set_current`` from an axial fit of one sweep."""
    ax: AxialFitResult = fit_axial(points, axis=axis)
    estimate = ax.magnitude(set_current)
    return estimate, propagate_delta_b(ax), ax


def run_minimization(env: Environment, cfg: MinimizeConfig = MinimizeConfig(), seed: int = 0,
                     beam: Optional[BeamConfig] = None) -> MinimizeTrace:
    """Null the field of ``env`` by coordinate descent on the coil currents."""
    beam = BeamConfig() if beam is None else beam
    if beam.polarization_mode != "all":
        raise ValueError("minimization reads the full Zeeman pattern; use polarization_mode='all'")
    rng = np.random.default_rng(seed)
    currents = np.array(cfg.start_currents, dtype=float)
    trace = MinimizeTrace()
    for r in range(cfg.rounds):
        power = cfg.power_schedule[r]
        beam_r = beam.with_power(power)
        step_mhz = beam_r.power_width * 1e-3 / cfg.points_per_fwhm
        grid = frequency_grid(cfg.scan_center, cfg.scan_halfwidth[r], step_mhz)
        for axis in cfg.axis_order:
            j = AXES.index(axis)
            half = 0.5 * cfg.sweep_span[j] / 2**r
            sweep = currents[j] + np.linspace(-half, half, cfg.sweep_points)
            values, sigmas, used_i, points, rows = [], [], [], [], []
            for i_j in sweep:
                setting = currents.copy()
                setting[j] = i_j
                rows.append(setting.tolist())
                value, sigma, pts = _measure(env, beam_r, cfg, setting, grid, int(rng.integers(2**32)), axis)
                values.append(value)
                sigmas.append(sigma)
                if value is not None and sigma is not None and sigma > 0:
                    used_i.append(i_j)
                    points.extend(pts)
            if len(used_i) < 3 or len(used_i) * 2 < cfg.sweep_points:
                raise MinimizationError(
                    f"round {r + 1}, axis {axis}: splitting undefined at {cfg.sweep_points - len(used_i)} "
                    f"of {cfg.sweep_points} sweep points", currents)
            ok = [v is not None and s is not None and s > 0 for v, s in zip(values, sigmas)]
            v = np.array([x for x, good in zip(values, ok) if good])
            s = np.array([x for x, good in zip(sigmas, ok) if good])
            try:
                params, cov = fit_hyperbola(used_i, v, s)
            except FitError as exc:
                raise MinimizationError(f"round {r + 1}, axis {axis}: {exc}", currents) from exc
            chosen = float(np.clip(params[1], sweep[0], sweep[-1]))
            currents[j] = chosen
            trace.steps.append(MinimizeStep(
                round=r + 1, axis=axis, power=power, currents=rows, metric=values, metric_sigma=sigmas,
                chosen_current=chosen, apex_sigma=float(np.sqrt(max(cov[1, 1], 0.0))),
                floor=float(np.sqrt(max(params[2], 0.0))),
            ))
        try:
            estimate, sigma, _ = final_axial_estimate(points, axis, currents[j])
        except (FitError, ValueError) as exc:
            raise MinimizationError(f"round {r + 1}: final axial fit failed: {exc}", currents) from exc
        trace.round_estimates.append((float(estimate), float(sigma)))
    trace.final_currents = tuple(float(c) for c in currents)
    trace.final_field, trace.final_field_sigma = trace.round_estimates[-1]
    trace.true_field = field_at(env, currents).magnitude
    return trace
