"""Coil calibration from labelled peak frequencies.

Model for a peak with shift coefficient ``eta`` recorded at coil
currents ``I``::

    f = eta * 1.4 MHz/G * |B(I)| + f_offset,    B_j = k_j * (I_j - I_j0)

The global fit determines the seven parameters (k_x, k_y, k_z, I_x0,
I_y0, I_z0, f_offset).  The axial fit handles a sweep of one coil only,
where the two other components are lumped into a fixed transverse field.

Only |B| is observable, so each k_j is determined up to sign.  Results
are reported on the branch whose signs match the initial guess.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .levels import F_HYPERFINE_NOMINAL, ZEEMAN_RATE, FieldVector
from .lsq import FitResult, levenberg_marquardt

AXES = ("x", "y", "z")
GLOBAL_PARAMS = ("k_x", "k_y", "k_z", "I_x0", "I_y0", "I_z0", "f_offset")
FIELD_FLOOR = 1e-9  # G; keeps d|B|/dp finite at exactly zero field


@dataclass(frozen=True)
class CoilCalibration:
    """Per-axis slope ``k`` (G/A) and zero-crossing current ``i0`` (A).

    ``covariance`` is ordered as :data:`GLOBAL_PARAMS`.  When omitted it is
    taken diagonal from the quoted 1-sigma values.
    """

    k: tuple[float, float, float]
    i0: tuple[float, float, float]
    f_offset: float = F_HYPERFINE_NOMINAL
    k_sigma: tuple[float, float, float] = (0.0, 0.0, 0.0)
    i0_sigma: tuple[float, float, float] = (0.0, 0.0, 0.0)
    f_offset_sigma: float = 0.0
    covariance: Optional[np.ndarray] = None
    chi2_reduced: float = float("nan")
    n_points: int = 0
    converged: bool = True
    n_iter: int = 0

    def __post_init__(self):
        for name in ("k", "i0", "k_sigma", "i0_sigma"):
            value = tuple(float(v) for v in getattr(self, name))
            if len(value) != 3:
                raise ValueError(f"{name} needs three components")
            object.__setattr__(self, name, value)
        if self.covariance is None:
            diag = np.array([*self.k_sigma, *self.i0_sigma, self.f_offset_sigma]) ** 2
            object.__setattr__(self, "covariance", np.diag(diag))
        else:
            cov = np.asarray(self.covariance, dtype=float).reshape(7, 7)
            if not np.allclose(cov, cov.T, rtol=1e-9, atol=1e-300):
                raise ValueError("covariance must be symmetric")
            object.__setattr__(self, "covariance", cov)

    @classmethod
    def published(cls) -> CoilCalibration:
        """Global calibration of the published apparatus.

        The fitted f_offset was not reported; the nominal 1250 MHz is used.
        """
        return cls(
            k=(0.362, 0.434, 3.586),
            i0=(0.985, 1.681, -0.145),
            k_sigma=(0.003, 0.049, 0.036),
            i0_sigma=(0.042, 0.065, 0.007),
        )

    @property
    def params(self) -> np.ndarray:
        return np.array([*self.k, *self.i0, self.f_offset])

    @property
    def b_offset(self) -> np.ndarray:
        """Field at zero current, B_j,offset = -k_j * I_j0 (G)."""
        return -np.asarray(self.k) * np.asarray(self.i0)

    def field_array(self, currents) -> np.ndarray:
        return np.asarray(self.k) * (np.asarray(currents, dtype=float) - np.asarray(self.i0))

    def field(self, currents) -> FieldVector:
        return FieldVector.from_array(self.field_array(currents))

    @classmethod
    def from_params(cls, params, covariance=None, **kw) -> CoilCalibration:
        p = np.asarray(params, dtype=float)
        cov = np.zeros((7, 7)) if covariance is None else np.asarray(covariance, dtype=float)
        sig = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        return cls(k=tuple(p[:3]), i0=tuple(p[3:6]), f_offset=float(p[6]), k_sigma=tuple(sig[:3]),
                   i0_sigma=tuple(sig[3:6]), f_offset_sigma=float(sig[6]), covariance=cov, **kw)


@dataclass(frozen=True)
class LabeledPoint:
    currents: tuple[float, float, float]
    eta: float
    frequency: float  # MHz
    sigma: Optional[float] = None  # MHz

    def __post_init__(self):
        object.__setattr__(self, "currents", tuple(float(c) for c in self.currents))
        object.__setattr__(self, "eta", float(self.eta))
        if not np.any(np.isclose(self.eta, [0, 0.5, 1, 1.5, -0.5, -1, -1.5])):
            raise ValueError(f"eta={self.eta} is not an allowed shift coefficient")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class AxialFitResult:
    """Single-coil fit.  ``b_perp`` is the transverse field magnitude (G).

    The transverse field enters only as B_perp^2, which is the fitted
    parameter (``b_perp_sq``, may come out negative within noise).  The
    reported ``b_perp`` is the root of its positive part and
    ``b_perp_sigma`` the upper 1-sigma excursion mapped through the root.
    """

    axis: str
    k: float
    k_sigma: float
    i0: float
    i0_sigma: float
    b_perp: float
    b_perp_sigma: float
    f_offset: float = F_HYPERFINE_NOMINAL
    f_offset_sigma: float = 0.0
    b_perp_sq: float = float("nan")
    b_perp_sq_sigma: float = float("nan")
    covariance: Optional[np.ndarray] = None
    fixed_currents: tuple[float, float] = (0.0, 0.0)
    chi2_reduced: float = float("nan")
    n_points: int = 0

    @classmethod
    def published(cls) -> AxialFitResult:
        """Published axial result (low-power sweep of the z coil)."""
        return cls(axis="z", k=3.753, k_sigma=0.020, i0=-0.166, i0_sigma=0.001, b_perp=0.007,
                   b_perp_sigma=0.031)

    def magnitude(self, current: float) -> float:
        return float(np.sqrt(max((self.k * (current - self.i0)) ** 2 + self.transverse_sq, 0.0)))

    @property
    def transverse_sq(self) -> float:
        return self.b_perp_sq if np.isfinite(self.b_perp_sq) else self.b_perp**2


def _sigmas(points: Sequence[LabeledPoint]) -> tuple[np.ndarray, bool]:
    given = [p.sigma for p in points if p.sigma is not None]
    if not given:
        return np.ones(len(points)), False
    fill = float(np.median(given))
    return np.array([fill if p.sigma is None else p.sigma for p in points]), True


def _arrays(points):
    currents = np.array([p.currents for p in points], dtype=float)
    eta = np.array([p.eta for p in points], dtype=float)
    freq = np.array([p.frequency for p in points], dtype=float)
    return currents, eta, freq


def estimate_offset(eta: np.ndarray, freq: np.ndarray, currents: np.ndarray) -> float:
    """Rough f_offset: eta = 0 lines if present, else +-eta pairs, else median."""
    if np.any(eta == 0):
        return float(np.mean(freq[eta == 0]))
    pair_means = []
    keys = [tuple(c) for c in np.round(currents, 9)]
    for i in range(len(eta)):
        for j in range(i + 1, len(eta)):
            if keys[i] == keys[j] and eta[i] == -eta[j]:
                pair_means.append(0.5 * (freq[i] + freq[j]))
    if pair_means:
        return float(np.mean(pair_means))
    return float(np.median(freq))


def initial_guess(points: Sequence[LabeledPoint]) -> CoilCalibration:
    """Algebraic start for :func:`fit_global`.

    With f_offset fixed, |B|^2 = sum_j k_j^2 (I_j - I_j0)^2 is linear in
    (I_j^2, I_j, 1), so one linear solve gives k_j^2 and I_j0.
    """
    currents, eta, freq = _arrays(points)
    f_off = estimate_offset(eta, freq, currents)
    use = eta != 0
    k = np.full(3, 0.1)
    i0 = currents.mean(axis=0) if len(currents) else np.zeros(3)
    if np.count_nonzero(use) >= 7:
        b = (freq[use] - f_off) / (ZEEMAN_RATE * eta[use])
        c = currents[use]
        design = np.column_stack([c**2, c, np.ones(len(c))])
        coef = np.linalg.lstsq(design, b**2, rcond=None)[0]
        for j in range(3):
            if coef[j] > 0 and np.ptp(c[:, j]) > 0:
                k[j] = np.sqrt(coef[j])
                i0[j] = -coef[3 + j] / (2.0 * coef[j])
    return CoilCalibration(k=tuple(k), i0=tuple(i0), f_offset=f_off)


def global_model(params, currents, eta):
    """Model frequencies and their Jacobian (n x 7) for the global fit."""
    k, i0 = params[:3], params[3:6]
    d = currents - i0
    b_vec = k * d
    b = np.maximum(np.sqrt(np.sum(b_vec**2, axis=1)), FIELD_FLOOR)
    scale = ZEEMAN_RATE * eta
    model = scale * b + params[6]
    jac = np.empty((len(eta), 7))
    jac[:, :3] = (scale / b)[:, None] * b_vec * d
    jac[:, 3:6] = -(scale / b)[:, None] * b_vec * k
    jac[:, 6] = 1.0
    return model, jac


def _flip_to_branch(params, cov, reference_k, k_index):
    """Flip k signs (|B| is invariant) so they match ``reference_k``."""
    signs = np.ones(len(params))
    for j, ref in zip(k_index, reference_k):
        if ref != 0 and np.sign(params[j]) != np.sign(ref):
            signs[j] = -1.0
    return params * signs, cov * np.outer(signs, signs)


def fit_global(points: Sequence[LabeledPoint], init: Optional[CoilCalibration] = None,
               max_iter: int = 200, rtol: float = 1e-10) -> CoilCalibration:
    """Least-squares calibration of all three coils from labelled peaks.

    Raises
    ------
    ValueError
        Fewer than 8 points.
    IdentifiabilityError
        Jacobian rank deficient at the optimum; the exception lists the
        parameters that cannot be determined.
    ConvergenceError
        Iteration cap reached; carries the last iterate.
    """
    points = list(points)
    if len(points) < 8:
        raise ValueError(f"fit_global needs at least 8 points, got {len(points)}")
    currents, eta, freq = _arrays(points)
    sigma, weighted = _sigmas(points)
    if init is None:
        init = initial_guess(points)

    def residual(p):
        return (freq - global_model(p, currents, eta)[0]) / sigma

    def jacobian(p):
        return -global_model(p, currents, eta)[1] / sigma[:, None]

    res: FitResult = levenberg_marquardt(residual, jacobian, init.params, names=GLOBAL_PARAMS,
                                         max_iter=max_iter, rtol=rtol)
    cov = res.covariance if weighted else res.covariance * max(res.chi2_reduced, 0.0)
    params, cov = _flip_to_branch(res.params, cov, init.k, range(3))
    return CoilCalibration.from_params(params, cov, chi2_reduced=res.chi2_reduced, n_points=len(points),
                                       converged=res.converged, n_iter=res.n_iter)


AXIAL_SOFTENING = 2e-3  # G; well below the ~4 mG single-point resolution


def soft_root(u, delta: float = AXIAL_SOFTENING):
    """sqrt(u) for u >> delta^2, smoothly positive for u <= 0.

    Returns the value and its derivative with respect to ``u``.
    """
    u = np.asarray(u, dtype=float)
    d4 = 4.0 * delta**4
    root = np.sqrt(u * u + d4)
    # u + root without cancellation for u < 0
    s = np.where(u >= 0, u + root, d4 / np.where(u >= 0, 1.0, root - u))
    b = np.sqrt(0.5 * s)
    return b, (s / root) / (4.0 * b)


def axial_model(params, current, eta):
    """Model frequencies and Jacobian for parameters (k, I0, B_perp^2, f_offset)."""
    k, i0, s = params[:3]
    d = current - i0
    b, db_du = soft_root((k * d) ** 2 + s)
    scale = ZEEMAN_RATE * eta
    model = scale * b + params[3]
    jac = np.empty((len(eta), 4))
    jac[:, 0] = scale * db_du * 2.0 * k * d**2
    jac[:, 1] = -scale * db_du * 2.0 * k**2 * d
    jac[:, 2] = scale * db_du
    jac[:, 3] = 1.0
    return model, jac


def _axial_guess(current, eta, freq, all_currents):
    f_off = estimate_offset(eta, freq, all_currents)
    use = eta != 0
    k, i0, s = 1.0, float(np.mean(current)), 0.0
    if np.count_nonzero(use) >= 3 and np.ptp(current[use]) > 0:
        b = (freq[use] - f_off) / (ZEEMAN_RATE * eta[use])
        a2, a1, a0 = np.polyfit(current[use], b**2, 2)
        if a2 > 0:
            k = np.sqrt(a2)
            i0 = -a1 / (2.0 * a2)
            s = max(a0 - a2 * i0**2, 0.0)
    return np.array([k, i0, s, f_off])


def fit_axial(points: Sequence[LabeledPoint], init=None, axis: str = "z",
              max_iter: int = 200, rtol: float = 1e-10) -> AxialFitResult:
    """Fit a sweep of one coil with the other two currents held fixed.

    ``init`` may be an :class:`AxialFitResult` or a sequence
    (k, I0, B_perp^2, f_offset).
    """
    points = list(points)
    j = AXES.index(axis)
    others = [i for i in range(3) if i != j]
    if len(points) < 4:
        raise ValueError(f"fit_axial needs at least 4 points, got {len(points)}")
    currents, eta, freq = _arrays(points)
    fixed = currents[:, others]
    if np.ptp(fixed, axis=0).max() > 1e-9:
        raise ValueError(f"axial fit needs the two non-{axis} currents fixed")
    current = currents[:, j]
    sigma, weighted = _sigmas(points)
    if init is None:
        x0 = _axial_guess(current, eta, freq, currents)
    elif isinstance(init, AxialFitResult):
        x0 = np.array([init.k, init.i0, init.transverse_sq, init.f_offset])
    else:
        x0 = np.asarray(init, dtype=float)
    names = (f"k_{axis}", f"I_{axis}0", "B_perp_sq", "f_offset")

    def residual(p):
        return (freq - axial_model(p, current, eta)[0]) / sigma

    def jacobian(p):
        return -axial_model(p, current, eta)[1] / sigma[:, None]

    res = levenberg_marquardt(residual, jacobian, x0, names=names, max_iter=max_iter, rtol=rtol)
    cov = res.covariance if weighted else res.covariance * max(res.chi2_reduced, 0.0)
    params, cov = _flip_to_branch(res.params, cov, [x0[0] if x0[0] != 0 else 1.0], [0])
    sig = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    s, s_sigma = params[2], sig[2]
    b_perp = float(np.sqrt(max(s, 0.0)))
    b_perp_sigma = float(np.sqrt(max(s, 0.0) + s_sigma) - b_perp)
    return AxialFitResult(
        axis=axis, k=float(params[0]), k_sigma=float(sig[0]), i0=float(params[1]), i0_sigma=float(sig[1]),
        b_perp=b_perp, b_perp_sigma=b_perp_sigma, f_offset=float(params[3]), f_offset_sigma=float(sig[3]),
        b_perp_sq=float(s), b_perp_sq_sigma=float(s_sigma), covariance=cov,
        fixed_currents=tuple(float(v) for v in fixed[0]), chi2_reduced=res.chi2_reduced, n_points=len(points),
    )


def currents_for_zero(cal) -> tuple[np.ndarray, np.ndarray]:
    """Zero-crossing currents (A) and their 1-sigma uncertainties.

    For an :class:`AxialFitResult` only the swept axis is known; the
    other two entries are NaN.
    """
    if isinstance(cal, AxialFitResult):
        value = np.full(3, np.nan)
        sigma = np.full(3, np.nan)
        j = AXES.index(cal.axis)
        value[j], sigma[j] = cal.i0, cal.i0_sigma
        return value, sigma
    return np.asarray(cal.i0, dtype=float), np.asarray(cal.i0_sigma, dtype=float)


def field_magnitude(cal: CoilCalibration, currents) -> tuple[float, float]:
    """|B| (G) at ``currents`` and its 1-sigma from the calibration covariance."""
    p = cal.params
    d = np.asarray(currents, dtype=float) - p[3:6]
    b_vec = p[:3] * d
    b = float(np.sqrt(np.sum(b_vec**2)))
    if b == 0:
        return 0.0, float("nan")
    grad = np.concatenate([b_vec * d / b, -b_vec * p[:3] / b, [0.0]])
    var = float(grad @ np.asarray(cal.covariance) @ grad)
    return b, float(np.sqrt(max(var, 0.0)))
