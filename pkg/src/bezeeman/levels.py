"""Ground-state Zeeman structure of 9Be+ and the allowed Raman components.

The Raman resonance connects the F'=1 and F=2 hyperfine levels of the
2S1/2 ground state.  Every component shifts linearly with the field,
``f = eta * ZEEMAN_RATE * |B| + f_offset``, with ``eta`` one of
0, +-1/2, +-1, +-3/2.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

# mu_B/h rounded to the 1.4 MHz/G used by every downstream number.
ZEEMAN_RATE = 1.4
# Literature ground-state hyperfine interval (Shiga et al.), MHz.
F_HYPERFINE_REF = 1250.017674088
F_HYPERFINE_REF_SIGMA = 0.024e-6
# Older RF measurement (Nakamura et al.), MHz.
F_HYPERFINE_NAKAMURA = 1250.01767046
# Nominal modulation frequency around which scans are taken, MHz.
F_HYPERFINE_NOMINAL = 1250.0

# 9Be+ ground state quantum numbers.
NUCLEAR_SPIN = Fraction(3, 2)
ELECTRON_J = Fraction(1, 2)
ELECTRON_S = Fraction(1, 2)
ELECTRON_L = 0

MODES = ("all", "sigma_plus_only", "sigma_minus_only")
POLARIZATIONS = ("sigma_minus", "pi", "sigma_plus")

# Peak names ordered by decreasing eta.
LABELS = ("H3", "H2", "H1", "C", "L1", "L2", "L3")
LABEL_ETA = {
    "H3": Fraction(3, 2),
    "H2": Fraction(1),
    "H1": Fraction(1, 2),
    "C": Fraction(0),
    "L1": Fraction(-1, 2),
    "L2": Fraction(-1),
    "L3": Fraction(-3, 2),
}
ETA_LABEL = {eta: label for label, eta in LABEL_ETA.items()}


@dataclass(frozen=True)
class PhysicalConstants:
    zeeman_rate: float = ZEEMAN_RATE
    f_hyperfine_ref: float = F_HYPERFINE_REF
    f_hyperfine_nominal: float = F_HYPERFINE_NOMINAL


@dataclass(frozen=True)
class FieldVector:
    """Magnetic field in Gauss."""

    x: float
    y: float
    z: float

    @property
    def magnitude(self) -> float:
        return float(np.sqrt(self.x**2 + self.y**2 + self.z**2))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, values) -> FieldVector:
        x, y, z = (float(v) for v in values)
        return cls(x, y, z)


@dataclass(frozen=True)
class HyperfineState:
    F: int
    m_F: int

    def __post_init__(self):
        if self.F not in (1, 2):
            raise ValueError(f"F must be 1 or 2, got {self.F}")
        if abs(self.m_F) > self.F:
            raise ValueError(f"|m_F| must not exceed F={self.F}, got m_F={self.m_F}")


@dataclass(frozen=True)
class ZeemanLine:
    eta: Fraction
    lower: HyperfineState
    upper: HyperfineState
    polarization: str
    label: str

    @property
    def delta_m(self) -> int:
        return self.upper.m_F - self.lower.m_F


class PredictedPeak(NamedTuple):
    label: str
    frequency: float
    eta: Fraction


def g_factor(F, I=NUCLEAR_SPIN, J=ELECTRON_J, S=ELECTRON_S, L=ELECTRON_L) -> Fraction:
    """Hyperfine Lande factor g_F in the approximate (g_s = 2) form.

    Arguments are converted to exact fractions, so half-integers may be
    given as floats or ``Fraction``.

    >>> g_factor(2)
    Fraction(1, 2)
    >>> g_factor(1)
    Fraction(-1, 2)
    """
    F, I, J, S, L = (Fraction(v).limit_denominator(4) for v in (F, I, J, S, L))
    if F <= 0:
        raise ValueError("g_factor is singular for F = 0")
    if J <= 0:
        raise ValueError("g_factor needs J > 0")
    if not (abs(I - J) <= F <= I + J and (F - abs(I - J)).denominator == 1):
        raise ValueError(f"F={F} is not reachable by coupling I={I} and J={J}")
    g_j = Fraction(3, 2) + (S * (S + 1) - L * (L + 1)) / (2 * J * (J + 1))
    return g_j * (F * (F + 1) - I * (I + 1) + J * (J + 1)) / (2 * F * (F + 1))


def zeeman_energy(state: HyperfineState, B: float, constants: PhysicalConstants = PhysicalConstants()) -> float:
    """Linear Zeeman shift of ``state`` in MHz for a field of ``B`` Gauss."""
    if B < 0:
        raise ValueError("field magnitude must be non-negative")
    return constants.zeeman_rate * float(g_factor(state.F)) * state.m_F * B


def line_eta(lower: HyperfineState, upper: HyperfineState) -> Fraction:
    # Shift of the carrier-minus-sideband difference frequency; the sign
    # convention makes m_F'=-1 -> m_F=-2 the +3/2 component.
    return g_factor(lower.F) * lower.m_F - g_factor(upper.F) * upper.m_F


_ROW_POLARIZATION = {-1: "sigma_minus", 0: "pi", 1: "sigma_plus"}
_ROW_TARGETS = {-1: (-2, -1, 0, 1), 0: (-2, -1, 0, 1, 2), 1: (-1, 0, 1, 2)}


def _table() -> list[ZeemanLine]:
    lines = []
    for m_lower, targets in _ROW_TARGETS.items():
        for m_upper in targets:
            lower, upper = HyperfineState(1, m_lower), HyperfineState(2, m_upper)
            eta = line_eta(lower, upper)
            lines.append(ZeemanLine(eta, lower, upper, _ROW_POLARIZATION[m_lower], ETA_LABEL[eta]))
    return lines


ALL_LINES = tuple(_table())


def enumerate_lines(mode: str = "all") -> list[ZeemanLine]:
    """Raman components visible under a polarization selection.

    ``all`` gives the 13 tabulated (m_F' -> m_F) components.  With purely
    sigma+ (sigma-) light only m_F' = +1 (-1) is populated and only the
    stretched component with eta = -1 (+1) survives.
    """
    if mode == "all":
        return list(ALL_LINES)
    if mode == "sigma_plus_only":
        return [ln for ln in ALL_LINES if ln.lower.m_F == 1 and ln.eta == -1]
    if mode == "sigma_minus_only":
        return [ln for ln in ALL_LINES if ln.lower.m_F == -1 and ln.eta == 1]
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def distinct_etas(mode: str = "all") -> list[Fraction]:
    """Distinct eta values of ``mode``, descending."""
    return sorted({ln.eta for ln in enumerate_lines(mode)}, reverse=True)


def predict_peaks(B: FieldVector, f_offset: float, mode: str = "all",
                  constants: PhysicalConstants = PhysicalConstants()) -> list[PredictedPeak]:
    """Peak frequencies (MHz) for field ``B``, sorted by descending eta.

    At zero field all components coincide and a single entry is returned,
    the one with the smallest |eta| in the selected mode.
    """
    if f_offset <= 0:
        raise ValueError("f_offset must be positive")
    etas = distinct_etas(mode)
    b = B.magnitude
    if b * constants.zeeman_rate < 1e-12:
        eta = min(etas, key=abs)
        return [PredictedPeak(ETA_LABEL[eta], f_offset, eta)]
    return [PredictedPeak(ETA_LABEL[e], float(e) * constants.zeeman_rate * b + f_offset, e) for e in etas]
