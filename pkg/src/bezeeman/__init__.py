"""Zeeman-resolved stimulated Raman spectra of trapped 9Be+ ions: line
table, synthetic scans, peak fitting, coil calibration, closed-loop field
nulling and residual-field limits."""
from .analysis import extrapolate_power, field_upper_limit, gradient_upper_limit, propagate_delta_b
from .fieldfit import AxialFitResult, CoilCalibration, LabeledPoint, field_magnitude, fit_axial, fit_global
from .levels import FieldVector, enumerate_lines, predict_peaks
from .minimize import MinimizeConfig, run_minimization
from .peaks import PeakFit, assign_labels, detect_peaks
from .synth import BeamConfig, Environment, Scan, simulate_scan

__version__ = "0.1.0"
