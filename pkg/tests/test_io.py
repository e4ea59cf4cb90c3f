import io
import json
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bezeeman import io as bio
from bezeeman.analysis import synthetic_power_series
from bezeeman.fieldfit import AxialFitResult, CoilCalibration, LabeledPoint, fit_global
from bezeeman.io import FormatError
from bezeeman.peaks import PeakFit
from bezeeman.synth import (
    REFERENCE_CURRENTS,
    BeamConfig,
    Environment,
    calibration_settings,
    frequency_grid,
    simulate_scan,
    synthetic_points,
)

PUBLISHED = CoilCalibration.published()


def write(tmp_path, text, name="scan.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


MINIMAL = """# ix_a=0.0
# iy_a=0.0
# iz_a=0.0
# power_uw=10.0
f_mod_mhz,signal,n_f,n_b
1249.9,0.01,,
1250.0,0.20,,
1250.1,0.35,,
1250.2,0.18,,
1250.3,0.02,,
"""


def test_minimal_scan_file(tmp_path):
    scan = bio.read_scan(write(tmp_path, MINIMAL))
    assert scan.f_mod.size == 5 and not scan.has_counts
    assert scan.power == 10.0 and scan.currents == (0.0, 0.0, 0.0)


@given(st.integers(0, 2**31), st.floats(-6, 6), st.booleans())
@settings(max_examples=20, deadline=None)
def test_scan_round_trip_bit_identical(seed, ix, noiseless):
    grid = frequency_grid(1250.0, 4.0, 0.037)
    scan = simulate_scan(Environment(), BeamConfig(power=33.3), (ix, 1.7, 0.14), grid, noise_seed=seed,
                         counts_per_point=None if noiseless else 1500)
    buf = io.StringIO()
    bio.write_scan(scan, buf)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "scan.csv"
        path.write_text(buf.getvalue())
        back = bio.read_scan(path)
    assert np.array_equal(back.f_mod, scan.f_mod)
    assert np.array_equal(back.signal, scan.signal)
    assert back.currents == scan.currents and back.power == scan.power
    if not noiseless:
        assert np.array_equal(back.n_f, scan.n_f) and np.array_equal(back.n_b, scan.n_b)
    assert back.metadata == {k: str(v) for k, v in scan.metadata.items()}


@pytest.mark.parametrize("text, line, match", [
    (MINIMAL.replace("f_mod_mhz,signal", "freq,signal"), 5, "expected header"),
    (MINIMAL.replace("# power_uw=10.0\n", ""), 1, "power_uw"),
    (MINIMAL.replace("1250.2,0.18", "1250.0,0.18"), 9, "strictly increasing"),
    (MINIMAL + "# late=1\n", 11, "comment after"),
    (MINIMAL.replace("1250.1,0.35,,", "1250.1,0.35,100,"), 8, "together"),
    (MINIMAL.replace("1250.1,0.35,,", "1250.1,0.35,100,91"), 8, "some rows only"),
    (MINIMAL.replace("1250.1,0.35", "1250.1,abc"), 8, "non-numeric"),
])
def test_scan_errors_are_distinct_and_located(tmp_path, text, line, match):
    with pytest.raises(FormatError, match=match) as info:
        bio.read_scan(write(tmp_path, text))
    assert info.value.line == line
    assert f":{line}:" in str(info.value)


def test_scan_counts_identity_violation(tmp_path):
    text = MINIMAL.replace(",,\n", ",110,100\n").replace("0.01,110", "0.1,110")
    text = text.replace("0.20,110", "0.1,110").replace("0.35,110", "0.1,110")
    text = text.replace("0.18,110", "0.1,110").replace("0.02,110", "0.1,110")
    bio.read_scan(write(tmp_path, text))
    bad = text.replace("1250.1,0.1,", "1250.1,0.2,")
    with pytest.raises(FormatError, match="inconsistent") as info:
        bio.read_scan(write(tmp_path, bad))
    assert info.value.line == 8


def test_missing_header(tmp_path):
    with pytest.raises(FormatError, match="missing header"):
        bio.read_scan(write(tmp_path, "# ix_a=0\n"))


def test_calibration_round_trip(tmp_path):
    pts = synthetic_points(lambda r: np.linalg.norm(PUBLISHED.field_array(r)),
                           np.vstack(list(calibration_settings(6).values())), 1250.0, 0.01, 0)
    cal = fit_global(pts)
    path = tmp_path / "cal.json"
    bio.write_calibration(cal, path)
    data = json.loads(path.read_text())
    assert data["schema"] == "calibration/v1" and len(data["covariance"]) == 49
    assert set(data["x"]) == {"k_g_per_a", "k_sigma", "i0_a", "i0_sigma"}
    back = bio.read_calibration(path)
    assert np.array_equal(back.params, cal.params)
    assert np.array_equal(back.covariance, cal.covariance)
    assert back.chi2_reduced == cal.chi2_reduced and back.n_points == cal.n_points
    assert isinstance(bio.read_fit_result(path), CoilCalibration)


def test_calibration_schema_checks(tmp_path):
    data = bio.calibration_to_dict(PUBLISHED)
    with pytest.raises(FormatError, match="schema"):
        bio.calibration_from_dict({**data, "schema": "v0"})
    with pytest.raises(FormatError, match="49"):
        bio.calibration_from_dict({**data, "covariance": [0.0] * 48})
    broken = dict(data)
    del broken["y"]
    with pytest.raises(FormatError, match="malformed"):
        bio.calibration_from_dict(broken)
    with pytest.raises(FormatError, match="invalid JSON") as info:
        bio.read_calibration(write(tmp_path, "{\n  oops\n}", "c.json"))
    assert info.value.line == 2


def test_axial_round_trip(tmp_path):
    ax = AxialFitResult.published()
    path = tmp_path / "ax.json"
    bio.write_json(bio.axial_to_dict(ax), path)
    back = bio.read_fit_result(path)
    assert isinstance(back, AxialFitResult)
    assert (back.k, back.i0, back.b_perp, back.axis) == (ax.k, ax.i0, ax.b_perp, ax.axis)


def test_points_round_trip(tmp_path):
    pts = [LabeledPoint((0.1, -2.0, 3.3), 1.5, 1254.2, 0.004), LabeledPoint((1, 2, 3), 0.0, 1250.0)]
    path = tmp_path / "p.csv"
    bio.write_points(pts, path)
    back = bio.read_points(path)
    assert back == pts


def test_points_bad_column_count(tmp_path):
    path = write(tmp_path, ",".join(bio.POINTS_HEADER) + "\n1,2,3,0.5,1250\n", "p.csv")
    with pytest.raises(FormatError, match="6 columns") as info:
        bio.read_points(path)
    assert info.value.line == 2


def test_peaks_round_trip(tmp_path):
    fits = [PeakFit(1250.1, 0.003, 240.0, 5.0, 0.3, 0.01, 1.1, label="C"),
            PeakFit(1251.0, 0.004, 250.0, 6.0, 0.2, 0.01, float("nan"))]
    buf = io.StringIO()
    bio.write_peaks(fits, buf, currents=REFERENCE_CURRENTS)
    for line in buf.getvalue().splitlines():
        assert json.loads(line)["currents_a"] == list(REFERENCE_CURRENTS)
    path = write(tmp_path, buf.getvalue(), "peaks.jsonl")
    back = bio.read_peaks(path)
    assert back[0] == fits[0]
    assert np.isnan(back[1].goodness) and back[1].label is None
    with pytest.raises(FormatError) as info:
        bio.read_peaks(write(tmp_path, buf.getvalue() + "{}\n", "bad.jsonl"))
    assert info.value.line == 3


def test_power_series_round_trip(tmp_path):
    series = synthetic_power_series([6, 15, 30, 50, 70], 1250.065, 0.0021, 35.0, 2.7,
                                    center_sigma=0.01, fwhm_sigma=5.0, seed=1)
    path = tmp_path / "s.csv"
    bio.write_power_series(series, path)
    back = bio.read_power_series(path)
    for name in ("power", "center", "fwhm", "center_sigma", "fwhm_sigma"):
        assert np.array_equal(getattr(back, name), getattr(series, name))


def test_power_series_partial_sigma(tmp_path):
    text = ",".join(bio.SERIES_HEADER) + "\n10,1250.1,0.01,40,\n20,1250.12,,50,\n"
    with pytest.raises(FormatError, match="partly"):
        bio.read_power_series(write(tmp_path, text, "s.csv"))


def test_config_parsing(tmp_path):
    text = "# environment\nambient_x_g = 0.5  # G\nambient_z_g=1.0\ngradient_g_per_mm = 0.01\n"
    env = bio.environment_from_config(bio.read_config(write(tmp_path, text, "env.cfg")))
    assert env.ambient_field.as_array().tolist() == [0.5, 0.0, 1.0]
    assert env.gradient == 0.01
    beam = bio.beam_from_config({"power_uw": "12", "polarization_mode": "sigma_plus_only"})
    assert beam.power == 12.0 and beam.polarization_mode == "sigma_plus_only"
    cfg = bio.minimize_from_config({"axis_order": "z, y, x", "rounds": "1", "power_schedule_uw": "40",
                                    "scan_halfwidth_mhz": "12"})
    assert cfg.axis_order == ("z", "y", "x") and cfg.rounds == 1


def test_config_errors(tmp_path):
    with pytest.raises(FormatError, match="unknown environment key"):
        bio.environment_from_config({"ambient_w_g": "1"})
    with pytest.raises(FormatError, match="unknown beam key"):
        bio.beam_from_config({"powr_uw": "1"})
    with pytest.raises(FormatError):
        bio.minimize_from_config({"rounds": "0"})
    with pytest.raises(FormatError) as info:
        bio.read_config(write(tmp_path, "a = 1\njust words\n", "x.cfg"))
    assert info.value.line == 2


def test_dumps_config_parses_back(tmp_path):
    text = bio.dumps_config({"axis_order": ("y", "x", "z"), "sweep_points": 5})
    cfg = bio.minimize_from_config(bio.read_config(write(tmp_path, text, "m.cfg")))
    assert cfg.axis_order == ("y", "x", "z") and cfg.sweep_points == 5
