import json
import subprocess
import sys

import numpy as np
import pytest

from bezeeman import io as bio
from bezeeman.cli import main
from bezeeman.fieldfit import CoilCalibration
from bezeeman.synth import REFERENCE_CURRENTS


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_line(err):
    line = err.strip().splitlines()[-1]
    return json.loads(line)


def test_no_subcommand_is_input_error(capsys):
    code, _, err = run(capsys)
    assert code == 1
    assert error_line(err)["exit"] == 1


def test_unknown_subcommand_and_bad_flag(capsys):
    code, _, err = run(capsys, "frobnicate")
    assert code == 1 and error_line(err)["error"] == "usage"
    code, _, err = run(capsys, "predict", "--currents", "1", "2")
    assert code == 1


def test_simulate_requires_seed(capsys):
    code, _, err = run(capsys, "simulate", "--currents", 0, 0, 0)
    assert code == 1
    assert "--seed" in error_line(err)["message"]


def test_predict_reference_currents(capsys):
    code, out, _ = run(capsys, "predict", "--currents", *REFERENCE_CURRENTS)
    assert code == 0
    data = json.loads(out)
    assert [data["b_x_g"], data["b_y_g"], data["b_z_g"]] == pytest.approx([-2.434, 0.008, 1.022], abs=1.5e-3)
    assert data["b_magnitude_sigma_g"] > 0
    assert [p["label"] for p in data["peaks"]] == ["H3", "H2", "H1", "C", "L1", "L2", "L3"]


def test_predict_rejects_axial(capsys):
    code, _, err = run(capsys, "predict", "--calibration", "published-axial", "--currents", 0, 0, 0)
    assert code == 1 and error_line(err)["error"] == "input"


def test_propagate_builtins(capsys):
    _, out, _ = run(capsys, "propagate", "published")
    assert round(json.loads(out)["delta_b_g"], 3) == 0.041
    _, out, _ = run(capsys, "propagate", "published-axial")
    data = json.loads(out)
    assert round(data["delta_b_g"], 3) == 0.031
    assert data["zero_currents_a"][:2] == [None, None]


def test_limits(capsys):
    code, out, _ = run(capsys, "limits", "--f-intercept", 1250.065, "--f-sigma", 0.013, "--min-fwhm", 40)
    data = json.loads(out)
    assert code == 0
    assert data["field_limit_g"] * 1e3 == pytest.approx(43, abs=0.5)
    assert data["gradient_limit_g"] * 1e3 == pytest.approx(29, abs=0.5)
    code, _, err = run(capsys, "limits", "--f-intercept", 1250.065)
    assert code == 1 and "--f-sigma" in error_line(err)["message"]


def test_missing_file_is_input_error(capsys, tmp_path):
    code, _, err = run(capsys, "fit-field", tmp_path / "nope.csv")
    assert code == 1 and error_line(err)["exit"] == 1


def test_format_error_reports_line(capsys, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("# ix_a=0\n# iy_a=0\n# iz_a=0\n# power_uw=1\nf,signal\n")
    code, _, err = run(capsys, "detect-peaks", bad)
    rec = error_line(err)
    assert code == 1 and rec["error"] == "format" and ":5:" in rec["message"]


def test_unidentifiable_fit_is_numerical_failure(capsys, tmp_path):
    pts = tmp_path / "p.csv"
    rows = [f"{ix},1.7,0.14,0.0,1250.{i},0.001" for i, ix in enumerate(np.linspace(-5, 5, 12))]
    pts.write_text(",".join(bio.POINTS_HEADER) + "\n" + "\n".join(rows) + "\n")
    code, _, err = run(capsys, "fit-field", pts, "--init", "published")
    rec = error_line(err)
    assert code == 2 and rec["error"] == "unidentifiable" and "k_x" in rec["message"]


def test_simulate_is_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert run(capsys, "simulate", "--currents", *REFERENCE_CURRENTS, "--seed", 4, "--out", path)[0] == 0
    assert a.read_bytes() == b.read_bytes()
    scan = bio.read_scan(a)
    assert scan.metadata["seed"] == "4"


def test_simulate_detect_fit_pipeline(capsys, tmp_path):
    from bezeeman.synth import calibration_settings

    scans = []
    for i, row in enumerate(np.vstack([v for v in calibration_settings(4).values()])):
        path = tmp_path / f"s{i}.csv"
        code, _, _ = run(capsys, "simulate", "--currents", *row, "--halfwidth", 9, "--seed", 100 + i,
                         "--out", path)
        assert code == 0
        scans.append(path)
    points, peaks = tmp_path / "points.csv", tmp_path / "peaks.jsonl"
    code, _, err = run(capsys, "detect-peaks", *scans, "--points-out", points, "--out", peaks)
    assert code == 0, err
    assert len(bio.read_peaks(peaks)) >= len(bio.read_points(points))
    cal_path = tmp_path / "cal.json"
    code, _, err = run(capsys, "fit-field", points, "--out", cal_path)
    assert code == 0, err
    cal = bio.read_calibration(cal_path)
    truth = CoilCalibration.published()
    sig = np.sqrt(np.diag(cal.covariance))[:6]
    assert np.all(np.abs(cal.params[:6] - truth.params[:6]) <= 4 * sig)
    # the tool parses its own outputs back
    code, out, _ = run(capsys, "predict", "--calibration", cal_path, "--currents", *REFERENCE_CURRENTS)
    assert code == 0 and json.loads(out)["b_magnitude_g"] == pytest.approx(2.64, abs=0.1)
    code, out, _ = run(capsys, "propagate", cal_path)
    assert code == 0 and json.loads(out)["delta_b_g"] > 0


def test_power_series_and_axial(capsys, tmp_path):
    from bezeeman.analysis import synthetic_power_series
    from bezeeman.fieldfit import AxialFitResult
    from bezeeman.synth import axial_settings, synthetic_points

    series = synthetic_power_series([6, 15, 30, 50, 70], 1250.065, 0.0021, 35.0, 2.7,
                                    center_sigma=0.010, fwhm_sigma=5.0, seed=0)
    path = tmp_path / "series.csv"
    bio.write_power_series(series, path)
    code, out, _ = run(capsys, "power-extrapolate", path)
    data = json.loads(out)
    assert code == 0 and abs(data["f_intercept_mhz"] - 1250.065) <= 3 * data["f_intercept_sigma_mhz"]
    code, out, _ = run(capsys, "limits", "--series", path)
    assert code == 0 and json.loads(out)["min_fwhm_khz"] == pytest.approx(np.min(series.fwhm))

    ax = AxialFitResult.published()
    pts = synthetic_points(lambda r: np.hypot(ax.k * (r[2] - ax.i0), ax.b_perp), axial_settings(),
                           1250.0, 0.005, 2, etas=(1.0, -1.0))
    ppath = tmp_path / "axial.csv"
    bio.write_points(pts, ppath)
    out_path = tmp_path / "axial.json"
    code, _, err = run(capsys, "fit-axial", ppath, "--out", out_path)
    assert code == 0, err
    code, out, _ = run(capsys, "propagate", out_path)
    assert code == 0 and json.loads(out)["zero_currents_a"][2] == pytest.approx(ax.i0, abs=0.01)


def test_minimize_subcommand(capsys, tmp_path):
    env = tmp_path / "env.cfg"
    env.write_text("ambient_x_g = 0.5\nambient_y_g = -0.3\nambient_z_g = 1.0\n")
    cfg = tmp_path / "min.cfg"
    cfg.write_text("rounds = 1\npower_schedule_uw = 70\nscan_halfwidth_mhz = 18\n")
    code, out, err = run(capsys, "minimize", "--env", env, "--config", cfg, "--seed", 0)
    assert code == 0, err
    data = json.loads(out)
    assert len(data["steps"]) == 3 and data["final_field_g"] < 0.2
    cfg.write_text("rounds = 1\nbogus = 2\n")
    code, _, err = run(capsys, "minimize", "--env", env, "--config", cfg, "--seed", 0)
    assert code == 1 and "bogus" in error_line(err)["message"]


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "bezeeman.cli", "propagate", "published"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert round(json.loads(proc.stdout)["delta_b_g"], 3) == 0.041
