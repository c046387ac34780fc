import math

import pytest

from solarhom.experiments import (HomSetup, run_g2_cw, run_g2_pulsed, run_hom, run_qd_qd_hom,
                                  run_ratio_scan)
from solarhom.optics import optimal_intensity_ratio
from solarhom.specs import DEFAULT_DETECTOR, DEFAULT_QD, DEFAULT_SUN, ThermalCW


def test_hom_summary_fields_and_model():
    setup = HomSetup(sun=ThermalCW(mean_rate=1e7, filter=DEFAULT_SUN.filter))
    s = run_hom(setup, duration=1.0, seed=4, block_s=0.25).summary
    assert s["kind"] == "hom" and s["acquisition_s"] == 1.0
    assert len(s["curve"]["visibility"]) == len(s["model"]["curve"])
    assert -1.0 <= s["visibility"] <= 1.0 and s["stderr"] > 0
    # singles: QD plus thermal counts inside the gate, split over two detectors
    assert s["rates"]["singles_cross_per_s"][0] > 0


def test_g2_cw_control_and_suppression():
    sun = ThermalCW(mean_rate=3e6, filter=DEFAULT_SUN.filter)
    s = run_g2_cw(sun, DEFAULT_DETECTOR, duration=2.0, seed=2, block_s=0.5).summary
    sup = s["gate_suppression"]
    assert abs(sup["factor"] - sup["expected"]) < 5 * sup["stderr"]
    assert s["zero_jitter_control"]["g2_zero"] > 1.3
    assert s["g2"] > 1.0


def test_g2_pulsed_is_antibunched():
    s = run_g2_pulsed(DEFAULT_QD, duration=1.0, seed=3).summary
    assert s["g2"] < 0.1 and s["stderr"] > 0


def test_qd_qd_matches_closed_form():
    s = run_qd_qd_hom(DEFAULT_QD, duration=2.0, seed=3).summary
    assert s["model"]["visibility"] == pytest.approx(s["mode_overlap"] / (1 + DEFAULT_QD.g2_zero))
    assert abs(s["visibility"] - s["model"]["visibility"]) < 5 * s["stderr"]


def test_ratio_scan_argmax_near_optimum():
    s = run_ratio_scan(0.011, 2.0, 0.99, 0.5, 5001).summary
    assert s["argmax_x"] == pytest.approx(optimal_intensity_ratio(0.011, 2.0), abs=1e-4)
    assert s["optimal_x"] == pytest.approx(math.sqrt(0.011 / 2.0))
