"""JSON experiment configuration.

Every physical quantity carries its unit in the field name.  Missing fields
take the quantum-dot / sunlight defaults; unknown fields are rejected with
their path so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import copy
import json
import math

from . import bell
from .experiments import DEFAULT_BINS, HomSetup
from .specs import (DEFAULT_M_EFF, DEFAULT_QD, DEFAULT_SUN, DetectorChainSpec,
                    PulsedSinglePhoton, SpectralFilter, ThermalCW, centered_gate_phase,
                    jitter_sigma_from_fwhm)

KINDS = ("hom", "g2_pulsed", "g2_cw", "qd_qd_hom", "entanglement", "chsh", "ratio_scan",
         "model_curves")

DEFAULTS = {
    "kind": "hom",
    "seed": None,
    "duration_s": 600.0,
    "shard_count": 1,
    "block_s": 1.0,
    "qd": {
        "repetition_rate_hz": DEFAULT_QD.repetition_rate,
        "click_rate_hz": 1.5e5,
        "g2_zero": DEFAULT_QD.g2_zero,
        "filter_fwhm_ghz": DEFAULT_QD.filter.fwhm,
        "wavepacket_width_ps": DEFAULT_QD.wavepacket_width,
        "indist_plateau": DEFAULT_QD.indist_plateau,
        "indist_initial": DEFAULT_QD.indist_initial,
        "dephasing_time_ns": DEFAULT_QD.dephasing_time,
        "center_wavelength_nm": DEFAULT_QD.center_wavelength,
        "pulse_offset_ps": DEFAULT_QD.pulse_offset,
        "envelope_cutoff_widths": DEFAULT_QD.envelope_cutoff,
    },
    "sun": {
        "mean_rate_hz": DEFAULT_SUN.mean_rate,
        "filter_fwhm_ghz": DEFAULT_SUN.filter.fwhm,
        "g2_zero_target": DEFAULT_SUN.g2_zero_target,
    },
    "detector": {
        "jitter_fwhm_ps": 20.0,
        "gate_width_ps": 1000.0,
        "gate_phase_ps": None,  # None: centred on the mean QD emission time
        "tdc_resolution_ps": 1,
        "dead_time_ps": 0.0,
    },
    "m_eff": DEFAULT_M_EFF,
    "pair_rate_calibration": 1.0,
    "bins_ps": list(DEFAULT_BINS),
    "report_bin_ps": 20.0,
    "central_bin_ps": 40.0,
    "histogram_bin_ps": 10.0,
    "suppression_duration_s": 1.0,
    "hbt_sun_rate_hz": 3.0e6,  # thermal rate into the HBT splitter (g2_cw)
    "entanglement_bin_ps": 50.0,
    "target_fidelity": bell.REFERENCE_FIDELITY,
    "analyzer_angles_rad": list(bell.CHSH_ANGLES),
    "pairs_per_setting": None,
    "target_stderr_S": 0.06,
    "ratio_g2_thermal": 1.94,  # measured thermal g2 used by the ratio scan
    "ratio_x_max": 0.5,
    "ratio_points": 501,
    "model_tau_max_ps": 1200.0,
    "write_ttag": False,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, user: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in user.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown field '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"field '{where}' must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def resolve(user: dict | None = None, seed: int | None = None,
            shard_count: int | None = None) -> dict:
    """Defaults + user document + command-line overrides, validated."""
    cfg = _merge(DEFAULTS, user or {})
    if seed is not None:
        cfg["seed"] = seed
    if shard_count is not None:
        cfg["shard_count"] = shard_count
    validate(cfg)
    return cfg


def load(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return doc


def _number(cfg, key, path, positive=False, nonneg=False, integer=False, optional=False):
    v = cfg[key]
    if v is None and optional:
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"field '{path}{key}' must be a finite number")
    if integer and int(v) != v:
        raise ConfigError(f"field '{path}{key}' must be an integer")
    if positive and not v > 0:
        raise ConfigError(f"field '{path}{key}' must be > 0")
    if nonneg and v < 0:
        raise ConfigError(f"field '{path}{key}' must be >= 0")


def validate(cfg: dict) -> None:
    if cfg["kind"] not in KINDS:
        raise ConfigError(f"field 'kind': unknown experiment kind {cfg['kind']!r}")
    if cfg["seed"] is None:
        raise ConfigError("field 'seed' is required (set it in the config or with --seed)")
    _number(cfg, "seed", "", nonneg=True, integer=True)
    _number(cfg, "duration_s", "", positive=True)
    _number(cfg, "shard_count", "", positive=True, integer=True)
    _number(cfg, "block_s", "", positive=True)
    for key in ("repetition_rate_hz", "click_rate_hz", "filter_fwhm_ghz", "wavepacket_width_ps",
                "dephasing_time_ns", "envelope_cutoff_widths"):
        _number(cfg["qd"], key, "qd.", positive=True)
    for key in ("g2_zero", "indist_plateau", "indist_initial", "pulse_offset_ps"):
        _number(cfg["qd"], key, "qd.", nonneg=True)
    for key in ("mean_rate_hz", "filter_fwhm_ghz", "g2_zero_target"):
        _number(cfg["sun"], key, "sun.", positive=True)
    _number(cfg, "hbt_sun_rate_hz", "", positive=True)
    d = cfg["detector"]
    _number(d, "jitter_fwhm_ps", "detector.", nonneg=True)
    _number(d, "gate_width_ps", "detector.", positive=True)
    _number(d, "gate_phase_ps", "detector.", nonneg=True, optional=True)
    _number(d, "tdc_resolution_ps", "detector.", positive=True, integer=True)
    _number(d, "dead_time_ps", "detector.", nonneg=True)
    for key in ("m_eff", "pair_rate_calibration", "report_bin_ps", "central_bin_ps",
                "histogram_bin_ps", "entanglement_bin_ps", "target_stderr_S", "ratio_x_max",
                "ratio_g2_thermal", "model_tau_max_ps"):
        _number(cfg, key, "", positive=key != "m_eff", nonneg=True)
    if not 0 <= cfg["m_eff"] <= 1:
        raise ConfigError("field 'm_eff' must lie in [0, 1]")
    _number(cfg, "suppression_duration_s", "", nonneg=True)
    _number(cfg, "ratio_points", "", positive=True, integer=True)
    _number(cfg, "pairs_per_setting", "", positive=True, optional=True)
    _number(cfg, "target_fidelity", "", positive=True, optional=True)
    bins = cfg["bins_ps"]
    if not isinstance(bins, list) or not bins:
        raise ConfigError("field 'bins_ps' must be a non-empty list")
    if any(b2 <= b1 for b1, b2 in zip(bins, bins[1:])):
        raise ConfigError("field 'bins_ps' must be strictly increasing")
    angles = cfg["analyzer_angles_rad"]
    if not isinstance(angles, list) or len(angles) != 4:
        raise ConfigError("field 'analyzer_angles_rad' must list four angles (a, a', b, b')")
    if not isinstance(cfg["write_ttag"], bool):
        raise ConfigError("field 'write_ttag' must be true or false")
    try:
        build(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def build(cfg: dict) -> dict:
    """Library objects for a resolved configuration."""
    q, s, d = cfg["qd"], cfg["sun"], cfg["detector"]
    qd = PulsedSinglePhoton(
        repetition_rate=q["repetition_rate_hz"],
        click_probability_per_pulse=q["click_rate_hz"] / q["repetition_rate_hz"],
        g2_zero=q["g2_zero"], filter=SpectralFilter(q["filter_fwhm_ghz"]),
        wavepacket_width=q["wavepacket_width_ps"], indist_plateau=q["indist_plateau"],
        indist_initial=q["indist_initial"], dephasing_time=q["dephasing_time_ns"],
        center_wavelength=q["center_wavelength_nm"], pulse_offset=q["pulse_offset_ps"],
        envelope_cutoff=q["envelope_cutoff_widths"])
    sun = ThermalCW(mean_rate=s["mean_rate_hz"], filter=SpectralFilter(s["filter_fwhm_ghz"]),
                    g2_zero_target=s["g2_zero_target"])
    width = min(float(d["gate_width_ps"]), qd.period)
    phase = d["gate_phase_ps"]
    det = DetectorChainSpec(
        jitter_sigma=jitter_sigma_from_fwhm(d["jitter_fwhm_ps"]), gate_width=width,
        gate_period=qd.period,
        gate_phase=centered_gate_phase(qd, width) if phase is None else float(phase),
        tdc_resolution=int(d["tdc_resolution_ps"]), dead_time=d["dead_time_ps"])
    setup = HomSetup(qd, sun, det, cfg["m_eff"], cfg["pair_rate_calibration"])
    hbt_sun = ThermalCW(mean_rate=cfg["hbt_sun_rate_hz"], filter=sun.filter,
                        g2_zero_target=sun.g2_zero_target)
    return {"qd": qd, "sun": sun, "hbt_sun": hbt_sun, "detector": det, "setup": setup}
