"""End-to-end experiment pipelines.

Each pipeline generates ground-truth photons block by block, passes them
through the detector chain, and streams the merged, quantised tags into
correlators (and optionally a TTAG file).  Only a few blocks are held in
memory at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import bell
from .correlate import (DelayHistogram, GateWindow, StreamingCorrelator, cw_g2_estimate,
                        fit_siegert, hom_visibility, pulsed_g2_estimate, sideband_normalization,
                        singles_normalization, visibility_curve)
from .detector import DetectorBack, detector_front, gate_mask
from .optics import (CoincidenceModelParams, coincidence_model, indistinguishability_vs_separation,
                     optimal_intensity_ratio, pulsed_hom_visibility, visibility_vs_bin,
                     zero_delay_visibility)
from .specs import (DEFAULT_DETECTOR, DEFAULT_M_EFF, DEFAULT_QD, DEFAULT_SUN, PS_PER_S,
                    DetectorChainSpec, PulsedSinglePhoton, ThermalCW)
from .synth import (STAGE_JITTER, BlockPlan, G1Product, InterferenceConfig, SortedFold,
                    SourceConfig, SynthConfig, Windows, run_blocks, substream, synth_block,
                    thermal_times)
from .tags import POL_H, POL_V, TagStream
from .ttag import TTAGWriter

HBT_OFFSET = 2  # HBT taps use channels 2/3

DEFAULT_BINS = (10, 20, 40, 60, 80, 100, 150, 200, 250, 300, 350, 400, 450, 500, 600, 700,
                800, 900, 1000)


# ------------------------------------------------------------ acquisition


def detected_block(cfg: SynthConfig, dets, channel_offset: int, b: int) -> list[TagStream]:
    """Synthesis plus the per-tag detector stages for block ``b``.

    One ground-truth block is passed through every detector in ``dets``
    (``None`` leaves it untouched); all views share the jitter stream.
    """
    stream = synth_block(cfg, b)
    if channel_offset:
        stream = stream.replace(channel=stream.channel + np.uint8(channel_offset))
    views = []
    for det in dets:
        if det is None:
            views.append(stream)
        else:
            rng = substream(cfg.seed, cfg.run_id, b, STAGE_JITTER)
            views.append(detector_front(stream, det, rng))
    return views


def jitter_margin(det: DetectorChainSpec | None) -> float:
    return 1e5 + (12.0 * det.jitter_sigma if det is not None else 0.0)


def acquire(cfg: SynthConfig, det: DetectorChainSpec | None, sinks, channel_offset: int = 0,
            extra_views=()) -> int:
    """Run a synthetic acquisition, feeding time-ordered chunks to ``sinks``.

    ``extra_views`` holds further (detector, sinks) pairs that see the same
    ground-truth photons.  Returns the number of tags recorded by ``det``.
    """
    plan = BlockPlan.for_config(cfg)
    views = [(det, sinks)] + list(extra_views)
    dets = [d for d, _ in views]
    folds = [SortedFold(jitter_margin(d)) for d in dets]
    backs = [DetectorBack(d if d is not None else DetectorChainSpec(
        jitter_sigma=0.0, gate_width=plan.period, gate_period=plan.period)) for d in dets]
    n = 0
    blocks = run_blocks(detected_block, (cfg, dets, channel_offset), plan.n_blocks,
                        cfg.shard_count)
    for b, block_views in enumerate(blocks):
        nxt = plan.span(b + 1)[0] if b + 1 < plan.n_blocks else None
        for v, (block, fold, back) in enumerate(zip(block_views, folds, backs)):
            chunk = back(fold.feed(block, nxt))
            if v == 0:
                n += len(chunk)
            for sink in views[v][1]:
                sink(chunk)
    return n


def gate_window(det: DetectorChainSpec) -> GateWindow | None:
    return GateWindow(det.gate_period, det.gate_phase) if det.gated else None


def thermal_windows(det: DetectorChainSpec) -> Windows | None:
    """Generation windows covering each gate plus the jitter tails."""
    if not det.gated:
        return None
    margin = 10.0 * det.jitter_sigma + 2.0 * det.tdc_resolution
    width = min(det.gate_width + 2 * margin, det.gate_period)
    return Windows(det.gate_period, det.gate_phase - margin, width)


# ------------------------------------------------------------------- HOM


@dataclass(frozen=True)
class HomSetup:
    qd: PulsedSinglePhoton = DEFAULT_QD
    sun: ThermalCW = DEFAULT_SUN
    detector: DetectorChainSpec = DEFAULT_DETECTOR
    m_eff: float = DEFAULT_M_EFF
    pair_rate_calibration: float = 1.0

    def model_params(self, bin_width: float = 10.0) -> CoincidenceModelParams:
        return CoincidenceModelParams.from_specs(self.qd, self.sun, self.detector, self.m_eff,
                                                 bin_width=bin_width,
                                                 pair_rate_calibration=self.pair_rate_calibration)


def hom_synth_config(setup: HomSetup, duration: float, seed: int, parallel: bool,
                     shard_count: int = 1, block_s: float = 1.0) -> SynthConfig:
    sun_pol = POL_H if parallel else POL_V
    g1 = G1Product("lorentzian", setup.qd.filter.fwhm, setup.sun.filter.fwhm)
    window = 5.0 * max(setup.qd.filter.coherence_time, setup.sun.filter.coherence_time)
    return SynthConfig(
        duration=duration, seed=seed, shard_count=shard_count, block_s=block_s,
        period=setup.qd.period,
        sources=(SourceConfig(setup.qd, 0, POL_H), SourceConfig(setup.sun, 1, sun_pol)),
        interference=InterferenceConfig(parallel, setup.m_eff, g1, window),
        thermal_windows=thermal_windows(setup.detector),
        run_id=0 if parallel else 1)


@dataclass
class ExperimentResult:
    summary: dict
    histograms: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # name -> (header, rows)


def run_hom(setup: HomSetup = HomSetup(), duration: float = 600.0, seed: int = 1,
            shard_count: int = 1, bins=DEFAULT_BINS, report_bin: float = 20.0,
            tau_max: float | None = None, ttag_paths: dict | None = None,
            block_s: float = 1.0) -> ExperimentResult:
    """QD/thermal HOM: parallel and cross-polarised acquisitions."""
    det = setup.detector
    tau_max = tau_max or (det.gate_width + 100.0 if det.gated else 2000.0)
    hists = {}
    for name, parallel in (("parallel", True), ("cross", False)):
        cfg = hom_synth_config(setup, duration, seed, parallel, shard_count, block_s)
        corr = StreamingCorrelator(0, 1, tau_max, det.tdc_resolution, gate=gate_window(det),
                                   resolution=det.tdc_resolution)
        sinks = [corr.feed]
        writer = None
        if ttag_paths and name in ttag_paths:
            writer = TTAGWriter(ttag_paths[name], det.tdc_resolution, 2)
            sinks.append(writer.write)
        try:
            acquire(cfg, det, sinks)
        finally:
            if writer is not None:
                writer.close()
        hists[name] = corr.result(float(duration))
    return ExperimentResult(hom_summary(hists["parallel"], hists["cross"], setup, bins, report_bin),
                            hists)


def hom_summary(hp: DelayHistogram, hx: DelayHistogram, setup: HomSetup, bins,
                report_bin: float = 20.0) -> dict:
    """Visibility report of a parallel/cross histogram pair (+ model overlay)."""
    k = singles_normalization(hp, hx)
    v, err = hom_visibility(hp, hx, report_bin, k)
    curve = visibility_curve(hp, hx, [b for b in bins if b >= hp.bin_width], k)
    t = hx.acquisition_s
    model = coincidence_model(setup.model_params())
    rates = {
        "central_10ps_cross_per_s": hx.central(10) / t,
        "central_10ps_parallel_per_s": hp.central(10) / t,
        "central_10ps_ratio": hp.central(10) / max(hx.central(10), 1),
        "singles_parallel_per_s": [s / t for s in hp.singles],
        "singles_cross_per_s": [s / t for s in hx.singles],
        "model_central_10ps_cross_per_s": model.bin_integral(10, "cross"),
        "model_central_10ps_parallel_per_s": model.bin_integral(10, "parallel"),
    }
    curve.rates = rates
    model_curve = visibility_vs_bin(setup.model_params(), curve.bins)
    return {"kind": "hom", "visibility": v, "stderr": err, "bin_ps": report_bin,
            "normalization": k, "rates": rates, "g2": None, "acquisition_s": t,
            "curve": curve.to_dict(),
            "model": {"visibility": model.visibility(report_bin),
                      "curve": [v for _, v in model_curve]}}


# ------------------------------------------------------------ g2 (HBT)


def run_g2_pulsed(qd: PulsedSinglePhoton = DEFAULT_QD, detector: DetectorChainSpec | None = None,
                  duration: float = 600.0, seed: int = 1, shard_count: int = 1,
                  bin_width: float = 10.0, block_s: float = 1.0) -> ExperimentResult:
    """HBT of the pulsed source: zero-peak over side-peak area."""
    det = detector or DEFAULT_DETECTOR.with_(gate_width=qd.period, gate_period=qd.period)
    cfg = SynthConfig(duration=duration, seed=seed, shard_count=shard_count, block_s=block_s,
                      period=qd.period, sources=(SourceConfig(qd, 0, POL_H),), run_id=2)
    corr = StreamingCorrelator(HBT_OFFSET, HBT_OFFSET + 1, 2.0 * qd.period, bin_width,
                               resolution=det.tdc_resolution)
    acquire(cfg, det, [corr.feed], HBT_OFFSET)
    h = corr.result(float(duration))
    g2, err = pulsed_g2_estimate(h, qd.period)
    return ExperimentResult({"kind": "g2_pulsed", "g2": g2, "stderr": err, "visibility": None,
                             "bin_ps": bin_width, "acquisition_s": h.acquisition_s,
                             "rates": {"singles_per_s": [s / h.acquisition_s for s in h.singles]}},
                            {"hbt": h})


def gate_suppression_estimate(sun: ThermalCW, det: DetectorChainSpec, duration: float,
                              seed: int) -> tuple[float, float, int, int]:
    """Ungated/gated count ratio of a thermal stream and its binomial error."""
    t = thermal_times(sun, 0.0, duration * PS_PER_S, substream(seed, 3, 0))
    n = t.size
    k = int(gate_mask(t, det.gate_width, det.gate_period, det.gate_phase).sum())
    if k == 0:
        raise ZeroDivisionError("no counts inside the gate")
    f = k / n
    return 1.0 / f, math.sqrt(f * (1 - f) / n) / f ** 2, n, k


def run_g2_cw(sun: ThermalCW = DEFAULT_SUN, detector: DetectorChainSpec = DEFAULT_DETECTOR,
              duration: float = 600.0, seed: int = 1, shard_count: int = 1,
              central_bin: float = 40.0, suppression_duration: float = 1.0,
              block_s: float = 1.0, control: bool = True) -> ExperimentResult:
    """Gated HBT of thermal light, plus a zero-jitter Siegert-fit control."""
    det = detector
    period = det.gate_period
    base_cfg = SynthConfig(duration=duration, seed=seed, shard_count=shard_count,
                           block_s=block_s, period=period,
                           sources=(SourceConfig(sun, 1, POL_H),),
                           thermal_windows=thermal_windows(det), run_id=4)
    tau_max = 1.5 * period if det.gated else 20.0 * sun.filter.coherence_time
    corr = StreamingCorrelator(HBT_OFFSET, HBT_OFFSET + 1, tau_max, det.tdc_resolution,
                               resolution=det.tdc_resolution)
    sinks = [corr.feed]
    control_corr = None
    if control:
        # Same photons, no timing jitter.
        control_corr = StreamingCorrelator(HBT_OFFSET, HBT_OFFSET + 1, tau_max, det.tdc_resolution,
                                           resolution=det.tdc_resolution)
    extra = [(det.with_(jitter_sigma=0.0), [control_corr.feed])] if control else []
    acquire(base_cfg, det, sinks, HBT_OFFSET, extra)
    h = corr.result(float(duration))
    if det.gated:
        baseline = [(-period - central_bin / 2, -period + central_bin / 2),
                    (period - central_bin / 2, period + central_bin / 2)]
    else:
        far = 10.0 * sun.filter.coherence_time
        baseline = [(-tau_max, -far), (far, tau_max)]
    g2, err = cw_g2_estimate(h, central_bin, baseline, sun.filter.coherence_time)
    summary = {"kind": "g2_cw", "g2": g2, "stderr": err, "visibility": None,
               "bin_ps": central_bin, "acquisition_s": h.acquisition_s,
               "rates": {"singles_per_s": [s / h.acquisition_s for s in h.singles]}}
    hists = {"hbt": h}
    if control:
        hc = control_corr.result(float(duration))
        fit = fit_siegert(hc, min(det.gate_width, 6.0 * sun.filter.coherence_time) - 1.0,
                          det.gate_width if det.gated else None, sun.filter.coherence_time)
        summary["zero_jitter_control"] = fit
        hists["hbt_zero_jitter"] = hc
    if det.gated and suppression_duration > 0:
        s, s_err, n, k = gate_suppression_estimate(sun, det, suppression_duration, seed)
        summary["gate_suppression"] = {"factor": s, "stderr": s_err, "ungated_counts": n,
                                       "gated_counts": k,
                                       "expected": det.gate_period / det.gate_width}
    return ExperimentResult(summary, hists)


# ---------------------------------------------------------------- QD-QD


def run_qd_qd_hom(qd: PulsedSinglePhoton = DEFAULT_QD, detector: DetectorChainSpec | None = None,
                  duration: float = 600.0, seed: int = 1, shard_count: int = 1,
                  block_s: float = 1.0) -> ExperimentResult:
    """HOM of photons from consecutive pulses (delay line of one period).

    Both inputs are modelled as independent copies of the source; the
    overlap is the indistinguishability at one period of separation.
    """
    det = detector or DEFAULT_DETECTOR.with_(gate_width=qd.period, gate_period=qd.period)
    m = float(indistinguishability_vs_separation(qd.period / 1e3, qd))
    hists = {}
    for name, parallel in (("parallel", True), ("cross", False)):
        cfg = SynthConfig(
            duration=duration, seed=seed, shard_count=shard_count, block_s=block_s,
            period=qd.period,
            sources=(SourceConfig(qd, 0, POL_H), SourceConfig(qd, 1, POL_H if parallel else POL_V)),
            interference=InterferenceConfig(parallel, m, G1Product("flat"), qd.period / 2),
            run_id=5 if parallel else 6)
        corr = StreamingCorrelator(0, 1, 2.5 * qd.period, 10.0, resolution=det.tdc_resolution)
        acquire(cfg, det, [corr.feed])
        hists[name] = corr.result(float(duration))
    hp, hx = hists["parallel"], hists["cross"]
    T = qd.period
    sidebands = [(-2.5 * T, -0.5 * T), (0.5 * T, 2.5 * T)]
    k = sideband_normalization(hp, hx, sidebands)
    v, err = hom_visibility(hp, hx, T, k)
    return ExperimentResult({"kind": "qd_qd_hom", "visibility": v, "stderr": err, "bin_ps": T,
                             "normalization": k, "mode_overlap": m, "g2": qd.g2_zero,
                             "acquisition_s": hx.acquisition_s,
                             "model": {"visibility": pulsed_hom_visibility(m, qd.g2_zero)},
                             "rates": {"central_peak_cross_per_s": hx.central(T) / hx.acquisition_s,
                                       "central_peak_parallel_per_s": hp.central(T) / hp.acquisition_s}},
                            hists)


# ------------------------------------------------------ analytic/derived


def run_ratio_scan(g2_a: float = DEFAULT_QD.g2_zero, g2_b: float = DEFAULT_SUN.g2_zero_target,
                   m_eff: float = DEFAULT_M_EFF, x_max: float = 0.5, points: int = 501) -> ExperimentResult:
    x = np.linspace(0.0, x_max, points)
    v = zero_delay_visibility(x, g2_a, g2_b, m_eff)
    i = int(np.argmax(v))
    rows = [(float(a), float(b)) for a, b in zip(x, v)]
    return ExperimentResult({"kind": "ratio_scan", "argmax_x": float(x[i]), "max_visibility": float(v[i]),
                             "optimal_x": optimal_intensity_ratio(g2_a, g2_b)},
                            tables={"ratio_scan": (("x", "visibility"), rows)})


def run_model_curves(setup: HomSetup = HomSetup(), tau_max: float = 1200.0,
                     bins=DEFAULT_BINS) -> ExperimentResult:
    model = coincidence_model(setup.model_params())
    tau = np.arange(-tau_max, tau_max + 1.0)
    dp = model.density(tau, "parallel")
    dx = model.density(tau, "cross")
    curve = visibility_vs_bin(setup.model_params(), bins)
    from .optics import classical_crossing
    return ExperimentResult(
        {"kind": "model_curves", "visibility_20ps": model.visibility(20.0),
         "central_10ps_ratio": model.bin_integral(10, "parallel") / model.bin_integral(10, "cross"),
         "crossing_ps": classical_crossing(curve), "qd_gate_fraction": model.qd_gate_fraction},
        tables={"model_curves": (("delay_ps", "parallel_per_s_per_ps", "cross_per_s_per_ps"),
                                 [(float(a), float(b), float(c)) for a, b, c in zip(tau, dp, dx)]),
                "model_visibility": (("bin_ps", "visibility"), [(float(b), float(v)) for b, v in curve])})


def run_entanglement(setup: HomSetup = HomSetup(), bin_width: float = 50.0,
                     target_fidelity: float | None = bell.REFERENCE_FIDELITY,
                     angles=bell.CHSH_ANGLES, pairs_per_setting: int | None = None,
                     seed: int = 1, with_chsh: bool = True,
                     target_stderr: float = 0.06) -> ExperimentResult:
    """Post-selected polarisation state from the coincidence model."""
    weights = coincidence_model(setup.model_params()).state_weights(bin_width)
    scale = 1.0
    if target_fidelity is not None:
        scale = bell.calibrate_contamination(weights, target_fidelity)
    rho = bell.build_postselected_state(weights, contamination_scale=scale)
    summary = {"kind": "chsh" if with_chsh else "entanglement", "bin_ps": bin_width,
               "weights": dict(zip(("w_qq", "w_ss", "w_x", "coherence"), weights)),
               "contamination_scale": scale,
               "fidelity": bell.fidelity(rho),
               "fidelity_from_correlations": bell.fidelity_from_correlations(rho),
               "basis_fractions": bell.basis_fractions(rho)}
    if with_chsh:
        summary.update(bell.chsh_report(rho, angles, pairs_per_setting, seed, target_stderr))
    return ExperimentResult(summary)
