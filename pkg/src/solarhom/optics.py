"""Closed-form coherence functions and the analytic coincidence model.

The coincidence model describes a pulsed single-photon source (input a)
and continuous chaotic light (input b) meeting on a 50/50 beam splitter,
with electrically gated detection and Gaussian timing jitter.  Densities
are returned in coincidences per second of acquisition per picosecond of
detector delay.

Three pair populations contribute to the delay histogram:

* ``x``: one photon from each source.  Flat in delay inside the gate
  support; in the parallel-polarisation case a fraction
  ``m_eff * |g1_a(tau) g1_b(tau)|`` of these coincidences is removed by
  two-photon interference.
* ``qq``: two photons of one source pulse (set by the pulsed g2).
* ``ss``: two thermal photons, bunched as ``1 + (g2_S - 1)|g1_S|^2``.

The sum is convolved with the two-detector jitter kernel.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np

from .specs import (
    DEFAULT_DETECTOR,
    DEFAULT_M_EFF,
    DEFAULT_QD,
    DEFAULT_SUN,
    DetectorChainSpec,
    PulsedSinglePhoton,
    SpectralFilter,
    ThermalCW,
)

CLASSICAL_LIMIT = 0.5


class UndefinedVisibilityError(ArithmeticError):
    """Raised when a visibility has a zero denominator."""


def lorentzian_g1(tau, filt: SpectralFilter):
    """|g1(tau)| of Lorentzian-filtered light: exp(-pi * fwhm * |tau|)."""
    tau = np.abs(np.asarray(tau, dtype=float))
    return np.exp(-math.pi * filt.fwhm * 1e-3 * tau)


def thermal_g2(tau, filt: SpectralFilter):
    """Siegert relation for chaotic light: 1 + |g1(tau)|^2."""
    return 1.0 + lorentzian_g1(tau, filt) ** 2


def indistinguishability_vs_separation(delta_t, spec: PulsedSinglePhoton = DEFAULT_QD):
    """Two-photon overlap M for emissions ``delta_t`` ns apart.

    Exponential relaxation from ``indist_initial`` at zero separation to
    ``indist_plateau`` over ``dephasing_time``.
    """
    delta_t = np.asarray(delta_t, dtype=float)
    if np.any(delta_t < 0):
        raise ValueError("delta_t must be >= 0")
    m_inf, m_0 = spec.indist_plateau, spec.indist_initial
    return m_inf + (m_0 - m_inf) * np.exp(-delta_t / spec.dephasing_time)


def zero_delay_visibility(x, g2_a: float, g2_b: float, m_eff: float):
    """Zero-delay HOM visibility versus intensity ratio ``x = rho_b / rho_a``.

    V(x) = 2 M x / (g2_a + 2 x + g2_b x^2); V(0) = 0.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("intensity ratio must be >= 0")
    with np.errstate(invalid="ignore", divide="ignore"):
        v = 2.0 * m_eff * x / (g2_a + 2.0 * x + g2_b * x * x)
    return np.where(x == 0, 0.0, v)


def optimal_intensity_ratio(g2_a: float, g2_b: float) -> float:
    """Argmax of :func:`zero_delay_visibility`: sqrt(g2_a / g2_b)."""
    return math.sqrt(g2_a / g2_b)


def gate_suppression_factor(gate_width: float, period: float) -> float:
    """Reduction of uncorrelated background by gating, period / width."""
    if not 0 < gate_width:
        raise ValueError("gate width must be > 0")
    if gate_width > period:
        raise ValueError(f"gate width {gate_width} ps exceeds period {period} ps")
    return period / gate_width


def pulsed_hom_visibility(m: float, g2: float) -> float:
    """Whole-peak raw visibility of two independent pulsed inputs.

    Each input emits two photons with probability g2 * mu^2 / 2 per pulse;
    the central-peak ratio then gives V = M / (1 + g2).
    """
    return m / (1.0 + g2)


@dataclass(frozen=True)
class CoincidenceModelParams:
    """Inputs of the analytic QD/thermal coincidence model.

    ``gate_start`` is the gate opening relative to the excitation pulse
    (ps).  ``pair_rate_calibration`` multiplies every density; visibilities
    do not depend on it.
    """

    source_a: PulsedSinglePhoton = field(default_factory=lambda: DEFAULT_QD)
    source_b: ThermalCW = field(default_factory=lambda: DEFAULT_SUN)
    m_eff: float = DEFAULT_M_EFF
    jitter_sigma: float = DEFAULT_DETECTOR.jitter_sigma
    gate_width: float = DEFAULT_DETECTOR.gate_width
    gate_period: float = DEFAULT_DETECTOR.gate_period
    gate_start: float = DEFAULT_DETECTOR.gate_phase - DEFAULT_QD.pulse_offset
    bin_width: float = 10.0
    tdc_resolution: float = 1.0
    pair_rate_calibration: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.m_eff <= 1.0:
            raise ValueError(f"m_eff must lie in [0, 1], got {self.m_eff}")
        if self.bin_width < self.tdc_resolution:
            raise ValueError("bin_width must be >= TDC resolution")
        if not 0 < self.gate_width <= self.gate_period:
            raise ValueError("need 0 < gate_width <= gate_period")

    @classmethod
    def from_specs(cls, qd: PulsedSinglePhoton, sun: ThermalCW,
                   detector: DetectorChainSpec, m_eff: float = DEFAULT_M_EFF,
                   **kw) -> "CoincidenceModelParams":
        return cls(source_a=qd, source_b=sun, m_eff=m_eff,
                   jitter_sigma=detector.jitter_sigma,
                   gate_width=detector.gate_width,
                   gate_period=detector.gate_period,
                   gate_start=detector.gate_phase - qd.pulse_offset,
                   tdc_resolution=detector.tdc_resolution, **kw)

    @property
    def gated(self) -> bool:
        return self.gate_width < self.gate_period


def jitter_kernel(sigma: float, step: float = 1.0) -> np.ndarray:
    """Discrete normal kernel (unit sum) on a grid of spacing ``step``."""
    if sigma <= 1e-6 * step:
        return np.ones(1)
    half = int(math.ceil(8.0 * sigma / step))
    x = np.arange(-half, half + 1) * step
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def convolve_jitter(density: np.ndarray, sigma: float, step: float = 1.0) -> np.ndarray:
    """Smear ``density`` (on a uniform grid) with a normal kernel."""
    k = jitter_kernel(sigma, step)
    if k.size == 1:
        return density.copy()
    return np.convolve(density, k, mode="same")


class CoincidenceModel:
    """Tabulated coincidence densities on a 1 ps delay grid.

    Build through :func:`coincidence_model` to reuse cached tables.
    """

    step = 1.0

    def __init__(self, params: CoincidenceModelParams):
        self.params = params
        p = params
        qd, sun = p.source_a, p.source_b
        pair_sigma = math.sqrt(2.0) * p.jitter_sigma
        pad = int(math.ceil(10.0 * pair_sigma)) + 16

        if p.gated:
            half = int(math.ceil(p.gate_width)) + pad
        else:
            half = int(math.ceil(8 * qd.envelope_cutoff * qd.wavepacket_width)) + pad
        self.tau = np.arange(-half, half + 1, dtype=float) * self.step

        # Intra-period axis (relative to the pulse) for envelope and gate.
        t_lo = min(0.0, p.gate_start) if p.gated else 0.0
        t_hi = max(qd.envelope_cutoff * qd.wavepacket_width,
                   p.gate_start + p.gate_width if p.gated else 0.0)
        s = np.arange(math.floor(t_lo), math.ceil(t_hi) + 1, dtype=float)
        tw = qd.wavepacket_width
        cdf_cut = 1.0 - math.exp(-qd.envelope_cutoff)
        lo_edge = np.clip(s, 0.0, qd.envelope_cutoff * tw)
        hi_edge = np.clip(s + 1.0, 0.0, qd.envelope_cutoff * tw)
        envelope = (np.exp(-lo_edge / tw) - np.exp(-hi_edge / tw)) / cdf_cut
        if p.gated:
            centre = s + 0.5
            gate = ((centre >= p.gate_start) & (centre < p.gate_start + p.gate_width)).astype(float)
        else:
            gate = np.ones_like(s)
        env_gated = envelope * gate
        self.qd_gate_fraction = float(env_gated.sum())

        lags = self.tau.astype(int)
        if p.gated:
            # Pi(lag): fraction of QD photons whose partner at +lag is in-gate.
            pi_full = _correlate_lags(gate, env_gated, lags)
            pi_sym = 0.5 * (pi_full + pi_full[::-1])
            overlap = _correlate_lags(gate, gate, lags) / p.gate_period
        else:
            pi_sym = np.full(lags.size, self.qd_gate_fraction)
            overlap = np.ones(lags.size)
        qq = _correlate_lags(env_gated, env_gated, lags)

        r_q = qd.rate
        rho_s = sun.mean_rate
        cal = p.pair_rate_calibration
        g1_b = lorentzian_g1(self.tau, sun.filter)
        g1_a = lorentzian_g1(self.tau, qd.filter)
        g2_s = 1.0 + (sun.g2_zero_target - 1.0) * g1_b ** 2

        self.raw = {
            "x": cal * 0.5 * r_q * rho_s * 1e-12 * pi_sym,
            "qq": cal * 0.25 * qd.g2_zero * r_q * r_q / qd.repetition_rate * qq,
            "ss": cal * 0.25 * rho_s * rho_s * 1e-12 * g2_s * overlap,
        }
        self.raw["interference"] = p.m_eff * g1_a * g1_b * self.raw["x"]
        self.components = {k: convolve_jitter(v, pair_sigma, self.step)
                           for k, v in self.raw.items()}
        c = self.components
        self.cross_density = c["x"] + c["qq"] + c["ss"]
        self.parallel_density = self.cross_density - c["interference"]
        self._cum = {}

    def density(self, tau, polarization: str = "cross"):
        d = self._table(polarization)
        return np.interp(np.asarray(tau, dtype=float), self.tau, d, left=0.0, right=0.0)

    def _table(self, name: str) -> np.ndarray:
        if name == "cross":
            return self.cross_density
        if name == "parallel":
            return self.parallel_density
        return self.components[name]

    def integral(self, lo: float, hi: float, name: str = "cross") -> float:
        """Trapezoidal integral of a density over [lo, hi] (ps)."""
        if name not in self._cum:
            d = self._table(name)
            cum = np.concatenate([[0.0], np.cumsum(0.5 * (d[1:] + d[:-1]) * self.step)])
            self._cum[name] = cum
        cum = self._cum[name]
        return float(np.interp(hi, self.tau, cum) - np.interp(lo, self.tau, cum))

    def bin_integral(self, bin_width: float, name: str = "cross") -> float:
        return self.integral(-bin_width / 2.0, bin_width / 2.0, name)

    def visibility(self, bin_width: float) -> float:
        cross = self.bin_integral(bin_width, "cross")
        if cross <= 0:
            raise UndefinedVisibilityError(f"no cross-polarised coincidences in a {bin_width} ps bin")
        return self.bin_integral(bin_width, "interference") / cross

    def state_weights(self, bin_width: float):
        """Bin-integrated pair weights (w_qq, w_ss, w_x, c) for post-selection.

        ``c`` is the jitter-averaged coherence of the cross-source pairs,
        i.e. the interfering fraction of ``w_x``.
        """
        w_x = self.bin_integral(bin_width, "x")
        w_qq = self.bin_integral(bin_width, "qq")
        w_ss = self.bin_integral(bin_width, "ss")
        c = self.bin_integral(bin_width, "interference") / w_x if w_x > 0 else 0.0
        return w_qq, w_ss, w_x, c


def _correlate_lags(a: np.ndarray, v: np.ndarray, lags: np.ndarray) -> np.ndarray:
    """out[i] = sum_n v[n] * a[n + lags[i]] (zero outside the arrays)."""
    full = np.correlate(a, v, mode="full")
    idx = lags + (v.size - 1)
    out = np.zeros(lags.size)
    ok = (idx >= 0) & (idx < full.size)
    out[ok] = full[idx[ok]]
    return out


@functools.lru_cache(maxsize=64)
def coincidence_model(params: CoincidenceModelParams) -> CoincidenceModel:
    return CoincidenceModel(params)


def coincidence_density(params: CoincidenceModelParams, tau, polarization: str = "cross"):
    """Analytic coincidence density (1/s per ps of delay).

    ``polarization`` is ``"cross"`` (distinguishable) or ``"parallel"``.
    """
    if polarization not in ("cross", "parallel"):
        raise ValueError(f"polarization must be 'cross' or 'parallel', got {polarization!r}")
    return coincidence_model(params).density(tau, polarization)


def visibility_vs_bin(params: CoincidenceModelParams, bin_widths) -> list[tuple[float, float]]:
    """Raw visibility of bins centred on zero delay, for each width."""
    bins = [float(b) for b in bin_widths]
    if any(b2 < b1 for b1, b2 in zip(bins, bins[1:])):
        raise ValueError("bin widths must be sorted ascending")
    model = coincidence_model(params)
    return [(b, model.visibility(b)) for b in bins]


def classical_crossing(curve) -> float | None:
    """Linearly interpolated bin width where a visibility curve drops below 0.5."""
    curve = list(curve)
    for (b0, v0), (b1, v1) in zip(curve, curve[1:]):
        if v0 >= CLASSICAL_LIMIT > v1:
            return b0 + (v0 - CLASSICAL_LIMIT) * (b1 - b0) / (v0 - v1)
    return None
