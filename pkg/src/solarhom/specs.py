"""Source and detector parameter sets.

All times are picoseconds, rates are per second, spectral widths are GHz.
The module-level ``DEFAULT_*`` instances hold the quantum-dot / sunlight
configuration used throughout the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

FWHM_TO_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

PS_PER_S = 1e12


@dataclass(frozen=True)
class SpectralFilter:
    """Lorentzian filter; ``fwhm`` in GHz."""

    fwhm: float = 1.0

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ValueError(f"filter fwhm must be > 0 GHz, got {self.fwhm}")

    @property
    def coherence_time(self) -> float:
        """Field 1/e coherence time tau_c = 1/(pi * fwhm), in ps."""
        return 1.0 / (math.pi * self.fwhm * 1e-3)


@dataclass(frozen=True)
class PulsedSinglePhoton:
    """Pulsed single-photon emitter (the quantum dot).

    ``click_probability_per_pulse`` is the probability that a pulse yields
    at least one photon at the beam-splitter input.  Emission delays after
    each pulse follow a one-sided exponential envelope of 1/e width
    ``wavepacket_width`` (ps), truncated at ``envelope_cutoff`` widths.
    """

    repetition_rate: float = 7.6e7
    click_probability_per_pulse: float = 1.5e5 / 7.6e7
    g2_zero: float = 0.011
    filter: SpectralFilter = field(default_factory=SpectralFilter)
    wavepacket_width: float = 450.0
    indist_plateau: float = 0.952
    indist_initial: float = 0.952 + (0.974 - 0.952) * math.exp(13.0 / 100.0)
    dephasing_time: float = 100.0  # ns
    center_wavelength: float = 893.198  # nm, metadata
    pulse_offset: float = 1000.0
    envelope_cutoff: float = 5.0

    def __post_init__(self):
        if not self.repetition_rate > 0:
            raise ValueError("repetition_rate must be > 0")
        if not 0 < self.click_probability_per_pulse:
            raise ValueError("click_probability_per_pulse must be > 0")
        if self.g2_zero < 0:
            raise ValueError("g2_zero must be >= 0")
        if not 0 <= self.indist_plateau <= self.indist_initial <= 1:
            raise ValueError("need 0 <= indist_plateau <= indist_initial <= 1")
        if not self.wavepacket_width > 0:
            raise ValueError("wavepacket_width must be > 0")
        if self.envelope_cutoff * self.wavepacket_width >= self.period / 2:
            raise ValueError("wavepacket longer than half the pulse period")

    @property
    def period(self) -> float:
        return PS_PER_S / self.repetition_rate

    @property
    def two_photon_probability(self) -> float:
        """Per-pulse probability of a two-photon emission.

        Solves p2 = g2 * (p + p2)**2 / 2 so that the pulsed g2 estimator
        (zero-peak over side-peak area) converges exactly to ``g2_zero``.
        """
        p, g = self.click_probability_per_pulse, self.g2_zero
        if g == 0:
            return 0.0
        # g/2 * p2^2 + (g p - 1) p2 + g p^2 / 2 = 0, smaller root in the
        # cancellation-free form
        a, b, c = g / 2.0, g * p - 1.0, g * p * p / 2.0
        return 2 * c / (-b + math.sqrt(b * b - 4 * a * c))

    @property
    def mean_photons_per_pulse(self) -> float:
        return self.click_probability_per_pulse + self.two_photon_probability

    @property
    def rate(self) -> float:
        """Mean photon rate at the beam-splitter input (1/s)."""
        return self.mean_photons_per_pulse * self.repetition_rate


@dataclass(frozen=True)
class ThermalCW:
    """Continuous chaotic light with Lorentzian-filtered field statistics."""

    mean_rate: float = 2e5
    filter: SpectralFilter = field(default_factory=SpectralFilter)
    g2_zero_target: float = 2.0

    def __post_init__(self):
        if not self.mean_rate > 0:
            raise ValueError("mean_rate must be > 0")
        if self.g2_zero_target < 1:
            raise ValueError("g2_zero_target must be >= 1 for chaotic light")

    @property
    def rate(self) -> float:
        return self.mean_rate


@dataclass(frozen=True)
class DetectorChainSpec:
    """SNSPD + gate + time-to-digital converter.

    ``gate_phase`` is the absolute time (ps) of one gate opening; gates
    repeat every ``gate_period``.
    """

    jitter_sigma: float = 20.0 / FWHM_TO_SIGMA
    gate_width: float = 1000.0
    gate_period: float = PS_PER_S / 7.6e7
    gate_phase: float = 1000.0 + 450.0 - 500.0
    tdc_resolution: int = 1
    dead_time: float = 0.0

    def __post_init__(self):
        if self.tdc_resolution < 1 or int(self.tdc_resolution) != self.tdc_resolution:
            raise ValueError("tdc_resolution must be an integer >= 1 ps")
        if not 0 < self.gate_width <= self.gate_period:
            raise ValueError("need 0 < gate_width <= gate_period")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be >= 0")
        if self.dead_time < 0:
            raise ValueError("dead_time must be >= 0")

    @property
    def gated(self) -> bool:
        return self.gate_width < self.gate_period

    def with_(self, **kw) -> "DetectorChainSpec":
        return replace(self, **kw)


def centered_gate_phase(qd: PulsedSinglePhoton, gate_width: float) -> float:
    """Gate opening time that centres the gate on the mean QD emission time."""
    return (qd.pulse_offset + qd.wavepacket_width - gate_width / 2.0) % qd.period


def jitter_sigma_from_fwhm(fwhm: float) -> float:
    return fwhm / FWHM_TO_SIGMA


DEFAULT_FILTER = SpectralFilter(1.0)
DEFAULT_QD = PulsedSinglePhoton()
DEFAULT_SUN = ThermalCW()
DEFAULT_DETECTOR = DetectorChainSpec(gate_phase=centered_gate_phase(DEFAULT_QD, 1000.0))
# Fitted mode overlap for the QD/Sun pair; the residual dip is attributed
# mostly to multi-photon events, so the overlap sits close to unity.
DEFAULT_M_EFF = 0.99
