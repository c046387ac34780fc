"""Detector chain: timing jitter, gating, dead time and TDC quantisation.

The chain order is fixed: jitter -> gate -> dead time -> TDC.  Jitter and
gating act tag by tag, so they can run on independent blocks; dead time and
quantisation run on the merged, time-ordered stream.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .specs import DetectorChainSpec
from .synth import as_generator
from .tags import FLAG_CLAMPED, TagStream


def apply_jitter(stream: TagStream, sigma: float, rng) -> TagStream:
    """Add independent Gaussian timing noise and re-sort.

    Times pushed below zero are clamped to 0 and flagged.
    """
    if sigma < 0:
        raise ValueError("jitter sigma must be >= 0")
    if sigma == 0 or len(stream) == 0:
        return stream
    rng = as_generator(rng)
    t = stream.time + rng.normal(0.0, sigma, len(stream))
    flags = stream.flags
    neg = t < 0
    if neg.any():
        t[neg] = 0.0
        flags = flags.copy()
        flags[neg] |= FLAG_CLAMPED
    return stream.replace(time=t, flags=flags).sorted()


@numba.njit(cache=True)
def _gate_mask(time, width, period, phase, out):
    inv = 1.0 / period
    for i in range(time.size):
        x = time[i] - phase
        r = x - math.floor(x * inv) * period
        out[i] = r < width


def gate_mask(time: np.ndarray, width: float, period: float, phase: float) -> np.ndarray:
    """True for tags inside [phase + m*period, phase + m*period + width)."""
    time = np.asarray(time, dtype=np.float64)
    out = np.empty(time.size, dtype=np.bool_)
    _gate_mask(time, float(width), float(period), float(phase), out)
    return out


def apply_gate(stream: TagStream, width: float, period: float, phase: float) -> TagStream:
    if not 0 < width <= period:
        raise ValueError("need 0 < gate width <= gate period")
    if width == period:
        return stream
    return stream.take(gate_mask(stream.time, width, period, phase))


class DeadTime:
    """Per-channel non-paralyzable dead time with state carried across chunks."""

    def __init__(self, dead_time: float):
        if dead_time < 0:
            raise ValueError("dead time must be >= 0")
        self.dead_time = dead_time
        self.last: dict[int, float] = {}

    def __call__(self, stream: TagStream) -> TagStream:
        if self.dead_time == 0 or len(stream) == 0:
            return stream
        keep = np.zeros(len(stream), dtype=bool)
        for ch in np.unique(stream.channel):
            idx = np.flatnonzero(stream.channel == ch)
            last = self.last.get(int(ch), -np.inf)
            t = stream.time[idx]
            for k in range(idx.size):
                if t[k] - last >= self.dead_time:
                    keep[idx[k]] = True
                    last = t[k]
            self.last[int(ch)] = last
        return stream.take(keep)


def apply_dead_time(stream: TagStream, dead_time: float) -> TagStream:
    return DeadTime(dead_time)(stream)


def quantize_tdc(stream: TagStream, resolution: int) -> TagStream:
    """Floor times to integer multiples of ``resolution`` ps (int64)."""
    if resolution < 1 or int(resolution) != resolution:
        raise ValueError("TDC resolution must be an integer >= 1 ps")
    res = int(resolution)
    if stream.time.dtype.kind in "iu":
        t = (stream.time.astype(np.int64) // res) * res
    else:
        t = (np.floor(stream.time / res) * res).astype(np.int64)
    return stream.replace(time=t, resolution_ps=res)


def detector_front(stream: TagStream, det: DetectorChainSpec, rng) -> TagStream:
    """Per-tag stages (jitter, gate); safe to run on independent blocks."""
    out = apply_jitter(stream, det.jitter_sigma, rng)
    if det.gated:
        out = apply_gate(out, det.gate_width, det.gate_period, det.gate_phase)
    return out


class DetectorBack:
    """Sequential stages (dead time, TDC) over consecutive sorted chunks."""

    def __init__(self, det: DetectorChainSpec):
        self.det = det
        self.dead = DeadTime(det.dead_time)

    def __call__(self, stream: TagStream) -> TagStream:
        return quantize_tdc(self.dead(stream), self.det.tdc_resolution)


def apply_detector_chain(stream: TagStream, det: DetectorChainSpec, rng) -> TagStream:
    """Full chain on an in-memory stream."""
    return DetectorBack(det)(detector_front(stream, det, rng))
