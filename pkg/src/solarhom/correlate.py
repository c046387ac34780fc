"""Coincidence histograms and the estimators built on them.

Delay is ``t_b - t_a``.  Bins are centred on multiples of the bin width by
default (bin k covers [(k - 1/2) w, (k + 1/2) w)); ``centered=False`` gives
[k w, (k + 1) w) instead.  Both are half-open.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import minimize

from .optics import CLASSICAL_LIMIT, UndefinedVisibilityError, classical_crossing
from .tags import TagStream


@numba.njit(cache=True, nogil=True)
def _xcorr(ta, tb, lo, bw, nbins, period, phase, same_gate, hist):
    """Two-cursor delay histogram of sorted ``ta`` against sorted ``tb``."""
    hi = lo + nbins * bw
    j0 = 0
    nb = tb.size
    for i in range(ta.size):
        a = ta[i]
        while j0 < nb and tb[j0] - a < lo:
            j0 += 1
        if same_gate:
            ga = math.floor((a - phase) / period)
        j = j0
        while j < nb:
            d = tb[j] - a
            if d >= hi:
                break
            k = int(math.floor((d - lo) / bw))
            if k >= nbins:
                k = nbins - 1
            if same_gate:
                if math.floor((tb[j] - phase) / period) == ga:
                    hist[k] += 1
            else:
                hist[k] += 1
            j += 1


@dataclass
class DelayHistogram:
    """Coincidence counts against delay ``t_b - t_a`` (ps)."""

    counts: np.ndarray
    bin_width: float
    lo: float
    channels: tuple = (0, 1)
    acquisition_s: float = 0.0
    singles: tuple = (0, 0)

    @property
    def edges(self) -> np.ndarray:
        return self.lo + self.bin_width * np.arange(self.counts.size + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.lo + self.bin_width * (np.arange(self.counts.size) + 0.5)

    def window(self, lo: float, hi: float) -> int:
        """Counts in bins whose centre lies in [lo, hi)."""
        c = self.centers
        return int(self.counts[(c >= lo) & (c < hi)].sum())

    def central(self, width: float, at: float = 0.0) -> int:
        """Counts within ``width`` centred on delay ``at``."""
        return self.window(at - width / 2.0, at + width / 2.0)

    def __add__(self, other: "DelayHistogram") -> "DelayHistogram":
        if other.bin_width != self.bin_width or other.lo != self.lo or other.counts.size != self.counts.size:
            raise ValueError("histograms have different binning")
        return DelayHistogram(self.counts + other.counts, self.bin_width, self.lo, self.channels,
                              self.acquisition_s + other.acquisition_s,
                              tuple(a + b for a, b in zip(self.singles, other.singles)))

    def rebin(self, factor: int) -> "DelayHistogram":
        n = self.counts.size // factor
        return DelayHistogram(self.counts[: n * factor].reshape(n, factor).sum(1),
                              self.bin_width * factor, self.lo, self.channels,
                              self.acquisition_s, self.singles)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["delay_ps", "counts"])
        for c, n in zip(self.centers, self.counts):
            w.writerow([f"{c:g}", int(n)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"bin_ps": self.bin_width, "delay_ps": self.centers.tolist(),
                "counts": self.counts.astype(int).tolist(), "channels": list(self.channels),
                "acquisition_s": self.acquisition_s, "singles": list(self.singles)}


def histogram_layout(tau_max: float, bin_width: float, centered: bool = True) -> tuple[float, int]:
    """(lowest edge, bin count) covering [-tau_max, tau_max]."""
    n_half = int(math.ceil(tau_max / bin_width))
    if centered:
        return -(n_half + 0.5) * bin_width, 2 * n_half + 1
    return -n_half * bin_width, 2 * n_half


@dataclass(frozen=True)
class GateWindow:
    period: float
    phase: float


def _check(bin_width, tau_max, resolution):
    if bin_width < resolution:
        raise ValueError(f"bin width {bin_width} ps is finer than the TDC resolution {resolution} ps")
    if not tau_max > 0:
        raise ValueError("tau_max must be > 0")


def cross_correlate(stream: TagStream, channel_a: int, channel_b: int, tau_max: float,
                    bin_width: float, *, centered: bool = True,
                    gate: GateWindow | None = None) -> DelayHistogram:
    """Histogram of t_b - t_a over all pairs with |delay| <= tau_max.

    With ``gate``, only pairs inside the same gate period count.
    """
    _check(bin_width, tau_max, stream.resolution_ps)
    if channel_a == channel_b:
        raise ValueError("auto-correlation is not supported; use two channels")
    lo, n = histogram_layout(tau_max, bin_width, centered)
    ta = stream.time[stream.channel == channel_a].astype(np.float64)
    tb = stream.time[stream.channel == channel_b].astype(np.float64)
    hist = np.zeros(n, dtype=np.int64)
    _xcorr(ta, tb, lo, float(bin_width), n, gate.period if gate else 1.0,
           gate.phase if gate else 0.0, gate is not None, hist)
    return DelayHistogram(hist, float(bin_width), lo, (channel_a, channel_b),
                          stream.duration_ps / 1e12, (ta.size, tb.size))


class StreamingCorrelator:
    """Incremental :func:`cross_correlate` over consecutive sorted chunks.

    Memory is bounded by one chunk plus ``tau_max`` of carried tags.
    """

    def __init__(self, channel_a: int, channel_b: int, tau_max: float, bin_width: float,
                 *, centered: bool = True, gate: GateWindow | None = None, resolution: int = 1):
        _check(bin_width, tau_max, resolution)
        self.ch = (channel_a, channel_b)
        self.bw = float(bin_width)
        self.lo, self.n = histogram_layout(tau_max, bin_width, centered)
        self.hi = self.lo + self.n * self.bw
        self.gate = gate
        self.hist = np.zeros(self.n, dtype=np.int64)
        self.carry_a = np.empty(0)
        self.carry_b = np.empty(0)
        self.singles = [0, 0]
        self.last = -np.inf

    def feed(self, stream: TagStream) -> None:
        if len(stream) == 0:
            return
        t = stream.time
        if t[0] < self.last:
            raise ValueError("chunks must arrive in time order")
        self.last = float(t[-1])
        new_a = t[stream.channel == self.ch[0]].astype(np.float64)
        new_b = t[stream.channel == self.ch[1]].astype(np.float64)
        self.singles[0] += new_a.size
        self.singles[1] += new_b.size
        g = self.gate
        args = (self.lo, self.bw, self.n, g.period if g else 1.0, g.phase if g else 0.0, g is not None,
                self.hist)
        # new a against carried + new b, then carried a against new b
        _xcorr(new_a, np.concatenate([self.carry_b, new_b]), *args)
        _xcorr(self.carry_a, new_b, *args)
        # any future b lies at or after self.last, future a likewise
        self.carry_a = _tail(np.concatenate([self.carry_a, new_a]), self.last - self.hi)
        self.carry_b = _tail(np.concatenate([self.carry_b, new_b]), self.last + self.lo)

    def result(self, acquisition_s: float = 0.0) -> DelayHistogram:
        return DelayHistogram(self.hist.copy(), self.bw, self.lo, self.ch, acquisition_s,
                              tuple(self.singles))


def _tail(t: np.ndarray, cut: float) -> np.ndarray:
    return t[np.searchsorted(t, cut, side="left"):]


# ------------------------------------------------------------- estimators


def pulsed_g2_estimate(hist: DelayHistogram, period: float) -> tuple[float, float]:
    """Zero-delay peak area over the mean of the two neighbouring peaks."""
    if hist.lo > -1.5 * period or hist.edges[-1] < 1.5 * period:
        raise ValueError("histogram must span at least +-1.5 periods")
    a0 = hist.window(-period / 2, period / 2)
    side = hist.window(-1.5 * period, -period / 2) + hist.window(period / 2, 1.5 * period)
    if side == 0:
        raise UndefinedVisibilityError("no coincidences in the side peaks")
    g2 = 2.0 * a0 / side
    err = 2.0 * math.sqrt(max(a0, 1)) / side if a0 == 0 else g2 * math.sqrt(1 / a0 + 1 / side)
    return g2, err


def cw_g2_estimate(hist: DelayHistogram, central_bin: float, baseline,
                   coherence_time: float | None = None) -> tuple[float, float]:
    """Counts per ps around zero delay over counts per ps in ``baseline``.

    ``baseline`` is a list of (lo, hi) delay ranges.
    """
    if coherence_time is not None:
        for lo, hi in baseline:
            if min(abs(lo), abs(hi)) < 5 * coherence_time and lo * hi > 0:
                raise ValueError("baseline overlaps the bunching peak")
            if lo < 0 < hi:
                raise ValueError("baseline overlaps the bunching peak")
    c0 = hist.central(central_bin)
    width = sum(hi - lo for lo, hi in baseline)
    cb = sum(hist.window(lo, hi) for lo, hi in baseline)
    if cb == 0:
        raise UndefinedVisibilityError("empty baseline")
    g2 = (c0 / central_bin) / (cb / width)
    err = g2 * math.sqrt(1 / max(c0, 1) + 1 / cb)
    return g2, err


def _siegert(tau, b, amp, tau_c, gate_width):
    tri = np.clip(1.0 - np.abs(tau) / gate_width, 0.0, None) if gate_width else 1.0
    return b * tri * (1.0 + amp * np.exp(-2.0 * np.abs(tau) / tau_c))


def fit_siegert(hist: DelayHistogram, fit_range: float, gate_width: float | None = None,
                tau_c0: float = 300.0) -> dict:
    """Fit B * Lambda(tau) * (1 + A exp(-2|tau|/tau_c)) near zero delay.

    ``Lambda`` is the same-gate overlap triangle (1 when ungated).  The fit
    maximises the Poisson likelihood, so sparse bins are not biased; errors
    come from the Fisher information.  Returns g2(0) = 1 + A and tau_c.
    """
    c = hist.centers
    m = np.abs(c) <= fit_range
    x, y = c[m], hist.counts[m].astype(float)
    if y.sum() == 0:
        raise UndefinedVisibilityError("no coincidences in the fit range")

    def model(p):
        return _siegert(x, p[0], p[1], p[2], gate_width)

    def nll(p):
        mu = np.maximum(model(p), 1e-300)
        return float(np.sum(mu - y * np.log(mu)))

    tri = np.clip(1.0 - np.abs(x) / gate_width, 0.0, None) if gate_width else np.ones_like(x)
    b0 = y.sum() / max(np.sum(tri * (1.0 + np.exp(-2.0 * np.abs(x) / tau_c0))), 1e-300)
    res = minimize(nll, np.array([b0, 1.0, tau_c0]), method="Nelder-Mead",
                   options={"xatol": 1e-6, "fatol": 1e-9, "maxiter": 20000, "maxfev": 20000})
    p = res.x
    mu = np.maximum(model(p), 1e-300)
    jac = np.empty((x.size, 3))
    for i in range(3):
        h = 1e-6 * max(abs(p[i]), 1.0)
        dp = np.zeros(3)
        dp[i] = h
        jac[:, i] = (model(p + dp) - model(p - dp)) / (2 * h)
    cov = np.linalg.inv(jac.T @ (jac / mu[:, None]))
    err = np.sqrt(np.diag(cov))
    return {"g2_zero": float(1.0 + p[1]), "g2_zero_err": float(err[1]), "tau_c": float(p[2]),
            "tau_c_err": float(err[2]), "baseline": float(p[0])}


# ------------------------------------------------------------- visibility


def singles_normalization(hist_par: DelayHistogram, hist_cross: DelayHistogram) -> float:
    """Scale for parallel counts so both configurations see equal singles products."""
    p = hist_par.singles[0] * hist_par.singles[1] / max(hist_par.acquisition_s, 1e-300) ** 2
    x = hist_cross.singles[0] * hist_cross.singles[1] / max(hist_cross.acquisition_s, 1e-300) ** 2
    if p == 0:
        raise UndefinedVisibilityError("no singles in the parallel run")
    t_ratio = hist_cross.acquisition_s / hist_par.acquisition_s
    return x / p * t_ratio


def sideband_normalization(hist_par: DelayHistogram, hist_cross: DelayHistogram, sidebands) -> float:
    """Scale from delay ranges where no interference is expected."""
    p = sum(hist_par.window(lo, hi) for lo, hi in sidebands)
    x = sum(hist_cross.window(lo, hi) for lo, hi in sidebands)
    if p == 0:
        raise UndefinedVisibilityError("empty parallel sidebands")
    return x / p


def hom_visibility(hist_par: DelayHistogram, hist_cross: DelayHistogram, bin_width: float,
                   normalization: float = 1.0) -> tuple[float, float]:
    """V = 1 - k C_par / C_cross in a central window of ``bin_width``.

    ``k`` rescales the parallel run to the cross run (see
    :func:`singles_normalization`, :func:`sideband_normalization`).
    """
    if bin_width < hist_par.bin_width:
        raise ValueError("analysis window narrower than the histogram bin")
    cp = hist_par.central(bin_width)
    cx = hist_cross.central(bin_width)
    if cx == 0:
        raise UndefinedVisibilityError(f"no cross-polarised coincidences within {bin_width} ps")
    ratio = normalization * cp / cx
    # Poisson errors; an empty parallel window still carries one count of uncertainty
    err = normalization / cx * math.sqrt(max(cp, 1) + cp * cp / cx)
    return 1.0 - ratio, err


@dataclass
class VisibilityReport:
    bins: list
    visibility: list
    stderr: list
    classical_limit: float = CLASSICAL_LIMIT
    crossing: float | None = None
    rates: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"bin_ps": self.bins, "visibility": self.visibility, "stderr": self.stderr,
                "classical_limit": self.classical_limit, "crossing_ps": self.crossing,
                "rates": self.rates}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_ps", "visibility", "stderr"])
        for b, v, e in zip(self.bins, self.visibility, self.stderr):
            w.writerow([f"{b:g}", f"{v:.6f}", f"{e:.6f}"])
        return buf.getvalue()


def visibility_curve(hist_par: DelayHistogram, hist_cross: DelayHistogram, bins,
                     normalization: float = 1.0) -> VisibilityReport:
    bins = [float(b) for b in bins]
    if any(b2 <= b1 for b1, b2 in zip(bins, bins[1:])):
        raise ValueError("bin widths must increase")
    vs, es = [], []
    for b in bins:
        v, e = hom_visibility(hist_par, hist_cross, b, normalization)
        vs.append(v)
        es.append(e)
    return VisibilityReport(bins, vs, es, crossing=classical_crossing(list(zip(bins, vs))))


def dumps_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
