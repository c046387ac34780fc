"""Monte Carlo photon-event synthesis.

Thermal light is a Cox process: a complex Ornstein-Uhlenbeck field with
correlation exp(-|tau|/tau_c) modulates the photon intensity |E|^2.  The
production sampler thins a dominating Poisson process whose rate is
``INTENSITY_CAP`` times the mean rate, but only materialises candidates
that matter: a candidate more than ``CHAIN_GAP`` coherence times from its
predecessor sees a fresh (stationary) field, so isolated candidates are
accepted with their marginal probability and runs of rejected ones are
skipped in bulk.  Close candidates ("chains") get the exact AR(1) field
transition at their real time separation.  A fixed-step grid sampler is
kept as an independent reference.

The pulsed source emits at most two photons per pulse with one-sided
exponential emission delays.

Long acquisitions are cut into fixed blocks of pulse periods.  Every block
draws from its own seed sequence keyed by (seed, block, stage), so output
does not depend on how blocks are spread over worker processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.signal import lfilter

from .specs import PS_PER_S, PulsedSinglePhoton, ThermalCW
from .tags import POL_NONE, TagStream, concat, merge

INTENSITY_CAP = 15.0  # thinning bound in units of the mean intensity
CHAIN_GAP = 10.0  # coherence times beyond which the field is re-drawn
DEFAULT_DT_FRACTION = 1.0 / 50.0
MAX_DT_FRACTION = 1.0 / 20.0

STAGE_SOURCE, STAGE_ROUTE, STAGE_VETO, STAGE_JITTER, STAGE_DARK = 0, 1, 2, 3, 4
DARK_ORIGIN = 0xFFFF


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key...)."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return substream(int(rng))


# ---------------------------------------------------------------- thermal


@dataclass(frozen=True)
class Windows:
    """Periodic acquisition windows [start + m*period, ... + width)."""

    period: float
    start: float
    width: float

    def __post_init__(self):
        if not 0 < self.width <= self.period:
            raise ValueError("window width must be in (0, period]")


@numba.njit(cache=True)
def _to_real(v, t0, w_period, w_start, w_width, first, windowed):
    if not windowed:
        return t0 + v
    m = math.floor(v / w_width)
    return (first + m) * w_period + w_start + (v - m * w_width)


RESERVE = 1 << 14  # uniforms kept back so a chain never runs off the buffer
U_BATCH = 1 << 22
U_FIRST = 1 << 16  # first batch; later batches double up to U_BATCH


@numba.njit(cache=True)
def _thermal_chain_kernel(u, pos, rate_ps, tau_c, length, t0, w_period, w_start, w_width, first,
                          windowed, out):
    """Walk relevant candidate chains from virtual position ``pos``.

    Consumes uniforms from ``u`` and writes photon times to ``out``; stops
    between chains when either buffer is nearly used up.  Returns
    (photons written, new position, finished).
    """
    K = INTENSITY_CAP
    lam = K * rate_ps / (-math.expm1(-K))
    G = CHAIN_GAP * tau_c
    q = -math.expm1(-lam * G)
    p_single = -math.expm1(-K) / K
    r = q + (1.0 - q) * p_single
    p_multi = q / r
    log_miss = math.log1p(-r)
    log_cont = math.log(q)
    limit = u.size - RESERVE
    i = 0
    n_out = 0
    cap = out.size - RESERVE
    while i < limit and n_out < cap:
        # number of chains up to and including the next relevant one
        n = 1 + int(math.floor(math.log1p(-u[i]) / log_miss))
        i += 1
        if n > RESERVE // 2:
            raise RuntimeError("candidate run longer than the uniform reserve")
        # sum of n exponential gaps via a product of uniforms
        gap = 0.0
        prod = 1.0
        for _ in range(n):
            prod *= 1.0 - u[i]
            i += 1
            if prod < 1e-280:
                gap -= math.log(prod)
                prod = 1.0
        gap -= math.log(prod)
        v = pos + n * G + gap / lam
        if v >= length:
            return n_out, v, True
        if u[i] >= p_multi:
            # isolated candidate, accepted with its marginal probability
            i += 1
            out[n_out] = _to_real(v, t0, w_period, w_start, w_width, first, windowed)
            n_out += 1
            pos = v
            continue
        # chain length: 1 + geometric(1 - q)
        size = 2 + int(math.floor(math.log1p(-u[i + 1]) / log_cont))
        i += 2
        if 4 * size > RESERVE // 2:
            raise RuntimeError("candidate chain longer than the uniform reserve; rate * tau_c too high")
        rt = _to_real(v, t0, w_period, w_start, w_width, first, windowed)
        er = 0.0
        ei = 0.0
        for k in range(size):
            a = 0.0
            if k > 0:
                v += -math.log1p(-u[i] * q) / lam
                i += 1
                rt_new = _to_real(v, t0, w_period, w_start, w_width, first, windowed)
                a = math.exp(-(rt_new - rt) / tau_c)
                rt = rt_new
            # complex normal innovation (Box-Muller)
            rad = math.sqrt(-math.log1p(-u[i]) * (1.0 - a * a))
            phi = 2.0 * math.pi * u[i + 1]
            er = a * er + rad * math.cos(phi)
            ei = a * ei + rad * math.sin(phi)
            accept = u[i + 2] * K < er * er + ei * ei
            i += 3
            if accept and v < length:
                out[n_out] = rt
                n_out += 1
        pos = v
    return n_out, pos, pos >= length


def _thermal_exact(rate_ps: float, tau_c: float, length: float, rng: np.random.Generator,
                   t0: float = 0.0, windows: "Windows | None" = None, first: int = 0) -> np.ndarray:
    """Photon times of a thermal Cox process on a virtual axis [0, length)."""
    if length <= 0:
        return np.empty(0)
    w = windows or Windows(1.0, 0.0, 1.0)
    pos = -CHAIN_GAP * tau_c
    parts = []
    size = U_FIRST
    while True:
        u = rng.random(size)
        out = np.empty(size // 4 + RESERVE)
        size = min(2 * size, U_BATCH)
        n, pos, done = _thermal_chain_kernel(u, pos, rate_ps, tau_c, float(length), float(t0),
                                             w.period, w.start, w.width, first,
                                             windows is not None, out)
        parts.append(out[:n].copy())
        if done:
            break
    return np.concatenate(parts)


def _thermal_grid(rate_ps: float, tau_c: float, t0: float, length: float, dt: float,
                  rng: np.random.Generator, chunk: int = 1 << 22) -> np.ndarray:
    """Reference sampler: OU field on a fixed grid, Poisson counts per step."""
    if dt > MAX_DT_FRACTION * tau_c:
        raise ValueError(f"dt={dt} ps exceeds tau_c/20 = {tau_c / 20:.3f} ps")
    n_steps = int(math.ceil(length / dt))
    a = math.exp(-dt / tau_c)
    b = math.sqrt(1.0 - a * a)
    state = (rng.standard_normal() + 1j * rng.standard_normal()) / math.sqrt(2.0)
    out = []
    done = 0
    while done < n_steps:
        k = min(chunk, n_steps - done)
        xi = (rng.standard_normal(k) + 1j * rng.standard_normal(k)) / math.sqrt(2.0)
        field_, zf = lfilter([b], [1.0, -a], xi, zi=np.array([a * state]))
        state = field_[-1]
        counts = rng.poisson(rate_ps * dt * np.abs(field_) ** 2)
        steps = np.repeat(np.arange(done, done + k), counts)
        out.append(t0 + (steps + rng.random(steps.size)) * dt)
        done += k
    t = np.concatenate(out) if out else np.empty(0)
    return np.sort(t[t < t0 + length])


def thermal_times(spec: ThermalCW, t0: float, t1: float, rng, windows: Windows | None = None,
                  method: str = "exact", dt: float | None = None) -> np.ndarray:
    """Thermal photon times in [t0, t1) ps, optionally only inside windows.

    With ``windows``, the windows whose index m satisfies
    t0 <= m*period < t1 are filled.
    """
    rng = as_generator(rng)
    tau_c = spec.filter.coherence_time
    rate_ps = spec.mean_rate / PS_PER_S
    if method == "grid":
        if windows is not None:
            raise ValueError("grid sampler does not support windows")
        return _thermal_grid(rate_ps, tau_c, t0, t1 - t0,
                             DEFAULT_DT_FRACTION * tau_c if dt is None else dt, rng)
    if method != "exact":
        raise ValueError(f"unknown thermal sampler {method!r}")
    if windows is None:
        return _thermal_exact(rate_ps, tau_c, t1 - t0, rng, t0)
    first = int(math.ceil(t0 / windows.period - 1e-9))
    last = int(math.ceil(t1 / windows.period - 1e-9))
    n_win = max(last - first, 0)
    return _thermal_exact(rate_ps, tau_c, n_win * windows.width, rng, 0.0, windows, first)


def gen_thermal_tags(spec: ThermalCW, duration: float, seed: int, *, source_id: int = 1,
                     polarization: int = POL_NONE, method: str = "exact",
                     dt: float | None = None, windows: Windows | None = None) -> TagStream:
    """Thermal-light tag stream over ``duration`` seconds."""
    if not duration > 0:
        raise ValueError("duration must be > 0")
    length = duration * PS_PER_S
    t = thermal_times(spec, 0.0, length, substream(seed, STAGE_SOURCE, source_id),
                      windows=windows, method=method, dt=dt)
    return TagStream.from_source(t, source_id, polarization, duration_ps=length, seed=seed)


# ----------------------------------------------------------------- pulsed


def pulsed_emissions(spec: PulsedSinglePhoton, k0: int, k1: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Emission times and pulse indices for pulses k0 <= k < k1."""
    rng = as_generator(rng)
    p = spec.click_probability_per_pulse
    if p >= 0.1:
        raise ValueError(f"click probability {p} too large for the p << 1 emission model")
    n = k1 - k0
    if n <= 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    idx_parts = []
    pos = k0 - 1
    while pos < k1 - 1:
        m = int((k1 - 1 - pos) * p * 1.05 + 6 * math.sqrt((k1 - pos) * p + 1) + 32)
        steps = rng.geometric(p, size=m)
        chunk = pos + np.cumsum(steps)
        idx_parts.append(chunk[chunk < k1])
        pos = int(chunk[-1])
    idx = np.concatenate(idx_parts)
    p2 = spec.two_photon_probability
    doubles = rng.random(idx.size) < p2 / p
    idx = np.repeat(idx, 1 + doubles.astype(np.int64))
    tw, cut = spec.wavepacket_width, spec.envelope_cutoff
    delay = -tw * np.log1p(-rng.random(idx.size) * (-math.expm1(-cut)))
    t = spec.pulse_offset + idx * spec.period + delay
    order = np.argsort(t, kind="stable")
    return t[order], idx[order]


def gen_pulsed_sps_tags(spec: PulsedSinglePhoton, duration: float, seed: int, *,
                        source_id: int = 0, polarization: int = POL_NONE) -> TagStream:
    """Pulsed single-photon stream over ``duration`` seconds."""
    if not duration > 0:
        raise ValueError("duration must be > 0")
    n_pulses = int(duration * spec.repetition_rate)
    t, k = pulsed_emissions(spec, 0, n_pulses, substream(seed, STAGE_SOURCE, source_id))
    return TagStream.from_source(t, source_id, polarization, emission=k,
                                 duration_ps=duration * PS_PER_S, seed=seed)


# ------------------------------------------------------ beam splitter, HOM


def route_beam_splitter(stream_a: TagStream, stream_b: TagStream | None, rng) -> TagStream:
    """Send every photon to output 0 or 1 with probability 1/2."""
    rng = as_generator(rng)
    merged = stream_a if stream_b is None else concat([stream_a, stream_b]).sorted()
    ch = rng.integers(0, 2, size=len(merged), dtype=np.uint8)
    return merged.replace(channel=ch)


@dataclass(frozen=True)
class G1Product:
    """|g1_a(tau) g1_b(tau)| for the interference veto.

    ``lorentzian``: exp(-pi (fwhm_a + fwhm_b) |tau|) with fwhm in GHz.
    ``flat``: 1, for identical transform-limited wavepackets compared over
    the whole pulse.
    """

    kind: str = "lorentzian"
    fwhm_a: float = 1.0
    fwhm_b: float = 1.0

    def __call__(self, tau):
        tau = np.abs(np.asarray(tau, dtype=float))
        if self.kind == "flat":
            return np.ones_like(tau)
        if self.kind == "lorentzian":
            return np.exp(-math.pi * (self.fwhm_a + self.fwhm_b) * 1e-3 * tau)
        raise ValueError(f"unknown g1 product {self.kind!r}")


def match_pairs(ta: np.ndarray, tb: np.ndarray, window: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy nearest-in-time matching between two sorted time arrays.

    Candidate pairs closer than ``window`` are taken in order of increasing
    separation (ties by index); each element joins at most one pair.
    """
    if ta.size == 0 or tb.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    j = np.searchsorted(tb, ta)
    ia, ib = [], []
    for off in (-1, 0):
        jj = j + off
        ok = (jj >= 0) & (jj < tb.size)
        i_ok = np.flatnonzero(ok)
        d = np.abs(tb[jj[ok]] - ta[ok])
        close = d < window
        ia.append(i_ok[close])
        ib.append(jj[ok][close])
    ia = np.concatenate(ia)
    ib = np.concatenate(ib)
    if ia.size == 0:
        return ia, ib
    d = np.abs(tb[ib] - ta[ia])
    order = np.lexsort((ib, ia, d))
    used_a, used_b = set(), set()
    out_a, out_b = [], []
    for k in order:
        a, b = int(ia[k]), int(ib[k])
        if a in used_a or b in used_b:
            continue
        used_a.add(a)
        used_b.add(b)
        out_a.append(a)
        out_b.append(b)
    out_a = np.asarray(out_a, dtype=np.int64)
    out_b = np.asarray(out_b, dtype=np.int64)
    order = np.argsort(out_a, kind="stable")
    return out_a[order], out_b[order]


def apply_interference_rejection(routed: TagStream, m_eff: float, g1_product, rng,
                                 window: float = 1600.0) -> TagStream:
    """Two-photon interference as a pairwise coincidence veto.

    Cross-source, same-polarisation pairs found by :func:`match_pairs` on
    true emission times that sit in opposite outputs are moved to a common
    output with probability ``m_eff * |g1_product(dt)|``.
    """
    if not 0.0 <= m_eff <= 1.0:
        raise ValueError(f"m_eff must lie in [0, 1], got {m_eff}")
    rng = as_generator(rng)
    if m_eff == 0 or len(routed) == 0:
        return routed
    origins = np.unique(routed.origin)
    if origins.size < 2:
        return routed
    if origins.size > 2:
        raise ValueError("interference veto supports exactly two sources")
    ia_all = np.flatnonzero(routed.origin == origins[0])
    ib_all = np.flatnonzero(routed.origin == origins[1])
    ma, mb = match_pairs(routed.time[ia_all], routed.time[ib_all], window)
    ia, ib = ia_all[ma], ib_all[mb]
    if ia.size == 0:
        return routed
    pol = routed.polarization
    dt = routed.time[ib] - routed.time[ia]
    u = rng.random(ia.size)
    common = rng.integers(0, 2, size=ia.size, dtype=np.uint8)
    eligible = (pol[ia] == pol[ib]) & (routed.channel[ia] != routed.channel[ib])
    veto = eligible & (u < m_eff * np.abs(g1_product(dt)))
    if not veto.any():
        return routed
    ch = routed.channel.copy()
    ch[ia[veto]] = common[veto]
    ch[ib[veto]] = common[veto]
    return routed.replace(channel=ch)


# ------------------------------------------------------------- blocks/shards


@dataclass(frozen=True)
class SourceConfig:
    spec: PulsedSinglePhoton | ThermalCW
    source_id: int
    polarization: int = POL_NONE


@dataclass(frozen=True)
class InterferenceConfig:
    enabled: bool = False
    m_eff: float = 0.0
    g1_product: G1Product = field(default_factory=G1Product)
    window: float = 1600.0


@dataclass(frozen=True)
class SynthConfig:
    """Ground-truth synthesis of one or two sources through a beam splitter.

    ``block_s`` fixes the random-stream layout; ``shard_count`` only sets
    how many worker processes share the blocks.  ``period`` (ps) is the
    block grid unit (the pulse period when a pulsed source is present).
    ``thermal_windows`` restricts thermal generation to periodic windows.
    """

    duration: float
    seed: int
    sources: tuple = ()
    shard_count: int = 1
    block_s: float = 1.0
    period: float = PS_PER_S / 7.6e7
    route: bool = True
    interference: InterferenceConfig = field(default_factory=InterferenceConfig)
    thermal_windows: Windows | None = None
    dark_count_rate: float = 0.0  # per output channel, 1/s
    run_id: int = 0

    def __post_init__(self):
        if self.dark_count_rate < 0:
            raise ValueError("dark_count_rate must be >= 0")
        if self.shard_count < 1:
            raise ValueError("shard_count must be >= 1")
        if self.duration < 0:
            raise ValueError("duration must be >= 0")
        if self.block_s <= 0:
            raise ValueError("block_s must be > 0")


@dataclass(frozen=True)
class BlockPlan:
    """Contiguous blocks of whole periods covering the acquisition."""

    period: float
    periods_per_block: int
    n_periods: int

    @classmethod
    def for_config(cls, cfg: SynthConfig) -> "BlockPlan":
        per_block = max(1, int(round(cfg.block_s * PS_PER_S / cfg.period)))
        n_periods = int(cfg.duration * PS_PER_S / cfg.period)
        return cls(cfg.period, per_block, n_periods)

    @property
    def n_blocks(self) -> int:
        return -(-self.n_periods // self.periods_per_block)

    def periods(self, b: int) -> tuple[int, int]:
        k0 = b * self.periods_per_block
        return k0, min(k0 + self.periods_per_block, self.n_periods)

    def span(self, b: int) -> tuple[float, float]:
        k0, k1 = self.periods(b)
        return k0 * self.period, k1 * self.period

    def shard_slices(self, shard_count: int) -> list[tuple[int, int]]:
        """Contiguous, non-overlapping block ranges, one per shard."""
        n = self.n_blocks
        bounds = [round(i * n / shard_count) for i in range(shard_count + 1)]
        slices = [(bounds[i], bounds[i + 1]) for i in range(shard_count)]
        check_shards(slices, n)
        return slices


def check_shards(slices, n_blocks: int) -> None:
    pos = 0
    for lo, hi in slices:
        if lo != pos or hi < lo:
            raise ValueError(f"shard slices overlap or leave gaps at block {pos}: {slices}")
        pos = hi
    if pos != n_blocks:
        raise ValueError("shard slices do not cover every block")


def synth_block(cfg: SynthConfig, b: int) -> TagStream:
    """Ground-truth tags of block ``b`` (sorted, routed, vetoed)."""
    plan = BlockPlan.for_config(cfg)
    k0, k1 = plan.periods(b)
    t0, t1 = plan.span(b)
    parts = []
    for src in cfg.sources:
        rng = substream(cfg.seed, cfg.run_id, b, STAGE_SOURCE, src.source_id)
        if isinstance(src.spec, PulsedSinglePhoton):
            t, k = pulsed_emissions(src.spec, k0, k1, rng)
            parts.append(TagStream.from_source(t, src.source_id, src.polarization, emission=k))
        else:
            t = thermal_times(src.spec, t0, t1, rng, windows=cfg.thermal_windows)
            parts.append(TagStream.from_source(t, src.source_id, src.polarization))
    stream = concat(parts).sorted() if parts else TagStream.empty()
    if cfg.route:
        stream = route_beam_splitter(stream, None, substream(cfg.seed, cfg.run_id, b, STAGE_ROUTE))
    ic = cfg.interference
    if ic.enabled:
        stream = apply_interference_rejection(stream, ic.m_eff, ic.g1_product,
                                              substream(cfg.seed, cfg.run_id, b, STAGE_VETO),
                                              ic.window)
    if cfg.dark_count_rate > 0:
        rng = substream(cfg.seed, cfg.run_id, b, STAGE_DARK)
        n = rng.poisson(cfg.dark_count_rate * (t1 - t0) / PS_PER_S, size=2)
        t = t0 + rng.random(n.sum()) * (t1 - t0)
        dark = TagStream.from_source(t, DARK_ORIGIN, channel=0)
        dark.channel[n[0]:] = 1
        dark.flags[:] = 0
        stream = concat([stream, dark]).sorted()
    return stream


class SortedFold:
    """Single-owner merge of consecutive, slightly overlapping sorted blocks.

    Block ``b`` may contain tags later than the start of block ``b+1``
    (emission tails, jitter) but nothing earlier than ``next_start - margin``
    can arrive afterwards, so everything before that is final.
    """

    def __init__(self, margin: float = 1e5):
        self.margin = margin
        self.carry: TagStream | None = None

    def feed(self, block: TagStream, next_start: float | None) -> TagStream:
        merged = block if self.carry is None else merge(self.carry, block)
        if next_start is None:
            self.carry = None
            return merged
        cut = int(np.searchsorted(merged.time, next_start - self.margin, side="left"))
        self.carry = merged.take(slice(cut, None))
        return merged.take(slice(0, cut))


def run_blocks(fn, args, n_blocks: int, shard_count: int = 1):
    """Yield ``fn(*args, b)`` for b = 0..n_blocks-1, in block order.

    With ``shard_count > 1`` blocks are evaluated in worker processes;
    results are identical either way.
    """
    if shard_count <= 1 or n_blocks <= 1:
        for b in range(n_blocks):
            yield fn(*args, b)
        return
    with ProcessPoolExecutor(max_workers=shard_count) as pool:
        futures = []
        ahead = 2 * shard_count
        for b in range(n_blocks):
            futures.append(pool.submit(fn, *args, b))
            if len(futures) > ahead:
                yield futures.pop(0).result()
        for f in futures:
            yield f.result()


def shard_and_merge(cfg: SynthConfig) -> TagStream:
    """Whole ground-truth stream for ``cfg`` (held in memory)."""
    plan = BlockPlan.for_config(cfg)
    header = {"duration_ps": plan.n_periods * plan.period, "seed": cfg.seed,
              "shard_map": plan.shard_slices(cfg.shard_count) if plan.n_blocks else []}
    if plan.n_blocks == 0:
        return TagStream.empty(**header)
    fold = SortedFold()
    out = []
    for b, block in enumerate(run_blocks(synth_block, (cfg,), plan.n_blocks, cfg.shard_count)):
        nxt = plan.span(b + 1)[0] if b + 1 < plan.n_blocks else None
        out.append(fold.feed(block, nxt))
    return concat(out, **header)
