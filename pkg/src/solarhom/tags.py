"""Time-tag streams held as parallel numpy columns."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

POL_NONE, POL_H, POL_V = -1, 0, 1

FLAG_POL_KNOWN = 0x01
FLAG_POL_V = 0x02
FLAG_ORIGIN_KNOWN = 0x04
FLAG_CLAMPED = 0x08

HOM_CHANNELS = (0, 1)
HBT_CHANNELS = (2, 3)


def pol_flags(polarization: int) -> int:
    if polarization == POL_NONE:
        return 0
    return FLAG_POL_KNOWN | (FLAG_POL_V if polarization == POL_V else 0)


@dataclass
class TagStream:
    """Detection events sorted by time.

    ``time`` is in ps: float64 before TDC quantisation, int64 after.
    ``emission`` is a simulation-only ground-truth id (pulse index for
    pulsed sources, -1 otherwise) and is not serialised.
    """

    time: np.ndarray
    channel: np.ndarray
    flags: np.ndarray
    origin: np.ndarray
    emission: np.ndarray | None = None
    resolution_ps: int = 1
    duration_ps: float = 0.0
    seed: int | None = None
    channel_count: int = 4
    shard_map: list = field(default_factory=list)

    def __post_init__(self):
        self.time = np.asarray(self.time)
        self.channel = np.asarray(self.channel, dtype=np.uint8)
        self.flags = np.asarray(self.flags, dtype=np.uint8)
        self.origin = np.asarray(self.origin, dtype=np.uint16)
        n = self.time.size
        if not (self.channel.size == self.flags.size == self.origin.size == n):
            raise ValueError("TagStream columns differ in length")
        if self.emission is None:
            self.emission = np.full(n, -1, dtype=np.int64)

    @classmethod
    def empty(cls, **header) -> "TagStream":
        return cls(np.empty(0, dtype=np.float64), np.empty(0, np.uint8),
                   np.empty(0, np.uint8), np.empty(0, np.uint16),
                   np.empty(0, np.int64), **header)

    @classmethod
    def from_source(cls, time, source_id: int, polarization: int = POL_NONE,
                    emission=None, channel: int = 0, **header) -> "TagStream":
        n = len(time)
        flags = np.full(n, pol_flags(polarization) | FLAG_ORIGIN_KNOWN, dtype=np.uint8)
        return cls(np.asarray(time, dtype=np.float64), np.full(n, channel, np.uint8), flags,
                   np.full(n, source_id, np.uint16),
                   None if emission is None else np.asarray(emission, np.int64), **header)

    def __len__(self) -> int:
        return self.time.size

    @property
    def header(self) -> dict:
        return {"resolution_ps": self.resolution_ps, "duration_ps": self.duration_ps,
                "seed": self.seed, "channel_count": self.channel_count,
                "shard_map": list(self.shard_map)}

    @property
    def polarization(self) -> np.ndarray:
        pol = np.full(len(self), POL_NONE, dtype=np.int8)
        known = (self.flags & FLAG_POL_KNOWN) != 0
        pol[known] = np.where(self.flags[known] & FLAG_POL_V, POL_V, POL_H)
        return pol

    def is_sorted(self) -> bool:
        return bool(np.all(self.time[1:] >= self.time[:-1]))

    def take(self, index) -> "TagStream":
        return TagStream(self.time[index], self.channel[index], self.flags[index],
                         self.origin[index], self.emission[index], **self.header)

    def replace(self, **columns) -> "TagStream":
        cols = {"time": self.time, "channel": self.channel, "flags": self.flags,
                "origin": self.origin, "emission": self.emission}
        header = self.header
        for k, v in columns.items():
            if k in cols:
                cols[k] = v
            else:
                header[k] = v
        return TagStream(**cols, **header)

    def sorted(self) -> "TagStream":
        if self.is_sorted():
            return self
        return self.take(np.argsort(self.time, kind="stable"))

    def channel_times(self, ch: int) -> np.ndarray:
        return self.time[self.channel == ch]

    def equals(self, other: "TagStream", with_emission: bool = False) -> bool:
        same = (np.array_equal(self.time, other.time)
                and np.array_equal(self.channel, other.channel)
                and np.array_equal(self.flags, other.flags)
                and np.array_equal(self.origin, other.origin))
        if with_emission:
            same = same and np.array_equal(self.emission, other.emission)
        return same


def concat(streams, **header) -> TagStream:
    """Concatenate streams in order (no re-sorting)."""
    streams = list(streams)
    if not streams:
        return TagStream.empty(**header)
    base = streams[0].header
    base.update(header)
    return TagStream(np.concatenate([s.time for s in streams]),
                     np.concatenate([s.channel for s in streams]),
                     np.concatenate([s.flags for s in streams]),
                     np.concatenate([s.origin for s in streams]),
                     np.concatenate([s.emission for s in streams]), **base)


def merge(*streams, **header) -> TagStream:
    """Time-ordered union of sorted streams; ties keep argument order."""
    return concat(streams, **header).sorted()
