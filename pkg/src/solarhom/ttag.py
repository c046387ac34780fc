"""TTAG binary time-tag files.

Layout (little-endian)::

    header (24 bytes)
        magic          4s   b"TTAG"
        version        u16  1
        header_len     u16  24
        resolution_ps  u32
        channel_count  u32
        record_count   u64
    records (16 bytes each)
        time_ps        u64  non-decreasing
        channel        u8
        flags          u8   bit0 pol known, bit1 pol=V, bit2 origin known, bit3 clamped
        origin         u16
        reserved       u32  0
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .tags import TagStream

MAGIC = b"TTAG"
VERSION = 1
HEADER = struct.Struct("<4sHHIIQ")
HEADER_LEN = HEADER.size

RECORD_DTYPE = np.dtype([("time", "<u8"), ("channel", "u1"), ("flags", "u1"),
                         ("origin", "<u2"), ("reserved", "<u4")])
assert RECORD_DTYPE.itemsize == 16


class TTAGFormatError(ValueError):
    pass


class BadMagicError(TTAGFormatError):
    pass


class VersionMismatchError(TTAGFormatError):
    pass


class TruncatedRecordError(TTAGFormatError):
    pass


class UnsortedPayloadError(TTAGFormatError):
    pass


def _integer_times(time: np.ndarray) -> np.ndarray:
    if time.dtype.kind in "iu":
        t = time.astype(np.int64, copy=False)
    else:
        t = time.astype(np.int64)
        if not np.array_equal(t, time):
            raise ValueError("TTAG stores integer picoseconds; quantise the stream first")
    if t.size and t.min() < 0:
        raise ValueError("negative time in stream")
    return t


def _records(stream: TagStream) -> np.ndarray:
    rec = np.zeros(len(stream), dtype=RECORD_DTYPE)
    rec["time"] = _integer_times(stream.time)
    rec["channel"] = stream.channel
    rec["flags"] = stream.flags
    rec["origin"] = stream.origin
    return rec


class TTAGWriter:
    """Append sorted chunks to a TTAG file; record count is patched on close."""

    def __init__(self, path, resolution_ps: int = 1, channel_count: int = 4):
        self.path = os.fspath(path)
        self.resolution_ps = int(resolution_ps)
        self.channel_count = int(channel_count)
        self.count = 0
        self._last = -1
        self._fh = open(self.path, "wb")
        self._fh.write(self._header(0))

    def _header(self, n: int) -> bytes:
        return HEADER.pack(MAGIC, VERSION, HEADER_LEN, self.resolution_ps, self.channel_count, n)

    def write(self, stream: TagStream) -> None:
        if len(stream) == 0:
            return
        rec = _records(stream)
        t = rec["time"]
        if t[0] < self._last or np.any(t[1:] < t[:-1]):
            raise UnsortedPayloadError("records must be non-decreasing in time")
        self._last = int(t[-1])
        rec.tofile(self._fh)
        self.count += rec.size

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.seek(0)
        self._fh.write(self._header(self.count))
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_ttag(stream: TagStream, path) -> None:
    with TTAGWriter(path, stream.resolution_ps, stream.channel_count) as w:
        w.write(stream)


def read_header(fh) -> dict:
    raw = fh.read(HEADER_LEN)
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"not a TTAG file (magic {raw[:4]!r})")
    if len(raw) < HEADER_LEN:
        raise TruncatedRecordError("file ends inside the header")
    magic, version, header_len, res, nch, count = HEADER.unpack(raw)
    if version != VERSION:
        raise VersionMismatchError(f"TTAG version {version}, expected {VERSION}")
    if header_len != HEADER_LEN:
        raise VersionMismatchError(f"header_len {header_len}, expected {HEADER_LEN}")
    return {"resolution_ps": res, "channel_count": nch, "record_count": count}


def iter_ttag(path, chunk_records: int = 1 << 20):
    """Yield the file as TagStream chunks (bounded memory)."""
    size = os.path.getsize(path)
    with open(path, "rb") as fh:
        head = read_header(fh)
        n = head["record_count"]
        if size < HEADER_LEN + n * RECORD_DTYPE.itemsize:
            raise TruncatedRecordError(
                f"header announces {n} records but payload holds "
                f"{(size - HEADER_LEN) / RECORD_DTYPE.itemsize:.2f}")
        last = -1
        done = 0
        while done < n:
            k = min(chunk_records, n - done)
            rec = np.fromfile(fh, dtype=RECORD_DTYPE, count=k)
            if rec.size != k:
                raise TruncatedRecordError("payload ended early")
            t = rec["time"].astype(np.int64)
            if t[0] < last or np.any(t[1:] < t[:-1]):
                raise UnsortedPayloadError(f"record times decrease near record {done}")
            last = int(t[-1])
            done += k
            yield TagStream(t, rec["channel"].copy(), rec["flags"].copy(), rec["origin"].copy(),
                            resolution_ps=head["resolution_ps"],
                            channel_count=head["channel_count"])


def read_ttag(path) -> TagStream:
    from .tags import concat

    with open(path, "rb") as fh:
        head = read_header(fh)
    chunks = list(iter_ttag(path))
    stream = concat(chunks) if chunks else TagStream(np.empty(0, np.int64), [], [], [])
    stream.resolution_ps = head["resolution_ps"]
    stream.channel_count = head["channel_count"]
    return stream
