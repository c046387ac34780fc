import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from solarhom.tags import FLAG_CLAMPED, FLAG_ORIGIN_KNOWN, FLAG_POL_KNOWN, FLAG_POL_V, TagStream
from solarhom.ttag import (HEADER_LEN, BadMagicError, TruncatedRecordError, TTAGWriter,
                           UnsortedPayloadError, VersionMismatchError, iter_ttag, read_header,
                           read_ttag, write_ttag)


def _random_stream(rng, n):
    t = np.sort(rng.integers(0, 2**50, n)).astype(np.int64)
    return TagStream(t, rng.integers(0, 4, n), rng.integers(0, 16, n), rng.integers(0, 2**16, n),
                     resolution_ps=1, channel_count=4)


def test_round_trip(tmp_path, rng):
    s = _random_stream(rng, 10_000)
    p = tmp_path / "a.ttag"
    write_ttag(s, p)
    back = read_ttag(p)
    assert back.equals(s)
    assert back.time.dtype == np.int64
    assert p.stat().st_size == HEADER_LEN + 16 * len(s)


def test_byte_layout(tmp_path):
    flags = FLAG_POL_KNOWN | FLAG_POL_V | FLAG_ORIGIN_KNOWN | FLAG_CLAMPED
    s = TagStream(np.array([7], np.int64), [3], [flags], [513], resolution_ps=2, channel_count=4)
    p = tmp_path / "one.ttag"
    write_ttag(s, p)
    raw = p.read_bytes()
    assert raw[:24] == b"TTAG" + struct.pack("<HHIIQ", 1, 24, 2, 4, 1)
    assert raw[24:] == struct.pack("<QBBHI", 7, 3, 0x0F, 513, 0)


def test_empty_stream_is_header_only(tmp_path):
    p = tmp_path / "e.ttag"
    write_ttag(TagStream(np.empty(0, np.int64), [], [], []), p)
    assert p.stat().st_size == 24
    assert len(read_ttag(p)) == 0


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.ttag"
    p.write_bytes(b"XTAG" + bytes(20))
    with pytest.raises(BadMagicError):
        read_ttag(p)


def test_version_mismatch(tmp_path):
    p = tmp_path / "v.ttag"
    p.write_bytes(b"TTAG" + struct.pack("<HHIIQ", 2, 24, 1, 4, 0))
    with pytest.raises(VersionMismatchError):
        read_ttag(p)


def test_truncated(tmp_path, rng):
    p = tmp_path / "t.ttag"
    write_ttag(_random_stream(rng, 100), p)
    p.write_bytes(p.read_bytes()[:-5])
    with pytest.raises(TruncatedRecordError):
        read_ttag(p)
    p.write_bytes(b"TTAG\x01\x00")
    with pytest.raises(TruncatedRecordError):
        read_ttag(p)


def test_unsorted_payload(tmp_path):
    p = tmp_path / "u.ttag"
    p.write_bytes(b"TTAG" + struct.pack("<HHIIQ", 1, 24, 1, 4, 2)
                  + struct.pack("<QBBHI", 9, 0, 0, 0, 0) + struct.pack("<QBBHI", 3, 0, 0, 0, 0))
    with pytest.raises(UnsortedPayloadError):
        read_ttag(p)
    with TTAGWriter(tmp_path / "w.ttag") as w:
        w.write(TagStream(np.array([5], np.int64), [0], [0], [0]))
        with pytest.raises(UnsortedPayloadError):
            w.write(TagStream(np.array([4], np.int64), [0], [0], [0]))


def test_errors_are_distinct():
    kinds = {BadMagicError, VersionMismatchError, TruncatedRecordError, UnsortedPayloadError}
    assert len(kinds) == 4
    for a in kinds:
        for b in kinds - {a}:
            assert not issubclass(a, b)


def test_rejects_unquantised_times(tmp_path):
    with pytest.raises(ValueError):
        write_ttag(TagStream.from_source([0.5], 0), tmp_path / "f.ttag")


def test_chunked_reading_and_writing(tmp_path, rng):
    s = _random_stream(rng, 5000)
    p = tmp_path / "c.ttag"
    with TTAGWriter(p) as w:
        for i in range(0, 5000, 777):
            w.write(s.take(slice(i, i + 777)))
    chunks = list(iter_ttag(p, chunk_records=1000))
    assert [len(c) for c in chunks] == [1000] * 5
    assert read_ttag(p).equals(s)
    with open(p, "rb") as fh:
        assert read_header(fh)["record_count"] == 5000


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2**62), st.integers(0, 255), st.integers(0, 255),
                          st.integers(0, 2**16 - 1)), max_size=60))
def test_round_trip_property(tmp_path_factory, rows):
    rows = sorted(rows)
    cols = list(zip(*rows)) if rows else [[], [], [], []]
    s = TagStream(np.array(cols[0], np.int64), cols[1], cols[2], cols[3])
    p = tmp_path_factory.mktemp("rt") / "x.ttag"
    write_ttag(s, p)
    assert read_ttag(p).equals(s)
