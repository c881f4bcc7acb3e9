import struct

import numpy as np
import pytest

from photonstats.tags import (
    PtagFormatError,
    TagStream,
    merge_streams,
    read_ptag,
    resolution_ps,
    write_ptag,
)


def small_stream():
    return TagStream(
        resolution_s=1e-12,
        n_channels=2,
        channels=np.array([0, 1, 0, 1, 1], dtype=np.uint8),
        ticks=np.array([0, 10, 10, 25, 1000], dtype=np.int64),
    )


class TestTagStream:
    def test_rejects_decreasing_timestamps(self):
        with pytest.raises(ValueError):
            TagStream(1e-12, 1, np.zeros(2, np.uint8), np.array([5, 4]))

    def test_rejects_out_of_range_channel(self):
        with pytest.raises(ValueError):
            TagStream(1e-12, 1, np.array([1], np.uint8), np.array([5]))

    def test_channel_selection(self):
        s = small_stream()
        assert np.array_equal(s.channel_ticks(0), [0, 10])
        assert np.array_equal(s.channel_ticks(1), [10, 25, 1000])
        assert s.channel_times(1) == pytest.approx([10e-12, 25e-12, 1000e-12])

    def test_resolution_must_be_whole_picoseconds(self):
        assert resolution_ps(1e-12) == 1
        assert resolution_ps(250e-12) == 250
        with pytest.raises(ValueError):
            resolution_ps(0.5e-12)


class TestPtagIO:
    def test_round_trip(self, tmp_path):
        s = small_stream()
        path = tmp_path / "stream.ptag"
        write_ptag(s, path)
        back = read_ptag(path)
        assert back.resolution_s == s.resolution_s
        assert back.n_channels == s.n_channels
        assert np.array_equal(back.channels, s.channels)
        assert np.array_equal(back.ticks, s.ticks)

    def test_wire_format_layout(self, tmp_path):
        s = small_stream()
        path = tmp_path / "stream.ptag"
        write_ptag(s, path)
        raw = path.read_bytes()
        magic, version, res_ps, n_ch = struct.unpack("<4sHQB", raw[:15])
        assert magic == b"PTAG"
        assert version == 1
        assert res_ps == 1
        assert n_ch == 2
        assert (len(raw) - 15) % 12 == 0
        first_channel = raw[15]
        first_ts = struct.unpack("<Q", raw[19:27])[0]
        assert first_channel == 0 and first_ts == 0

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ptag"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(PtagFormatError):
            read_ptag(path)

    def test_truncated_record_rejected(self, tmp_path):
        s = small_stream()
        path = tmp_path / "stream.ptag"
        write_ptag(s, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(PtagFormatError):
            read_ptag(path)


class TestMerge:
    def test_merge_is_order_independent(self):
        rng = np.random.default_rng(0)
        parts = []
        for ch in range(3):
            ticks = np.sort(rng.integers(0, 10_000, 500))
            parts.append(
                TagStream(1e-12, 3, np.full(500, ch, np.uint8), ticks.astype(np.int64))
            )
        merged_a = merge_streams(parts)
        merged_b = merge_streams(parts[::-1])
        assert np.array_equal(merged_a.ticks, merged_b.ticks)
        assert np.array_equal(merged_a.channels, merged_b.channels)

    def test_merge_rejects_mixed_resolution(self):
        a = TagStream(1e-12, 1, np.zeros(1, np.uint8), np.zeros(1, np.int64))
        b = TagStream(2e-12, 1, np.zeros(1, np.uint8), np.zeros(1, np.int64))
        with pytest.raises(ValueError):
            merge_streams([a, b])
