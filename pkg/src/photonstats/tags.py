"""Detection time-tag streams and their binary wire format.

A TagStream is the ordered list of detection events (channel, timestamp
in integer ticks) plus the tick resolution.  On disk the stream is a
little-endian PTAG file:

    magic           4 bytes  b"PTAG"
    version         u16      1
    resolution_ps   u64      tick length in picoseconds
    channel_count   u8
    records         (channel u8, reserved u8 x3, timestamp_ticks u64) ...

Timestamps are non-decreasing across the whole stream.
"""

import struct
from dataclasses import dataclass

import numpy as np

PTAG_MAGIC = b"PTAG"
PTAG_VERSION = 1
_HEADER = struct.Struct("<4sHQB")
_RECORD_DTYPE = np.dtype(
    [("channel", "u1"), ("reserved", "u1", (3,)), ("ticks", "<u8")]
)


class PtagFormatError(ValueError):
    """Raised on malformed PTAG files."""


@dataclass(frozen=True)
class TagStream:
    """Ordered detection events with a fixed tick resolution.

    ``ticks`` is int64 (non-negative, non-decreasing), ``channels`` uint8,
    both the same length.  ``resolution_s`` is seconds per tick.
    """

    resolution_s: float
    n_channels: int
    channels: np.ndarray
    ticks: np.ndarray

    def __post_init__(self):
        ch = np.ascontiguousarray(self.channels, dtype=np.uint8)
        tk = np.ascontiguousarray(self.ticks, dtype=np.int64)
        if ch.shape != tk.shape or ch.ndim != 1:
            raise ValueError("channels and ticks must be equal-length 1-d arrays")
        if not self.resolution_s > 0:
            raise ValueError("resolution must be positive")
        if not self.n_channels >= 1:
            raise ValueError("need at least one channel")
        if tk.size:
            if tk[0] < 0:
                raise ValueError("timestamps must be non-negative")
            if np.any(np.diff(tk) < 0):
                raise ValueError("timestamps must be non-decreasing")
            if int(ch.max()) >= self.n_channels:
                raise ValueError("channel index out of range")
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "ticks", tk)

    def __len__(self):
        return int(self.ticks.size)

    def channel_ticks(self, channel):
        """Tick timestamps of one channel."""
        if not 0 <= channel < self.n_channels:
            raise ValueError(
                f"channel {channel} out of range (stream has {self.n_channels})"
            )
        return self.ticks[self.channels == channel]

    def channel_times(self, channel):
        """Timestamps of one channel in seconds."""
        return self.channel_ticks(channel) * self.resolution_s

    def span_s(self):
        """Time between first and last tag, in seconds."""
        if not len(self):
            return 0.0
        return float((self.ticks[-1] - self.ticks[0]) * self.resolution_s)

    def rate_hz(self, channel, duration_s=None):
        """Mean count rate of one channel."""
        n = int(np.count_nonzero(self.channels == channel))
        t = self.span_s() if duration_s is None else duration_s
        return n / t if t > 0 else 0.0


def resolution_ps(resolution_s):
    """Tick length in integer picoseconds; PTAG stores resolution that way."""
    ps = round(resolution_s * 1e12)
    if ps < 1 or abs(ps * 1e-12 - resolution_s) > 1e-6 * resolution_s:
        raise ValueError(
            f"resolution {resolution_s!r} s is not a whole number of picoseconds"
        )
    return ps


def merge_streams(streams):
    """Merge streams into one, sorted by (tick, channel).

    The result depends only on the set of events, not on the order the
    inputs are given in, so parallel producers can merge deterministically.
    """
    streams = list(streams)
    if not streams:
        raise ValueError("nothing to merge")
    res = streams[0].resolution_s
    if any(abs(s.resolution_s - res) > 1e-15 * res for s in streams):
        raise ValueError("streams have differing resolutions")
    ticks = np.concatenate([s.ticks for s in streams])
    channels = np.concatenate([s.channels for s in streams])
    order = np.lexsort((channels, ticks))
    return TagStream(
        resolution_s=res,
        n_channels=max(s.n_channels for s in streams),
        channels=channels[order],
        ticks=ticks[order],
    )


def write_ptag(stream, path):
    """Write a TagStream to a PTAG file."""
    header = _HEADER.pack(
        PTAG_MAGIC,
        PTAG_VERSION,
        resolution_ps(stream.resolution_s),
        stream.n_channels,
    )
    records = np.zeros(len(stream), dtype=_RECORD_DTYPE)
    records["channel"] = stream.channels
    records["ticks"] = stream.ticks.astype(np.uint64)
    with open(path, "wb") as fh:
        fh.write(header)
        records.tofile(fh)


def read_ptag(path):
    """Read a PTAG file back into a TagStream."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise PtagFormatError(f"{path}: truncated header")
        magic, version, res_ps, n_channels = _HEADER.unpack(raw)
        if magic != PTAG_MAGIC:
            raise PtagFormatError(f"{path}: bad magic {magic!r}")
        if version != PTAG_VERSION:
            raise PtagFormatError(f"{path}: unsupported version {version}")
        if res_ps < 1 or n_channels < 1:
            raise PtagFormatError(f"{path}: invalid header fields")
        body = fh.read()
    if len(body) % _RECORD_DTYPE.itemsize:
        raise PtagFormatError(f"{path}: truncated record section")
    records = np.frombuffer(body, dtype=_RECORD_DTYPE)
    ticks = records["ticks"].astype(np.int64)
    if np.any(ticks < 0):
        raise PtagFormatError(f"{path}: timestamp overflows signed range")
    return TagStream(
        resolution_s=res_ps * 1e-12,
        n_channels=int(n_channels),
        channels=records["channel"].copy(),
        ticks=ticks,
    )
