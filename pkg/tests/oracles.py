"""Independent reference implementations used to check the fast paths."""

import numpy as np


def bruteforce_correlate_counts(stream, ch_a, ch_b, bin_width_s, window_s):
    """O(N^2) pair enumeration with the shared binning convention.

    Enumerates every ordered pair of distinct events via chunked outer
    differences; no sliding-window machinery is shared with the production
    correlator.
    """
    res = stream.resolution_s
    b = max(int(round(bin_width_s / res)), 1)
    m = max(int(round(window_s / (b * res))), 1)
    ta = stream.channel_ticks(ch_a)
    tb = stream.channel_ticks(ch_b)
    counts = np.zeros(2 * m + 1, dtype=np.int64)
    same = ch_a == ch_b
    chunk = 512
    for start in range(0, ta.size, chunk):
        block = ta[start : start + chunk]
        d = tb[None, :] - block[:, None]
        mag = np.abs(d)
        idx = (2 * mag + b) // (2 * b)
        idx = np.where(d < 0, -idx, idx)
        valid = np.abs(idx) <= m
        if same:
            rows = np.arange(block.size)
            valid[rows, start + rows] = False  # drop self-pairs
        counts += np.bincount(
            (idx[valid] + m).astype(np.intp), minlength=2 * m + 1
        ).astype(np.int64)
    return counts


def poisson_ticks(rate_hz, duration_s, rng, resolution_s=1e-12):
    """Homogeneous Poisson arrival ticks over [0, duration)."""
    n = rng.poisson(rate_hz * duration_s)
    t = np.sort(rng.uniform(0.0, duration_s, n))
    return np.round(t / resolution_s).astype(np.int64)
