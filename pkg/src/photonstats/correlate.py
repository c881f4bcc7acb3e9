"""Time-tag histogramming: g2 correlations and lifetime decays.

``correlate`` counts every tag pair within a lag window (full cross
correlation, not start-stop, so slow blinking bunching is not distorted),
using a vectorized sliding-window sweep over the sorted tick arrays.
Chunks of start tags are processed independently and their integer
histograms summed, so parallel and serial execution are bit-identical.

Lag bins are centered on zero: bin k covers lags within half a bin of
k * bin_width, which makes autocorrelations exactly symmetric.
"""

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .fitting import FitProblem, lm_minimize
from .simulate import FWHM_TO_SIGMA

_CHUNK = 1 << 19


class TooFewCoincidencesError(ValueError):
    """Raised when a correlation has too few pairs to analyze."""


def max_threads():
    """Worker cap for chunked correlation (PHOTONSTATS_THREADS wins)."""
    env = os.environ.get("PHOTONSTATS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return min(4, os.cpu_count() or 1)


@dataclass(frozen=True)
class Histogram:
    """Uniformly binned delays: counts per bin plus bin geometry.

    ``tau_min_s`` is the left edge of the first bin; bin centers are
    ``tau_min_s + (i + 0.5) * bin_width_s``.  ``total_starts`` is the
    number of start tags that fed the histogram.
    """

    bin_width_s: float
    tau_min_s: float
    counts: np.ndarray
    total_starts: int

    def __post_init__(self):
        c = np.ascontiguousarray(self.counts, dtype=np.int64)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("counts must be a non-empty 1-d array")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        if not self.bin_width_s > 0:
            raise ValueError("bin width must be positive")
        object.__setattr__(self, "counts", c)

    @property
    def lags_s(self):
        n = self.counts.size
        return self.tau_min_s + (np.arange(n) + 0.5) * self.bin_width_s

    @property
    def tau_max_s(self):
        return self.tau_min_s + self.counts.size * self.bin_width_s

    def span_s(self):
        return self.tau_max_s - self.tau_min_s


@dataclass(frozen=True)
class LagCurve:
    """A normalized correlation curve with per-point uncertainties."""

    lag_s: np.ndarray
    value: np.ndarray
    sigma: np.ndarray


def _pair_counts(ta, tb, b, m, d_max):
    """Histogram tb - ta over one chunk of start tags (all ticks int64)."""
    lo = np.searchsorted(tb, ta - d_max, side="left")
    hi = np.searchsorted(tb, ta + d_max, side="right")
    per = hi - lo
    total = int(per.sum())
    if total == 0:
        return np.zeros(2 * m + 1, dtype=np.int64)
    offsets = np.cumsum(per) - per
    j = np.arange(total, dtype=np.int64) - np.repeat(offsets, per) + np.repeat(lo, per)
    d = tb[j] - np.repeat(ta, per)
    mag = np.abs(d)
    idx = (2 * mag + b) // (2 * b)  # half-away rounding keeps +/- lags symmetric
    idx = np.where(d < 0, -idx, idx)
    return np.bincount((idx + m).astype(np.intp), minlength=2 * m + 1).astype(np.int64)


def correlate(stream, ch_a, ch_b, bin_width_s, window_s):
    """Full pair correlation histogram of lags t_b - t_a in [-window, window].

    Bin width and window are rounded to whole ticks / whole bins; the
    histogram has 2 * round(window / bin) + 1 bins centered on lag zero.
    Self-pairs are excluded when ch_a == ch_b.
    """
    for ch in (ch_a, ch_b):
        if not 0 <= ch < stream.n_channels:
            raise ValueError(f"unknown channel {ch} (stream has {stream.n_channels})")
    if not bin_width_s > 0 or not window_s > 0:
        raise ValueError("bin width and window must be positive")
    res = stream.resolution_s
    b = max(int(round(bin_width_s / res)), 1)
    m = max(int(round(window_s / (b * res))), 1)
    d_max = (2 * b * m + b - 1) // 2
    ta = stream.channel_ticks(ch_a)
    tb = stream.channel_ticks(ch_b)
    nbins = 2 * m + 1
    counts = np.zeros(nbins, dtype=np.int64)
    if ta.size and tb.size:
        chunks = [ta[i : i + _CHUNK] for i in range(0, ta.size, _CHUNK)]
        workers = max_threads()
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for part in pool.map(
                    lambda c: _pair_counts(c, tb, b, m, d_max), chunks
                ):
                    counts += part
        else:
            for c in chunks:
                counts += _pair_counts(c, tb, b, m, d_max)
    if ch_a == ch_b:
        counts[m] -= ta.size  # remove self-pairs at zero lag
    return Histogram(
        bin_width_s=b * res,
        tau_min_s=-(m + 0.5) * b * res,
        counts=counts,
        total_starts=int(ta.size),
    )


def poisson_level(rates_hz, duration_s, bin_width_s):
    """Expected uncorrelated pair count per bin for two Poisson channels."""
    ra, rb = rates_hz
    return ra * rb * duration_s * bin_width_s


def normalize_cw(histogram, rates_hz, duration_s):
    """Divide a CW correlation by its long-delay Poisson level.

    Returns a LagCurve whose values approach 1 at large |lag|; sigma is
    Poissonian with a one-count floor.
    """
    ra, rb = rates_hz
    if not (ra > 0 and rb > 0 and duration_s > 0):
        raise ValueError("rates and duration must be positive")
    level = poisson_level(rates_hz, duration_s, histogram.bin_width_s)
    value = histogram.counts / level
    sigma = np.maximum(np.sqrt(histogram.counts), 1.0) / level
    return LagCurve(lag_s=histogram.lags_s, value=value, sigma=sigma)


def g2_zero_cw(histogram, rates_hz, duration_s, n_bins=1):
    """Normalized g2 value averaged over the central ``n_bins`` bins."""
    curve = normalize_cw(histogram, rates_hz, duration_s)
    mid = histogram.counts.size // 2
    half = (n_bins - 1) // 2
    return float(np.mean(curve.value[mid - half : mid + half + 1]))


def log_rebin(histogram, per_decade=8):
    """Fold a linear lag histogram into log-spaced |lag| bands.

    The zero-lag bin stays its own point; each band reports summed counts,
    the number of linear bins it absorbed, and the count-weighted mean of
    the |lag| centers.  Returns ``(lag_s, counts, bins_per_band)``.
    """
    lags = histogram.lags_s
    c = histogram.counts
    b = histogram.bin_width_s
    mag = np.abs(lags)
    zero = mag < 0.5 * b
    out_lag = [0.0]
    out_counts = [int(c[zero].sum())]
    out_n = [int(zero.sum())]
    top = mag.max()
    factor = 10.0 ** (1.0 / per_decade)
    lo = 0.5 * b
    while lo < top:
        hi = lo * factor
        sel = (mag >= lo) & (mag < hi)
        n = int(sel.sum())
        if n:
            out_lag.append(float(np.mean(mag[sel])))
            out_counts.append(int(c[sel].sum()))
            out_n.append(n)
        lo = hi
    return np.asarray(out_lag), np.asarray(out_counts, dtype=np.int64), np.asarray(out_n)


def rebinned_cw_curve(histogram, rates_hz, duration_s, per_decade=8):
    """Normalized multi-resolution curve for fitting ns and us lags at once."""
    level = poisson_level(rates_hz, duration_s, histogram.bin_width_s)
    lag, counts, nbins = log_rebin(histogram, per_decade)
    value = counts / (nbins * level)
    sigma = np.maximum(np.sqrt(counts), 1.0) / (nbins * level)
    return LagCurve(lag_s=lag, value=value, sigma=sigma)


def fit_g2(curve, p0=None, max_iter=300):
    """Fit the three-level g2 shape to a normalized correlation curve.

    Model: baseline * (1 - (1+a) exp(-|t|/tau1) + a exp(-|t|/tau2)).
    Non-convergence and degenerate parameters come back as flags on the
    FitResult, never as an exception.
    """
    finite = np.isfinite(curve.value)
    lag = curve.lag_s[finite]
    val = curve.value[finite]
    sig = curve.sigma[finite]
    span = np.abs(lag).max()
    step = np.min(np.abs(np.diff(np.sort(np.unique(np.abs(lag)))))) if lag.size > 2 else span
    lo = np.array([step * 1e-3, step * 1e-3, 0.0, 1e-9])
    hi = np.array([span, span * 10.0, np.inf, np.inf])
    problem = FitProblem(
        model="g2_three_level", x=lag, y=val, sigma=sig, p0=p0, lo=lo, hi=hi,
        max_iter=max_iter,
    )
    return lm_minimize(problem)


def peak_areas(histogram, rep_period_s, half_window_s=None):
    """Integrate counts around every multiple of the repetition period.

    Each peak window is rep_period/2 wide (override with half_window_s,
    which is the half width).  Returns (peak_index, area) arrays for all
    peaks fully inside the histogram.
    """
    t = rep_period_s
    half = t / 4.0 if half_window_s is None else half_window_s
    lags = histogram.lags_s
    k_min = math.ceil((histogram.tau_min_s + half) / t)
    k_max = math.floor((histogram.tau_max_s - half) / t)
    if k_max < k_min:
        raise TooFewCoincidencesError("histogram spans no complete pulse peak")
    k_near = np.round(lags / t).astype(np.int64)
    in_window = np.abs(lags - k_near * t) <= half
    valid = in_window & (k_near >= k_min) & (k_near <= k_max)
    ks = np.arange(k_min, k_max + 1)
    areas = np.zeros(ks.size, dtype=np.int64)
    np.add.at(areas, k_near[valid] - k_min, histogram.counts[valid])
    return ks, areas


def normalize_pulsed(histogram, rep_period_s, exclude=0):
    """Pulsed g2(0): center peak area over the mean far-peak area.

    ``exclude`` drops that many peaks on each side of zero from the
    normalization (they carry blinking bunching).  The histogram must span
    at least 20 repetition periods.
    """
    if histogram.span_s() < 20 * rep_period_s:
        raise TooFewCoincidencesError(
            "histogram must span at least 20 repetition periods"
        )
    ks, areas = peak_areas(histogram, rep_period_s)
    center = areas[ks == 0]
    if center.size != 1:
        raise TooFewCoincidencesError("no complete zero-delay peak in histogram")
    far = np.abs(ks) > exclude
    if far.sum() < 10:
        raise TooFewCoincidencesError("too few uncorrelated peaks for normalization")
    reference = float(np.mean(areas[far]))
    if reference <= 0:
        raise TooFewCoincidencesError("uncorrelated peaks are empty")
    g2_0 = float(center[0]) / reference
    return g2_0, (ks, areas)


def blinking_exclusion(rep_period_s, tau2_s, factor=5.0):
    """Number of near-zero peaks to skip when blinking of scale tau2 is known."""
    return int(math.ceil(factor * tau2_s / rep_period_s))


def lifetime_histogram(stream, sync_ch, det_ch, bin_width_s, offset_s=0.0):
    """Histogram detection delays relative to the preceding sync tag.

    Delays are folded into one repetition period (estimated from the sync
    median spacing).  ``offset_s`` rotates the fold so a peak at zero delay
    is not split across the wrap point by detector jitter.
    """
    sync = stream.channel_ticks(sync_ch)
    det = stream.channel_ticks(det_ch)
    if sync.size < 2:
        raise ValueError("need at least two sync tags")
    res = stream.resolution_s
    period_ticks = int(np.median(np.diff(sync)))
    idx = np.searchsorted(sync, det, side="right") - 1
    ok = idx >= 0
    delays = det[ok] - sync[idx[ok]]
    offset_ticks = int(round(offset_s / res))
    delays = (delays + offset_ticks) % period_ticks
    b = max(int(round(bin_width_s / res)), 1)
    nbins = int(math.ceil(period_ticks / b))
    counts = np.bincount((delays // b).astype(np.intp), minlength=nbins)
    return Histogram(
        bin_width_s=b * res,
        tau_min_s=0.0,
        counts=counts[:nbins],
        total_starts=int(sync.size),
    )


def fit_lifetime(histogram, irf_fwhm_s, max_iter=300):
    """Fit background + amplitude * (Gaussian IRF x exponential) to a decay.

    The IRF width is fixed, not fitted.  With irf_fwhm == 0 the shape is a
    pure exponential and the arrival offset t0 is pinned to the left edge
    of the peak bin.  A relative T1 error above 50% flags the result as
    poorly identifiable (IRF much wider than the decay, usually).
    """
    if irf_fwhm_s < 0:
        raise ValueError("IRF width must be non-negative")
    x = histogram.lags_s
    y = histogram.counts.astype(float)
    sigma = np.maximum(np.sqrt(y), 1.0)
    peak = int(np.argmax(y))
    background = float(np.percentile(y, 10))
    t0_guess = float(x[peak])
    tail = x > t0_guess
    t1_guess = histogram.span_s() / 10.0
    if tail.sum() >= 3:
        yt = y[tail] - background
        good = yt > max(yt.max() * 1e-3, 1.0)
        if good.sum() >= 3:
            slope = np.polyfit(x[tail][good], np.log(yt[good]), 1)[0]
            if slope < 0:
                t1_guess = -1.0 / slope
    irf_sigma = irf_fwhm_s * FWHM_TO_SIGMA
    amp_guess = max(float((y - background).sum()) * histogram.bin_width_s, 1e-12)
    if irf_fwhm_s == 0:
        t0_fix = t0_guess - 0.5 * histogram.bin_width_s
        p0 = np.array([amp_guess, t1_guess, t0_fix, 0.0, background])
        lo = np.array([0.0, 0.0, t0_fix, 0.0, 0.0])
        hi = np.array([np.inf, np.inf, t0_fix, 0.0, np.inf])
    else:
        p0 = np.array([amp_guess, t1_guess, t0_guess, irf_sigma, background])
        lo = np.array([0.0, 0.0, -np.inf, irf_sigma, 0.0])
        hi = np.array([np.inf, np.inf, np.inf, irf_sigma, np.inf])
    problem = FitProblem(
        model="lifetime_decay", x=x, y=y, sigma=sigma, p0=p0, lo=lo, hi=hi,
        max_iter=max_iter,
    )
    result = lm_minimize(problem)
    t1 = result.params["t1_s"]
    err = result.stderr["t1_s"]
    if not np.isfinite(err) or (t1 > 0 and err / t1 > 0.5):
        result.flags.append("poor_identifiability")
    return result


def save_histogram_csv(histogram, path):
    """Write a histogram as CSV with header ``tau_s,counts``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau_s", "counts"])
        for tau, count in zip(histogram.lags_s, histogram.counts):
            writer.writerow([repr(float(tau)), int(count)])
