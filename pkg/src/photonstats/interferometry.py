"""Virtual Michelson interferometer.

Interferograms come from two routes that must agree: the closed form for a
Lorentzian emitter, N(tau) = (1 + V0 exp(-Gamma tau / 2) cos(w0 tau)) / 2,
and the Fourier transform of an arbitrary sampled spectrum (the field
autocorrelation is the transform of the spectral density).  Fringe
visibility is extracted per oscillation period and its envelope fitted
with an exponential or Gaussian decay to give the coherence time.

The discrete transform treats the sampled grid as a window onto a line
shape with inverse-square tails; the analytic tail contribution is added
outside the grid (spectra that end at zero counts, e.g. after a
rectangular filter, get no tail).  This keeps the transform faithful for
Lorentzian wings that the grid cannot cover.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import sici

from .core import PLANCK_EV_S, ev_to_hz
from .fitting import FitProblem, lm_minimize

EXPONENTIAL = "exponential"
GAUSSIAN = "gaussian"

_DELAY_BLOCK = 256


class UndersampledFringeError(ValueError):
    """Raised when an interferogram has fewer than 8 samples per period."""


@dataclass(frozen=True)
class Interferogram:
    """Normalized Michelson output vs arm delay; v0 is the mode overlap."""

    delays_s: np.ndarray
    n_out: np.ndarray
    v0: float

    def __post_init__(self):
        d = np.asarray(self.delays_s, dtype=float)
        n = np.asarray(self.n_out, dtype=float)
        if d.shape != n.shape or d.ndim != 1:
            raise ValueError("delays and intensities must be equal-length 1-d arrays")
        if d.size > 1 and not np.all(np.diff(d) > 0):
            raise ValueError("delays must be strictly increasing")
        if not 0.0 <= self.v0 <= 1.0:
            raise ValueError("mode overlap must lie in [0, 1]")
        object.__setattr__(self, "delays_s", d)
        object.__setattr__(self, "n_out", n)


@dataclass(frozen=True)
class VisibilityTrace:
    """Fringe visibility per local oscillation period."""

    delays_s: np.ndarray
    visibility: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.delays_s, dtype=float)
        v = np.asarray(self.visibility, dtype=float)
        if d.shape != v.shape or d.ndim != 1:
            raise ValueError("delays and visibilities must be equal-length 1-d arrays")
        if np.any(v < 0):
            raise ValueError("visibility cannot be negative")
        object.__setattr__(self, "delays_s", d)
        object.__setattr__(self, "visibility", v)


@dataclass(frozen=True)
class EnvelopeModel:
    """Fitted visibility envelope: V0 exp(-t/T2*) or V0 exp(-(t/T2*)^2)."""

    shape: str
    v0: float
    t2_star_s: float

    def __post_init__(self):
        if self.shape not in (EXPONENTIAL, GAUSSIAN):
            raise ValueError(f"unknown envelope shape {self.shape!r}")
        if not self.t2_star_s > 0:
            raise ValueError("T2* must be positive")

    def evaluate(self, delays_s):
        t = np.asarray(delays_s, dtype=float)
        if self.shape == EXPONENTIAL:
            return self.v0 * np.exp(-np.abs(t) / self.t2_star_s)
        return self.v0 * np.exp(-((t / self.t2_star_s) ** 2))

    @classmethod
    def from_fit(cls, result):
        shape = EXPONENTIAL if result.model.endswith(EXPONENTIAL) else GAUSSIAN
        return cls(shape=shape, v0=result.params["v0"], t2_star_s=result.params["t2_star_s"])


def michelson_lorentzian(rates, omega0_rad_s, v0, delays_s):
    """Closed-form interferogram of a Lorentzian emitter.

    ``rates.gamma_total`` sets the fringe envelope decay, exp(-Gamma|tau|/2);
    omega0 is the optical angular frequency of the line.
    """
    tau = np.asarray(delays_s, dtype=float)
    envelope = np.exp(-0.5 * rates.gamma_total * np.abs(tau))
    n_out = 0.5 * (1.0 + v0 * envelope * np.cos(omega0_rad_s * tau))
    return Interferogram(delays_s=tau, n_out=n_out, v0=v0)


def _tail_integral(l_hz, tau_s):
    """I(L, tau) = integral_L^inf u^-2 exp(-2 pi i u tau) du for tau >= 0."""
    x = 2.0 * math.pi * l_hz * np.abs(tau_s)
    si, ci = sici(x)
    small = x < 1e-12
    re = np.where(small, 1.0 / l_hz, np.cos(x) / l_hz + 2.0 * math.pi * np.abs(tau_s) * (si - 0.5 * math.pi))
    im = np.where(small, 0.0, -np.sin(x) / l_hz + 2.0 * math.pi * np.abs(tau_s) * np.where(small, 0.0, ci))
    return re + 1j * im


def field_autocorrelation(spectrum, delays_s, tail_correction=True):
    """Normalized g1(tau) of a sampled spectrum, complex.

    Trapezoidal Fourier transform of the spectral density over the grid;
    with ``tail_correction`` the density is continued beyond both grid ends
    as an inverse-square tail matched to the edge samples.  g1(0) == 1
    exactly after normalization.
    """
    nu = ev_to_hz(spectrum.energy_ev)
    s = np.asarray(spectrum.counts, dtype=float)
    if s.size < 2:
        raise ValueError("need at least two spectral samples")
    tau = np.asarray(delays_s, dtype=float)
    w = np.empty_like(nu)
    w[1:-1] = 0.5 * (nu[2:] - nu[:-2])
    w[0] = 0.5 * (nu[1] - nu[0])
    w[-1] = 0.5 * (nu[-1] - nu[-2])
    sw = s * w
    norm = float(sw.sum())
    if norm <= 0:
        raise ValueError("spectrum has zero integral")
    nu_c = float((sw * nu).sum()) / norm

    out = np.empty(tau.shape, dtype=complex)
    mag = np.abs(tau)
    for start in range(0, tau.size, _DELAY_BLOCK):
        block = mag[start : start + _DELAY_BLOCK]
        phase = np.exp(-2j * math.pi * np.outer(nu, block))
        out[start : start + _DELAY_BLOCK] = sw @ phase

    if tail_correction:
        u_hi = nu[-1] - nu_c
        u_lo = nu_c - nu[0]
        phase_c = np.exp(-2j * math.pi * nu_c * mag)
        if s[-1] > 0 and u_hi > 0:
            out += s[-1] * u_hi**2 * phase_c * _tail_integral(u_hi, mag)
            norm += s[-1] * u_hi
        if s[0] > 0 and u_lo > 0:
            out += s[0] * u_lo**2 * phase_c * np.conj(_tail_integral(u_lo, mag))
            norm += s[0] * u_lo
    out /= norm
    # g1(-tau) is the conjugate of g1(tau)
    neg = tau < 0
    out[neg] = np.conj(out[neg])
    return out


def interferogram_from_spectrum(spectrum, v0, delays_s, tail_correction=True):
    """Michelson interferogram of an arbitrary sampled spectrum.

    N(tau) = (1 + v0 Re g1(tau)) / 2; for a single-Lorentzian spectrum this
    reproduces :func:`michelson_lorentzian`.
    """
    g1 = field_autocorrelation(spectrum, delays_s, tail_correction)
    n_out = 0.5 * (1.0 + v0 * g1.real)
    return Interferogram(
        delays_s=np.asarray(delays_s, dtype=float), n_out=n_out, v0=v0
    )


def extract_visibility(interferogram, omega0_hint_rad_s):
    """Fringe visibility per oscillation period.

    The interferogram is cut into consecutive windows one nominal period
    long (from the hint frequency); each full window must hold at least 8
    samples.  Visibility is (max - min) / (max + min) inside the window,
    reported at the midpoint of the extrema positions so that a decaying
    envelope is sampled without first-order bias.
    """
    delays = interferogram.delays_s
    n_out = interferogram.n_out
    if omega0_hint_rad_s <= 0:
        raise ValueError("need a positive fringe frequency hint")
    period = 2.0 * math.pi / omega0_hint_rad_s
    t_start = delays[0]
    span = delays[-1] - t_start
    n_windows = int(span / period)
    if n_windows < 1:
        raise UndersampledFringeError("interferogram shorter than one fringe period")
    out_t = []
    out_v = []
    edges = t_start + np.arange(n_windows + 1) * period
    idx = np.searchsorted(delays, edges)
    for k in range(n_windows):
        sel = slice(idx[k], idx[k + 1])
        d = delays[sel]
        y = n_out[sel]
        if d.size < 8:
            raise UndersampledFringeError(
                f"only {d.size} samples in fringe window {k}; need at least 8"
            )
        i_max = int(np.argmax(y))
        i_min = int(np.argmin(y))
        total = y[i_max] + y[i_min]
        vis = (y[i_max] - y[i_min]) / total if total > 0 else 0.0
        out_t.append(0.5 * (d[i_max] + d[i_min]))
        out_v.append(max(vis, 0.0))
    return VisibilityTrace(
        delays_s=np.asarray(out_t), visibility=np.asarray(out_v)
    )


def fit_envelope(trace, shape="auto", max_iter=300):
    """Fit the visibility envelope and report the coherence time.

    ``shape`` is ``exponential``, ``gaussian`` or ``auto``; auto fits both
    and keeps the lower-residual one.  The flags always carry both residual
    norms plus ``preferred_shape=...`` so shape selection is inspectable.
    """
    delays = np.asarray(trace.delays_s, dtype=float)
    vis = np.asarray(trace.visibility, dtype=float)
    if delays.size < 6:
        raise ValueError("need at least 6 visibility points to fit an envelope")
    lo = np.array([1e-6, 1e-30])
    hi = np.array([1.5, np.inf])

    def run(model):
        problem = FitProblem(model=model, x=delays, y=vis, lo=lo, hi=hi, max_iter=max_iter)
        return lm_minimize(problem)

    results = {}
    if shape in (EXPONENTIAL, "auto", "exp"):
        results[EXPONENTIAL] = run("visibility_exponential")
    if shape in (GAUSSIAN, "auto", "gauss"):
        results[GAUSSIAN] = run("visibility_gaussian")
    if not results:
        raise ValueError(f"unknown envelope shape {shape!r}")
    metric = {name: res.objective for name, res in results.items()}
    preferred = min(metric, key=metric.get)
    chosen = results[preferred] if shape == "auto" else results[
        EXPONENTIAL if shape in (EXPONENTIAL, "exp") else GAUSSIAN
    ]
    for name in (EXPONENTIAL, GAUSSIAN):
        if name in metric:
            chosen.flags.append(f"ssr_{name}={metric[name]:.8g}")
    chosen.flags.append(f"preferred_shape={preferred}")
    span = float(np.max(np.abs(delays)) - np.min(np.abs(delays)))
    if span < 2.0 * chosen.params["t2_star_s"]:
        chosen.flags.append("insufficient_span")
    return chosen


def delay_scan_plan(fine_window_s, coarse_range_s, points_per_window=20, coarse_step_s=None):
    """Two-tier Michelson delay scan: piezo fine sweeps stitched across
    motorized coarse positions.

    Coarse positions tile ``coarse_range_s`` (a (lo, hi) pair) with step
    ``coarse_step_s`` (default: one fine window); each position contributes
    ``points_per_window`` delays spaced ``fine_window / points`` apart.
    A zero-length coarse range yields a single fine window.
    """
    lo, hi = coarse_range_s
    if not fine_window_s > 0:
        raise ValueError("fine window must be positive")
    if hi < lo:
        raise ValueError("coarse range must be ordered (lo, hi)")
    if points_per_window < 1:
        raise ValueError("need at least one point per window")
    step = fine_window_s if coarse_step_s is None else coarse_step_s
    if step < fine_window_s:
        raise ValueError("coarse step below the fine window makes windows overlap")
    n_windows = max(int(math.ceil((hi - lo) / step - 1e-12)), 1)
    starts = lo + np.arange(n_windows) * step
    offsets = np.arange(points_per_window) * (fine_window_s / points_per_window)
    return (starts[:, None] + offsets[None, :]).ravel()
