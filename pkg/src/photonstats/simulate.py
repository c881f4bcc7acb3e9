"""Monte Carlo emitter simulation and the detector chain.

A three-level system (ground, excited, dark) is propagated with an exact
stochastic simulation under CW or pulsed drive; emissions then pass a
detector model (efficiency, Gaussian timing jitter, dead time, dark
counts) and an optional 50:50 splitter to produce a TagStream.

For long high-rate CW runs, where storing every emitted photon is
hopeless, :func:`detected_times_cw` samples the detected photons directly
from the exact inter-detection renewal law of the three-level chain, which
is distribution-identical to thinning the full trajectory.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .tags import TagStream, merge_streams

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))  # 1/2.3548

CW = "cw"
PULSED = "pulsed"

# Above this expected number of emissions the stream builders switch to
# source-thinned generation automatically.
FUSE_THRESHOLD = 20_000_000


@dataclass(frozen=True)
class PulseTrain:
    """Excitation pulse train: repetition rate, per-pulse excitation
    probability, and pulse width (seconds; 0 means delta-like pulses)."""

    rep_rate_hz: float
    excitation_prob: float
    width_s: float = 0.0

    def __post_init__(self):
        if not self.rep_rate_hz > 0:
            raise ValueError("repetition rate must be positive")
        if not 0.0 <= self.excitation_prob <= 1.0:
            raise ValueError("excitation probability must lie in [0, 1]")
        if self.width_s < 0:
            raise ValueError("pulse width must be non-negative")
        if self.width_s >= 1.0 / self.rep_rate_hz:
            raise ValueError("pulse width must be shorter than the period")

    @property
    def period_s(self):
        return 1.0 / self.rep_rate_hz


@dataclass(frozen=True)
class EmitterParams:
    """Physical description of one emitter.

    ``pump_rate_hz`` drives the CW mode, ``pulses`` the pulsed mode; the
    dark state is entered from the excited state at ``shelve_rate_hz`` and
    left at ``deshelve_rate_hz``.
    """

    t1_s: float
    pump_rate_hz: float = 0.0
    pulses: PulseTrain = None
    shelve_rate_hz: float = 0.0
    deshelve_rate_hz: float = 0.0
    t2_star_s: float = None
    spectrum: object = None

    def __post_init__(self):
        if not self.t1_s > 0:
            raise ValueError("T1 must be positive")
        for name in ("pump_rate_hz", "shelve_rate_hz", "deshelve_rate_hz"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.shelve_rate_hz > 0 and self.deshelve_rate_hz <= 0:
            raise ValueError("a shelving emitter needs a positive deshelve rate")

    @property
    def gamma_hz(self):
        return 1.0 / self.t1_s


@dataclass(frozen=True)
class DetectorModel:
    """Detection chain: efficiency, Gaussian jitter FWHM, dead time and
    dark counts (per detector channel)."""

    efficiency: float = 1.0
    jitter_fwhm_s: float = 0.0
    dead_time_s: float = 0.0
    dark_rate_hz: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in [0, 1]")
        for name in ("jitter_fwhm_s", "dead_time_s", "dark_rate_hz"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    """One simulation run: duration, RNG seed, drive mode and the drive
    power (recorded for provenance; rates live in EmitterParams)."""

    duration_s: float
    seed: int
    mode: str = CW
    power_w: float = None

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError("duration must be positive")
        if self.mode not in (CW, PULSED):
            raise ValueError(f"mode must be '{CW}' or '{PULSED}'")


def cw_pump_rate(power_w, p_sat_w, t1_s):
    """Map CW drive power to a pump rate via pump * T1 = P / P_sat."""
    if power_w < 0 or not p_sat_w > 0 or not t1_s > 0:
        raise ValueError("need power >= 0, P_sat > 0, T1 > 0")
    return (power_w / p_sat_w) / t1_s


def pulse_excitation_prob(power_w, p_ref_w):
    """Map pulsed drive power to a per-pulse excitation probability,
    1 - exp(-P / P_ref)."""
    if power_w < 0 or not p_ref_w > 0:
        raise ValueError("need power >= 0 and P_ref > 0")
    return 1.0 - math.exp(-power_w / p_ref_w)


def three_level_g2_rates(pump_hz, gamma_hz, shelve_hz, deshelve_hz):
    """Analytic second-order correlation of the three-level chain.

    Returns ``(lam_fast, lam_slow, a, p_excited, emission_rate)`` where
    g2(t) = 1 - (1 + a) exp(-lam_fast t) + a exp(-lam_slow t), p_excited is
    the steady-state excited population and emission_rate = gamma * p_excited.
    """
    om, g, s, d = float(pump_hz), float(gamma_hz), float(shelve_hz), float(deshelve_hz)
    if om <= 0 or g <= 0:
        raise ValueError("need positive pump and decay rates")
    if s == 0.0 and d == 0.0:
        lam_fast = om + g
        pe = om / lam_fast
        return lam_fast, 0.0, 0.0, pe, g * pe
    trace = om + g + s + d
    det = d * (om + g + s) + om * s
    disc = math.sqrt(max(trace * trace - 4.0 * det, 0.0))
    lam_fast = 0.5 * (trace + disc)
    lam_slow = 0.5 * (trace - disc)
    pe = om * d / det if det > 0 else 0.0
    if pe <= 0:
        return lam_fast, lam_slow, 0.0, pe, g * pe
    a = (om - lam_fast * pe) / ((lam_fast - lam_slow) * pe)
    return lam_fast, lam_slow, a, pe, g * pe


def expected_emission_rate(emitter, mode):
    """Rough mean photon emission rate, used to size buffers and to pick
    the generation strategy."""
    g = emitter.gamma_hz
    if mode == CW:
        if emitter.pump_rate_hz <= 0:
            return 0.0
        return three_level_g2_rates(
            emitter.pump_rate_hz, g, emitter.shelve_rate_hz, emitter.deshelve_rate_hz
        )[4]
    pt = emitter.pulses
    if pt is None:
        return 0.0
    branch = g / (g + emitter.shelve_rate_hz) if g > 0 else 0.0
    return pt.rep_rate_hz * pt.excitation_prob * branch


def simulate_trajectory(emitter, config, rng=None):
    """Exact stochastic trajectory; returns all photon emission times (s).

    Deterministic for a given (emitter, config): the RNG is derived from
    ``config.seed`` unless one is passed explicitly.
    """
    return _emission_times(emitter, config, efficiency=1.0, rng=rng)


def _emission_times(emitter, config, efficiency, rng=None):
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    if config.mode == CW:
        return _kernels.gillespie_cw(
            rng,
            config.duration_s,
            emitter.pump_rate_hz,
            emitter.gamma_hz,
            emitter.shelve_rate_hz,
            emitter.deshelve_rate_hz,
            efficiency,
        )
    if emitter.pulses is None:
        raise ValueError("pulsed mode requires EmitterParams.pulses")
    pt = emitter.pulses
    return _kernels.gillespie_pulsed(
        rng,
        config.duration_s,
        pt.period_s,
        pt.excitation_prob,
        pt.width_s,
        emitter.gamma_hz,
        emitter.shelve_rate_hz,
        emitter.deshelve_rate_hz,
        efficiency,
    )


def detected_times_cw(emitter, duration_s, efficiency, rng, batch=1 << 20):
    """Sample detected-photon times of the CW three-level chain directly.

    Between detections the chain runs K ~ Geometric cycles (ground wait +
    excited wait each), M ~ Binomial of which shelve first; the summed waits
    are Gamma variates, so each inter-detection interval is drawn exactly
    without visiting undetected emissions.  Statistically identical to
    ``simulate_trajectory`` followed by Bernoulli thinning.
    """
    om, g = emitter.pump_rate_hz, emitter.gamma_hz
    s, d = emitter.shelve_rate_hz, emitter.deshelve_rate_hz
    if om <= 0 or not 0 < efficiency <= 1:
        raise ValueError("need positive pump rate and efficiency in (0, 1]")
    decay = g + s
    p_emit = g / decay
    p_det = p_emit * efficiency
    # a non-detecting cycle is either a shelve or an undetected emission
    q_shelve = (s / decay) / (1.0 - p_det) if p_det < 1.0 else 0.0
    mean_cycle = 1.0 / om + 1.0 / decay
    if s > 0.0:
        mean_cycle += (s / decay) / d
    target = max(int(duration_s / (mean_cycle / p_det) * 1.05) + 64, 64)
    chunks = []
    t = 0.0
    while t < duration_s:
        n = min(target, batch)
        k = rng.geometric(p_det, size=n)
        dt = rng.gamma(k, 1.0 / om) + rng.gamma(k, 1.0 / decay)
        if s > 0.0:
            m = rng.binomial(k - 1, q_shelve)
            dt += rng.gamma(m, 1.0 / d)
        times = np.cumsum(dt) + t
        t = times[-1]
        chunks.append(times)
        target = max(int((duration_s - t) / (mean_cycle / p_det) * 1.05) + 64, 64)
    times = np.concatenate(chunks)
    return times[times < duration_s]


def detect(
    emissions_s,
    detector,
    n_channels=2,
    seed=0,
    duration_s=None,
    resolution_s=1e-12,
    rng=None,
):
    """Run emission times through the detector chain onto a TagStream.

    Each emission survives with ``detector.efficiency``, is routed to a
    uniformly random channel (the 50:50 splitter for n_channels == 2),
    jittered with a Gaussian of the detector's FWHM, then quantized.
    Dark counts arrive as an independent Poisson process per channel and
    the per-channel dead time prunes everything afterwards.  Events pushed
    before t = 0 or past the horizon by jitter are dropped.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    times = np.asarray(emissions_s, dtype=float)
    horizon = duration_s if duration_s is not None else (times[-1] if times.size else 0.0)
    if detector.efficiency < 1.0:
        times = times[rng.random(times.size) < detector.efficiency]
    channels = (
        rng.integers(0, n_channels, size=times.size).astype(np.uint8)
        if n_channels > 1
        else np.zeros(times.size, dtype=np.uint8)
    )
    if detector.jitter_fwhm_s > 0:
        times = times + rng.normal(0.0, detector.jitter_fwhm_s * FWHM_TO_SIGMA, times.size)
    if detector.dark_rate_hz > 0 and horizon > 0:
        per_channel = detector.dark_rate_hz * horizon
        dark_t = []
        dark_c = []
        for ch in range(n_channels):
            n_dark = rng.poisson(per_channel)
            dark_t.append(rng.uniform(0.0, horizon, n_dark))
            dark_c.append(np.full(n_dark, ch, dtype=np.uint8))
        times = np.concatenate([times] + dark_t)
        channels = np.concatenate([channels] + dark_c)
    inside = times >= 0.0
    if horizon > 0:
        inside &= times <= horizon
    times, channels = times[inside], channels[inside]
    ticks = np.round(times / resolution_s).astype(np.int64)
    order = np.lexsort((channels, ticks))
    ticks, channels = ticks[order], channels[order]
    if detector.dead_time_s > 0 and ticks.size:
        dead_ticks = math.ceil(detector.dead_time_s / resolution_s - 1e-9)
        keep = _kernels.dead_time_keep(ticks, channels, n_channels, dead_ticks)
        ticks, channels = ticks[keep], channels[keep]
    return TagStream(
        resolution_s=resolution_s,
        n_channels=n_channels,
        channels=channels,
        ticks=ticks,
    )


def sync_channel(emitter, config, resolution_s=1e-12, channel=0):
    """Laser sync tags: one per pulse at the exact pulse times."""
    if config.mode != PULSED:
        raise ValueError("sync channel only exists in pulsed mode")
    if emitter.pulses is None:
        raise ValueError("pulsed mode requires EmitterParams.pulses")
    period = emitter.pulses.period_s
    n = max(int(math.ceil(config.duration_s / period - 1e-12)), 1)
    k = np.arange(n, dtype=np.float64)
    ticks = np.round(k * period / resolution_s).astype(np.int64)
    return TagStream(
        resolution_s=resolution_s,
        n_channels=channel + 1,
        channels=np.full(n, channel, dtype=np.uint8),
        ticks=ticks,
    )


def simulate_stream(
    emitter,
    config,
    detector,
    n_channels=2,
    resolution_s=1e-12,
    include_sync=False,
    fused=None,
):
    """Full pipeline: emitter trajectory -> detector chain -> TagStream.

    ``fused`` controls source thinning: True folds the detector efficiency
    into the photon generation (mandatory for very long high-rate runs),
    False keeps the full trajectory, None picks automatically from the
    expected emission count.  With ``include_sync`` (pulsed mode) the laser
    sync tags are merged on the extra channel ``n_channels``.
    """
    ss = np.random.SeedSequence(config.seed)
    emit_rng, det_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    if fused is None:
        fused = (
            expected_emission_rate(emitter, config.mode) * config.duration_s
            > FUSE_THRESHOLD
        )
    eff = detector.efficiency
    if fused and eff < 1.0:
        if config.mode == CW:
            emissions = detected_times_cw(emitter, config.duration_s, eff, emit_rng)
        else:
            emissions = _emission_times(emitter, config, eff, rng=emit_rng)
        det_local = replace(detector, efficiency=1.0)
    else:
        emissions = simulate_trajectory(emitter, config, rng=emit_rng)
        det_local = detector
    stream = detect(
        emissions,
        det_local,
        n_channels=n_channels,
        duration_s=config.duration_s,
        resolution_s=resolution_s,
        rng=det_rng,
    )
    if include_sync:
        sync = sync_channel(emitter, config, resolution_s, channel=n_channels)
        stream = merge_streams([stream, sync])
    return stream
