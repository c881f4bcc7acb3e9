"""Numba kernels for the event-level simulation and stream filtering.

Everything here is called with a numpy Generator so runs are reproducible
from a single seed.  Emission kernels optionally thin at the source
(``efficiency`` < 1), which is statistically identical to detecting
afterwards but keeps huge runs in memory budget.
"""

import numpy as np
from numba import njit

_G, _E, _D = 0, 1, 2


@njit(cache=True)
def _grow(buf, n):
    out = np.empty(buf.size * 2, dtype=buf.dtype)
    out[:n] = buf[:n]
    return out


@njit(cache=True)
def gillespie_cw(rng, duration, pump, gamma, shelve, deshelve, efficiency):
    """Exact three-level trajectory under CW drive.

    States ground/excited/dark; pump G->E, gamma E->G (photon),
    shelve E->D, deshelve D->G.  Returns recorded photon times (s),
    thinned by ``efficiency`` at the source.
    """
    cap = 4096
    out = np.empty(cap, dtype=np.float64)
    n = 0
    t = 0.0
    state = _G
    decay_total = gamma + shelve
    emit_branch = gamma / decay_total if decay_total > 0 else 0.0
    while t < duration:
        if state == _G:
            if pump <= 0.0:
                break
            t += rng.exponential(1.0 / pump)
            state = _E
        elif state == _E:
            if decay_total <= 0.0:
                break
            t += rng.exponential(1.0 / decay_total)
            if rng.random() < emit_branch:
                state = _G
                if t < duration and (efficiency >= 1.0 or rng.random() < efficiency):
                    if n == cap:
                        out = _grow(out, n)
                        cap *= 2
                    out[n] = t
                    n += 1
            else:
                state = _D
        else:
            if deshelve <= 0.0:
                break
            t += rng.exponential(1.0 / deshelve)
            state = _G
    return out[:n].copy()


@njit(cache=True)
def gillespie_pulsed(
    rng, duration, period, p_exc, width, gamma, shelve, deshelve, efficiency
):
    """Exact three-level trajectory under a pulse train.

    The pump acts only inside pulse windows [k*period, k*period + width).
    For width > 0 the in-window pump rate is set so a ground-state emitter
    is excited with probability ``p_exc`` per pulse, and an emitter that
    decays inside the window can be re-excited.  width == 0 collapses to a
    Bernoulli excitation at the pulse instant.
    """
    cap = 4096
    out = np.empty(cap, dtype=np.float64)
    n = 0
    t = 0.0
    state = _G
    decay_total = gamma + shelve
    emit_branch = gamma / decay_total if decay_total > 0 else 0.0
    pump_w = 0.0
    if width > 0.0 and p_exc > 0.0:
        if p_exc >= 1.0:
            pump_w = 1e30  # effectively instant excitation at window start
        else:
            pump_w = -np.log(1.0 - p_exc) / width
    while t < duration:
        if state == _G:
            if p_exc <= 0.0:
                break
            if width <= 0.0:
                # next pulse at or after t
                k = int(np.ceil(t / period - 1e-12))
                while True:
                    tp = k * period
                    if tp < t:
                        k += 1
                        continue
                    if tp >= duration:
                        t = duration
                        break
                    if p_exc >= 1.0 or rng.random() < p_exc:
                        t = tp
                        state = _E
                        break
                    k += 1
            else:
                k = int(t / period)
                if t >= k * period + width:
                    k += 1
                while True:
                    win_start = k * period
                    if win_start >= duration:
                        t = duration
                        break
                    begin = t if t > win_start else win_start
                    remaining = win_start + width - begin
                    wait = rng.exponential(1.0 / pump_w)
                    if wait < remaining:
                        t = begin + wait
                        state = _E
                        break
                    k += 1
        elif state == _E:
            if decay_total <= 0.0:
                break
            t += rng.exponential(1.0 / decay_total)
            if rng.random() < emit_branch:
                state = _G
                if t < duration and (efficiency >= 1.0 or rng.random() < efficiency):
                    if n == cap:
                        out = _grow(out, n)
                        cap *= 2
                    out[n] = t
                    n += 1
            else:
                state = _D
        else:
            if deshelve <= 0.0:
                break
            t += rng.exponential(1.0 / deshelve)
            state = _G
    return out[:n].copy()


@njit(cache=True)
def dead_time_keep(ticks, channels, n_channels, dead_ticks):
    """Keep mask enforcing a per-channel minimum gap of ``dead_ticks``."""
    n = ticks.size
    keep = np.ones(n, dtype=np.bool_)
    last = np.full(n_channels, np.int64(-(2**62)), dtype=np.int64)
    for i in range(n):
        c = channels[i]
        if ticks[i] - last[c] >= dead_ticks:
            last[c] = ticks[i]
        else:
            keep[i] = False
    return keep
