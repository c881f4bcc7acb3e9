"""Model registry for the shared fit engine.

Every fitted curve shape in the package lives here as a ModelSpec:
an evaluate function, an optional analytic Jacobian, a data-driven
initializer and parameter names/units.  Fit code looks models up by id;
unknown ids raise ModelNotFoundError and duplicate registration raises
ValueError.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import find_peaks
from scipy.special import erfcx

_SQRT2 = math.sqrt(2.0)


class ModelNotFoundError(KeyError):
    """Raised when a model id is not present in the registry."""


@dataclass(frozen=True)
class ModelSpec:
    """One registered curve model.

    ``param_names`` is either a tuple (fixed arity) or a callable taking
    the parameter count, for families like the multi-Lorentzian whose
    arity is set by the initial vector.  ``multistart`` > 1 asks the fit
    engine for jittered restarts.
    """

    name: str
    param_names: object
    units: object
    evaluate: object
    jacobian: object = None
    initializer: object = None
    multistart: int = 1

    def param_names_for(self, n_params):
        if callable(self.param_names):
            return tuple(self.param_names(n_params))
        if len(self.param_names) != n_params:
            raise ValueError(
                f"model {self.name!r} expects {len(self.param_names)} "
                f"parameters, got {n_params}"
            )
        return tuple(self.param_names)

    def units_for(self, n_params):
        if callable(self.units):
            return tuple(self.units(n_params))
        return tuple(self.units)


class Registry:
    """Mapping of model ids to ModelSpec objects."""

    def __init__(self):
        self._models = {}

    def register(self, spec):
        if spec.name in self._models:
            raise ValueError(f"duplicate model id {spec.name!r}")
        self._models[spec.name] = spec
        return spec

    def get(self, name):
        try:
            return self._models[name]
        except KeyError:
            raise ModelNotFoundError(
                f"no model registered under id {name!r}; "
                f"known ids: {sorted(self._models)}"
            ) from None

    def ids(self):
        return sorted(self._models)

    def __contains__(self, name):
        return name in self._models

    def __len__(self):
        return len(self._models)


# ---------------------------------------------------------------------------
# model definitions


def _linear_eval(x, p):
    a, b = p
    return a * np.asarray(x, dtype=float) + b


def _linear_jac(x, p):
    x = np.asarray(x, dtype=float)
    return np.column_stack([x, np.ones_like(x)])


def _linear_init(x, y):
    a, b = np.polyfit(x, y, 1)
    return np.array([a, b])


def _saturation_eval(x, p):
    i_inf, p_sat = p
    x = np.asarray(x, dtype=float)
    return i_inf / (1.0 + p_sat / x)


def _saturation_jac(x, p):
    i_inf, p_sat = p
    x = np.asarray(x, dtype=float)
    denom = 1.0 + p_sat / x
    d_inf = 1.0 / denom
    d_psat = -i_inf / (denom**2 * x)
    return np.column_stack([d_inf, d_psat])


def _saturation_init(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    i_inf = 1.2 * float(np.max(y))
    # P at half the plateau estimates P_sat
    half = 0.5 * i_inf
    above = y >= half
    p_sat = float(x[np.argmax(above)]) if above.any() else float(np.median(x))
    return np.array([i_inf, max(p_sat, 1e-12)])


def _lorentz_names(n_params):
    if n_params % 3:
        raise ValueError("lorentzian_sum takes 3 parameters per component")
    names = []
    for k in range(n_params // 3):
        names += [f"center_ev_{k}", f"fwhm_ev_{k}", f"area_{k}"]
    return names


def _lorentz_units(n_params):
    return ["eV", "eV", ""] * (n_params // 3)


def _lorentz_eval(x, p):
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    out = np.zeros_like(x)
    for center, fwhm, area in p:
        half = fwhm / 2.0
        out += area * (fwhm / (2.0 * math.pi)) / ((x - center) ** 2 + half**2)
    return out


def _lorentz_jac(x, p):
    x = np.asarray(x, dtype=float)
    comps = np.asarray(p, dtype=float).reshape(-1, 3)
    cols = []
    for center, fwhm, area in comps:
        half = fwhm / 2.0
        d2 = (x - center) ** 2 + half**2
        base = (fwhm / (2.0 * math.pi)) / d2
        d_center = area * base * 2.0 * (x - center) / d2
        d_fwhm = (area / (2.0 * math.pi)) * (1.0 / d2 - (fwhm**2 / 2.0) / d2**2)
        d_area = base
        cols += [d_center, d_fwhm, d_area]
    return np.column_stack(cols)


def _lorentz_init(x, y, n_components=None):
    """Propose one component per local maximum, strongest first.

    The prominence threshold self-relaxes until enough peaks emerge;
    sidebands in log-scale photoluminescence data sit orders of magnitude
    below the main line.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    wanted = n_components or 1
    idx = np.array([], dtype=int)
    props = {"prominences": np.array([])}
    for cut in (5e-2, 1e-2, 1e-3, 1e-4, 1e-5):
        idx, props = find_peaks(y, prominence=cut * float(np.max(y)))
        if idx.size >= wanted:
            break
    if idx.size == 0:
        idx = np.array([int(np.argmax(y))])
        props = {"prominences": np.array([float(np.max(y))])}
    order = np.argsort(props["prominences"])[::-1]
    idx = idx[order]
    if n_components is not None:
        idx = idx[:n_components]
    idx = np.sort(idx)
    step = float(np.median(np.diff(x)))
    params = []
    for i in idx:
        height = y[i]
        # half-maximum crossing distance estimates the width
        above = y >= height / 2.0
        left = i
        while left > 0 and above[left - 1]:
            left -= 1
        right = i
        while right < y.size - 1 and above[right + 1]:
            right += 1
        fwhm = max((right - left + 1) * step, 2.0 * step)
        area = height * fwhm * math.pi / 2.0
        params += [x[i], fwhm, area]
    return np.array(params)


def _emg_shape(t, t0, sigma, tau):
    """Unit-area exponential decay (lifetime tau) convolved with a Gaussian."""
    t = np.asarray(t, dtype=float)
    u = t - t0
    if sigma <= 0:
        out = np.zeros_like(u)
        pos = u >= 0
        out[pos] = np.exp(-u[pos] / tau) / tau
        return out
    z = (sigma / tau - u / sigma) / _SQRT2
    return (0.5 / tau) * erfcx(z) * np.exp(-0.5 * (u / sigma) ** 2)


def _lifetime_eval(x, p):
    amplitude, t1, t0, sigma, background = p
    return amplitude * _emg_shape(x, t0, sigma, t1) + background


def _lifetime_init(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    background = float(np.percentile(y, 5))
    peak = int(np.argmax(y))
    t0 = float(x[peak])
    tail = (y > background + 0.05 * (y[peak] - background)) & (x > t0)
    if tail.sum() >= 3:
        xt = x[tail]
        yt = np.log(np.maximum(y[tail] - background, 1e-12))
        slope = np.polyfit(xt, yt, 1)[0]
        t1 = -1.0 / slope if slope < 0 else (x[-1] - t0) / 3.0
    else:
        t1 = (x[-1] - t0) / 3.0
    t1 = max(t1, (x[1] - x[0]))
    amplitude = float(np.sum(y - background) * (x[1] - x[0]))
    sigma = (x[1] - x[0])  # refined by the caller; kept positive
    return np.array([amplitude, t1, t0, sigma, background])


def _g2_eval(x, p):
    tau1, tau2, a, baseline = p
    t = np.abs(np.asarray(x, dtype=float))
    return baseline * (1.0 - (1.0 + a) * np.exp(-t / tau1) + a * np.exp(-t / tau2))


def _g2_jac(x, p):
    tau1, tau2, a, baseline = p
    t = np.abs(np.asarray(x, dtype=float))
    e1 = np.exp(-t / tau1)
    e2 = np.exp(-t / tau2)
    d_tau1 = -baseline * (1.0 + a) * e1 * t / tau1**2
    d_tau2 = baseline * a * e2 * t / tau2**2
    d_a = baseline * (e2 - e1)
    d_base = 1.0 - (1.0 + a) * e1 + a * e2
    return np.column_stack([d_tau1, d_tau2, d_a, d_base])


def _g2_init(x, y):
    """Initial guess for the three-level g2 shape from the data itself."""
    t = np.abs(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    far = t >= 0.8 * t.max()
    baseline = float(np.mean(y[far])) if far.any() else float(np.mean(y))
    baseline = max(baseline, 1e-6)
    order = np.argsort(t)
    ts, ys = t[order], y[order]
    target = baseline * (1.0 - 1.0 / math.e)
    above = ys >= target
    tau1 = float(ts[np.argmax(above)]) if above.any() else float(ts[min(2, ts.size - 1)])
    tau1 = max(tau1, float(ts[1]) if ts.size > 1 else 1e-9)
    excess = ys / baseline - 1.0
    pos = excess > 0.02
    if pos.any():
        a = float(np.clip(np.max(excess[pos]), 0.01, 100.0))
        tau2 = float(np.median(ts[pos]))
    else:
        a = 0.05
        tau2 = float(ts[-1]) / 10.0
    tau2 = max(tau2, 2.0 * tau1)
    return np.array([tau1, tau2, a, baseline])


def _vis_exp_eval(x, p):
    v0, t2 = p
    return v0 * np.exp(-np.abs(np.asarray(x, dtype=float)) / t2)


def _vis_exp_jac(x, p):
    v0, t2 = p
    t = np.abs(np.asarray(x, dtype=float))
    e = np.exp(-t / t2)
    return np.column_stack([e, v0 * e * t / t2**2])


def _vis_gauss_eval(x, p):
    v0, t2 = p
    return v0 * np.exp(-((np.asarray(x, dtype=float) / t2) ** 2))


def _vis_gauss_jac(x, p):
    v0, t2 = p
    t = np.asarray(x, dtype=float)
    e = np.exp(-((t / t2) ** 2))
    return np.column_stack([e, v0 * e * 2.0 * t**2 / t2**3])


def _vis_init(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    v0 = float(np.clip(np.max(y), 1e-3, 1.5))
    below = y <= v0 / math.e
    t2 = float(x[np.argmax(below)]) if below.any() else float(x[-1])
    return np.array([v0, max(t2, float(np.min(np.abs(np.diff(x)))))])


_REGISTRY = None


def build_registry():
    """Construct a fresh registry with all built-in models."""
    reg = Registry()
    reg.register(
        ModelSpec(
            name="linear",
            param_names=("slope", "intercept"),
            units=("", ""),
            evaluate=_linear_eval,
            jacobian=_linear_jac,
            initializer=_linear_init,
        )
    )
    reg.register(
        ModelSpec(
            name="saturation",
            param_names=("i_inf_hz", "p_sat_w"),
            units=("Hz", "W"),
            evaluate=_saturation_eval,
            jacobian=_saturation_jac,
            initializer=_saturation_init,
        )
    )
    reg.register(
        ModelSpec(
            name="lorentzian_sum",
            param_names=_lorentz_names,
            units=_lorentz_units,
            evaluate=_lorentz_eval,
            jacobian=_lorentz_jac,
            initializer=_lorentz_init,
        )
    )
    reg.register(
        ModelSpec(
            name="lifetime_decay",
            param_names=("amplitude", "t1_s", "t0_s", "irf_sigma_s", "background"),
            units=("counts*s", "s", "s", "s", "counts"),
            evaluate=_lifetime_eval,
            jacobian=None,  # erfcx derivative chain is not worth hand-coding
            initializer=_lifetime_init,
        )
    )
    reg.register(
        ModelSpec(
            name="g2_three_level",
            param_names=("tau1_s", "tau2_s", "a", "baseline"),
            units=("s", "s", "", ""),
            evaluate=_g2_eval,
            jacobian=_g2_jac,
            initializer=_g2_init,
            multistart=8,
        )
    )
    reg.register(
        ModelSpec(
            name="visibility_exponential",
            param_names=("v0", "t2_star_s"),
            units=("", "s"),
            evaluate=_vis_exp_eval,
            jacobian=_vis_exp_jac,
            initializer=_vis_init,
        )
    )
    reg.register(
        ModelSpec(
            name="visibility_gaussian",
            param_names=("v0", "t2_star_s"),
            units=("", "s"),
            evaluate=_vis_gauss_eval,
            jacobian=_vis_gauss_jac,
            initializer=_vis_init,
        )
    )
    return reg


def registry():
    """Process-wide default registry (built lazily)."""
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = build_registry()
    return _REGISTRY


def register_models():
    """Return the default model registry, building it if needed."""
    return registry()
