"""Shared weighted least-squares machinery.

A small Levenberg-Marquardt minimizer with the classical damping schedule
(lambda x10 on rejected steps, /10 on accepted ones), box bounds handled
through smooth parameter transforms, and standard errors taken from the
inverse of J^T W J at the optimum.  All fitting in this package funnels
through :func:`lm_minimize` and the model registry in
:mod:`photonstats.models`.
"""

import math
from dataclasses import dataclass, field

import numpy as np

LAMBDA0 = 1e-3
LAMBDA_MAX = 1e12
FD_REL_STEP = 1e-6


@dataclass
class FitProblem:
    """One weighted least-squares problem against a registered model.

    Parameters
    ----------
    model : str
        Registry id of the model to fit.
    x, y : arrays
        Independent and dependent data.
    sigma : array or None
        1-sigma uncertainties per point; None means unit weights.
    p0 : array or None
        Initial parameters; None defers to the model's initializer.
    lo, hi : arrays or None
        Per-parameter bounds (use -inf/+inf entries for open sides).
        Setting lo[i] == hi[i] freezes parameter i at that value.
    """

    model: str
    x: np.ndarray
    y: np.ndarray
    sigma: np.ndarray = None
    p0: np.ndarray = None
    lo: np.ndarray = None
    hi: np.ndarray = None
    max_iter: int = 200
    ftol: float = 1e-10
    gtol: float = 1e-12


@dataclass
class FitResult:
    """Outcome of one minimization.

    ``params``/``stderr`` map parameter names to values; ``flags`` carries
    machine-readable notes such as ``degenerate:<name>`` or
    ``max_iterations``.  A result is returned even on failure to converge,
    with ``converged`` False.
    """

    model: str
    params: dict
    stderr: dict
    chi2_reduced: float
    converged: bool
    iterations: int
    flags: list = field(default_factory=list)
    covariance: np.ndarray = None
    objective: float = math.inf
    objective_trace: np.ndarray = None
    units: dict = field(default_factory=dict)

    def values(self):
        """Parameter values as an array, in registry order."""
        return np.array(list(self.params.values()), dtype=float)

    def to_dict(self):
        """JSON-ready dict following the shared fit schema."""
        return {
            "model": self.model,
            "params": {
                name: {
                    "value": self.params[name],
                    "stderr": self.stderr[name],
                    "unit": self.units.get(name, ""),
                }
                for name in self.params
            },
            "chi2_reduced": self.chi2_reduced,
            "converged": self.converged,
            "iterations": self.iterations,
            "flags": list(self.flags),
        }


# ---------------------------------------------------------------------------
# Bound handling via smooth transforms.  Each parameter gets an unconstrained
# internal coordinate u; theta(u) maps back into the feasible box:
#   two-sided   theta = lo + (hi-lo) * expit(u)
#   one-sided   theta = lo + softplus(u)   (mirrored for upper bounds)
#   free        theta = u
# Frozen parameters (lo == hi) are excluded from the optimization entirely.


def _softplus(u):
    return np.where(u > 30.0, u, np.log1p(np.exp(np.minimum(u, 30.0))))


def _softplus_inv(v):
    v = np.maximum(v, 1e-300)
    return np.where(v > 30.0, v, np.log(np.expm1(np.minimum(v, 30.0))))


def _expit(u):
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    ez = np.exp(u[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class _BoundTransform:
    """Vectorized map between internal coordinates and bounded parameters."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        if np.any(self.lo > self.hi):
            raise ValueError("lower bound above upper bound")
        self.fixed = self.lo == self.hi
        self.free = ~self.fixed
        lo_f, hi_f = np.isfinite(self.lo), np.isfinite(self.hi)
        self.two_sided = lo_f & hi_f & self.free
        self.lower_only = lo_f & ~hi_f
        self.upper_only = ~lo_f & hi_f
        self.open = ~lo_f & ~hi_f

    def to_internal(self, theta):
        theta = np.asarray(theta, dtype=float)
        u = np.array(theta, dtype=float)
        t = self.two_sided
        if np.any(t):
            width = self.hi[t] - self.lo[t]
            frac = np.clip((theta[t] - self.lo[t]) / width, 1e-12, 1 - 1e-12)
            u[t] = np.log(frac / (1.0 - frac))
        m = self.lower_only
        if np.any(m):
            u[m] = _softplus_inv(np.maximum(theta[m] - self.lo[m], 1e-300))
        m = self.upper_only
        if np.any(m):
            u[m] = _softplus_inv(np.maximum(self.hi[m] - theta[m], 1e-300))
        return u[self.free]

    def to_params(self, u_free):
        theta = np.array(self.lo, dtype=float)  # fixed entries stay at lo
        u = np.zeros(self.lo.shape)
        u[self.free] = u_free
        t = self.two_sided
        if np.any(t):
            theta[t] = self.lo[t] + (self.hi[t] - self.lo[t]) * _expit(u[t])
        m = self.lower_only
        if np.any(m):
            theta[m] = self.lo[m] + _softplus(u[m])
        m = self.upper_only
        if np.any(m):
            theta[m] = self.hi[m] - _softplus(u[m])
        m = self.open
        if np.any(m):
            theta[m] = u[m]
        return theta

    def dtheta_du(self, u_free):
        """Diagonal of the chain-rule factor, one entry per free parameter."""
        u = np.zeros(self.lo.shape)
        u[self.free] = u_free
        d = np.ones(self.lo.shape)
        t = self.two_sided
        if np.any(t):
            s = _expit(u[t])
            d[t] = (self.hi[t] - self.lo[t]) * s * (1.0 - s)
        m = self.lower_only | self.upper_only
        if np.any(m):
            d[m] = _expit(u[m])
            if np.any(self.upper_only):
                d[self.upper_only] *= -1.0
        return d[self.free]


def finite_difference_jacobian(func, theta, rel_step=FD_REL_STEP):
    """Central-difference Jacobian of ``func`` at ``theta``.

    ``func`` maps a parameter vector to a residual/model vector; steps are
    relative, ``h_j = rel_step * |theta_j|`` (absolute rel_step at zero).
    """
    theta = np.asarray(theta, dtype=float)
    f0 = np.asarray(func(theta), dtype=float)
    jac = np.empty((f0.size, theta.size))
    for j in range(theta.size):
        h = rel_step * abs(theta[j]) if theta[j] != 0 else rel_step
        up = theta.copy()
        up[j] += h
        dn = theta.copy()
        dn[j] -= h
        jac[:, j] = (np.asarray(func(up)) - np.asarray(func(dn))) / (2.0 * h)
    return jac


def _prepare(problem, spec):
    x = np.asarray(problem.x, dtype=float)
    y = np.asarray(problem.y, dtype=float)
    if problem.sigma is None:
        sigma = np.ones_like(y)
    else:
        sigma = np.asarray(problem.sigma, dtype=float)
        if np.any(sigma <= 0):
            raise ValueError("sigma must be strictly positive")
    if problem.p0 is None:
        if spec.initializer is None:
            raise ValueError(f"model {spec.name!r} has no initializer; pass p0")
        p0 = np.asarray(spec.initializer(x, y), dtype=float)
    else:
        p0 = np.asarray(problem.p0, dtype=float)
    npar = p0.size
    lo = (
        np.full(npar, -np.inf)
        if problem.lo is None
        else np.asarray(problem.lo, dtype=float)
    )
    hi = (
        np.full(npar, np.inf)
        if problem.hi is None
        else np.asarray(problem.hi, dtype=float)
    )
    if lo.size != npar or hi.size != npar:
        raise ValueError("bounds must match parameter count")
    return x, y, sigma, p0, lo, hi


def _lm_core(x, y, sigma, spec, p0, lo, hi, max_iter, ftol, gtol):
    """Run damped Gauss-Newton from one start; returns an internal record."""
    trans = _BoundTransform(lo, hi)
    n_free = int(trans.free.sum())
    if y.size < n_free:
        raise ValueError("fewer data points than free parameters")
    # Keep frozen parameters at their requested value, not at lo of free ones.
    theta_full = np.asarray(p0, dtype=float).copy()
    trans.lo[trans.fixed] = theta_full[trans.fixed]
    trans.hi[trans.fixed] = theta_full[trans.fixed]
    u = trans.to_internal(theta_full)

    def model_of_u(u_free):
        return spec.evaluate(x, trans.to_params(u_free))

    def weighted_jac(u_free):
        theta = trans.to_params(u_free)
        if spec.jacobian is not None:
            jt = np.asarray(spec.jacobian(x, theta), dtype=float)[:, trans.free]
            jt = jt * trans.dtheta_du(u_free)[None, :]
        else:
            jt = finite_difference_jacobian(model_of_u, u_free)
        return jt / sigma[:, None]

    def chi2_of(u_free):
        r = (y - model_of_u(u_free)) / sigma
        return float(r @ r), r

    chi2, r = chi2_of(u)
    lam = LAMBDA0
    trace = [chi2]
    converged = False
    flags = []
    iterations = 0
    for iterations in range(1, max_iter + 1):
        jw = weighted_jac(u)
        grad = jw.T @ r  # gradient of chi2/(-2); descent direction
        if np.max(np.abs(grad), initial=0.0) < gtol:
            converged = True
            iterations -= 1
            break
        a = jw.T @ jw
        diag = np.diag(a).copy()
        diag[diag <= 0] = np.max(diag, initial=1.0) * 1e-12 + 1e-300
        accepted = False
        while lam <= LAMBDA_MAX:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                u_new = u + step
                chi2_new, r_new = chi2_of(u_new)
                if np.isfinite(chi2_new) and chi2_new <= chi2:
                    drop = chi2 - chi2_new
                    u, r, chi2 = u_new, r_new, chi2_new
                    trace.append(chi2)
                    lam = max(lam / 10.0, 1e-15)
                    accepted = True
                    if drop < ftol * max(chi2, 1e-300):
                        converged = True
                    break
            lam *= 10.0
        if not accepted:
            flags.append("stalled")
            break
        if converged:
            break
    else:
        iterations = max_iter
    if not converged and "stalled" not in flags:
        flags.append("max_iterations")

    theta = trans.to_params(u)
    return {
        "theta": theta,
        "u": u,
        "chi2": chi2,
        "converged": converged,
        "iterations": iterations,
        "flags": flags,
        "trace": np.asarray(trace),
        "transform": trans,
    }


def _covariance(rec, names, x, sigma, spec):
    """Covariance of the free parameters at the optimum, with degeneracy flags.

    The Jacobian is evaluated directly in parameter space (not through the
    bound transform) so that parameters resting on a bound do not distort
    the conditioning of the others.
    """
    trans = rec["transform"]
    theta = rec["theta"]
    if spec.jacobian is not None:
        j_full = np.asarray(spec.jacobian(x, theta), dtype=float)
    else:
        j_full = finite_difference_jacobian(lambda th: spec.evaluate(x, th), theta)
    j_theta = (j_full / sigma[:, None])[:, trans.free]
    a = j_theta.T @ j_theta
    free_names = [n for n, f in zip(names, trans.free) if f]
    flags = []
    cov_free = np.full(a.shape, np.nan)
    norms = np.sqrt(np.maximum(np.diag(a), 0.0))
    # a column is dead only relative to itself; cross-column norm
    # comparisons are meaningless when parameters carry different units
    zero = (norms == 0.0) | ~np.isfinite(norms)
    for name, z in zip(free_names, zero):
        if z:
            flags.append(f"degenerate:{name}")
    live = ~zero
    if live.any():
        # unit-free conditioning via the correlation matrix
        sub = a[np.ix_(live, live)]
        n_live = norms[live]
        corr = sub / np.outer(n_live, n_live)
        evals, evecs = np.linalg.eigh(corr)
        bad = evals < 1e-12 * max(evals[-1], 1.0)
        if bad.any() or not np.all(np.isfinite(corr)):
            live_names = [n for n, keep in zip(free_names, live) if keep]
            for k in np.flatnonzero(bad):
                v = np.abs(evecs[:, k])
                for name, weight in zip(live_names, v):
                    fl = f"degenerate:{name}"
                    if weight >= 0.5 * v.max() and fl not in flags:
                        flags.append(fl)
            corr_inv = np.linalg.pinv(corr)
        else:
            corr_inv = np.linalg.inv(corr)
        cov_live = corr_inv / np.outer(n_live, n_live)
        cov_free[np.ix_(live, live)] = cov_live
    cov = np.full((len(names), len(names)), np.nan)
    idx = np.flatnonzero(trans.free)
    cov[np.ix_(idx, idx)] = cov_free
    fixed_idx = np.flatnonzero(trans.fixed)
    cov[fixed_idx, :] = 0.0
    cov[:, fixed_idx] = 0.0
    return cov, flags


def lm_minimize(problem, registry=None):
    """Solve a FitProblem with Levenberg-Marquardt.

    Returns a FitResult; never raises for non-convergence (the result is
    flagged instead).  Models whose registry entry sets ``multistart > 1``
    are restarted from deterministically jittered initial points and the
    best accepted optimum wins (lowest objective, parameter-lexicographic
    tie break).
    """
    from . import models as _models

    reg = registry if registry is not None else _models.registry()
    spec = reg.get(problem.model)
    x, y, sigma, p0, lo, hi = _prepare(problem, spec)
    names = list(spec.param_names_for(p0.size))

    starts = [p0]
    if spec.multistart > 1:
        rng = np.random.default_rng(20210915)
        for _ in range(spec.multistart - 1):
            jitter = np.exp(rng.normal(0.0, 0.35, size=p0.size))
            cand = np.clip(p0 * jitter, lo, hi)
            # keep strictly inside two-sided boxes
            both = np.isfinite(lo) & np.isfinite(hi) & (lo < hi)
            width = np.where(both, hi - lo, 1.0)
            cand = np.where(both, np.clip(cand, lo + 1e-9 * width, hi - 1e-9 * width), cand)
            starts.append(cand)

    best = None
    for start in starts:
        rec = _lm_core(x, y, sigma, spec, start, lo, hi, problem.max_iter, problem.ftol, problem.gtol)
        key = (rec["chi2"], tuple(rec["theta"]))
        if best is None or key < best[0]:
            best = (key, rec)
    rec = best[1]

    cov, degen_flags = _covariance(rec, names, x, sigma, spec)
    stderr = np.sqrt(np.maximum(np.diag(cov), 0.0))
    stderr[~np.isfinite(np.diag(cov))] = np.inf
    dof = max(y.size - int(rec["transform"].free.sum()), 1)
    return FitResult(
        model=spec.name,
        params=dict(zip(names, map(float, rec["theta"]))),
        stderr=dict(zip(names, map(float, stderr))),
        chi2_reduced=rec["chi2"] / dof,
        converged=rec["converged"],
        iterations=rec["iterations"],
        flags=rec["flags"] + degen_flags,
        covariance=cov,
        objective=rec["chi2"],
        objective_trace=rec["trace"],
        units=dict(zip(names, spec.units_for(p0.size))),
    )
