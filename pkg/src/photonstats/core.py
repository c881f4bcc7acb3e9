"""Closed-form emitter photophysics.

Lorentzian spectra and their decomposition, coherence-rate algebra
(T1 / T2 / T2*), ideal rectangular spectral filters, the Debye-Waller
factor and a few derived scalar figures of merit.

Unit conventions used across the package:

* times in seconds, rates in Hz (plain 1/e rates, not angular ones)
* photon energies in eV, optical frequencies in Hz
* the total dephasing rate is ``Gamma = gamma + 2*gamma_star`` with
  ``gamma = 1/T1`` and ``gamma_star = 1/T2_star``; the corresponding
  linewidth FWHM in Hz is ``Gamma / (2*pi)``.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

# Planck constant in eV*s (CODATA 2018), used for all energy/frequency
# conversions in this package.
PLANCK_EV_S = 4.135667696e-15

ZPL = "ZPL"
LO_PHONON = "LO_phonon"
LE_PHONON = "LE_phonon"
OTHER = "other"
COMPONENT_KINDS = (ZPL, LO_PHONON, LE_PHONON, OTHER)


def ev_to_hz(energy_ev):
    """Convert photon energy (eV) to optical frequency (Hz)."""
    return np.asarray(energy_ev, dtype=float) / PLANCK_EV_S


def hz_to_ev(freq_hz):
    """Convert optical frequency (Hz) to photon energy (eV)."""
    return np.asarray(freq_hz, dtype=float) * PLANCK_EV_S


@dataclass(frozen=True)
class LorentzianComponent:
    """One Lorentzian line: center and FWHM in eV, dimensionless area."""

    center_ev: float
    fwhm_ev: float
    area: float
    kind: str = OTHER

    def __post_init__(self):
        if not self.center_ev > 0:
            raise ValueError(f"center must be positive, got {self.center_ev}")
        if not self.fwhm_ev > 0:
            raise ValueError(f"fwhm must be positive, got {self.fwhm_ev}")
        if self.area < 0:
            raise ValueError(f"area must be non-negative, got {self.area}")
        if self.kind not in COMPONENT_KINDS:
            raise ValueError(f"unknown component kind {self.kind!r}")

    def density(self, energy_ev):
        """Spectral density (1/eV) of this component at the given energies.

        A component with area 1 integrates to 1 over the whole axis.
        """
        e = np.asarray(energy_ev, dtype=float)
        half = self.fwhm_ev / 2.0
        return self.area * (self.fwhm_ev / (2.0 * math.pi)) / (
            (e - self.center_ev) ** 2 + half**2
        )


@dataclass(frozen=True)
class ParametricSpectrum:
    """Spectrum described as a sum of tagged Lorentzian components."""

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("spectrum needs at least one component")
        object.__setattr__(self, "components", comps)

    @property
    def total_area(self):
        return float(sum(c.area for c in self.components))

    def area_of(self, kind):
        return float(sum(c.area for c in self.components if c.kind == kind))


@dataclass(frozen=True)
class SampledSpectrum:
    """Spectrum sampled on a strictly increasing energy grid (eV)."""

    energy_ev: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energy_ev, dtype=float)
        c = np.asarray(self.counts, dtype=float)
        if e.ndim != 1 or e.size == 0:
            raise ValueError("energy grid must be a non-empty 1-d array")
        if e.shape != c.shape:
            raise ValueError("energy grid and counts must have equal length")
        if not np.all(np.diff(e) > 0):
            raise ValueError("energy grid must be strictly increasing")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValueError("counts must be finite and non-negative")
        object.__setattr__(self, "energy_ev", e)
        object.__setattr__(self, "counts", c)

    def integral(self):
        """Trapezoidal integral of the sampled density (counts * eV)."""
        return float(np.trapezoid(self.counts, self.energy_ev))


@dataclass(frozen=True)
class FilterSpec:
    """Ideal rectangular spectral filter; ``None`` edge means unbounded."""

    low_edge_ev: float = None
    high_edge_ev: float = None

    def __post_init__(self):
        if (
            self.low_edge_ev is not None
            and self.high_edge_ev is not None
            and not self.low_edge_ev < self.high_edge_ev
        ):
            raise ValueError("low edge must lie below high edge")

    def passes(self, energy_ev):
        """Boolean transmission mask for the given energies."""
        e = np.asarray(energy_ev, dtype=float)
        mask = np.ones(e.shape, dtype=bool)
        if self.low_edge_ev is not None:
            mask &= e >= self.low_edge_ev
        if self.high_edge_ev is not None:
            mask &= e <= self.high_edge_ev
        return mask


@dataclass(frozen=True)
class CoherenceRates:
    """Coherence bookkeeping for one emitter.

    Built from the two independent times T1 (spontaneous emission) and
    T2* (pure dephasing); everything else is derived so the rate identity
    Gamma = gamma + 2*gamma_star holds exactly.
    """

    t1_s: float
    t2_star_s: float

    def __post_init__(self):
        if not self.t1_s > 0:
            raise ValueError(f"T1 must be positive, got {self.t1_s}")
        if not self.t2_star_s > 0:
            raise ValueError(f"T2* must be positive, got {self.t2_star_s}")

    @property
    def gamma(self):
        """Spontaneous decay rate 1/T1 (Hz)."""
        return 1.0 / self.t1_s

    @property
    def gamma_star(self):
        """Pure dephasing rate 1/T2* (Hz)."""
        return 1.0 / self.t2_star_s

    @property
    def gamma_total(self):
        """Total dephasing rate gamma + 2*gamma_star (Hz)."""
        return self.gamma + 2.0 * self.gamma_star

    @property
    def t2_s(self):
        """Total coherence time 2/Gamma, i.e. 1/T2 = 1/(2 T1) + 1/T2*."""
        return 2.0 / self.gamma_total

    @property
    def linewidth_fwhm_hz(self):
        """Homogeneous linewidth FWHM, Gamma/(2 pi)."""
        return self.gamma_total / (2.0 * math.pi)


@dataclass(frozen=True)
class SaturationModel:
    """Two-level saturation of the detected count rate, I(P) = I_inf / (1 + P_sat/P)."""

    i_inf_hz: float
    p_sat_w: float

    def __post_init__(self):
        if not self.i_inf_hz > 0:
            raise ValueError("I_inf must be positive")
        if not self.p_sat_w > 0:
            raise ValueError("P_sat must be positive")


def evaluate_spectrum(spectrum, grid_ev):
    """Evaluate a parametric spectrum on an energy grid.

    Parameters
    ----------
    spectrum : ParametricSpectrum
    grid_ev : array_like
        Strictly increasing energies (eV).

    Returns
    -------
    SampledSpectrum with the summed Lorentzian density (1/eV) per sample.
    """
    grid = np.asarray(grid_ev, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-d array")
    if not np.all(np.diff(grid) > 0):
        raise ValueError("grid must be strictly increasing")
    total = np.zeros_like(grid)
    for comp in spectrum.components:
        total += comp.density(grid)
    return SampledSpectrum(grid, total)


def dw_factor(spectrum):
    """Debye-Waller factor: ZPL area divided by total area.

    Requires at least one component tagged ZPL and a positive total area.
    """
    zpl = spectrum.area_of(ZPL)
    if not any(c.kind == ZPL for c in spectrum.components):
        raise ValueError("no component tagged as ZPL")
    total = spectrum.total_area
    if total <= 0:
        raise ValueError("total spectral area is zero")
    return zpl / total


def apply_filter(spectrum, filt):
    """Zero the counts of a sampled spectrum outside the filter window.

    The energy grid is left unchanged, so filtered spectra keep explicit
    zeros where the filter blocks.
    """
    mask = filt.passes(spectrum.energy_ev)
    return SampledSpectrum(spectrum.energy_ev, np.where(mask, spectrum.counts, 0.0))


def band_fractions(spectrum, filt, grid_ev):
    """Per-kind intensity fractions transmitted by a filter.

    Evaluates each component of a parametric spectrum on ``grid_ev``,
    applies the filter and returns ``{kind: fraction}`` where fractions
    are relative to the total transmitted intensity.
    """
    grid = np.asarray(grid_ev, dtype=float)
    mask = filt.passes(grid)
    passed = {}
    for comp in spectrum.components:
        w = float(np.trapezoid(np.where(mask, comp.density(grid), 0.0), grid))
        passed[comp.kind] = passed.get(comp.kind, 0.0) + w
    total = sum(passed.values())
    if total <= 0:
        raise ValueError("filter transmits no intensity")
    return {kind: w / total for kind, w in passed.items()}


def coherence_from_times(t1_s, t2_star_s):
    """Build CoherenceRates from T1 and T2* (both seconds, both > 0)."""
    return CoherenceRates(t1_s=float(t1_s), t2_star_s=float(t2_star_s))


def fourier_limited_linewidth(t1_s):
    """Lifetime-limited linewidth FWHM in Hz, 1/(2 pi T1)."""
    if not t1_s > 0:
        raise ValueError("T1 must be positive")
    return 1.0 / (2.0 * math.pi * t1_s)


def indistinguishability(rates):
    """Mean wavepacket overlap gamma/Gamma, equivalently T2/(2 T1)."""
    return rates.gamma / rates.gamma_total


def source_to_detector_efficiency(i_inf_hz, t1_s):
    """CW source-to-detector efficiency, I_inf * T1 (dimensionless)."""
    if i_inf_hz < 0 or not t1_s > 0:
        raise ValueError("need I_inf >= 0 and T1 > 0")
    return i_inf_hz * t1_s


def pulsed_source_to_detector_efficiency(i_inf_hz, rep_rate_hz):
    """Pulsed-drive source-to-detector efficiency, I_inf / rep_rate."""
    if i_inf_hz < 0 or not rep_rate_hz > 0:
        raise ValueError("need I_inf >= 0 and rep_rate > 0")
    return i_inf_hz / rep_rate_hz


def saturation_intensity(model, power_w):
    """Detected count rate (Hz) at pump power ``power_w`` (W)."""
    p = np.asarray(power_w, dtype=float)
    if np.any(p <= 0):
        raise ValueError("power must be positive")
    return model.i_inf_hz / (1.0 + model.p_sat_w / p)


def save_spectrum_csv(spectrum, path):
    """Write a sampled spectrum as CSV with header ``energy_eV,counts``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["energy_eV", "counts"])
        for e, c in zip(spectrum.energy_ev, spectrum.counts):
            writer.writerow([repr(float(e)), repr(float(c))])


def load_spectrum_csv(path):
    """Read a sampled spectrum from ``energy_eV,counts`` CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["energy_eV", "counts"]:
            raise ValueError(f"{path}: expected header 'energy_eV,counts'")
        rows = [(float(r[0]), float(r[1])) for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: no samples")
    energy, counts = map(np.asarray, zip(*rows))
    return SampledSpectrum(energy, counts)


def save_spectrum_json(spectrum, path):
    """Write a parametric spectrum as a JSON list of component objects."""
    payload = [
        {
            "center_eV": c.center_ev,
            "fwhm_eV": c.fwhm_ev,
            "area": c.area,
            "kind": c.kind,
        }
        for c in spectrum.components
    ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_spectrum_json(path):
    """Read a parametric spectrum from its JSON component list."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, list) or not payload:
        raise ValueError(f"{path}: expected a non-empty JSON list of components")
    comps = [
        LorentzianComponent(
            center_ev=item["center_eV"],
            fwhm_ev=item["fwhm_eV"],
            area=item["area"],
            kind=item.get("kind", OTHER),
        )
        for item in payload
    ]
    return ParametricSpectrum(tuple(comps))
