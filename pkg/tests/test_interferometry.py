import math

import numpy as np
import pytest

from photonstats import core
from photonstats.interferometry import (
    EXPONENTIAL,
    GAUSSIAN,
    EnvelopeModel,
    Interferogram,
    UndersampledFringeError,
    delay_scan_plan,
    extract_visibility,
    field_autocorrelation,
    fit_envelope,
    interferogram_from_spectrum,
    michelson_lorentzian,
)

OMEGA0 = 2.0 * math.pi * core.ev_to_hz(1.746)
PERIOD = 2.0 * math.pi / OMEGA0


def lorentzian_sampled(fwhm_ev=0.005, center_ev=1.746, n=2**14, span_fwhm=20.0):
    spec = core.ParametricSpectrum(
        (core.LorentzianComponent(center_ev, fwhm_ev, 1.0, core.ZPL),)
    )
    grid = np.linspace(
        center_ev - span_fwhm * fwhm_ev, center_ev + span_fwhm * fwhm_ev, n
    )
    return core.evaluate_spectrum(spec, grid)


class TestMichelsonLorentzian:
    def test_unit_visibility_at_zero_delay(self):
        rates = core.coherence_from_times(2.54e-9, 382e-15)
        ig = michelson_lorentzian(rates, OMEGA0, 1.0, np.array([0.0]))
        assert ig.n_out[0] == pytest.approx(1.0)

    def test_half_at_long_delay(self):
        rates = core.coherence_from_times(2.54e-9, 382e-15)
        ig = michelson_lorentzian(rates, OMEGA0, 1.0, np.array([1e-9]))
        assert ig.n_out[0] == pytest.approx(0.5, abs=1e-12)

    def test_analytic_point_at_coherence_time(self):
        # tau = 2/Gamma with the cosine at +1: N = (1 + 1/e) / 2
        rates = core.coherence_from_times(2.54e-9, 382e-15)
        tau = 2.0 / rates.gamma_total
        omega0 = 2.0 * math.pi / tau  # cos(omega0 tau) = 1
        ig = michelson_lorentzian(rates, omega0, 1.0, np.array([tau]))
        assert ig.n_out[0] == pytest.approx(0.5 * (1 + math.exp(-1)), abs=1e-12)

    def test_bounds_respect_mode_overlap(self):
        rates = core.coherence_from_times(2.54e-9, 68e-15)
        delays = np.arange(0.0, 0.5e-12, PERIOD / 16)
        ig = michelson_lorentzian(rates, OMEGA0, 0.8, delays)
        assert np.all(ig.n_out <= 0.9 + 1e-12)
        assert np.all(ig.n_out >= 0.1 - 1e-12)


class TestFourierRoute:
    def test_single_lorentzian_matches_closed_form_within_1e3(self):
        sampled = lorentzian_sampled()
        fwhm_hz = core.ev_to_hz(0.005)
        rates = core.CoherenceRates(t1_s=1e3, t2_star_s=2.0 / (2 * math.pi * fwhm_hz))
        delays = np.linspace(0.0, 1.2e-12, 1501)
        closed = michelson_lorentzian(rates, OMEGA0, 0.8, delays)
        ft = interferogram_from_spectrum(sampled, 0.8, delays)
        assert np.max(np.abs(ft.n_out - closed.n_out)) < 1e-3

    def test_parseval_normalization(self):
        g1 = field_autocorrelation(lorentzian_sampled(), np.array([0.0]))
        assert abs(g1[0] - 1.0) < 1e-6

    def test_fourier_one_over_e_law(self):
        # |g1| of a Lorentzian of FWHM dnu reaches 1/e at 1/(pi dnu)
        sampled = lorentzian_sampled()
        dnu = core.ev_to_hz(0.005)
        ig = interferogram_from_spectrum(sampled, 1.0, np.arange(0.0, 0.8e-12, PERIOD / 32))
        trace = extract_visibility(ig, OMEGA0)
        crossing = np.interp(1.0 / math.e, trace.visibility[::-1], trace.delays_s[::-1])
        assert crossing == pytest.approx(1.0 / (math.pi * dnu), rel=0.02)

    def test_two_line_beat(self):
        split_ev = 0.004
        spec = core.ParametricSpectrum(
            (
                core.LorentzianComponent(1.746 - split_ev / 2, 1e-4, 1.0, core.ZPL),
                core.LorentzianComponent(1.746 + split_ev / 2, 1e-4, 1.0, core.LE_PHONON),
            )
        )
        grid = np.linspace(1.73, 1.76, 2**15)
        sampled = core.evaluate_spectrum(spec, grid)
        delta_nu = core.ev_to_hz(split_ev)
        delays = np.arange(0.0, 1.0 / delta_nu, PERIOD / 32)
        ig = interferogram_from_spectrum(sampled, 1.0, delays, tail_correction=False)
        trace = extract_visibility(ig, OMEGA0)
        expected = np.abs(np.cos(math.pi * delta_nu * trace.delays_s))
        assert np.max(np.abs(trace.visibility - expected)) < 0.05

    def test_zero_spectrum_rejected(self):
        sampled = core.SampledSpectrum(np.linspace(1.7, 1.8, 64), np.zeros(64))
        with pytest.raises(ValueError):
            field_autocorrelation(sampled, np.array([0.0]))

    def test_filter_narrowing_never_decreases_coherence_time(self):
        sampled = lorentzian_sampled(span_fwhm=30.0, n=2**15)
        previous = 0.0
        for half_fwhm in (25.0, 10.0, 4.0, 1.5, 0.75):
            half = half_fwhm * 0.005
            filtered = core.apply_filter(
                sampled, core.FilterSpec(1.746 - half, 1.746 + half)
            )
            delays = np.arange(0.0, 2.0e-12, PERIOD / 16)
            ig = interferogram_from_spectrum(filtered, 0.8, delays)
            trace = extract_visibility(ig, OMEGA0)
            fit = fit_envelope(trace, shape=EXPONENTIAL)
            t2 = fit.params["t2_star_s"]
            assert t2 >= previous
            previous = t2


class TestExtractVisibility:
    def test_pure_cosine_visibility_equals_amplitude(self):
        delays = np.arange(0.0, 40 * PERIOD, PERIOD / 32)
        n_out = 0.5 * (1.0 + 0.63 * np.cos(OMEGA0 * delays))
        ig = Interferogram(delays, n_out, 1.0)
        trace = extract_visibility(ig, OMEGA0)
        assert np.all(np.abs(trace.visibility - 0.63) < 1e-3)

    def test_constant_intensity_gives_zero(self):
        delays = np.arange(0.0, 10 * PERIOD, PERIOD / 16)
        ig = Interferogram(delays, np.full(delays.size, 0.5), 1.0)
        trace = extract_visibility(ig, OMEGA0)
        assert np.all(trace.visibility == 0.0)

    def test_undersampled_fringe_rejected(self):
        delays = np.arange(0.0, 10 * PERIOD, PERIOD / 4)
        ig = Interferogram(delays, np.full(delays.size, 0.5), 1.0)
        with pytest.raises(UndersampledFringeError):
            extract_visibility(ig, OMEGA0)

    def test_exponential_envelope_within_two_percent(self):
        rates = core.coherence_from_times(2.54e-9, 382e-15)
        delays = np.arange(0.0, 1.2e-12, PERIOD / 32)
        ig = michelson_lorentzian(rates, OMEGA0, 1.0, delays)
        trace = extract_visibility(ig, OMEGA0)
        expected = np.exp(-trace.delays_s / rates.t2_s)
        assert np.max(np.abs(trace.visibility / expected - 1.0)) < 0.02

    def test_visibility_never_exceeds_mode_overlap(self):
        rates = core.coherence_from_times(2.54e-9, 68e-15)
        delays = np.arange(0.0, 0.6e-12, PERIOD / 24)
        ig = michelson_lorentzian(rates, OMEGA0, 0.8, delays)
        trace = extract_visibility(ig, OMEGA0)
        assert np.all(trace.visibility <= 0.8 + 0.01)


class TestFitEnvelope:
    @staticmethod
    def noisy_trace(t2_star, v0=0.8, noise=0.02, shape=EXPONENTIAL, seed=0):
        rng = np.random.default_rng(seed)
        delays = np.linspace(0.0, 3.0 * t2_star, 40)
        model = EnvelopeModel(shape=shape, v0=v0, t2_star_s=t2_star)
        vis = np.clip(model.evaluate(delays) * (1 + rng.normal(0, noise, 40)), 0, None)
        from photonstats.interferometry import VisibilityTrace

        return VisibilityTrace(delays_s=delays, visibility=vis)

    def test_zpl_reference_recovery(self):
        trace = self.noisy_trace(382e-15)
        fit = fit_envelope(trace, shape=EXPONENTIAL)
        assert fit.params["t2_star_s"] == pytest.approx(382e-15, abs=11e-15)
        assert fit.params["v0"] == pytest.approx(0.8, abs=0.02)

    def test_full_spectrum_reference_recovery(self):
        trace = self.noisy_trace(68e-15, seed=1)
        fit = fit_envelope(trace, shape=EXPONENTIAL)
        assert fit.params["t2_star_s"] == pytest.approx(68e-15, abs=4e-15)

    @pytest.mark.parametrize(
        "t2_fs,tol_fs,seed", [(44, 2, 2), (90, 4, 3), (20, 1, 4)]
    )
    def test_multi_emitter_fixtures(self, t2_fs, tol_fs, seed):
        trace = self.noisy_trace(t2_fs * 1e-15, seed=seed)
        fit = fit_envelope(trace, shape=EXPONENTIAL)
        assert fit.params["t2_star_s"] == pytest.approx(
            t2_fs * 1e-15, abs=tol_fs * 1e-15
        )

    def test_shape_selection_prefers_generator(self):
        exp_fit = fit_envelope(self.noisy_trace(100e-15, shape=EXPONENTIAL), "auto")
        assert "preferred_shape=exponential" in exp_fit.flags
        gauss_fit = fit_envelope(self.noisy_trace(100e-15, shape=GAUSSIAN), "auto")
        assert "preferred_shape=gaussian" in gauss_fit.flags

    def test_too_few_points_rejected(self):
        from photonstats.interferometry import VisibilityTrace

        trace = VisibilityTrace(
            delays_s=np.linspace(0, 1e-13, 5), visibility=np.full(5, 0.5)
        )
        with pytest.raises(ValueError):
            fit_envelope(trace)


class TestDelayScanPlan:
    def test_fine_spacing(self):
        delays = delay_scan_plan(133e-15, (0.0, 0.0), points_per_window=20)
        assert delays.size == 20
        assert np.diff(delays)[0] == pytest.approx(6.65e-15)

    def test_number_of_windows_tiles_coarse_range(self):
        delays = delay_scan_plan(133e-15, (-20e-12, 14e-12), points_per_window=20)
        n_windows = delays.size // 20
        assert n_windows >= 256
        assert delays[0] == pytest.approx(-20e-12)
        assert np.all(np.diff(delays) > 0)

    def test_zero_coarse_range_single_window(self):
        delays = delay_scan_plan(133e-15, (5e-12, 5e-12), points_per_window=8)
        assert delays.size == 8
        assert delays[0] == pytest.approx(5e-12)

    def test_overlapping_windows_rejected(self):
        with pytest.raises(ValueError):
            delay_scan_plan(133e-15, (0.0, 1e-12), coarse_step_s=50e-15)
