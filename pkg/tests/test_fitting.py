import numpy as np
import pytest

from photonstats import models
from photonstats.fitting import FitProblem, finite_difference_jacobian, lm_minimize
from photonstats.models import ModelNotFoundError, ModelSpec, build_registry, registry


def fit(model, x, y, **kw):
    return lm_minimize(FitProblem(model=model, x=x, y=y, **kw))


class TestRegistry:
    def test_contains_required_models(self):
        reg = registry()
        for name in (
            "saturation",
            "lorentzian_sum",
            "lifetime_decay",
            "g2_three_level",
            "visibility_exponential",
            "visibility_gaussian",
        ):
            assert name in reg
        assert len(reg) >= 5

    def test_unknown_id_raises(self):
        with pytest.raises(ModelNotFoundError):
            registry().get("does_not_exist")

    def test_duplicate_id_rejected(self):
        reg = build_registry()
        with pytest.raises(ValueError):
            reg.register(reg.get("linear"))

    def test_lorentzian_initializer_finds_local_maxima(self):
        x = np.linspace(1.5, 1.9, 4001)
        truth = models._lorentz_eval(
            x, [1.746, 0.005, 0.77, 1.650, 0.020, 0.30, 1.581, 0.04, 0.10]
        )
        p0 = models._lorentz_init(x, truth, n_components=3)
        centers = np.sort(p0.reshape(-1, 3)[:, 0])
        assert centers == pytest.approx([1.581, 1.650, 1.746], abs=2e-3)


class TestLmMinimize:
    def test_linear_exact_recovery(self):
        x = np.linspace(-3, 5, 40)
        y = 2.5 * x - 1.0
        res = fit("linear", x, y)
        assert res.converged
        assert res.params["slope"] == pytest.approx(2.5, abs=1e-12)
        assert res.params["intercept"] == pytest.approx(-1.0, abs=1e-10)
        assert res.objective == pytest.approx(0.0, abs=1e-18)

    def test_saturation_noiseless_recovery(self):
        p = np.geomspace(0.05e-3, 5e-3, 12)
        y = 18.0e3 / (1.0 + 0.54e-3 / p)
        res = fit("saturation", p, y, lo=[0, 0], hi=[np.inf, np.inf])
        assert res.converged
        assert res.params["i_inf_hz"] == pytest.approx(18.0e3, rel=1e-8)
        assert res.params["p_sat_w"] == pytest.approx(0.54e-3, rel=1e-8)

    def test_rosenbrock_converges_within_200_iterations(self):
        reg = build_registry()
        reg.register(
            ModelSpec(
                name="rosenbrock",
                param_names=("p0", "p1"),
                units=("", ""),
                evaluate=lambda x, p: np.array([10.0 * (p[1] - p[0] ** 2), 1.0 - p[0]]),
            )
        )
        problem = FitProblem(
            model="rosenbrock", x=np.zeros(2), y=np.zeros(2), p0=[-1.2, 1.0]
        )
        res = lm_minimize(problem, registry=reg)
        assert res.converged
        assert res.iterations <= 200
        assert res.params["p0"] == pytest.approx(1.0, abs=1e-6)
        assert res.params["p1"] == pytest.approx(1.0, abs=1e-6)

    def test_non_convergence_is_flagged_not_raised(self):
        p = np.geomspace(0.05e-3, 5e-3, 12)
        y = 18.0e3 / (1.0 + 0.54e-3 / p)
        res = lm_minimize(
            FitProblem(model="saturation", x=p, y=y, p0=[1.0, 1.0], max_iter=1)
        )
        assert not res.converged
        assert "max_iterations" in res.flags

    def test_fixed_parameter_stays_fixed(self):
        x = np.linspace(0, 10, 30)
        y = 3.0 * x + 2.0
        res = fit("linear", x, y, p0=[1.0, 2.0], lo=[-np.inf, 2.0], hi=[np.inf, 2.0])
        assert res.params["intercept"] == 2.0
        assert res.stderr["intercept"] == 0.0
        assert res.params["slope"] == pytest.approx(3.0, abs=1e-10)

    def test_bounds_respected(self):
        p = np.geomspace(0.05e-3, 5e-3, 12)
        y = 18.0e3 / (1.0 + 0.54e-3 / p)
        res = fit(
            "saturation", p, y,
            p0=[10e3, 2e-3], lo=[0.0, 1e-3], hi=[np.inf, 5e-3],
        )
        assert res.params["p_sat_w"] >= 1e-3 - 1e-12

    def test_degenerate_g2_amplitude_flags_tau2(self):
        lag = np.linspace(-20e-9, 20e-9, 401)
        y = models._g2_eval(lag, [2.78e-9, 2.28e-6, 0.0, 1.0])
        res = fit(
            "g2_three_level", lag, y,
            p0=[2e-9, 1e-6, 1e-8, 1.0],
            lo=[1e-12, 1e-12, 0.0, 1e-9], hi=[1e-6, 1e-3, np.inf, np.inf],
        )
        assert any(f.startswith("degenerate:tau2") for f in res.flags)

    def test_monotone_damping_objective_trace(self):
        rng = np.random.default_rng(11)
        p = np.geomspace(0.05e-3, 5e-3, 12)
        truth = 18.0e3 / (1.0 + 0.54e-3 / p)
        y = truth + rng.normal(0, 0.05 * truth)
        res = fit("saturation", p, y, sigma=0.05 * truth, lo=[0, 0], hi=[np.inf] * 2)
        assert np.all(np.diff(res.objective_trace) <= 0)

    def test_sigma_scaling_leaves_fit_unchanged(self):
        rng = np.random.default_rng(3)
        p = np.geomspace(0.05e-3, 5e-3, 12)
        truth = 18.0e3 / (1.0 + 0.54e-3 / p)
        y = truth + rng.normal(0, 0.05 * truth)
        sigma = 0.05 * truth
        res1 = fit("saturation", p, y, sigma=sigma, lo=[0, 0], hi=[np.inf] * 2)
        res2 = fit("saturation", p, y, sigma=7.3 * sigma, lo=[0, 0], hi=[np.inf] * 2)
        for name in res1.params:
            assert res2.params[name] == pytest.approx(res1.params[name], rel=1e-10)

    def test_data_scaling_equivariance(self):
        # scaling y and sigma together rescales the amplitude parameter
        # exactly and leaves shape parameters untouched
        rng = np.random.default_rng(4)
        p = np.geomspace(0.05e-3, 5e-3, 12)
        truth = 18.0e3 / (1.0 + 0.54e-3 / p)
        y = truth + rng.normal(0, 0.05 * truth)
        sigma = 0.05 * truth
        scale = 311.7
        res1 = fit("saturation", p, y, sigma=sigma, lo=[0, 0], hi=[np.inf] * 2)
        res2 = fit(
            "saturation", p, scale * y, sigma=scale * sigma, lo=[0, 0], hi=[np.inf] * 2
        )
        assert res2.params["i_inf_hz"] == pytest.approx(
            scale * res1.params["i_inf_hz"], rel=1e-10
        )
        assert res2.params["p_sat_w"] == pytest.approx(res1.params["p_sat_w"], rel=1e-10)

    def test_result_json_schema(self):
        x = np.linspace(0, 10, 30)
        res = fit("linear", x, 2.0 * x + 1.0)
        payload = res.to_dict()
        assert set(payload) == {
            "model", "params", "chi2_reduced", "converged", "iterations", "flags",
        }
        assert set(payload["params"]["slope"]) == {"value", "stderr", "unit"}


def _random_params(name, rng):
    if name == "linear":
        return rng.normal(0, 3, 2)
    if name == "saturation":
        return np.array([rng.uniform(1e3, 1e5), rng.uniform(1e-5, 5e-3)])
    if name == "lorentzian_sum":
        return np.array(
            [rng.uniform(1.6, 1.9), rng.uniform(0.002, 0.05), rng.uniform(0.1, 2.0)]
        )
    if name == "g2_three_level":
        return np.array(
            [
                rng.uniform(0.5e-9, 5e-9),
                rng.uniform(0.05e-6, 5e-6),
                rng.uniform(0.05, 3.0),
                rng.uniform(0.5, 2.0),
            ]
        )
    if name.startswith("visibility"):
        return np.array([rng.uniform(0.3, 1.0), rng.uniform(50e-15, 500e-15)])
    raise AssertionError(name)


def _x_grid(name, rng):
    if name == "linear":
        return np.linspace(-5, 5, 41)
    if name == "saturation":
        return np.geomspace(1e-5, 5e-3, 30)
    if name == "lorentzian_sum":
        return np.linspace(1.55, 1.95, 300)
    if name == "g2_three_level":
        mag = np.geomspace(1e-10, 1e-5, 250)
        return np.concatenate([-mag[::-1], [0.0], mag])
    return np.linspace(0, 1.2e-12, 200)


class TestJacobians:
    @pytest.mark.parametrize(
        "name",
        [
            "linear",
            "saturation",
            "lorentzian_sum",
            "g2_three_level",
            "visibility_exponential",
            "visibility_gaussian",
        ],
    )
    def test_analytic_matches_finite_difference(self, name):
        spec = registry().get(name)
        rng = np.random.default_rng(hash(name) % 2**32)
        x = _x_grid(name, rng)
        for _ in range(100):
            theta = _random_params(name, rng)
            analytic = spec.jacobian(x, theta)
            numeric = finite_difference_jacobian(
                lambda th: spec.evaluate(x, th), theta
            )
            scale = np.max(np.abs(analytic), axis=0) + np.max(np.abs(numeric), axis=0)
            scale[scale == 0] = 1.0
            err = np.max(np.abs(analytic - numeric), axis=0) / scale
            assert np.all(err < 1e-5), f"{name}: worst relative error {err.max():.2e}"


class TestCoverage:
    def test_saturation_one_sigma_coverage(self):
        # 500 synthetic sweeps with 3% Gaussian noise: the 1-sigma interval
        # should contain the truth ~68% of the time for both parameters
        rng = np.random.default_rng(5)
        p = np.geomspace(0.05e-3, 5e-3, 12)
        truth_i, truth_p = 18.0e3, 0.54e-3
        truth = truth_i / (1.0 + truth_p / p)
        sigma = 0.03 * truth
        hits = np.zeros(2)
        n = 500
        for _ in range(n):
            y = truth + rng.normal(0, sigma)
            res = fit("saturation", p, y, sigma=sigma, lo=[0, 0], hi=[np.inf] * 2)
            hits[0] += abs(res.params["i_inf_hz"] - truth_i) < res.stderr["i_inf_hz"]
            hits[1] += abs(res.params["p_sat_w"] - truth_p) < res.stderr["p_sat_w"]
        coverage = hits / n
        assert abs(coverage[0] - 0.68) < 0.05
        assert abs(coverage[1] - 0.68) < 0.05
