import math

import numpy as np
import pytest

from sendi.dynamics import LotkaVolterraParams, Trajectory, simulate_lotka_volterra
from sendi.evaluation import (TABLE_FIELDS, UndefinedMetricError, forecast, forecast_xi, mape,
                              mape_detail, r2, results_table_csv, size_weights, smape,
                              smape_detail, summarize, weighted_r2)
from sendi.signal import Window
from sendi.sindy import FeatureLibrary

from oracles import loop_mape, loop_r2, loop_smape, loop_weighted_r2

LIB = FeatureLibrary.polynomial(["x", "y"], ["c"], 3)
REF_LV = LotkaVolterraParams(alpha=0.5, beta=0.025, delta=0.5, gamma=0.005)


def true_xi():
    xi = np.zeros((20, 2))
    xi[LIB.names.index("x"), 0] = 0.5
    xi[LIB.names.index("x y"), 0] = -0.025
    xi[LIB.names.index("y"), 1] = -0.005
    xi[LIB.names.index("x y"), 1] = 0.5
    return xi


@pytest.fixture(scope="module")
def lv():
    return simulate_lotka_volterra(REF_LV, 20.0, 10.0, np.arange(0, 10.0001, 0.1))


class TestMetrics:
    def test_trivial_values(self):
        t = np.array([1.0, -2.0, 4.0])
        assert mape(t, t) == 0.0 and smape(t, t) == 0.0
        assert mape(1.1 * t, t) == pytest.approx(10.0, abs=1e-12)
        assert smape(np.zeros(3), t) == 200.0
        assert r2(t, t) == 1.0
        assert r2(np.full(3, t.mean()), t) == pytest.approx(0.0, abs=1e-15)

    def test_against_loop_oracles(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(2, 30))
            p, t = rng.standard_normal(n) * 3, rng.standard_normal(n) * 3
            assert abs(mape(p, t) - loop_mape(p, t)) <= 1e-12 * max(1.0, loop_mape(p, t))
            assert abs(smape(p, t) - loop_smape(p, t)) <= 1e-12 * 200
            assert abs(r2(p, t) - loop_r2(p, t)) <= 1e-12 * max(1.0, abs(loop_r2(p, t)))
            s = rng.uniform(-1, 1, n)
            sizes = rng.integers(1, 1000, n)
            assert abs(weighted_r2(s, sizes) - loop_weighted_r2(s, sizes)) < 1e-12

    def test_bounds_and_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            a, b = rng.standard_normal(12) * 10, rng.standard_normal(12) * 10
            assert 0.0 <= smape(a, b) <= 200.0
            assert smape(a, b) == pytest.approx(smape(b, a), rel=1e-14)
            assert mape(a, b) >= 0 and r2(a, b) <= 1.0

    def test_exclusions_reported(self):
        d = mape_detail([1.0, 2.0, 3.0], [0.0, 2.0, 2.0])
        assert d.excluded == 1 and d.value == pytest.approx(25.0)
        assert smape_detail([0.0, 1.0], [0.0, 1.0]).excluded == 1

    def test_undefined_cases(self):
        with pytest.raises(UndefinedMetricError):
            mape([1.0, 2.0], [0.0, 0.0])
        with pytest.raises(UndefinedMetricError):
            smape([0.0], [0.0])
        with pytest.raises(UndefinedMetricError):
            r2([1.0, 2.0], [3.0, 3.0])
        with pytest.raises(UndefinedMetricError):
            r2([1.0], [1.0])
        with pytest.raises(UndefinedMetricError):
            weighted_r2([], [])
        with pytest.raises(ValueError):
            mape([1.0], [1.0, 2.0])

    def test_weighted_r2(self):
        assert weighted_r2([1.0, 0.0], [100, 900]) == pytest.approx(0.9, abs=1e-15)
        assert weighted_r2([0.7] * 5, [100, 300, 500, 700, 900]) == pytest.approx(0.7, abs=1e-15)
        w = size_weights([100, 300, 500, 700, 900])
        assert abs(w.sum() - 1) < 1e-12
        assert np.all(np.diff(w) < 0)
        with pytest.raises(ValueError):
            weighted_r2([1.0], [0])


class TestSummarize:
    def test_identical(self):
        s = summarize([2.5] * 8)
        assert s.mean == s.median == s.p90 == 2.5 and s.outliers_removed == 0

    def test_divergence_share(self):
        s = summarize([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, math.inf])
        assert s.divergence_pct == 10.0 and s.count == 9 and s.mean == 5.0

    def test_outlier_policy(self):
        rng = np.random.default_rng(2)
        pop = list(np.exp(rng.normal(0, 0.1, 60)))
        logs = np.log(pop)
        pop.append(float(np.exp(logs.mean() + 10 * logs.std())))
        assert summarize(pop, policy="mape").outliers_removed == 1
        assert summarize(pop, policy="smape").count == 61

    def test_linear_percentile(self):
        s = summarize(np.arange(1.0, 11.0), policy="smape")
        assert s.p90 == pytest.approx(9.1)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(3)
        vals = np.exp(rng.normal(size=50))
        a = summarize(vals)
        b = summarize(vals[rng.permutation(50)])
        assert a == b

    def test_empty_and_bad_policy(self):
        with pytest.raises(UndefinedMetricError):
            summarize([])
        with pytest.raises(ValueError):
            summarize([1.0], policy="rmse")

    def test_table_csv_header(self):
        text = results_table_csv([{"window": 10, "horizon": 1, "mean": 0.5}])
        assert text.splitlines()[0] == ",".join(TABLE_FIELDS)


class TestForecast:
    @pytest.mark.parametrize("horizon", [1, 2, 3, 4])
    def test_true_dynamics_integrator_bound(self, lv, horizon):
        res = forecast_xi(true_xi(), lv, Window("lv", 20, 10), LIB, horizon)
        assert not res.diverged
        assert res.predicted.shape == (10 * horizon, 2)
        assert max(res.mape) < 0.5

    def test_zero_coefficients_freeze_state(self, lv):
        w = Window("lv", 0, 10)
        res = forecast_xi(np.zeros((20, 2)), lv, w, LIB, 2)
        frozen = lv.states[w.stop - 1]
        assert np.allclose(res.predicted, frozen, rtol=0, atol=1e-12)
        for j in range(2):
            assert res.mape[j] == pytest.approx(loop_mape(np.full(20, frozen[j]), res.truth[:, j]),
                                                rel=1e-10)

    def test_next_start_policy(self, lv):
        w = Window("lv", 0, 10)
        res = forecast_xi(true_xi(), lv, w, LIB, 1, start="next")
        assert np.array_equal(res.predicted[0], lv.states[w.stop])

    def test_divergence_flag_without_metrics(self):
        t = np.arange(0, 4.0, 0.1)
        traj = Trajectory(t, np.column_stack([np.ones_like(t), np.ones_like(t)]),
                          np.zeros((t.size, 1)))
        xi = np.zeros((20, 2))
        xi[LIB.names.index("x^2"), 0] = 5.0
        res = forecast_xi(xi, traj, Window("b", 0, 10), LIB, 3)
        assert res.diverged and res.predicted is None and res.mape == []

    def test_bound_is_configurable(self, lv):
        res = forecast_xi(true_xi() * 1.5, lv, Window("lv", 0, 10), LIB, 4, bound_factor=1.0)
        assert res.diverged

    def test_model_dimension_checked(self, lv):
        with pytest.raises(ValueError):
            forecast(lambda rows: np.zeros(7), lv, Window("lv", 0, 10), LIB)

    def test_callable_model(self, lv):
        res = forecast(lambda rows: true_xi(), lv, Window("lv", 0, 10), LIB)
        assert max(res.mape) < 0.5

    def test_horizon_past_end(self, lv):
        with pytest.raises(ValueError):
            forecast_xi(true_xi(), lv, Window("lv", 90, 10), LIB, 2)
