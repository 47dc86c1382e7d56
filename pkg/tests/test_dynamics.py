import numpy as np
import pytest

from sendi.dynamics import (DivergenceError, HeatProblem, LorenzParams, LotkaVolterraParams,
                            SobolConfigurationError, Trajectory, alpha_profile,
                            analytic_derivatives, integrate, mean_temperature, read_trajectory,
                            save_trajectory, simulate_heat_1d, simulate_lorenz,
                            simulate_lotka_volterra, sobol_points, sobol_sample)
from sendi.dynamics.heat import probe_series

REF_LV = LotkaVolterraParams(alpha=0.5, beta=0.025, delta=0.5, gamma=0.005)


def star_discrepancy_2d(pts):
    """Star discrepancy evaluated on the anchor grid spanned by the point coordinates."""
    n = len(pts)
    rx = np.argsort(np.argsort(pts[:, 0]))
    ry = np.argsort(np.argsort(pts[:, 1]))
    hits = np.zeros((n, n))
    hits[rx, ry] = 1
    closed = hits.cumsum(0).cumsum(1)
    xs, ys = np.sort(pts[:, 0]), np.sort(pts[:, 1])
    area = np.outer(xs, ys)
    opened = np.zeros_like(closed)
    opened[1:, 1:] = closed[:-1, :-1]
    return max(np.max(closed / n - area), np.max(area - opened / n))


class TestIntegrator:
    def test_fifth_order_convergence(self):
        errs = []
        for h in (0.2, 0.1):
            y = integrate(lambda t, y: -y, [0.0, 2.0], [1.0], rtol=1e3, atol=1e3, max_step=h)
            errs.append(abs(y[-1, 0] - np.exp(-2.0)))
        order = np.log2(errs[0] / errs[1])
        assert 4.5 < order < 5.5

    def test_tolerance_tightening_reduces_error(self):
        errs = [abs(integrate(lambda t, y: -y, [0.0, 5.0], [1.0], rtol=tol, atol=tol * 1e-3)[-1, 0]
                    - np.exp(-5.0)) for tol in (1e-4, 1e-7, 1e-10)]
        assert errs[0] > errs[1] > errs[2]

    def test_dense_output_between_steps(self):
        t = np.linspace(0, 3, 301)
        y = integrate(lambda t, y: np.array([y[1], -y[0]]), t, [0.0, 1.0], rtol=1e-10, atol=1e-12)
        assert np.max(np.abs(y[:, 0] - np.sin(t))) < 1e-8

    def test_blow_up_raises_divergence_with_time(self):
        with pytest.raises(DivergenceError) as info:
            integrate(lambda t, y: y ** 2, [0.0, 2.0], [1.0])
        assert 0.9 < info.value.last_time < 1.001

    def test_bound(self):
        with pytest.raises(DivergenceError):
            integrate(lambda t, y: y, [0.0, 10.0], [1.0], bound=100.0)

    def test_grid_must_increase(self):
        with pytest.raises(ValueError):
            integrate(lambda t, y: -y, [0.0, 1.0, 0.5], [1.0])


class TestLotkaVolterra:
    def test_fixed_point_is_constant(self):
        p = REF_LV
        t = np.linspace(0, 30, 301)
        traj = simulate_lotka_volterra(p, p.gamma / p.delta, p.alpha / p.beta, t)
        assert np.max(np.abs(analytic_derivatives(traj)[0])) < 1e-15
        assert np.allclose(traj.states, traj.states[0], rtol=1e-9, atol=0)

    def test_reference_orbit_positive_and_finite(self):
        traj = simulate_lotka_volterra(REF_LV, 27.5, 10.0, np.arange(0, 30.0001, 0.1))
        assert np.all(np.isfinite(traj.states))
        assert np.all(traj.states > 0)

    def test_self_convergence(self):
        t = np.linspace(0, 30, 31)
        p = LotkaVolterraParams(control=1.0)
        a = simulate_lotka_volterra(p, 20.0, 10.0, t, rtol=1e-8, atol=1e-10).states[-1]
        b = simulate_lotka_volterra(p, 20.0, 10.0, t, rtol=5e-9, atol=5e-11).states[-1]
        assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-6

    def test_control_series_must_align(self):
        with pytest.raises(ValueError):
            simulate_lotka_volterra(LotkaVolterraParams(control=np.ones(3)), 1.0, 1.0, np.linspace(0, 1, 5))


class TestLorenz:
    def test_fixed_point(self):
        p = LorenzParams(10.0, 28.0, 8.0 / 3.0)
        c = np.sqrt(p.beta * (p.rho - 1))
        traj = simulate_lorenz(p, c, c, p.rho - 1, np.linspace(0, 0.1, 11))
        assert np.max(np.abs(analytic_derivatives(traj)[0])) < 1e-12
        assert np.max(np.abs(traj.states - traj.states[0])) < 1e-3

    def test_twin_runs_separate(self):
        t = np.linspace(0, 25, 2501)
        a = simulate_lorenz(LorenzParams(), 0.5, 0.5, 20.0, t).states
        b = simulate_lorenz(LorenzParams(), 0.5 + 1e-9, 0.5, 20.0, t).states
        gap = np.linalg.norm(a - b, axis=1)
        assert gap[0] < 1e-8
        assert np.max(gap) > 1.0


class TestHeat:
    def test_equilibrium(self):
        traj = simulate_heat_1d(HeatProblem(flux=0.0))
        assert np.all(traj.states == 20.0)

    def test_insulated_conserves_mean(self):
        heated = simulate_heat_1d(HeatProblem(horizon=60.0)).states[-1]
        prob = HeatProblem(insulated=True)
        traj = simulate_heat_1d(prob, initial=heated)
        means = mean_temperature(prob, traj.states)
        assert np.max(np.abs(np.diff(means))) < 1e-10
        assert np.ptp(traj.states[0]) > 1.0

    def test_surface_rises_until_cutoff(self):
        prob = HeatProblem(flux=30000.0, t_max=500.0, horizon=200.0)
        traj = simulate_heat_1d(prob)
        surface = traj.states[:, 0]
        over = np.flatnonzero(surface > prob.t_max)
        stop = over[0] if over.size else surface.size - 1
        assert np.all(np.diff(surface[:stop + 1]) >= 0)
        # after the cut-off the surface overshoots by at most one heating step
        assert np.max(surface) <= prob.t_max + np.max(np.diff(surface))

    @pytest.mark.parametrize("dt", [0.1, 1.0, 10.0])
    def test_unconditionally_stable(self, dt):
        traj = simulate_heat_1d(HeatProblem(dt=dt, horizon=200.0))
        assert np.all(np.isfinite(traj.states))
        assert np.min(traj.states) >= 20.0 - 1e-9
        assert np.max(traj.states) < 600.0

    def test_alpha_profile(self):
        prob = HeatProblem(alpha_ref=1e-6, ratio=60.0, center=0.005)
        assert alpha_profile(prob, 0.005) == pytest.approx(1e-6 / 60, rel=1e-14)
        assert abs(alpha_profile(prob, 0.0) - 1e-6) < 1e-12
        z = prob.grid()
        a = alpha_profile(prob, z)
        assert np.argmin(a) == np.argmin(np.abs(z - 0.005))
        half = alpha_profile(prob, 0.005 + prob.half_width)
        assert half == pytest.approx(1e-6 - 0.5 * prob.dip_depth, rel=1e-12)

    @pytest.mark.parametrize("bad", [dict(center=0.0), dict(ratio=1.0), dict(nodes=2), dict(dt=0.0)])
    def test_invariants(self, bad):
        with pytest.raises(ValueError):
            HeatProblem(**bad)

    def test_probe_series(self):
        prob = HeatProblem(horizon=10.0)
        traj = simulate_heat_1d(prob)
        probes = probe_series(traj, prob)
        assert np.array_equal(probes[0.0], traj.states[:, 0])
        assert np.array_equal(probes[prob.length], traj.states[:, -1])


class TestSobol:
    def test_first_point(self):
        pts = sobol_sample(2, 1, [[0, 1], [10, 20]])
        assert pts.tolist() == [[0.5, 15.0]]

    def test_sample_bounds(self):
        bounds = [[-1, 5], [5, 50], [5, 15]]
        pts = sobol_sample(3, 500, bounds, seed=7)
        lo, hi = np.array(bounds).T
        assert np.all(pts >= lo) and np.all(pts <= hi)

    def test_beats_pseudo_random_discrepancy(self):
        sob = sobol_points(2, 1024)
        rnd = np.random.default_rng(0).random((1024, 2))
        assert star_discrepancy_2d(sob) < star_discrepancy_2d(rnd)

    def test_too_many_dimensions(self):
        with pytest.raises(SobolConfigurationError):
            sobol_points(7, 4)

    def test_seeded_reproducible(self):
        a = sobol_sample(6, 64, [[0, 1]] * 6, seed=3)
        assert np.array_equal(a, sobol_sample(6, 64, [[0, 1]] * 6, seed=3))


class TestTrajectory:
    def test_times_strictly_increasing(self):
        with pytest.raises(ValueError):
            Trajectory([0.0, 0.0], [[1.0], [2.0]])

    def test_round_trip(self, tmp_path):
        t = np.linspace(0, 1, 11)
        traj = simulate_lotka_volterra(LotkaVolterraParams(control=2.0), 10.0, 5.0, t, seed=4)
        d = analytic_derivatives(traj)
        save_trajectory(traj, tmp_path / "a.csv", d)
        back, dd = read_trajectory(tmp_path / "a.csv")
        assert np.array_equal(back.times, traj.times)
        assert np.array_equal(back.states, traj.states)
        assert np.array_equal(back.controls, traj.controls)
        assert np.array_equal(dd, d)
        assert back.provenance == traj.provenance
