import math

import numpy as np
import pytest

from syncsde.dynamics import Frame, StateVector, make_system
from syncsde.errors import ComparisonError, ConfigurationError
from syncsde.noise import OUPathSet, TimeGrid, build_ou_paths, sample_wiener
from syncsde.sync import (
    TrajectoryBundle,
    absorbing_integral,
    absorbing_radius,
    averaged_comparison,
    averaged_pullback_attractor,
    check_step_stability,
    component_gap,
    component_gap_series,
    envelope_holds,
    fit_decay_rate,
    integrate_averaged,
    integrate_rode,
    integrate_rode_ensemble,
    integrate_sode_stratonovich,
    invariance_gap,
    m_bound,
    m_bound_terms,
    nu_sweep,
    pairwise_gap,
    pullback_attractor,
    stationary_residual,
    attractor_trajectories,
)

# sup over [1, 2] of max_j x_j - min_j x_j for x' = (-diag(lam) + nu Lap) x + 1, x(0) = (1..N),
# lam cycling 1, 2, 3; computed with scipy.linalg.expm on 1001 window points
SWEEP_ORACLE = {
    3: [0.3214021473, 0.04515506061, 0.004668765495, 0.0004684885411],
    4: [0.5466294674, 0.08609066901, 0.009017206251, 0.0009060765999],
    5: [0.5910190947, 0.08963020255, 0.009526083334, 0.000958910506],
}
NUS = [1.0, 10.0, 100.0, 1000.0]


def zero_paths(grid, N):
    return OUPathSet(grid, np.zeros((N, grid.n_points)))


class TestIntegrateRODE:
    def test_identical_components_decay(self):
        g = TimeGrid(0.0, 1.0, 1e-3)
        s = make_system([1.0] * 4, [[0.0]], 3.0)
        tr = integrate_rode(s, zero_paths(g, 4), np.full(4, 0.7), (0.0, 1.0))
        assert np.abs(tr.states[-1, :, 0] - 0.7 * math.exp(-1.0)).max() <= 1e-6
        assert tr.frame is Frame.RODE and not tr.flagged

    def test_decoupled_flows(self):
        g = TimeGrid(0.0, 1.0, 1e-3)
        lams = np.array([1.0, 2.0, 3.0])
        s = make_system(lams, [[0.0]], 0.0, forcing=0.5)
        x0 = np.array([1.0, -1.0, 2.0])
        tr = integrate_rode(s, zero_paths(g, 3), x0, (0.0, 1.0))
        exact = 0.5 / lams + (x0 - 0.5 / lams) * np.exp(-lams)
        np.testing.assert_allclose(tr.states[-1, :, 0], exact, atol=1e-6)

    @staticmethod
    def _errors(values, fine, spec, x0):
        """Sup errors at steps 8h_f and 4h_f against the run on the fine grid h_f."""
        ref = integrate_rode(spec, OUPathSet(fine, values), x0, (0.0, 2.0))
        errs = []
        for k in (8, 4):
            g = TimeGrid(0.0, 2.0, fine.h * k)
            tr = integrate_rode(spec, OUPathSet(g, values[:, ::k]), x0, (0.0, 2.0))
            errs.append(np.abs(tr.states - ref.states[::k]).max())
        return np.array(errs)

    def test_self_convergence_smooth(self):
        fine = TimeGrid(0.0, 2.0, 0.02 / 8)
        spec = make_system([1.0, 2.0, 3.0, 1.5], [[0.5]], 2.0, cubic_b=0.5, forcing=1.0)
        vals = np.stack([0.8 * np.sin(fine.times + j) for j in range(4)])
        e = self._errors(vals, fine, spec, np.array([1.0, -1.0, 0.5, 2.0]))
        assert math.log2(e[0] / e[1]) >= 1.7

    def test_self_convergence_rough(self):
        # single-path order estimates scatter widely; the order of the mean error over paths is stable
        fine = TimeGrid(0.0, 2.0, 0.01 / 8)
        spec = make_system([1.0, 2.0, 3.0, 1.5], [[0.5]], 2.0, cubic_b=0.5, forcing=1.0)
        x0 = np.array([1.0, -1.0, 0.5, 2.0])
        e = np.mean([self._errors(build_ou_paths(sample_wiener(seed, fine, 1), [[0.5]] * 4).values,
                                  fine, spec, x0) for seed in range(20)], axis=0)
        assert math.log2(e[0] / e[1]) >= 0.9

    def test_out_of_range_ou_flags(self):
        g = TimeGrid(0.0, 1.0, 0.01)
        vals = np.zeros((3, g.n_points))
        vals[1, 50] = 600.0
        tr = integrate_rode(make_system([1.0] * 3, [[0.0]], 1.0), OUPathSet(g, vals), np.ones(3), (0.0, 1.0))
        assert tr.flagged and "OU" in tr.reason

    def test_step_guard(self):
        s = make_system([1.0] * 4, [[0.0]], 1000.0)
        with pytest.raises(ConfigurationError):
            check_step_stability(s, 1e-3)
        check_step_stability(s, 4e-4)

    def test_ensemble_matches_single(self):
        g = TimeGrid(-1.0, 5.0, 0.01)
        ous = [build_ou_paths(sample_wiener(s, g, 1), [[0.5]] * 4) for s in range(3)]
        s = make_system([1.0, 2.0, 1.0, 3.0], [[0.5]], 1.0, forcing=1.0)
        ens = integrate_rode_ensemble(s, ous, np.ones((4, 1)), (0.0, 5.0), seeds=[0, 1, 2])
        for o, e in zip(ous, ens):
            np.testing.assert_array_equal(e.states, integrate_rode(s, o, np.ones((4, 1)), (0.0, 5.0)).states)


class TestIntegrateSODE:
    def test_zero_noise_matches_rode(self):
        g = TimeGrid(0.0, 1.0, 1e-3)
        s = make_system([1.0, 2.0, 3.0, 1.0], [[0.0]], 2.0, cubic_b=0.3, forcing=1.0)
        noise = sample_wiener(0, g, 1)
        ou = build_ou_paths(noise, np.zeros((4, 1)))
        x0 = np.array([1.0, -0.5, 0.2, 2.0])
        r = integrate_rode(s, ou, x0, (0.0, 1.0)).to_frame(ou, Frame.SODE)
        d = integrate_sode_stratonovich(s, noise, ou, x0, (0.0, 1.0))
        assert np.abs(r.states - d.states).max() <= 1e-10

    def test_stratonovich_exponential(self):
        # dX = -X dt + X o dW has X_t = X_0 exp(-t + W_t)
        g = TimeGrid(0.0, 1.0, 1e-4)
        s = make_system([1.0] * 3, [[1.0]], 0.0)
        noise = sample_wiener(4, g, 1)
        ou = build_ou_paths(noise, [[1.0]] * 3)
        X0 = np.array([1.0, 2.0, -0.5])
        tr = integrate_sode_stratonovich(s, noise, ou, StateVector(Frame.SODE, X0), (0.0, 1.0))
        exact = X0 * math.exp(-1.0 + noise.path[0, -1])
        np.testing.assert_allclose(tr.states[-1, :, 0], exact, rtol=5e-3)

    def test_driver_count_checked(self):
        g = TimeGrid(0.0, 1.0, 0.01)
        noise = sample_wiener(0, g, 2)
        ou = build_ou_paths(noise, np.zeros((3, 2)))
        with pytest.raises(ConfigurationError):
            integrate_sode_stratonovich(make_system([1.0] * 3, [[0.0]], 1.0), noise, ou, np.ones(3), (0.0, 1.0))

    def test_frame_checked(self):
        g = TimeGrid(0.0, 1.0, 0.01)
        noise = sample_wiener(0, g, 1)
        ou = build_ou_paths(noise, np.zeros((3, 1)))
        with pytest.raises(ConfigurationError):
            integrate_sode_stratonovich(make_system([1.0] * 3, [[0.0]], 1.0), noise, ou,
                                        StateVector(Frame.RODE, np.ones(3)), (0.0, 1.0))


class TestPullback:
    def test_zero_noise_origin(self):
        g = TimeGrid(-20.0, 0.0, 0.01)
        s = make_system([1.0] * 4, [[0.0]], 5.0)
        est = pullback_attractor(s, zero_paths(g, 4), (16.0, 20.0), radius=3.0)
        assert np.abs(est.value).max() <= 1e-6

    def test_singleton_at_depth_30(self):
        g = TimeGrid(-30.0, 0.0, 0.01)
        s = make_system([1.0] * 4, [[0.5]], 1.0, forcing=1.0)
        ou = build_ou_paths(sample_wiener(0, g, 1), [[0.5]] * 4)
        est = pullback_attractor(s, ou, (24.0, 30.0))
        assert est.singleton_gap <= 1e-9 and est.cauchy_gap <= 1e-8 and est.converged
        assert len(est.initial_states) == 3

    def test_shallow_depth_not_converged(self):
        g = TimeGrid(-2.0, 0.0, 0.01)
        s = make_system([1.0] * 4, [[0.5]], 1.0, forcing=1.0)
        ou = build_ou_paths(sample_wiener(0, g, 1), [[0.5]] * 4)
        est = pullback_attractor(s, ou, (1.0, 2.0), radius=5.0)
        assert not est.converged and est.singleton_gap > 1e-3

    def test_depth_validation(self):
        g = TimeGrid(-2.0, 0.0, 0.01)
        with pytest.raises(ConfigurationError):
            pullback_attractor(make_system([1.0] * 3, [[0.0]], 1.0), zero_paths(g, 3), (2.0, 1.0))

    def test_invariance(self):
        g = TimeGrid(-31.0, 2.0, 0.01)
        s = make_system([1.0, 2.0, 1.0, 3.0], [[0.5]], 1.0, forcing=1.0)
        ou = build_ou_paths(sample_wiener(2, g, 1), [[0.5]] * 4)
        assert invariance_gap(s, ou, 30.0, 1.0) <= 1e-7

    def test_averaged_singleton(self):
        g = TimeGrid(-30.0, 0.0, 0.01)
        s = make_system([1.0, 2.0, 3.0, 1.0], [[0.5]], 1.0, forcing=1.0)
        ou = build_ou_paths(sample_wiener(1, g, 1), [[0.5]] * 4)
        assert averaged_pullback_attractor(s, ou, (24.0, 30.0)).converged


class TestAbsorbing:
    def test_no_forcing(self):
        g = TimeGrid(-10.0, 0.0, 0.01)
        s = make_system([1.0] * 4, [[0.5]], 1.0)
        ou = build_ou_paths(sample_wiener(0, g, 1), [[0.5]] * 4)
        assert absorbing_radius(s, ou, 10.0) == 1.0

    @pytest.mark.parametrize("nu", [0.0, 2.0])
    def test_closed_form_zero_noise(self, nu):
        # O = 0 and equal forcing g: C_j = g^2 (1 - e^{-L T}) / L^2
        g = TimeGrid(-5.0, 0.0, 1e-3)
        L, gv, T = 1.5, 2.0, 5.0
        s = make_system([L] * 4, [[0.0]], nu, forcing=gv)
        C = absorbing_integral(s, zero_paths(g, 4), T)
        np.testing.assert_allclose(C, gv**2 * (1 - math.exp(-L * T)) / L**2, atol=1e-6)
        assert absorbing_radius(s, zero_paths(g, 4), T) == pytest.approx(math.sqrt(1 + C @ C))

    def test_heterogeneous_noise_breaks_radius_ordering(self):
        # counterexample: with distinct noise rows R_nu can exceed R_1
        g = TimeGrid(-30.0, 0.0, 0.01)
        coeffs = [[0.5, 0.0], [0.0, 0.5], [0.3, 0.3], [0.1, -0.4]]
        s = make_system([1.0, 2.0, 3.0, 1.0], coeffs, 1.0, forcing=[1.0, 2.0, 0.5, 1.0])
        excess = []
        for seed in range(20):
            ou = build_ou_paths(sample_wiener(seed, g, 2), coeffs)
            R1 = absorbing_radius(s, ou, 30.0, nu=1.0)
            excess += [absorbing_radius(s, ou, 30.0, nu=nu) - R1 for nu in (2.0, 10.0, 100.0)]
        assert max(excess) > 0.1


class TestPairwise:
    def _bundle(self, states, spec, t=None):
        states = np.asarray(states, float)
        t = np.arange(len(states)) * 0.1 if t is None else t
        return TrajectoryBundle(t, Frame.RODE, states, spec)

    def test_identical(self):
        s = make_system([1.0] * 3, [[0.0]], 1.0)
        b = self._bundle(np.ones((20, 3, 1)), s)
        r = pairwise_gap(b, b)
        assert np.all(r.pairwise_gap_series == 0.0)
        assert not r.rate_defined and math.isnan(r.fitted_decay_rate)

    def test_deterministic_rate(self):
        g = TimeGrid(0.0, 30.0, 0.01)
        s = make_system([1.0] * 4, [[0.0]], 1.0, forcing=1.0)
        ou = zero_paths(g, 4)
        a = integrate_rode(s, ou, np.array([1.0, 2.0, 3.0, 4.0]), (0.0, 30.0))
        b = integrate_rode(s, ou, np.array([-1.0, 0.5, 0.0, 2.0]), (0.0, 30.0))
        r = pairwise_gap(a, b)
        assert r.rate_defined and r.fitted_decay_rate <= -0.9
        assert envelope_holds(r, 1.0, anchor=0.0)

    def test_mismatch(self):
        s = make_system([1.0] * 3, [[0.0]], 1.0)
        with pytest.raises(ComparisonError):
            pairwise_gap(self._bundle(np.ones((5, 3, 1)), s), self._bundle(np.ones((6, 3, 1)), s))
        other = TrajectoryBundle(np.arange(5) * 0.1, Frame.SODE, np.ones((5, 3, 1)), s)
        with pytest.raises(ComparisonError):
            pairwise_gap(self._bundle(np.ones((5, 3, 1)), s), other)

    def test_envelope_detects_growth(self):
        s = make_system([1.0] * 3, [[0.0]], 1.0)
        t = np.linspace(0, 5, 51)
        # gap e^{-0.3 t}: its squared norm decays at 0.6, slower than L = 1
        slow = np.exp(-0.3 * t)[:, None, None] * np.array([[1.0], [0.0], [0.0]])
        r = pairwise_gap(self._bundle(slow, s, t), self._bundle(np.zeros_like(slow), s, t))
        assert not envelope_holds(r, 1.0, anchor=0.0)
        assert envelope_holds(r, 0.5, anchor=0.0)
        assert not envelope_holds(r, 0.5, anchor=0.0, quantity="max")


class TestFitDecayRate:
    def test_exact_exponential(self):
        t = np.linspace(0, 10, 101)
        rate, ok, span = fit_decay_rate(t, 3.0 * np.exp(-2.0 * t))
        assert ok and rate == pytest.approx(-2.0, rel=1e-10)
        assert span[0] > 1.0  # starts after the first tenfold drop

    def test_stops_at_floor(self):
        t = np.linspace(0, 40, 401)
        gap = np.maximum(np.exp(-t), 1e-15)
        rate, ok, span = fit_decay_rate(t, gap)
        assert ok and rate == pytest.approx(-1.0, rel=1e-8) and span[1] < 28

    def test_too_short(self):
        rate, ok, _ = fit_decay_rate([0.0, 1.0], [1.0, 0.1])
        assert not ok and math.isnan(rate)


class TestComponentGap:
    def test_values(self):
        s = make_system([1.0] * 3, [[0.0]], 1.0)
        states = np.zeros((12, 3, 1))
        states[4, 0, 0] = 1.0
        assert component_gap_series(states)[4] == 1.0
        assert component_gap_series(np.ones((3, 3, 1))).max() == 0.0
        r = component_gap(TrajectoryBundle(np.arange(12) * 0.1, Frame.RODE, states, s), window=(0.0, 1.1))
        assert r.extras["sup_gap"] == 1.0

    def test_degenerate_window(self):
        s = make_system([1.0] * 3, [[0.0]], 1.0)
        b = TrajectoryBundle(np.arange(12) * 0.1, Frame.RODE, np.zeros((12, 3, 1)), s)
        with pytest.raises(ConfigurationError):
            component_gap(b, window=(0.0, 0.5))


class TestNuSweep:
    @pytest.mark.parametrize("N", [3, 4, 5])
    def test_against_oracle(self, N):
        g = TimeGrid(0.0, 2.0, 1e-4)
        s = make_system([1.0, 2.0, 3.0, 1.0, 2.0][:N], [[0.0]], 1.0, forcing=1.0)
        r = nu_sweep(s, zero_paths(g, N), NUS, (1.0, 2.0), np.arange(1.0, N + 1.0))
        np.testing.assert_allclose(r.sup_gaps, SWEEP_ORACLE[N], rtol=1e-3)
        assert r.strictly_decreasing and abs(r.slope + 1.0) <= 0.3
        # M grows with nu but saturates
        M = r.M_bounds
        assert abs(M[3] - M[2]) <= 0.02 * M[2] < abs(M[2] - M[1])

    def test_identical_components_floor(self):
        g = TimeGrid(-5.0, 2.0, 1e-3)
        s = make_system([1.0] * 4, [[0.5]], 1.0, forcing=1.0)
        ou = build_ou_paths(sample_wiener(0, g, 1), [[0.5]] * 4)
        r = nu_sweep(s, ou, [1.0, 10.0], (1.0, 2.0), np.array([0.3, -1.0, 2.0, 0.5]), t0=-5.0)
        assert np.all(r.sup_gaps <= 1e-8)

    @pytest.mark.parametrize("nus", [[10.0, 1.0], [0.5, 1.0], []])
    def test_bad_nus(self, nus):
        g = TimeGrid(0.0, 2.0, 1e-3)
        with pytest.raises(ConfigurationError):
            nu_sweep(make_system([1.0] * 3, [[0.0]], 1.0), zero_paths(g, 3), nus, (1.0, 2.0), np.ones(3))

    def test_flagged_run_invalidates(self):
        g = TimeGrid(0.0, 2.0, 1e-3)
        vals = np.zeros((3, g.n_points))
        vals[0, 10] = 700.0
        r = nu_sweep(make_system([1.0] * 3, [[0.0]], 1.0), OUPathSet(g, vals), [1.0, 10.0], (1.0, 2.0),
                     np.ones(3))
        assert r.flagged and math.isnan(r.slope)


def test_m_bound_by_hand():
    s = make_system([2.0] * 3, [[0.0]], 1.0, forcing=1.0)
    states = np.array([[[1.0], [0.0], [-1.0]]])
    o = np.array([[0.0], [math.log(2.0)], [0.0]])
    # P_j = 4 (e^{-2O} f(e^O x)^2 + O^2 x^2): f(1) = -1, f(0) = 1, f(-1) = 3
    P = m_bound_terms(s, states, o)[0]
    np.testing.assert_allclose(P, [4.0, 4.0 * 0.25, 36.0])
    np.testing.assert_allclose(m_bound(s, states, o), [5.0, 37.0, 40.0])


class TestAveraged:
    def test_zero_noise_identical(self):
        g = TimeGrid(-20.0, 2.0, 1e-3)
        s = make_system([1.0] * 3, [[0.0]], 1.0)
        rep = averaged_comparison(s, [zero_paths(g, 3)], [1.0, 10.0], (1.0, 2.0), 20.0)
        assert rep.gaps.max() <= 1e-6 and rep.mean_gaps.max() <= 1e-6

    def test_averaged_trajectory(self):
        g = TimeGrid(0.0, 1.0, 1e-3)
        s = make_system([1.0, 2.0, 6.0], [[0.0]], 1.0)
        t, z = integrate_averaged(s, zero_paths(g, 3), [1.0], (0.0, 1.0))
        assert z[-1, 0] == pytest.approx(math.exp(-3.0), rel=1e-5)

    def test_stationary_residual(self):
        g = TimeGrid(-30.0, 2.0, 1e-3)
        s = make_system([1.0, 2.0, 3.0, 1.0], [[0.5]], 10.0, forcing=1.0)
        noise = sample_wiener(0, g, 1)
        ou = build_ou_paths(noise, [[0.5]] * 4)
        x = attractor_trajectories(s, [ou], 30.0, (1.0, 2.0))[:, 0]
        times = g.times[g.index_of(1.0) : g.index_of(2.0) + 1]
        good = stationary_residual(s, noise, ou, x, times)
        assert good["passed"]
        # the SODE-frame trajectory is not a RODE-frame input: residual must blow past the bound
        X = x * np.exp(ou.values[:, g.index_of(1.0) : g.index_of(2.0) + 1].T)[:, :, None]
        assert not stationary_residual(s, noise, ou, X, times)["passed"]
