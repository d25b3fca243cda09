import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hybridavg as ha

from conftest import state


def gamma_oracle(T):
    """Closed form for the actuator residual d = -x sin(tau):
    sup over tau0 of |cos(tau0) - cos(tau0 + T)| / T = 2 |sin(T/2)| / T."""
    return 2.0 * np.abs(np.sin(np.asarray(T) / 2.0)) / np.asarray(T)


def tau_independent_spec(actuator):
    def flat_flow(x, r, tau, eps):
        return -np.asarray(x, dtype=float)

    return dataclasses.replace(actuator, f=flat_flow)


TAUS = np.linspace(0.0, 2.0 * math.pi, 512, endpoint=False)


class TestWindowAverage:
    def test_full_period_gives_minus_x(self, actuator):
        got = ha.window_average(actuator, [1.0], [0.5], 0.0, 2.0 * math.pi)
        assert got[0] == pytest.approx(-1.0, abs=1e-12)

    def test_vanishes_at_origin(self, actuator):
        got = ha.window_average(actuator, [0.0], [0.5], 1.3, 5.0)
        assert got[0] == 0.0

    def test_half_period_closed_form(self, actuator):
        # (1/pi) * int_0^pi (1 + sin s) ds = (pi + 2)/pi, so mean = -(1 + 2/pi)
        expected = -(1.0 + 2.0 / math.pi)
        got = ha.window_average(actuator, [1.0], [0.5], 0.0, math.pi)
        assert got[0] == pytest.approx(expected, abs=1e-6)
        fine = ha.window_average(actuator, [1.0], [0.5], 0.0, math.pi, quad_points=400)
        assert fine[0] == pytest.approx(expected, abs=1e-12)

    def test_rejects_nonpositive_window(self, actuator):
        with pytest.raises(ValueError):
            ha.window_average(actuator, [1.0], [0.5], 0.0, 0.0)

    def test_nonfinite_integrand_is_hard_error(self, actuator):
        def blow_up(x, r, tau, eps):
            return np.full_like(np.asarray(x, dtype=float), np.nan)

        spec = dataclasses.replace(actuator, f=blow_up)
        with pytest.raises(ValueError, match="non-finite"):
            ha.window_average(spec, [1.0], [0.5], 0.0, 1.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 10.0), st.floats(0.3, 5.0), st.floats(0.3, 5.0))
    def test_splicing_identity(self, tau0, T1, T2):
        spec = ha.jammed_actuator(ha.JamParams(T=1.0, p=0.1, epsilon=0.01))
        q = 300
        a = ha.window_average(spec, [1.7], [0.5], tau0, T1, q)[0]
        b = ha.window_average(spec, [1.7], [0.5], tau0 + T1, T2, q)[0]
        c = ha.window_average(spec, [1.7], [0.5], tau0, T1 + T2, q)[0]
        assert T1 * a + T2 * b == pytest.approx((T1 + T2) * c, abs=1e-8)


class TestEstimateAverageMap:
    X_AXIS = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
    R_AXIS = np.array([0.0, 0.5, 1.0])

    def test_actuator_recovers_minus_x(self, actuator, favg):
        avg = ha.estimate_average_map(actuator, self.X_AXIS, self.R_AXIS,
                                      T_long=20 * 2 * math.pi, f_ave=favg)
        assert avg.nodal_residual <= 1e-6

    def test_es_recovers_the_same_map(self, es_system, favg):
        # axes avoid the delta-ball where the regularized branch takes over
        avg = ha.estimate_average_map(es_system, self.X_AXIS, self.R_AXIS,
                                      T_long=20 * 2 * math.pi, f_ave=favg)
        assert avg.nodal_residual <= 1e-6

    def test_tau_independent_flow_is_its_own_average(self, actuator):
        spec = tau_independent_spec(actuator)
        avg = ha.estimate_average_map(spec, self.X_AXIS, self.R_AXIS, T_long=7.3)
        pts = np.array([[-2.5], [0.4], [1.9]])
        r = np.zeros((3, 1))
        got = avg.f_ave(pts, r)
        assert np.allclose(got, -pts, atol=1e-9)

    def test_coarse_grid_for_curved_map_raises(self, actuator):
        def cubic_flow(x, r, tau, eps):
            x = np.asarray(x, dtype=float)
            return -(x * x * x)

        spec = dataclasses.replace(actuator, f=cubic_flow)
        with pytest.raises(ValueError, match="refine"):
            ha.estimate_average_map(spec, np.array([-3.0, 0.0, 3.0]),
                                    np.array([0.0]), T_long=5.0)


class TestEstimateGamma:
    X_PTS = np.array([[1.0], [2.0], [-3.0]])
    R_PTS = np.array([[0.0], [1.0]])

    def test_matches_closed_form_curve(self, actuator, favg):
        Ts = np.linspace(0.5, 4.0 * math.pi, 20)
        curve = ha.estimate_gamma(actuator, favg, self.X_PTS, self.R_PTS, TAUS, Ts)
        assert np.max(np.abs(curve.values - gamma_oracle(Ts))) <= 1e-4

    def test_exact_periods_vanish(self, actuator, favg):
        Ts = np.array([2.0 * math.pi, 4.0 * math.pi, 6.0 * math.pi])
        curve = ha.estimate_gamma(actuator, favg, self.X_PTS, self.R_PTS, TAUS, Ts)
        assert np.all(curve.values <= 1e-10)

    def test_tau_independent_flow_has_zero_gamma(self, actuator):
        spec = tau_independent_spec(actuator)
        Ts = np.array([0.7, 2.0, 9.0])
        curve = ha.estimate_gamma(spec, lambda x, r: -np.asarray(x), self.X_PTS,
                                  self.R_PTS, TAUS[:64], Ts)
        assert np.all(curve.values <= 1e-12)

    def test_zero_x_rejected(self, actuator, favg):
        with pytest.raises(ValueError, match="exclude 0"):
            ha.estimate_gamma(actuator, favg, np.array([[0.0], [1.0]]), self.R_PTS,
                              TAUS[:16], np.array([1.0]))

    def test_envelope_is_least_nonincreasing_majorant(self, actuator, favg):
        Ts = np.linspace(0.5, 4.0 * math.pi, 20)
        curve = ha.estimate_gamma(actuator, favg, self.X_PTS, self.R_PTS, TAUS, Ts)
        assert np.all(np.diff(curve.envelope) <= 1e-15)
        assert np.all(curve.envelope >= curve.values - 1e-15)
        # majorant is tight from the right
        for k in range(len(Ts)):
            assert curve.envelope[k] == pytest.approx(np.max(curve.values[k:]), abs=0)

    def test_normalized_residual_is_scale_free(self, actuator, favg):
        # doubling x at the witness leaves |residual|/|x| unchanged (linear field)
        Ts = np.array([math.pi])
        curve = ha.estimate_gamma(actuator, favg, self.X_PTS, self.R_PTS, TAUS, Ts)
        wx, wr, wtau = curve.witnesses[0]

        def normalized(xv):
            mean = ha.window_average(actuator, xv, wr, wtau, float(Ts[0]))
            ref = favg(np.atleast_2d(xv), np.atleast_2d(wr))[0]
            return np.linalg.norm(mean - ref) / np.linalg.norm(xv)

        assert normalized(wx) == pytest.approx(normalized(2.0 * wx), abs=1e-9)

    def test_certificate_holds_at_grid_resolution(self, actuator, favg):
        Ts = np.array([1.0, 2.5])
        curve = ha.estimate_gamma(actuator, favg, self.X_PTS, self.R_PTS, TAUS[:64], Ts)
        for ti, T in enumerate(Ts):
            for xv in self.X_PTS:
                for rv in self.R_PTS:
                    for tau0 in TAUS[:64]:
                        mean = ha.window_average(actuator, xv, rv, float(tau0), float(T))
                        ref = favg(np.atleast_2d(xv), np.atleast_2d(rv))[0]
                        resid = np.linalg.norm(mean - ref) / np.linalg.norm(xv)
                        assert resid <= curve.values[ti] + 1e-12


class TestJacobianAverage:
    def test_matches_state_curve_for_linear_field(self, actuator, favg):
        # d = -x sin(tau): both the state residual and d(d)/dx average to the
        # same closed-form magnitude
        Ts = np.linspace(0.5, 4.0 * math.pi, 10)
        curve = ha.check_jacobian_average(actuator, favg, np.array([[1.0]]),
                                          np.array([[0.0]]), TAUS, Ts)
        assert np.max(np.abs(curve.values - gamma_oracle(Ts))) <= 1e-4

    def test_exact_periods_vanish(self, actuator, favg):
        Ts = np.array([2.0 * math.pi, 4.0 * math.pi])
        curve = ha.check_jacobian_average(actuator, favg, np.array([[1.0]]),
                                          np.array([[0.0]]), TAUS[:64], Ts)
        assert np.all(curve.values <= 1e-8)

    def test_constant_in_tau_field_vanishes(self, actuator):
        spec = tau_independent_spec(actuator)
        Ts = np.array([0.9, 3.3])
        curve = ha.check_jacobian_average(spec, lambda x, r: -np.asarray(x),
                                          np.array([[1.0]]), np.array([[0.0]]),
                                          TAUS[:64], Ts)
        assert np.all(curve.values <= 1e-9)

    def test_flags_against_state_envelope(self, actuator, favg):
        Ts = np.linspace(0.5, 4.0 * math.pi, 10)
        state_curve = ha.estimate_gamma(actuator, favg, np.array([[1.0], [2.0]]),
                                        np.array([[0.0]]), TAUS, Ts)
        jac = ha.check_jacobian_average(actuator, favg, np.array([[1.0]]),
                                        np.array([[0.0]]), TAUS, Ts,
                                        state_gamma=state_curve)
        assert jac.exceeds_state_envelope is not None
        assert not any(jac.exceeds_state_envelope)
        assert jac.values_normalized is not None


class TestEstimateLipschitz:
    def test_actuator_constants(self, actuator, favg):
        est = ha.estimate_lipschitz(actuator, favg,
                                    np.array([[-3.0], [-1.0], [0.5], [2.0], [3.0]]),
                                    np.array([[0.0], [0.5], [1.0]]),
                                    np.linspace(0.0, 2.0 * math.pi, 201))
        assert est.L_x == pytest.approx(2.0, rel=0.01)  # sup |1 + sin|
        assert est.L_g == pytest.approx(1.5, abs=1e-12)  # max |0.75 + v|
        assert est.L_ave == pytest.approx(1.0, abs=1e-12)
        assert est.L_eps == 0.0  # no epsilon dependence

    def test_needs_two_x_points(self, actuator, favg):
        with pytest.raises(ValueError):
            ha.estimate_lipschitz(actuator, favg, np.array([[1.0]]),
                                  np.array([[0.0]]), np.array([0.0]))

    def test_estimates_are_lower_bounds(self, actuator, favg):
        est = ha.estimate_lipschitz(actuator, favg, np.array([[-2.0], [1.0], [3.0]]),
                                    np.array([[0.5]]), np.linspace(0.0, 6.0, 31))
        assert est.L_x <= 2.0 + 1e-12
        assert est.L_g <= 1.5 + 1e-12


class TestBuildAverageSystem:
    def test_jump_maps_and_sets_are_reused_verbatim(self, actuator, favg):
        avg = ha.build_average_system(actuator, favg)
        assert avg.g is actuator.g and avg.h is actuator.h
        assert avg.C is actuator.C and avg.D is actuator.D
        assert avg.noise is actuator.noise

    def test_average_flow_matches_closed_form_solution(self, average_system):
        sys = average_system.to_system()
        arc = ha.simulate_path(sys, state(1.0, 0.0), 0, ha.Horizon(1.0, 5))
        seg = arc.segments[0]
        assert np.max(np.abs(seg.x[:, 0] - np.exp(-seg.t))) <= 1e-10

    def test_tau_independent_average_equals_flow_at_eps_zero(self, actuator):
        spec = tau_independent_spec(actuator)
        avg = ha.build_average_system(spec, lambda x, r: -np.asarray(x))
        x = np.array([[1.3], [-0.2]])
        r = np.zeros((2, 1))
        assert np.array_equal(avg.f_ave(x, r), spec.f(x, r, 0.0, 0.0))
