import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asconvex.driver import (
    ParamSchedule,
    SupportStep,
    admissible_M,
    base_case,
    build_context,
    base_profile,
    base_profile_derivative,
    beta_cap,
    nash_constant,
    window_intervals,
    with_admissible_M,
)
from asconvex.errors import ConfigurationError, InfeasibleParametersError, ResolutionError
from asconvex.multiplier import make_multiplier
from asconvex.spectral_core import make_grid

DEFAULT = ParamSchedule(7, 1.2, 0.5, 0.01)


class TestSchedule:
    def test_gamma_ten(self):
        assert ParamSchedule(7, 1.01, 0.9, 0.01).gamma == 10

    def test_cap_near_one_third(self):
        assert beta_cap(1.001, -1.0) == pytest.approx(1 / 3, abs=1e-3)

    def test_frequencies(self):
        s = ParamSchedule(4, 1.3, 0.5, 0.01)
        assert [s.lam(q) for q in range(3)] == [4, 7, 11]

    def test_default_scales(self):
        s = DEFAULT
        assert (s.lam(0), s.lam(1), s.gamma) == (7, 11, 2)
        assert s.tau(0) == pytest.approx(0.052716, rel=1e-4)
        assert s.mu(0) == pytest.approx(25.553, rel=1e-4)
        assert s.ell_t(0) < 1 / s.mu(0) < s.tau(0)

    def test_toy_schedule_infeasible(self):
        with pytest.raises(InfeasibleParametersError):
            ParamSchedule(4, 1.3, 0.25, 0.01, delta=-1.0)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(a=1.0), dict(b=1.0), dict(alpha=0.0), dict(alpha=1.0), dict(M=0.0), dict(delta=0.5)],
    )
    def test_invalid_values(self, kwargs):
        args = dict(a=7, b=1.2, beta=0.5, alpha=0.01) | kwargs
        with pytest.raises(ConfigurationError):
            ParamSchedule(**args)

    @given(st.floats(1.05, 2.0), st.floats(-1.0, 0.0))
    @settings(deadline=None)
    def test_beta_at_cap_rejected(self, b, delta):
        cap = beta_cap(b, delta)
        if not 0 < cap < 1 + 2 * delta / 3:
            return
        with pytest.raises(InfeasibleParametersError):
            ParamSchedule(7, b, cap, 0.01, delta=delta)

    @given(st.integers(0, 4))
    @settings(deadline=None)
    def test_energy_levels_decrease(self, q):
        s = DEFAULT
        assert s.delta_q(q + 1) < s.delta_q(q)
        d = [s.delta_qn(q, n) for n in range(s.gamma)]
        assert d[0] == pytest.approx(s.delta_q(q + 1)) and all(np.diff(d) < 0)

    def test_resolution(self):
        DEFAULT.check_resolution(make_grid(72))
        with pytest.raises(ResolutionError):
            DEFAULT.check_resolution(make_grid(48))

    def test_stage_parameters(self):
        p = DEFAULT.stage(0)
        assert (p.lam, p.lam_next, p.gamma, len(p.delta_n)) == (7, 11, 2, 2)


@pytest.fixture(scope="module")
def bc():
    return base_case(DEFAULT, make_multiplier("msqg", {"delta": 0.0}), make_grid(72))


class TestBaseCase:
    @given(st.floats(-1.25, 1.25))
    @settings(deadline=None)
    def test_profile_plateau(self, t):
        assert base_profile(t) == 1.0 and base_profile_derivative(t) == 0.0

    @given(st.floats(1.75, 3.0))
    @settings(deadline=None)
    def test_profile_vanishes(self, t):
        assert base_profile(t) == 0.0 and base_profile(-t) == 0.0

    def test_theta_is_minus_curl(self, bc):
        th = bc.grid.backward(bc.theta(0.0).coeffs)
        expected = -bc.delta**0.5 * bc.lam * np.cos(bc.lam * bc.grid.x[0])
        assert np.allclose(th, expected, atol=1e-12)

    def test_velocity_amplitude(self, bc):
        v = bc.grid.backward(bc.velocity(0.0))
        assert np.max(np.abs(v[1])) == pytest.approx(DEFAULT.delta_q(0) ** 0.5, rel=1e-12)
        assert np.max(np.abs(v[0])) == 0.0

    @pytest.mark.parametrize("t", [0.0, 1.0, 1.8, -1.9, -0.5])
    def test_stress_vanishes_off_transition(self, bc, t):
        assert not np.any(bc.stress(t))

    @pytest.mark.parametrize("t", [1.3, 1.5, -1.6])
    def test_stress_on_transition(self, bc, t):
        assert np.any(bc.stress(t))

    def test_lambda_needs_room(self):
        with pytest.raises(ResolutionError):
            base_case(DEFAULT, make_multiplier("msqg", {"delta": 0.0}), make_grid(24))


class TestSupportBookkeeping:
    def test_window_intervals_merge(self):
        assert np.allclose(window_intervals([1, 2, 5], 0.1), [(0.0, 0.3), (0.4, 0.6)])

    def test_growth_and_containment(self):
        st_ = SupportStep(1, [(1.0, 1.2)], [12], [(1.1, 1.3)], [(1.15, 1.25)])
        assert st_.growth == pytest.approx(0.1)
        assert st_.contained
        assert not SupportStep(1, [(1.0, 1.2)], [12], [(1.1, 1.3)], [(1.0, 1.25)]).contained


class TestVelocityConstant:
    @given(st.floats(0.0, 50.0))
    @settings(deadline=None)
    def test_strictly_above_rule(self, M0):
        spec = make_multiplier("msqg", {"delta": 0.0})
        M = admissible_M(M0, spec)
        assert M > M0 + 3.0 and M == int(M) and M <= M0 + 4.0

    def test_derived_from_building_block(self, bc):
        ctx = build_context(bc.state(), DEFAULT.stage(0))
        M0 = nash_constant(ctx)
        assert 10.0 < M0 < 30.0
        assert with_admissible_M(DEFAULT, ctx).M == admissible_M(M0, bc.spec)

    def test_explicit_M_kept(self, bc):
        ctx = build_context(bc.state(), DEFAULT.stage(0))
        explicit = ParamSchedule(7, 1.2, 0.5, 0.01, M=5.0)
        assert with_admissible_M(explicit, ctx).M == 5.0
