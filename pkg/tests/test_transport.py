import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asconvex.errors import PreconditionError, StabilityError
from asconvex.spectral_core import make_grid, perp_grad
from asconvex.transport import (
    TemporalPartition,
    backward_flow,
    c1_norm,
    hermite,
    lagrangian_trajectories,
    oscillation_profiles,
    solve_transport,
)

F4 = [(1, 0), (-1, 0), (1, 1), (-1, -1)]


def shear(grid, amp=0.3):
    """Steady divergence-free shear u = (amp sin x2, 0)."""
    u = np.zeros((2,) + grid.spectral_shape, complex)
    u[0] = grid.forward(amp * np.sin(grid.x[1]))
    return u


class TestFlows:
    @given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-0.5, 0.5))
    @settings(deadline=None, max_examples=10)
    def test_constant_velocity_translates(self, a, b, s):
        g = make_grid(16)
        u = np.zeros((2,) + g.spectral_shape, complex)
        u[:, 0, 0] = (a, b)
        flow = backward_flow(u, g, 0.0, (-0.5, 0.5), dt=0.05)
        D = g.backward(flow.displacement(s))
        assert np.allclose(D[0], -a * s, atol=1e-12)
        assert np.allclose(D[1], -b * s, atol=1e-12)

    def test_shear_flow_exact(self):
        g = make_grid(32)
        flow = backward_flow(shear(g), g, 0.0, (-0.4, 0.4), dt=0.01)
        D = g.backward(flow.displacement(0.4))
        assert np.allclose(D[0], -0.3 * np.sin(g.x[1]) * 0.4, atol=1e-10)

    @pytest.mark.parametrize("tau", [0.4, 0.2, 0.1])
    def test_deviation_linear_in_window(self, tau):
        g = make_grid(32)
        u = shear(g)
        flow = backward_flow(u, g, 0.0, (-tau, tau), dt=tau / 20)
        ratio = flow.deviation(tau) / (tau * c1_norm(g, u))
        assert ratio == pytest.approx(1.0, rel=1e-6)

    def test_stability_violation(self):
        g = make_grid(16)
        with pytest.raises(StabilityError):
            backward_flow(shear(g, 5.0), g, 0.0, (-1.0, 1.0))

    def test_anchor_inside_window(self):
        g = make_grid(16)
        with pytest.raises(PreconditionError):
            backward_flow(shear(g), g, 2.0, (-1.0, 1.0))

    def test_trajectories_follow_shear(self):
        g = make_grid(32)
        pts = np.array([[0.1, 0.5], [1.0, 2.0]])
        traj = lagrangian_trajectories(shear(g), g, pts, 0.0, 0.5, 0.01)
        X = traj(0.5)
        assert np.allclose(X[:, 0], pts[:, 0] + 0.3 * np.sin(pts[:, 1]) * 0.5, atol=1e-10)


class TestTransport:
    def test_pure_forcing_integrates(self):
        g = make_grid(16)
        zero = np.zeros((2,) + g.spectral_shape, complex)
        f = g.forward(np.cos(g.x[0]))
        series = solve_transport(zero, g, lambda t: f * np.cos(t), 0 * f, 0.0, (-0.3, 0.3), dt=0.01)
        assert np.allclose(series(0.2), f * np.sin(0.2), atol=1e-9)

    def test_transported_scalar_is_constant_along_flow(self):
        g = make_grid(32)
        u = shear(g)
        init = g.forward(np.sin(g.x[0]))
        series = solve_transport(u, g, None, init, 0.0, (0.0, 0.3), dt=0.005)
        x1, x2 = g.x
        exact = np.sin(x1 - 0.3 * np.sin(x2) * 0.3)
        assert np.max(np.abs(g.backward(series(0.3)) - exact)) < 1e-8


class TestPartition:
    @given(st.floats(-3, 3))
    @settings(deadline=None)
    def test_squares_sum_to_one(self, t):
        P = TemporalPartition(0.1)
        total = sum(P.chi(k, t) ** 2 for k in P.indices((t, t)))
        assert total == pytest.approx(1.0, abs=1e-12)

    @given(st.integers(-5, 5), st.floats(-0.66, 0.66))
    @settings(deadline=None)
    def test_chi_tilde_covers_chi(self, k, y):
        P = TemporalPartition(0.2)
        assert P.chi_tilde(k, (k + y) * 0.2) == pytest.approx(1.0)

    def test_supports(self):
        P = TemporalPartition(0.3)
        assert P.chi(2, (2 + 0.67) * 0.3) == 0
        assert P.chi_tilde(2, (2 + 1.0) * 0.3) == 0

    def test_derivative_matches_fd(self):
        P = TemporalPartition(0.5)
        t, h = 0.23, 1e-6
        fd = (P.chi(0, t + h) - P.chi(0, t - h)) / (2 * h)
        assert P.dchi(0, t) == pytest.approx(fd, rel=1e-6)

    def test_hermite_reproduces_cubic(self):
        f = lambda t: t**3 - 2 * t
        df = lambda t: 3 * t**2 - 2
        assert hermite(0.3, 0.0, 1.0, f(0), f(1), df(0), df(1)) == pytest.approx(f(0.3))


class TestProfiles:
    @pytest.mark.parametrize("gamma", [1, 2, 3])
    def test_unit_mean_square(self, gamma):
        prof = oscillation_profiles(F4, gamma)
        y = np.linspace(0, 1, 200_001)
        for i in range(4):
            for parity in (0, 1):
                g2 = prof.g(i, parity, gamma, y) ** 2
                assert np.trapezoid(g2, y) == pytest.approx(1.0, rel=1e-6)

    def test_disjoint_slots(self):
        prof = oscillation_profiles(F4, 2)
        y = np.linspace(0, 1, 20_001)
        stack = np.array([prof.g(i, p, n, y) for i in range(4) for p in (0, 1) for n in (1, 2)])
        assert np.all(np.sum(stack > 0, axis=0) <= 1)

    def test_primitive_is_periodic(self):
        prof = oscillation_profiles(F4, 2)
        assert prof.f1(1, 0, 2, 1.0) == pytest.approx(prof.f1(1, 0, 2, 0.0), abs=1e-12)

    def test_primitive_derivative(self):
        prof = oscillation_profiles(F4, 2)
        y, h = 0.31, 1e-6
        fd = (prof.f1(2, 1, 1, y + h) - prof.f1(2, 1, 1, y - h)) / (2 * h)
        assert fd == pytest.approx(prof.f(2, 1, 1, y), abs=1e-6)

    def test_bad_sizes(self):
        with pytest.raises(PreconditionError):
            oscillation_profiles(F4[:3], 2)
