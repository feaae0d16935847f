import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asconvex.errors import ConfigurationError, PreconditionError
from asconvex.multiplier import make_multiplier
from asconvex.nash import (
    Q_form,
    check_time_scales,
    kernel_tensor,
    microlocal_tensor,
    pressure_potential,
    rho,
    rho_scaled,
    time_mollify_stress,
    wave_scalar,
)
from asconvex.spectral_core import band_symbol, div, grad, inv_laplacian, make_grid


@pytest.fixture(scope="module")
def spec():
    return make_multiplier("msqg", {"delta": 0.0})


class TestTemporalMollifier:
    def test_unit_mass(self):
        s = np.linspace(-1, 1, 400_001)
        assert np.trapezoid(rho(s), s) == pytest.approx(1.0, rel=1e-9)

    @given(st.floats(1.0, 5.0))
    @settings(deadline=None)
    def test_support(self, s):
        assert rho(s) == 0 and rho(-s) == 0

    @given(st.floats(0.01, 1.0))
    @settings(deadline=None, max_examples=10)
    def test_scaled_mass(self, ell):
        s = np.linspace(-ell, ell, 200_001)
        assert np.trapezoid(rho_scaled(s, ell), s) == pytest.approx(1.0, rel=1e-8)

    def test_time_scale_order(self):
        check_time_scales(0.02, 25.0, 0.05)
        with pytest.raises(ConfigurationError):
            check_time_scales(0.05, 25.0, 0.05)

    def test_steady_stress_unchanged(self):
        g = make_grid(16)
        R = np.zeros((2, 2) + g.spectral_shape, complex)
        R[0, 1] = R[1, 0] = g.forward(np.cos(g.x[0]))
        zero = np.zeros((2,) + g.spectral_shape, complex)
        out = time_mollify_stress(g, lambda t: R, lambda t: zero, 0.3, 0.05)
        assert np.allclose(out, R, atol=1e-12)

    def test_linear_in_time_preserved(self):
        g = make_grid(16)
        base = np.zeros((2, 2) + g.spectral_shape, complex)
        base[0, 0] = base[1, 1] = g.forward(np.sin(g.x[1]))
        base[1, 1] *= -1
        zero = np.zeros((2,) + g.spectral_shape, complex)
        out = time_mollify_stress(g, lambda t: (1 + 2 * t) * base, lambda t: zero, 0.3, 0.05)
        assert np.allclose(out, 1.6 * base, atol=1e-12)


class TestMicrolocalIdentity:
    @pytest.mark.parametrize("lam, xi", [(7, (1, 0)), (5, (1, 1)), (6, (0, 1))])
    def test_identity_constant_amplitude(self, spec, lam, xi):
        g = make_grid(48)
        rep = microlocal_tensor(g, spec, 2.0 * np.ones((48, 48)), None, None, xi, lam)
        assert rep.identity_residual < 1e-12
        assert rep.deltaB_norm < 1e-12 * rep.leading_norm

    @given(st.integers(0, 10_000))
    @settings(deadline=None, max_examples=8)
    def test_identity_random_band_limited_theta(self, seed):
        spec = make_multiplier("msqg", {"delta": -0.4})
        g = make_grid(48)
        rng = np.random.default_rng(seed)
        c = g.forward(rng.normal(size=(48, 48))) * band_symbol(g, 6.0)
        theta = inv_laplacian(g, c)
        B = kernel_tensor(g, spec, theta, 6.0)
        Q = Q_form(g, spec, theta)
        resid = Q - grad(g, pressure_potential(g, spec, theta)) - div(g, B)
        assert np.max(np.abs(g.backward(resid))) < 1e-10 * np.max(np.abs(g.backward(Q)))

    def test_modulated_amplitude(self, spec):
        g = make_grid(48)
        a = 2.0 + 0.5 * np.cos(g.x[1])
        rep = microlocal_tensor(g, spec, a, None, None, (1, 0), 7)
        assert rep.identity_residual < 1e-12
        assert 0 < rep.ratio < 0.1

    def test_remainder_second_order_in_band(self, spec):
        """Halving the amplitude band divides |deltaB|/|leading| by about four."""
        g = make_grid(108)
        r = [microlocal_tensor(g, spec, 2.0 + 0.5 * np.cos(b * g.x[1]), None, None, (1, 0), 16).ratio for b in (2, 1)]
        assert r[0] / r[1] == pytest.approx(4.0, rel=0.05)

    def test_odd_mbar_rejected(self):
        g = make_grid(16)
        odd = make_multiplier("ipm")
        with pytest.raises(PreconditionError):
            kernel_tensor(g, odd, np.zeros(g.spectral_shape, complex), 3.0)

    def test_wave_requires_lattice_vector(self):
        g = make_grid(48)
        with pytest.raises(PreconditionError):
            wave_scalar(g, np.ones((48, 48)), None, (0.5, 0.0), 7)
