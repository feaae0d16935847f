import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asconvex.cli import antidivergence_check, operator_exactness
from asconvex.errors import ExceptionalMultiplierError, PreconditionError, UnsupportedError
from asconvex.multiplier import (
    apply_anti_divergence,
    apply_operator,
    build_anti_divergence,
    classify,
    make_multiplier,
    validate_symbol,
)
from asconvex.spectral_core import SpectralField, div, make_grid
from conftest import random_field

FAMILIES = [
    ("msqg", {"delta": 0.0}),
    ("msqg", {"delta": -0.5}),
    ("msqg", {"delta": -1.0}),
    ("quadratic", {"c1": 1.0, "c2": 2.0, "c3": 0.5, "delta": -0.5}),
]


class TestSymbols:
    @pytest.mark.parametrize("family, params", FAMILIES)
    def test_structural_hypotheses(self, family, params):
        rep = validate_symbol(make_multiplier(family, params), 500)
        assert rep.max_violation < 1e-10

    @given(st.floats(0.1, 20), st.floats(0, 2 * np.pi), st.floats(-1, 0))
    @settings(deadline=None)
    def test_msqg_mbar_is_radial_power(self, r, phi, delta):
        spec = make_multiplier("msqg", {"delta": delta})
        xi = np.array([r * np.cos(phi), r * np.sin(phi)])
        assert spec.mbar(xi) == pytest.approx(r ** (delta - 1), rel=1e-12)

    @given(st.floats(-5, 5), st.floats(-5, 5))
    @settings(deadline=None)
    def test_mtilde_is_ksq_mbar(self, a, b):
        spec = make_multiplier("msqg", {"delta": -0.3})
        xi = np.array([a, b])
        if np.hypot(a, b) < 1e-3:
            return
        assert spec.mtilde(xi) == pytest.approx((a * a + b * b) * spec.mbar(xi), rel=1e-12)

    def test_ipm_is_even(self):
        assert validate_symbol(make_multiplier("ipm")).evenness < 1e-12

    @pytest.mark.parametrize("delta", [0.5, -1.5])
    def test_delta_range(self, delta):
        with pytest.raises(UnsupportedError):
            make_multiplier("msqg", {"delta": delta})

    def test_unknown_family(self):
        with pytest.raises(UnsupportedError):
            make_multiplier("euler")


class TestOperators:
    @pytest.mark.parametrize("family, params", FAMILIES[:2])
    def test_single_mode_exactness(self, family, params):
        rep = operator_exactness(make_multiplier(family, params), modes=10, samples=300)
        assert rep.passed, [r for r in rep.failures()]

    def test_T_of_scalar_is_divergence_free(self, msqg, grid32):
        th = random_field(grid32, seed=5)
        u = apply_operator(msqg, "T", th)
        assert np.max(np.abs(div(grid32, u.coeffs))) < 1e-12

    def test_T_rejects_vectors(self, msqg, grid32):
        with pytest.raises(PreconditionError):
            apply_operator(msqg, "T", random_field(grid32, "vector"))


class TestClassification:
    def test_msqg_two_independent(self, msqg):
        cl = classify(msqg)
        assert cl.kind == "TwoIndependent"
        assert np.allclose(cl.c, (1.0, 0.0, 1.0), atol=1e-9)

    def test_quadratic_c_vector_recovered(self):
        cl = classify(make_multiplier("quadratic", {"c1": 1.0, "c2": 2.0, "c3": 0.5}))
        assert cl.kind == "TwoIndependent"
        assert np.allclose(cl.c, (0.5, 0.25, 1.0), atol=1e-9)

    def test_degenerate_quadratic_refused(self):
        with pytest.raises(ExceptionalMultiplierError):
            make_multiplier("quadratic", {"c1": 1.0, "c2": 1.0, "c3": 2.0})

    def test_even_multiplier_not_classified(self):
        with pytest.raises(UnsupportedError):
            classify(make_multiplier("ipm"))

    def test_search_radius(self, msqg):
        with pytest.raises(PreconditionError):
            classify(msqg, search_radius=2)


class TestAntiDivergence:
    @given(st.integers(0, 10_000))
    @settings(deadline=None, max_examples=15)
    def test_right_inverse(self, seed):
        spec = make_multiplier("msqg", {"delta": 0.0})
        op = build_anti_divergence(classify(spec))
        g = make_grid(32)
        u = random_field(g, "vector", seed)
        R = apply_anti_divergence(op, u)
        assert np.max(np.abs(div(g, R.coeffs) - u.coeffs)) < 1e-12 * max(1.0, np.max(np.abs(u.coeffs)))
        assert np.max(np.abs(op.normal_pairing(R.physical()))) < 1e-12

    def test_requires_zero_mean(self, msqg, grid32):
        op = build_anti_divergence(classify(msqg))
        c = random_field(grid32, "vector").coeffs.copy()
        c[:, 0, 0] = 1.0
        with pytest.raises(PreconditionError):
            apply_anti_divergence(op, SpectralField(grid32, c))

    def test_batch_check(self, msqg):
        assert antidivergence_check(msqg, n=32, fields=10).passed
