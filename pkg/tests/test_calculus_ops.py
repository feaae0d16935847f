import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asconvex.calculus_ops import (
    BILINEAR_OPS,
    TRILINEAR_OPS,
    bilinear,
    brute_force_bilinear,
    estimate_probe,
    random_field,
    trilinear,
)
from asconvex.errors import PreconditionError
from asconvex.multiplier import make_multiplier
from asconvex.spectral_core import SpectralField, make_grid


def _args(grid, op_id, rng, kmax):
    kinds = {"S": ("vector", "scalar"), "S'": ("vector", "vector")}.get(op_id, ("scalar", "scalar"))
    return [random_field(grid, k, rng, kmax, divfree=(k == "vector")) for k in kinds]


class TestBruteForce:
    @pytest.mark.parametrize("op_id", BILINEAR_OPS)
    def test_composition_matches_double_sum(self, op_id):
        spec = make_multiplier("msqg", {"delta": -0.5})
        g = make_grid(16)
        f, h = _args(g, op_id, np.random.default_rng(3), g.K / 2)
        fast = bilinear(spec, op_id, f, h).coeffs
        slow = brute_force_bilinear(spec, op_id, f, h).coeffs
        assert np.max(np.abs(fast - slow)) <= 1e-9 * max(np.max(np.abs(slow)), 1e-300)


class TestBilinearProperties:
    @given(st.integers(0, 10_000), st.floats(0.2, 3.0))
    @settings(deadline=None, max_examples=10)
    def test_bilinear_in_first_slot(self, seed, s):
        spec = make_multiplier("msqg", {"delta": 0.0})
        g = make_grid(32)
        rng = np.random.default_rng(seed)
        f1, h = _args(g, "T", rng, 8)
        f2, _ = _args(g, "T", rng, 8)
        lhs = bilinear(spec, "T", f1 * s + f2, h).coeffs
        rhs = s * bilinear(spec, "T", f1, h).coeffs + bilinear(spec, "T", f2, h).coeffs
        assert np.allclose(lhs, rhs, atol=1e-10 * np.max(np.abs(rhs)))

    @pytest.mark.parametrize("op_id", TRILINEAR_OPS)
    def test_constant_velocity_gives_zero(self, op_id):
        spec = make_multiplier("msqg", {"delta": 0.0})
        g = make_grid(32)
        rng = np.random.default_rng(1)
        c = np.zeros((2,) + g.spectral_shape, complex)
        c[:, 0, 0] = (0.7, -1.3)
        u = SpectralField(g, c)
        phi = random_field(g, "scalar", rng, 6)
        psi = random_field(g, "scalar", rng, 6)
        out = trilinear(spec, op_id, u, phi, psi)
        assert out.sup_norm() < 1e-10

    def test_slot_checks(self):
        spec = make_multiplier("msqg", {"delta": 0.0})
        g = make_grid(16)
        rng = np.random.default_rng(0)
        s = random_field(g, "scalar", rng, 4)
        with pytest.raises(PreconditionError):
            bilinear(spec, "S", s, s)
        with pytest.raises(PreconditionError):
            bilinear(spec, "nope", s, s)


class TestProbes:
    def test_report_shape(self):
        spec = make_multiplier("msqg", {"delta": 0.0})
        rep = estimate_probe(spec, "T", 0.5, resolutions=(16, 32), trials=20)
        assert set(rep.ratios) == {16, 32}
        assert all(len(v) == 20 for v in rep.ratios.values())
        assert np.all(np.isfinite(rep.ratios[32]))

    @pytest.mark.parametrize("alpha, trials", [(0.0, 20), (1.0, 20), (0.5, 5)])
    def test_argument_checks(self, alpha, trials):
        spec = make_multiplier("msqg", {"delta": 0.0})
        with pytest.raises(PreconditionError):
            estimate_probe(spec, "T", alpha, trials=trials)
