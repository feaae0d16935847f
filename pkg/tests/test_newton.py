import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asconvex.errors import PreconditionError
from asconvex.newton import FD_WEIGHTS, StageParameters, _intervals, central_difference


def params(**kw):
    base = dict(
        q=0, lam=7, lam_next=11, delta=1 / 7, delta_next=1 / 11, ell=0.1, ell_t=0.03,
        tau=0.05, mu=25.0, gamma=2, delta_n=(0.09, 0.05),
    )
    return StageParameters(**(base | kw))


class TestStageParameters:
    def test_steps_divisible_by_three(self):
        with pytest.raises(PreconditionError):
            params(steps_per_tau=64)

    def test_one_level_per_layer(self):
        with pytest.raises(PreconditionError):
            params(delta_n=(0.09,))

    @pytest.mark.parametrize("gamma", [1, 2, 3, 4])
    def test_steps_nest(self, gamma):
        p = params(gamma=gamma, delta_n=tuple(range(gamma)))
        assert p.step(gamma) == pytest.approx(p.top_step)
        for n in range(1, gamma):
            assert p.step(n) == pytest.approx(p.step(n + 1) / 2)
        assert p.step(0) == pytest.approx(p.step(1) / 2)
        assert p.nodes_per_tau(gamma) == 66


class TestFiniteDifference:
    def test_weights_antisymmetric(self):
        assert np.allclose(FD_WEIGHTS, -FD_WEIGHTS[::-1])

    @given(st.floats(-2, 2), st.floats(1e-3, 0.1))
    @settings(deadline=None)
    def test_exact_on_quartic(self, t, eps):
        f = lambda s: s**4 - 3 * s**3 + s
        df = 4 * t**3 - 9 * t**2 + 1
        sl = [f(t + o * eps) for o in (-2, -1, 0, 1, 2)]
        assert central_difference(sl, eps) == pytest.approx(df, rel=1e-6, abs=1e-6)


class TestIntervals:
    def test_split_on_gaps(self):
        t = np.arange(10) * 0.1
        mask = np.array([0, 1, 1, 0, 0, 1, 1, 1, 0, 1], bool)
        assert np.allclose(_intervals(t, mask, 0.1), [(0.1, 0.2), (0.5, 0.7), (0.9, 0.9)])

    def test_empty(self):
        assert _intervals(np.arange(3.0), np.zeros(3, bool), 1.0) == []
