import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asconvex.diagnostics import (
    REPORT_COLUMNS,
    BoundRecord,
    BoundReport,
    LevelScales,
    asm_residual,
    check_inductive_bounds,
    export_report,
    fit_constants,
    hamiltonian,
    smooth_initial_scalar,
    solve_active_scalar,
)
from asconvex.driver import ParamSchedule, base_case
from asconvex.errors import PreconditionError
from asconvex.multiplier import make_multiplier
from asconvex.spectral_core import SpectralField, make_grid
from conftest import random_coeffs

SCHEDULE = ParamSchedule(7, 1.2, 0.5, 0.01, M=1.0)  # tight: the base case attains the velocity bounds


@pytest.fixture(scope="module")
def base():
    return base_case(SCHEDULE, make_multiplier("msqg", {"delta": 0.0}), make_grid(72))


@pytest.fixture(scope="module")
def scales():
    s = SCHEDULE
    return LevelScales(s.lam(0), s.lam(1), s.delta_q(0), s.delta_q(1), 0.0, s.alpha, s.M)


class TestHamiltonian:
    def test_zero_field(self, msqg, grid32):
        assert hamiltonian(SpectralField.zeros(grid32, "scalar"), msqg) == 0.0

    def test_mean_rejected(self, msqg, grid32):
        c = random_coeffs(grid32, seed=1)
        c[0, 0] = 1.0
        with pytest.raises(PreconditionError):
            hamiltonian(SpectralField(grid32, c), msqg)

    @given(st.floats(-1.9, 1.9))
    @settings(deadline=None, max_examples=10)
    def test_base_case_closed_form(self, t):
        spec = make_multiplier("msqg", {"delta": 0.0})
        bc = base_case(SCHEDULE, spec, make_grid(72))
        assert hamiltonian(bc.theta(t), spec) == pytest.approx(bc.hamiltonian_closed_form(t), rel=1e-12, abs=1e-14)

    @pytest.mark.parametrize("delta", [0.0, -0.5])
    def test_conserved_by_active_scalar_flow(self, delta):
        spec = make_multiplier("msqg", {"delta": delta})
        run = solve_active_scalar(smooth_initial_scalar(make_grid(48), seed=2), spec, 0.1, 2e-3)
        assert run.drift < 1e-6


class TestAsmResidual:
    @pytest.mark.parametrize("t0", [0.3, 1.5, -1.6])
    @pytest.mark.parametrize("points", [3, 5])
    def test_base_case_solves_system(self, base, t0, points):
        eps = 1e-4 if points == 3 else 1e-3
        offs = range(-(points // 2), points // 2 + 1)
        sl = [base.velocity(t0 + o * eps) for o in offs]
        assert asm_residual(base.grid, base.spec, sl, base.pressure(t0), base.stress(t0), eps, relative=True) < 1e-6

    def test_wrong_stress_detected(self, base):
        t0, eps = 1.5, 1e-3
        sl = [base.velocity(t0 + o * eps) for o in (-2, -1, 0, 1, 2)]
        r = asm_residual(base.grid, base.spec, sl, base.pressure(t0), 2 * base.stress(t0), eps, relative=True)
        assert r > 0.1

    def test_slice_count(self, base):
        with pytest.raises(PreconditionError):
            asm_residual(base.grid, base.spec, [base.velocity(0.0)] * 4, base.pressure(0), base.stress(0), 1e-3)


class TestReports:
    def test_record_pass_and_ratio(self):
        r = BoundRecord("m", "x", 2.0, 4.0, 0.5)
        assert r.passed and r.ratio == pytest.approx(0.5)
        assert not BoundRecord("m", "x", 2.1, 4.0, 0.5).passed

    def test_equality_passes(self):
        assert BoundRecord("m", "x", 1.0 + 1e-15, 1.0).passed

    def test_report_queries(self):
        rep = BoundReport()
        rep.add("m", "a[1]", 1.0, 2.0)
        rep.add("m", "a[2]", 3.0, 2.0)
        rep.add("m", "b", 0.0, 1.0)
        assert not rep.passed
        assert [r.label for r in rep.failures()] == ["a[2]"]
        assert len(rep.by_label("a")) == 2

    def test_fit_constants(self):
        recs = [BoundRecord("m", "a", 1.0, 2.0), BoundRecord("m", "a", 3.0, 2.0)]
        assert fit_constants(recs)["a"] == pytest.approx(1.25 * 1.5)

    def test_header_only(self, tmp_path):
        p = tmp_path / "r.csv"
        export_report([], p)
        assert p.read_text() == ",".join(REPORT_COLUMNS) + "\n"

    def test_roundtrip(self, tmp_path):
        p = tmp_path / "r.csv"
        export_report([BoundRecord("m", "a", 1.0, 2.0), BoundRecord("m", "b", 3.0, 2.0)], p)
        rows = list(csv.reader(p.open()))
        assert rows[0] == list(REPORT_COLUMNS)
        assert [r[-1] for r in rows[1:]] == ["True", "False"]

    def test_ascii_only(self, tmp_path):
        with pytest.raises(PreconditionError):
            export_report([BoundRecord("m", "δ", 1.0, 2.0)], tmp_path / "r.csv")


class TestInductiveBounds:
    TIMES = np.linspace(-2, 2, 41)

    def test_base_case_passes(self, base, scales):
        rep = check_inductive_bounds(base.grid, base.spec, base.velocity, base.stress, self.TIMES, scales)
        assert rep.passed, rep.failures()

    def test_amplified_stress_fails(self, base, scales):
        rep = check_inductive_bounds(base.grid, base.spec, base.velocity, lambda t: 4 * base.stress(t), self.TIMES, scales)
        assert {r.label for r in rep.failures()} >= {"inductive-R[r=0,N=0]"}

    def test_amplified_velocity_fails(self, base, scales):
        rep = check_inductive_bounds(base.grid, base.spec, lambda t: 1.01 * base.velocity(t), base.stress, self.TIMES, scales)
        assert "inductive-v[N=1]" in {r.label for r in rep.failures()}

    def test_support_outside_allowed(self, base, scales):
        rep = check_inductive_bounds(
            base.grid, base.spec, base.velocity, base.stress, self.TIMES, scales, support=[(-0.5, 0.5)]
        )
        assert [r.label for r in rep.failures()] == ["inductive-support"]
