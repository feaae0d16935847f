"""Parameter schedule, base case and the one-stage driver q -> q+1."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .algebra import DirectionFrame, choose_frame
from .diagnostics import BoundReport
from .errors import ConfigurationError, InfeasibleParametersError, ResolutionError
from .multiplier import MultiplierSpec, build_anti_divergence, classify
from .nash import CheckResult, active_terms, check_stage, check_time_scales, wave_scalar
from .newton import NewtonResult, NewtonRun, StageContext, StageParameters, StageState
from .spectral_core import (
    Annuli,
    SpectralField,
    TorusGrid,
    holder_norm,
    perp_grad,
    smoothstep,
    smoothstep_derivative,
)

_CEIL_SLACK = 1e-9


def _ceil(x: float) -> int:
    """Ceiling that ignores floating-point excess such as 10.000000000000002."""
    return int(math.ceil(x - _CEIL_SLACK))


# --- schedule ----------------------------------------------------------------------

def beta_cap(b: float, delta: float) -> float:
    """Largest admissible regularity exponent for given b and multiplier homogeneity."""
    first = delta / 3 + (1 + delta / 3) * (b + 1) / (2 * b)
    second = (3 * (1 + delta) * b - delta) / (3 * (2 * b - 1))
    return min(first, second)


@dataclass(frozen=True)
class ParamSchedule:
    """Frequency, amplitude and time scales of the iteration."""

    a: float
    b: float
    beta: float
    alpha: float
    M: float | None = None  # None: derive from the Nash constant, see with_admissible_M
    delta: float = 0.0  # homogeneity of the multiplier
    steps_per_tau: int = 66

    def __post_init__(self):
        if self.a <= 1 or self.b <= 1:
            raise ConfigurationError("a and b must exceed 1")
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        if self.M is not None and self.M <= 0:
            raise ConfigurationError("M must be positive")
        if not -1 <= self.delta <= 0:
            raise ConfigurationError("multiplier homogeneity must lie in [-1, 0]")
        top = 1 + 2 * self.delta / 3
        if not 0 < self.beta < top:
            raise InfeasibleParametersError(f"beta={self.beta} outside (0, {top:.6g})")
        cap = beta_cap(self.b, self.delta)
        if self.beta >= cap:
            raise InfeasibleParametersError(f"beta={self.beta} >= feasibility cap {cap:.6g} for b={self.b}")

    @property
    def cap(self) -> float:
        return beta_cap(self.b, self.delta)

    def lam(self, q: int) -> int:
        return _ceil(self.a ** (self.b**q))

    def delta_q(self, q: int) -> float:
        return float(self.lam(q)) ** (-2 * self.beta)

    def ell(self, q: int) -> float:
        return (self.lam(q) * self.lam(q + 1)) ** -0.5

    def tau(self, q: int) -> float:
        d = self.delta
        return self.delta_q(q) ** -0.5 * self.lam(q) ** -(2 + d) * self.lam(q + 1) ** -self.alpha

    def mu(self, q: int) -> float:
        """mu_{q+1}, the temporal oscillation frequency of stage q -> q+1."""
        d, l0, l1 = self.delta, self.lam(q), self.lam(q + 1)
        return self.delta_q(q + 1) ** 0.5 * l0 ** (1 + d / 3) * l1 ** (1 + 2 * d / 3) * l1 ** (4 * self.alpha)

    def ell_t(self, q: int) -> float:
        return self.delta_q(q + 1) ** -0.5 * self.lam(q + 1) ** (-2 - self.delta)

    @property
    def gamma(self) -> int:
        d = self.delta
        return _ceil((1 + d / 3) / (1 + 2 * d / 3 - self.beta))

    def delta_qn(self, q: int, n: int) -> float:
        d = self.delta
        ratio = self.lam(q) / self.lam(q + 1)
        return self.delta_q(q + 1) * ratio ** (n * (1 + 2 * d / 3 - self.beta))

    def check_ordering(self, q: int) -> None:
        """ell_t < 1/mu < tau and tau^{-1}/mu < 1; strict growth of lambda."""
        if self.lam(q + 1) <= self.lam(q):
            raise InfeasibleParametersError(f"lambda_{q + 1} = lambda_{q}; increase a or b")
        check_time_scales(self.ell_t(q), self.mu(q), self.tau(q))
        if 1.0 / (self.tau(q) * self.mu(q)) >= 1:
            raise InfeasibleParametersError("tau^{-1} / mu must be below 1")

    def check_resolution(self, grid: TorusGrid, frame: DirectionFrame | None = None, q: int = 0, annuli: Annuli | None = None) -> None:
        """The widest band around lambda_{q+1} and the wave vectors must fit on the grid."""
        annuli = annuli or Annuli()
        outer = annuli.radii(1)[1] * self.lam(q + 1)
        if outer >= grid.K + 1:
            raise ResolutionError(f"band radius {outer:.2f} at lambda_{q + 1} exceeds K = {grid.K}")
        if frame is not None and self.lam(q + 1) * frame.max_direction > annuli.radii(0)[1] * self.lam(q + 1):
            raise ResolutionError("wave vectors leave the band")

    def stage(self, q: int = 0) -> StageParameters:
        self.check_ordering(q)
        return StageParameters(
            q=q,
            lam=self.lam(q),
            lam_next=self.lam(q + 1),
            delta=self.delta_q(q),
            delta_next=self.delta_q(q + 1),
            ell=self.ell(q),
            ell_t=self.ell_t(q),
            tau=self.tau(q),
            mu=self.mu(q),
            gamma=self.gamma,
            delta_n=tuple(self.delta_qn(q, n) for n in range(self.gamma)),
            steps_per_tau=self.steps_per_tau,
        )

    def summary(self, q: int = 0) -> dict:
        return {
            "lambda_q": self.lam(q),
            "lambda_q1": self.lam(q + 1),
            "delta_q": self.delta_q(q),
            "delta_q1": self.delta_q(q + 1),
            "ell": self.ell(q),
            "ell_t": self.ell_t(q),
            "tau": self.tau(q),
            "mu": self.mu(q),
            "gamma": self.gamma,
            "beta_cap": self.cap,
        }


# --- base case ----------------------------------------------------------------------

def base_profile(t):
    """f(t): 1 on [-5/4, 5/4], 0 outside [-7/4, 7/4]."""
    return smoothstep((1.75 - np.abs(t)) / 0.5)


def base_profile_derivative(t):
    return -np.sign(t) * smoothstep_derivative((1.75 - np.abs(t)) / 0.5) / 0.5


@dataclass
class BaseCase:
    """v0 = f delta0^{1/2} sin(lam0 x1) e2 with the matching pressure and stress."""

    grid: TorusGrid
    spec: MultiplierSpec
    lam: int
    delta: float
    profile: object = base_profile
    profile_derivative: object = base_profile_derivative
    _modes: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.lam > self.grid.K / 2:
            raise ResolutionError(f"lambda_0 = {self.lam} needs 2 lambda_0 <= K = {self.grid.K}")
        shape = self.grid.spectral_shape
        lam = self.lam
        sin = np.zeros(shape, complex)
        sin[lam, 0], sin[-lam, 0] = -0.5j, 0.5j
        cos = np.zeros(shape, complex)
        cos[lam, 0] = cos[-lam, 0] = 0.5
        cos2 = np.zeros(shape, complex)
        cos2[2 * lam, 0] = cos2[-2 * lam, 0] = 0.5
        self._modes = {"sin": sin, "cos": cos, "cos2": cos2}

    @property
    def mtilde(self) -> float:
        """mtilde(lam0, 0) = lam0^{1+delta} mtilde(1, 0)."""
        return float(np.real(self.spec.grid_symbols(self.grid)["mtilde"][self.lam, 0]))

    def velocity(self, t: float) -> np.ndarray:
        v = np.zeros((2,) + self.grid.spectral_shape, complex)
        v[1] = float(self.profile(t)) * self.delta**0.5 * self._modes["sin"]
        return v

    def pressure(self, t: float) -> np.ndarray:
        return -0.25 * self.mtilde * float(self.profile(t)) ** 2 * self.delta * self._modes["cos2"]

    def stress(self, t: float) -> np.ndarray:
        R = np.zeros((2, 2) + self.grid.spectral_shape, complex)
        R[0, 1] = R[1, 0] = -float(self.profile_derivative(t)) * self.delta**0.5 / self.lam * self._modes["cos"]
        return R

    def theta(self, t: float) -> SpectralField:
        """theta = -curl_perp . v = -f delta0^{1/2} lam0 cos(lam0 x1)."""
        return SpectralField(self.grid, -float(self.profile(t)) * self.delta**0.5 * self.lam * self._modes["cos"])

    def hamiltonian_closed_form(self, t: float) -> float:
        mbar = float(np.real(self.spec.grid_symbols(self.grid)["mbar"][self.lam, 0]))
        return np.pi**2 * self.delta * self.lam**2 * mbar * float(self.profile(t)) ** 2

    def state(self) -> StageState:
        return StageState(self.grid, self.spec, self.velocity, self.pressure, self.stress, (-2.0, 2.0), 0)


def base_case(schedule: ParamSchedule, spec: MultiplierSpec, grid: TorusGrid) -> BaseCase:
    return BaseCase(grid, spec, schedule.lam(0), schedule.delta_q(0))


def build_context(state: StageState, params: StageParameters, search_radius: int = 3) -> StageContext:
    cl = classify(state.spec, search_radius=search_radius)
    frame = choose_frame(state.spec, cl, search_radius=search_radius)
    return StageContext(state, params, frame, build_anti_divergence(cl))


# --- the velocity constant M ----------------------------------------------------------

REFERENCE_GAMMA = math.sqrt(2.0)  # L^{-1}(D) = (2, 2, 2): squared amplitude 2 at the reference tensor


def nash_constant(ctx: StageContext, samples: int = 20_001) -> float:
    """M0 = 2 C1 C2 measured on one building block.

    Identity flow, constant amplitude lam_{q+1} delta_{q+1}^{1/2} at the reference
    tensor, profile at its sup; M0 / 2 bounds both |w|_0 and |w|_1 / lam_{q+1}
    in units of delta_{q+1}^{1/2}.
    """
    p = ctx.params
    grid = ctx.grid
    lam = p.lam_next
    y = np.linspace(0.0, 1.0, samples)
    gmax = max(
        float(np.max(np.abs(ctx.profiles.g(i, parity, n, y))))
        for i in range(len(ctx.frame.F))
        for parity in (0, 1)
        for n in range(1, p.gamma + 1)
    )
    amp = lam * p.delta_next**0.5 * REFERENCE_GAMMA * np.ones((grid.n, grid.n))
    best = 0.0
    for xi in ctx.frame.F:
        w = SpectralField(grid, gmax * perp_grad(grid, wave_scalar(grid, amp, None, xi, lam)))
        best = max(best, holder_norm(w, 0.0), holder_norm(w, 1.0) / lam)
    return 2.0 * best / p.delta_next**0.5


def admissible_M(M0: float, spec: MultiplierSpec) -> float:
    """Smallest integer strictly above M0 + |mtilde(1, 0)| + 2."""
    return float(math.floor(M0 + abs(spec.mtilde(np.array([1.0, 0.0]))) + 2.0) + 1)


def with_admissible_M(schedule: ParamSchedule, ctx: StageContext) -> ParamSchedule:
    """Fill in M from the Nash constant when the schedule leaves it open."""
    if schedule.M is not None:
        return schedule
    return replace(schedule, M=admissible_M(nash_constant(ctx), ctx.state.spec))


# --- check times -----------------------------------------------------------------------

def _nash_weight(ctx: StageContext, t: float) -> float:
    best = 0.0
    p = ctx.params
    for k in ctx.partition.indices((t, t)):
        c = float(ctx.partition.chi(k, t))
        for n in range(1, p.gamma + 1):
            for i in range(len(ctx.frame.F)):
                best = max(best, c * float(ctx.profiles.g(i, k % 2, n, p.mu * t)))
    return best


def choose_check_times(ctx: StageContext, centers, span: int = 400, edge: float = 0.05) -> list[float]:
    """Level-Gamma nodes near each centre where one Nash term is strongest.

    Nodes whose tau-phase sits within ``edge`` of a cutoff transition (1/3 or 1/2)
    are skipped so the local re-integration never straddles a window edge.
    """
    H = ctx.params.top_step
    tau = ctx.params.tau
    out = []
    for c in centers:
        j0 = int(round(c / H))
        best, best_j = -1.0, j0
        for j in range(j0 - span, j0 + span + 1):
            s = j * H / tau
            frac = s - round(s)
            if min(abs(abs(frac) - x) for x in (1 / 3, 0.5)) <= edge:
                continue
            w = _nash_weight(ctx, j * H)
            if w > best:
                best, best_j = w, j
        out.append(best_j * H)
    return out


# --- stage ---------------------------------------------------------------------------

def window_intervals(ks, tau: float, reach: float = 1.0) -> list[tuple[float, float]]:
    """Merged union of [(k - reach) tau, (k + reach) tau] over the windows ks."""
    out: list = []
    for k in sorted(ks):
        a, b = (k - reach) * tau, (k + reach) * tau
        if out and a <= out[-1][1] + 1e-12:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def _inside(intervals, outer) -> bool:
    return all(any(lo - 1e-12 <= a and b <= hi + 1e-12 for lo, hi in outer) for a, b in intervals)


@dataclass
class SupportStep:
    n: int
    previous: list  # measured supp_t R_{q,n}
    windows: list  # Z_{n+1}
    bookkeeping: list  # union of chi_tilde supports over Z_{n+1}
    measured: list  # measured supp_t R_{q,n+1}

    @property
    def growth(self) -> float:
        """Largest distance (in time) from the bookkeeping set to supp_t R_{q,n}."""
        worst = 0.0
        for a, b in self.bookkeeping:
            for t in (a, b):
                d = min((max(lo - t, 0.0, t - hi) for lo, hi in self.previous), default=np.inf)
                worst = max(worst, d)
        return worst

    @property
    def contained(self) -> bool:
        return _inside(self.measured, self.bookkeeping)


def support_steps(result: NewtonResult) -> list[SupportStep]:
    tau = result.ctx.params.tau
    out = []
    for n in range(result.gamma):
        ks = sorted(result.layers[n])
        out.append(
            SupportStep(n, result.reports[n].support, ks, window_intervals(ks, tau), result.reports[n + 1].support)
        )
    return out


def perturbation_support(result: NewtonResult) -> list[tuple[float, float]]:
    """Bookkeeping bound on supp_t(v_{q+1} - v_q): chi_tilde supports of every solved window."""
    tau = result.ctx.params.tau
    ks = set()
    for layer in result.layers:
        ks.update(layer)
    return window_intervals(ks, tau)


def mollification_support(ctx: StageContext, samples: int = 401) -> list[tuple[float, float]]:
    """Sampled supp_t(vbar - v_q), a space-only mollification defect."""
    t0, t1 = ctx.state.time_range
    ts = np.linspace(t0, t1, samples)
    h = ts[1] - ts[0]
    hit = [bool(np.any(np.abs(ctx.vq_minus_vbar(t)) > 1e-14)) for t in ts]
    out = []
    for t, on in zip(ts, hit):
        if on:
            if out and t - out[-1][1] <= h + 1e-12:
                out[-1] = (out[-1][0], t + h)
            else:
                out.append((t - h, t + h))
    return out


@dataclass
class StageOutcome:
    schedule: ParamSchedule
    params: StageParameters
    result: NewtonResult
    checks: list  # CheckResult per check time
    report: BoundReport
    support: list
    support_steps: list
    min_M: float
    M0: float

    @property
    def passed(self) -> bool:
        return self.report.passed


def velocity_increment(check: CheckResult, ctx: StageContext) -> np.ndarray:
    return check.nash.v - ctx.state.velocity(check.t)


def prop_main_lhs(grid: TorusGrid, dv: np.ndarray, lam_next: float) -> float:
    f = SpectralField(grid, dv)
    return holder_norm(f, 0.0) + holder_norm(f, 1.0) / lam_next


def run_stage(
    state: StageState,
    schedule: ParamSchedule,
    check_centers=(1.40, -1.55),
    newton_tol: float = 1e-5,
    nash_tol: float = 1e-5,
    log=None,
    q: int = 0,
) -> StageOutcome:
    """Mollify, run all Newton layers, assemble the Nash step at the check times, then gate."""
    params = schedule.stage(q)
    ctx = build_context(state, params)
    schedule.check_resolution(state.grid, ctx.frame, q)
    M0 = nash_constant(ctx)
    schedule = with_admissible_M(schedule, ctx)
    checks_t = choose_check_times(ctx, check_centers)
    result = NewtonRun(ctx, check_times=checks_t, log=log).run()
    rep = BoundReport()
    checks = []
    for node in sorted(result.checkpoints):
        cr = check_stage(result, node)
        checks.append(cr)
        for n, (r, dom) in enumerate(cr.newton_residuals):
            rep.add("newton", f"newton-identity[n={n},t={cr.t:.6f}]", r / dom, newton_tol)
        r, dom = cr.nash_residual
        rep.add("nash", f"stage-identity[t={cr.t:.6f}]", r / dom, nash_tol)

    steps = support_steps(result)
    for st in steps:
        rep.add("newton", f"support-growth[n={st.n}]", st.growth, 2 * params.tau)
        rep.add("newton", f"support-bookkeeping[n={st.n}]", 0.0 if st.contained else 1.0, 0.0)
    support = perturbation_support(result) + mollification_support(ctx)
    allowed = [(-2.0, -1.0), (1.0, 2.0)]
    strict = all(any(lo < a and b < hi for lo, hi in allowed) for a, b in support)
    rep.add("driver", "increment-support", 0.0 if strict else 1.0, 0.0)

    lhs = max((prop_main_lhs(state.grid, velocity_increment(c, ctx), params.lam_next) for c in checks), default=0.0)
    bound = 2 * schedule.M * params.delta_next**0.5
    rep.add("driver", "increment-bound", lhs, bound)
    min_M = lhs / (2 * params.delta_next**0.5)
    return StageOutcome(schedule, params, result, checks, rep, support, steps, min_M, M0)


def active_term_count(result: NewtonResult, t: float) -> int:
    return len(active_terms(result.ctx, t, windows=[set(layer) for layer in result.layers]))
