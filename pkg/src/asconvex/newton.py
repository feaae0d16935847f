"""Stage mollification and the Newton (non-oscillatory) substeps.

One stage starts from a solution (v_q, p_q, R_q) of the ASM-Reynolds system and
adds Gamma layers of temporally oscillating corrections w_{q+1,n}.  Each layer is
built from transport solves, one per time-lattice index k, whose forcing comes
from the decomposition of the current stress into frame tensors.

The global time integration uses a nested lattice: layer n uses the step
h_n = H / 2^(Gamma - n) with H = tau / steps_per_tau, so the RK4 stage times of
layer n are nodes of layer n - 1 and all stresses are evaluated exactly at
stored nodes.  Identities are checked at selected times by re-integrating the
coupled system locally with a tiny step and differencing in time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .algebra import DirectionFrame, decompose_stress
from .errors import DecompositionError, PreconditionError, StabilityError
from .multiplier import AntiDivOp, MultiplierSpec
from .spectral_core import (
    TorusGrid,
    div,
    grad,
    inv_laplacian,
    mollify_symbol,
    perp,
    perp_div,
    perp_grad,
)
from .transport import OscillationProfiles, TemporalPartition, c1_norm, hermite, oscillation_profiles

SUPPORT_THRESHOLD = 1e-14
MEAN_DEFECT_TOL = 1e-9
MAX_SCALE_DOUBLINGS = 4


# --- parameters and inputs -------------------------------------------------------

@dataclass(frozen=True)
class StageParameters:
    """Scalars of one stage q -> q+1 (produced by the driver's schedule)."""

    q: int
    lam: int
    lam_next: int
    delta: float
    delta_next: float
    ell: float
    ell_t: float
    tau: float
    mu: float
    gamma: int
    delta_n: tuple
    steps_per_tau: int = 66
    amplitude_ratio: float = 0.5

    def __post_init__(self):
        if self.steps_per_tau % 3:
            raise PreconditionError("steps_per_tau must be divisible by 3")
        if len(self.delta_n) != self.gamma:
            raise PreconditionError("delta_n needs one entry per Newton layer")

    @property
    def top_step(self) -> float:
        return self.tau / self.steps_per_tau

    def step(self, n: int) -> float:
        """Time step of layer n (n = 0 is the analytic input, sampled at half steps)."""
        if n == 0:
            return self.step(1) / 2
        return self.top_step / 2 ** (self.gamma - n)

    def nodes_per_tau(self, n: int) -> int:
        return int(round(self.tau / self.step(n)))


@dataclass
class StageState:
    """A time-dependent solution (v, p, R) of the ASM-Reynolds system."""

    grid: TorusGrid
    spec: MultiplierSpec
    velocity: Callable[[float], np.ndarray]
    pressure: Callable[[float], np.ndarray]
    stress: Callable[[float], np.ndarray]
    time_range: tuple = (-2.0, 2.0)
    q: int = 0

    def u(self, t: float) -> np.ndarray:
        return self.spec.grid_symbols(self.grid)["mtilde"] * self.velocity(t)


def mollify_stage(grid: TorusGrid, v: np.ndarray, R: np.ndarray, ell: float):
    """(vbar, ubar-free) mollification: returns vbar, R_{q,0} and the companion symbol.

    ubar follows by applying T1 to vbar since the symbols commute.
    """
    zeta = mollify_symbol(grid, ell)
    return zeta * v, zeta * R, mollify_symbol(grid, ell, companion=True)


# --- compact storage ------------------------------------------------------------------

class Packer:
    """Store only retained modes of coefficient arrays."""

    def __init__(self, grid: TorusGrid):
        self.grid = grid
        self.idx = np.flatnonzero(grid.mask.ravel())
        self.shape = grid.spectral_shape

    def pack(self, c: np.ndarray) -> np.ndarray:
        return c.reshape(c.shape[:-2] + (-1,))[..., self.idx]

    def unpack(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(v.shape[:-1] + (self.shape[0] * self.shape[1],), dtype=complex)
        out[..., self.idx] = v
        return out.reshape(v.shape[:-1] + self.shape)


@dataclass
class KSeries:
    """psi_{k,n} on the nodes j0 .. j0 + len - 1 of layer n (packed)."""

    k: int
    n: int
    j0: int
    h: float
    values: np.ndarray = field(repr=False)
    rates: np.ndarray = field(repr=False)
    scale: float
    packer: Packer = field(repr=False)

    @property
    def span(self) -> tuple[float, float]:
        return self.j0 * self.h, (self.j0 + len(self.values) - 1) * self.h

    def has_node(self, j: int) -> bool:
        return self.j0 <= j < self.j0 + len(self.values)

    def node(self, j: int) -> np.ndarray:
        return self.packer.unpack(self.values[j - self.j0])

    def __call__(self, t: float) -> np.ndarray:
        s = t / self.h - self.j0
        i = int(np.clip(np.floor(s), 0, len(self.values) - 2))
        if s < -1e-9 or s > len(self.values) - 1 + 1e-9:
            raise PreconditionError(f"time {t} outside the window of psi_(k={self.k}, n={self.n})")
        ta, tb = (self.j0 + i) * self.h, (self.j0 + i + 1) * self.h
        val = hermite(t, ta, tb, self.values[i], self.values[i + 1], self.rates[i], self.rates[i + 1])
        return self.packer.unpack(val)


# --- per-time formulas ---------------------------------------------------------------

class StageContext:
    """Shared operators and the closed-form pieces of a stage."""

    def __init__(
        self,
        state: StageState,
        params: StageParameters,
        frame: DirectionFrame,
        anti: AntiDivOp,
    ):
        self.state = state
        self.params = params
        self.frame = frame
        self.anti = anti
        self.grid = grid = state.grid
        self.spec = state.spec
        self.mt = state.spec.grid_symbols(grid)["mtilde"]
        self.zeta = mollify_symbol(grid, params.ell)
        self.zeta_tilde = mollify_symbol(grid, params.ell, companion=True)
        self.partition = TemporalPartition(params.tau)
        self.profiles: OscillationProfiles = oscillation_profiles(frame.F, params.gamma)
        self.lam1 = params.lam_next
        self.scale_power = params.lam_next ** (1.0 + state.spec.delta)
        self._ucache: dict = {}

    # closed-form inputs
    def vbar(self, t):
        return self.zeta * self.state.velocity(t)

    def ubar(self, t):
        return self.mt * self.vbar(t)

    def R0(self, t):
        return self.zeta * self.state.stress(t)

    def P0(self, t):
        return (1.0 - self.zeta) * self.state.stress(t)

    def vq_minus_vbar(self, t):
        return (1.0 - self.zeta) * self.state.velocity(t)

    def ubar_padded(self, t):
        """Physical ubar on the padded grid, cached for the last few times."""
        key = float(t)
        if key not in self._ucache:
            if len(self._ucache) > 8:
                self._ucache.clear()
            self._ucache[key] = self.grid.to_padded(self.ubar(t))
        return self._ucache[key]

    # products
    def advect_padded(self, u_phys, c):
        """u . grad c with u already on the padded grid."""
        g = self.grid.to_padded(grad(self.grid, c))
        return self.grid.from_padded(u_phys[0] * g[..., 0, :, :] + u_phys[1] * g[..., 1, :, :])

    def B(self, a, b):
        """B(a, b) = T1[a]^perp (curl_perp . b), dealiased."""
        grid = self.grid
        ta = grid.to_padded(perp(self.mt * a))
        om = grid.to_padded(perp_div(grid, b))
        return grid.from_padded(ta * om[None])

    def antidiv(self, vec, what="vector"):
        """R(m) with the mean of the argument checked against its size."""
        mean = np.abs(vec[..., 0, 0])
        size = max(float(np.max(np.abs(vec), initial=0.0)), 1e-300)
        if np.any(mean > MEAN_DEFECT_TOL * size) and np.any(mean > 1e-13):
            raise PreconditionError(f"{what} has nonzero mean ({float(np.max(mean)):.3g})")
        return self.anti.apply_coeffs(self.grid, vec)

    # decomposition and forcing
    def gradphi_phys(self, D):
        g = self.grid.backward(grad(self.grid, D))
        g[0, 0] += 1.0
        g[1, 1] += 1.0
        return g

    def amplitudes(self, t, k, R, D, scale):
        """Frame tensors A_{xi,k} (coefficients, one per direction) of chi_k^2 (scale D - R)."""
        grid = self.grid
        chi = float(self.partition.chi(k, t))
        amp = decompose_stress(
            self.frame,
            grid.backward(R),
            self.gradphi_phys(D),
            scale / self.scale_power,
            self.lam1,
            chi=chi,
        )
        return grid.forward(amp.tensors), amp

    def profile_values(self, k, n_next, t, which="f"):
        """Values of f (or g) for every signed direction i in F at mu t."""
        fn = getattr(self.profiles, which)
        y = self.params.mu * t
        return np.array([float(fn(i, k % 2, n_next, y)) for i in range(len(self.frame.F))])

    def forcing(self, t, k, n_next, A):
        """sum_i f_i(mu t) Lap^{-1} curl_perp . div A_{dir(i)}."""
        grid = self.grid
        fvals = self.profile_values(k, n_next, t)
        weights = fvals[0::2] + fvals[1::2]
        phi = inv_laplacian(grid, perp_div(grid, div(grid, A)))
        return np.tensordot(weights, phi, axes=1)

    def initial_datum(self, t, k, n_next, A):
        f1 = np.array(
            [float(self.profiles.f1(i, k % 2, n_next, self.params.mu * t)) for i in range(len(self.frame.F))]
        )
        weights = (f1[0::2] + f1[1::2]) / self.params.mu
        phi = inv_laplacian(self.grid, perp_div(self.grid, div(self.grid, A)))
        return np.tensordot(weights, phi, axes=1)

    def pressure_part(self, t, k, n_next, A):
        """q_k = Lap^{-1} div V_k with V_k = sum_i f_i div A_{dir(i)}."""
        fvals = self.profile_values(k, n_next, t)
        weights = fvals[0::2] + fvals[1::2]
        V = np.tensordot(weights, div(self.grid, A), axes=1)
        return inv_laplacian(self.grid, div(self.grid, V))

    def stress_increment(self, t, k, n_next, A):
        """sum_i g_i(mu t)^2 A_{dir(i)} (enters S with a minus sign)."""
        g = self.profile_values(k, n_next, t, "g")
        weights = g[0::2] ** 2 + g[1::2] ** 2
        return np.tensordot(weights, A, axes=1)

    def window_center(self, k, n):
        """t_k as reached on the layer-n lattice."""
        p = self.params
        return k * p.nodes_per_tau(n) * p.step(n)

    def window_rhs(self, t, k, n, tk, scale, psi, D, R_low):
        """Right-hand side of the coupled (psi_{k,n}, D_k) system; R_low() gives R_{q,n-1}(t)."""
        u_phys = self.ubar_padded(t)
        dpsi = -self.advect_padded(u_phys, psi)
        if abs(t - tk) < 2 * self.params.tau / 3 - 1e-12:
            dD = -self.ubar(t) - self.advect_padded(u_phys, D)
            if self.partition.chi(k, t) > 0:
                A, _ = self.amplitudes(t, k, R_low(), D, scale)
                dpsi = dpsi + self.forcing(t, k, n, A)
        else:
            dD = np.zeros_like(D)
        return dpsi, dD

    # stress of a layer
    def layer_fields(self, t, psis):
        """W = sum chi_tilde_k psi_k and W' = sum chi_tilde_k' psi_k."""
        shape = self.grid.spectral_shape
        W = np.zeros(shape, complex)
        Wd = np.zeros(shape, complex)
        for k, psi in psis:
            W = W + float(self.partition.chi_tilde(k, t)) * psi
            Wd = Wd + float(self.partition.dchi_tilde(k, t)) * psi
        return W, Wd

    def layer_stress(self, t, psis):
        """R_{q,n+1} = R(m)[curl_perp W' - div S~ + (grad ubar)^T w - (grad vbar)^T T1 w]."""
        W, Wd = self.layer_fields(t, psis)
        return self.layer_stress_from(t, W, Wd)

    def layer_stress_from(self, t, W, Wd):
        grid = self.grid
        if not np.any(W) and not np.any(Wd):
            return np.zeros((2, 2) + grid.spectral_shape, complex)
        vb = self.vbar(t)
        ub = self.mt * vb
        T1W = self.mt * W
        P = grid.to_padded
        pg_u = P(perp_grad(grid, ub))  # [i, j] = dperp_j ubar_i
        pg_v = P(perp_grad(grid, vb))
        Wp, T1Wp = P(W), P(T1W)
        m1 = Wp[None, None] * np.swapaxes(pg_u, 0, 1)  # W dperp_i ubar_j
        m2 = T1Wp[None, None] * pg_v  # T1W dperp_j vbar_i
        S = grid.from_padded(m1 + m2)
        w = perp_grad(grid, W)
        gu = P(grad(grid, ub))  # [i, j] = d_j ubar_i
        gv = P(grad(grid, vb))
        wp, t1wp = P(w), P(self.mt * w)
        tr_u = np.einsum("jiab,jab->iab", gu, wp)
        tr_v = np.einsum("jiab,jab->iab", gv, t1wp)
        vec = perp_grad(grid, Wd) - div(grid, S) + grid.from_padded(tr_u - tr_v)
        return self.antidiv(vec, "layer stress argument")


# --- the global run --------------------------------------------------------------------

def _intervals(times: np.ndarray, mask: np.ndarray, h: float) -> list[tuple[float, float]]:
    """Closed intervals covering the nodes where mask holds (gaps of one step split)."""
    out = []
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return out
    start = prev = idx[0]
    for i in idx[1:]:
        if i != prev + 1:
            out.append((float(times[start]), float(times[prev])))
            start = i
        prev = i
    out.append((float(times[start]), float(times[prev])))
    return out


def _dist_to_intervals(t: float, intervals) -> float:
    best = np.inf
    for a, b in intervals:
        if a <= t <= b:
            return 0.0
        best = min(best, abs(t - a), abs(t - b))
    return best


@dataclass
class LayerReport:
    n: int
    Z: list
    support: list  # measured supp_t R_{q,n} (intervals), n = layer whose stress is measured
    sup_stress: float
    scales: dict


@dataclass
class NewtonResult:
    """All layers of one Newton run plus per-layer diagnostics."""

    ctx: StageContext
    layers: list  # layers[n - 1] : dict k -> KSeries for psi_{k,n}
    reports: list  # reports[n] describes R_{q,n}, n = 0..Gamma
    checkpoints: dict  # level-Gamma node index -> {(k, n): (psi, D)}
    w_sup: list = field(default_factory=list)

    def psis_at(self, n: int, t: float):
        """[(k, psi_{k,n}(t))] for the k whose window contains t (Hermite in time)."""
        out = []
        for k, ser in self.layers[n - 1].items():
            a, b = ser.span
            if a - 1e-12 <= t <= b + 1e-12 and self.ctx.partition.chi_tilde(k, t) > 0:
                out.append((k, ser(t)))
        return out

    def psis_at_node(self, n: int, j: int):
        out = []
        for k, ser in self.layers[n - 1].items():
            if ser.has_node(j) and self.ctx.partition.chi_tilde(k, j * ser.h) > 0:
                out.append((k, ser.node(j)))
        return out

    def newton_velocity(self, t: float) -> np.ndarray:
        """w^(t)(t) = sum_n sum_k chi_tilde_k curl_perp psi_{k,n}."""
        grid = self.ctx.grid
        W = np.zeros(grid.spectral_shape, complex)
        for n in range(1, len(self.layers) + 1):
            Wn, _ = self.ctx.layer_fields(t, self.psis_at(n, t))
            W = W + Wn
        return perp_grad(grid, W)

    def mollified_velocity(self, t: float):
        """(vtilde, utilde) = (vbar + Ptilde w^(t), ubar + Ptilde T1 w^(t))."""
        ctx = self.ctx
        w = ctx.zeta_tilde * self.newton_velocity(t)
        vt = ctx.vbar(t) + w
        return vt, ctx.mt * vt

    @property
    def gamma(self) -> int:
        return len(self.layers)


class NewtonRun:
    """Integrate all Newton layers of one stage on the nested time lattice."""

    def __init__(self, ctx: StageContext, check_times=(), log=None):
        self.ctx = ctx
        self.p = ctx.params
        self.packer = Packer(ctx.grid)
        H = self.p.top_step
        self.check_nodes = sorted({int(round(t / H)) for t in check_times})
        self.log = log or (lambda msg: None)

    # stress of layer n at a node of layer n
    def _stress_node(self, n, j, layers):
        ctx = self.ctx
        t = j * self.p.step(n)
        if n == 0:
            return ctx.R0(t)
        psis = []
        for k, ser in layers[n - 1].items():
            if ser.has_node(j) and ctx.partition.chi_tilde(k, t) > 0:
                psis.append((k, ser.node(j)))
        return ctx.layer_stress(t, psis)

    def _measure(self, n, layers, window):
        """Sup norms of R_{q,n} on every other node of layer n inside the window."""
        hn = self.p.step(n)
        a, b = window
        ja = int(np.floor(a / hn))
        ja -= ja % 2
        js = np.arange(ja, int(np.ceil(b / hn)) + 1, 2)
        norms = np.zeros(len(js))
        grid = self.ctx.grid
        for i, j in enumerate(js):
            R = self._stress_node(n, int(j), layers)
            if np.any(R):
                norms[i] = float(np.max(np.abs(grid.backward(R))))
        return js * hn, norms

    def run(self) -> NewtonResult:
        ctx, p = self.ctx, self.p
        tau = p.tau
        self._check_flow_stability()
        layers: list = []
        reports: list = []
        checkpoints: dict = {}
        w_sup = []
        times, norms = self._measure(0, layers, ctx.state.time_range)
        for n in range(1, p.gamma + 2):
            thr = SUPPORT_THRESHOLD * max(norms.max(initial=0.0), 1e-300)
            support = _intervals(times, norms > thr, 2 * p.step(n - 1))
            if support:
                kmin = int(np.floor(support[0][0] / tau)) - 1
                kmax = int(np.ceil(support[-1][1] / tau)) + 1
                Z = [k for k in range(kmin, kmax + 1) if _dist_to_intervals(k * tau, support) < tau]
            else:
                Z = []
            report = LayerReport(n - 1, Z if n <= p.gamma else [], support, float(norms.max(initial=0.0)), {})
            reports.append(report)
            if n > p.gamma:
                break
            self.log(f"layer {n}: {len(Z)} transport windows")
            layer, report.scales = self._solve_layer(n, Z, layers, (times, norms), checkpoints)
            layers.append(layer)
            if Z:
                times, norms = self._measure(n, layers, ((min(Z) - 1) * tau, (max(Z) + 1) * tau))
            else:
                times, norms = np.zeros(0), np.zeros(0)
            w_sup.append(self._w_sup(n, layers))
        return NewtonResult(ctx, layers, reports, checkpoints, w_sup)

    def _check_flow_stability(self):
        ctx, p = self.ctx, self.p
        t0, t1 = ctx.state.time_range
        worst = max(c1_norm(ctx.grid, ctx.ubar(t)) for t in np.linspace(t0, t1, 81))
        if 2.0 / 3.0 * p.tau * worst > 1.0:
            raise StabilityError(f"tau [ubar]_1 = {p.tau * worst:.3g} too large for the flows")
        self.unorm = worst

    def _w_sup(self, n, layers):
        hn = self.p.step(n)
        js = sorted({j for ser in layers[n - 1].values() for j in range(ser.j0, ser.j0 + len(ser.values), 2)})
        best = 0.0
        grid = self.ctx.grid
        for j in js:
            psis = [(k, s.node(j)) for k, s in layers[n - 1].items() if s.has_node(j)]
            W, _ = self.ctx.layer_fields(j * hn, psis)
            if np.any(W):
                best = max(best, float(np.max(np.abs(grid.backward(perp_grad(grid, W))))))
        return best

    def _solve_layer(self, n, Z, layers, measured, checkpoints):
        """psi_{k,n} for k in Z, forced by the stress of layer n - 1."""
        ctx, p = self.ctx, self.p
        part = ctx.partition
        hlow = p.step(n - 1)
        per_tau_low = p.nodes_per_tau(n - 1)
        base_scale = p.delta_n[n - 1] * ctx.scale_power
        times, norms = measured
        cache: dict = {}
        out, scales = {}, {}
        for k in Z:
            lo, hi = part.chi_support(k)
            sel = (times >= lo) & (times <= hi)
            sup_local = float(norms[sel].max(initial=0.0))
            scale = max(base_scale, sup_local / p.amplitude_ratio)
            for key in [key for key in cache if key < (k - 1) * per_tau_low]:
                del cache[key]

            def R_low(i):
                if n == 1:
                    return ctx.R0(i * hlow)
                if i not in cache:
                    cache[i] = self._stress_node(n - 1, i, layers)
                return cache[i]

            for attempt in range(MAX_SCALE_DOUBLINGS + 1):
                try:
                    out[k] = self._integrate_window(n, k, scale, R_low, checkpoints)
                    break
                except DecompositionError as exc:
                    if attempt == MAX_SCALE_DOUBLINGS:
                        raise DecompositionError(f"layer {n}, window {k}: {exc}") from exc
                    scale *= 2.0
                    self.log(f"  layer {n} window k={k}: amplitude scale doubled ({exc})")
            scales[k] = scale
            self.log(f"  layer {n} window k={k} done")
        return out, scales

    def _integrate_window(self, n, k, scale, R_low, checkpoints):
        ctx, p = self.ctx, self.p
        part = ctx.partition
        hn = p.step(n)
        per_tau = p.nodes_per_tau(n)
        jk = k * per_tau
        tk = jk * hn
        level_shift = 2 ** (p.gamma - n)

        def rhs(i_low, psi, D):
            return ctx.window_rhs(i_low * hn / 2, k, n, tk, scale, psi, D, lambda: R_low(i_low))

        def record(j, psi, D):
            if j % level_shift == 0 and j // level_shift in self.check_nodes:
                checkpoints.setdefault(j // level_shift, {})[(k, n)] = (psi, D, scale)

        D0 = np.zeros((2,) + ctx.grid.spectral_shape, complex)
        A0, _ = ctx.amplitudes(tk, k, R_low(2 * jk), D0, scale)
        psi0 = ctx.initial_datum(tk, k, n, A0)
        values, rates = {jk: psi0}, {}
        for direction in (1, -1):
            psi, D, j = psi0, D0, jk
            h = direction * hn
            for _ in range(per_tau):
                il = 2 * j
                k1 = rhs(il, psi, D)
                rates[j] = k1[0]
                record(j, psi, D)
                k2 = rhs(il + direction, psi + h / 2 * k1[0], D + h / 2 * k1[1])
                k3 = rhs(il + direction, psi + h / 2 * k2[0], D + h / 2 * k2[1])
                k4 = rhs(il + 2 * direction, psi + h * k3[0], D + h * k3[1])
                psi = psi + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
                D = D + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
                j += direction
                values[j] = psi
            rates[j] = rhs(2 * j, psi, D)[0]
            record(j, psi, D)
        js = sorted(values)
        vals = np.stack([self.packer.pack(values[j]) for j in js])
        rts = np.stack([self.packer.pack(rates[j]) for j in js])
        return KSeries(k, n, js[0], hn, vals, rts, scale, self.packer)


# --- local re-integration around a check time ------------------------------------------

FD_OFFSETS = (-2, -1, 0, 1, 2)
FD_WEIGHTS = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


def central_difference(slices, eps: float) -> np.ndarray:
    """Fourth-order centred derivative from values at offsets -2..2 (times eps)."""
    return sum(w * s for w, s in zip(FD_WEIGHTS, slices) if w != 0.0) / eps


def newton_items(state: dict):
    """Entries keyed (k, n) with integer k; other keys belong to auxiliary flows."""
    return [(key, st) for key, st in state.items() if not isinstance(key[0], str)]


def _axpy(y, h, dy):
    return {key: tuple(a + h * b for a, b in zip(y[key], dy[key])) for key in y}


@dataclass
class LocalSlices:
    """Coupled Newton states at t + o eps for o in FD_OFFSETS."""

    t: float
    eps: float
    states: list  # one dict (k, n) -> (psi, D) per offset
    scales: dict

    def center(self) -> dict:
        return self.states[FD_OFFSETS.index(0)]

    def time(self, i: int) -> float:
        return self.t + FD_OFFSETS[i] * self.eps


class LocalSystem:
    """All (psi_{k,n}, D_k) active at a recorded node, integrated with a fine step."""

    def __init__(self, result: NewtonResult, node: int):
        if node not in result.checkpoints:
            raise PreconditionError(f"no checkpoint recorded at node {node}")
        self.result = result
        self.ctx = result.ctx
        self.t = node * self.ctx.params.top_step
        rec = result.checkpoints[node]
        self.state0 = {key: (v[0], v[1]) for key, v in rec.items()}
        self.scales = {key: v[2] for key, v in rec.items()}

    def stress_from(self, t, state, n):
        """R_{q,n}(t) computed from the local layer-n states."""
        ctx = self.ctx
        if n == 0:
            return ctx.R0(t)
        psis = [(key[0], st[0]) for key, st in newton_items(state) if key[1] == n and ctx.partition.chi_tilde(key[0], t) > 0]
        return ctx.layer_stress(t, psis)

    def rhs(self, t, state):
        ctx = self.ctx
        cache: dict = {}

        def low(n):
            if n - 1 not in cache:
                cache[n - 1] = self.stress_from(t, state, n - 1)
            return cache[n - 1]

        out = {}
        for (k, n), (psi, D) in newton_items(state):
            tk = ctx.window_center(k, n)
            out[(k, n)] = ctx.window_rhs(t, k, n, tk, self.scales[(k, n)], psi, D, lambda n=n: low(n))
        return out

    def step(self, t, y, h):
        k1 = self.rhs(t, y)
        k2 = self.rhs(t + h / 2, _axpy(y, h / 2, k1))
        k3 = self.rhs(t + h / 2, _axpy(y, h / 2, k2))
        k4 = self.rhs(t + h, _axpy(y, h, k3))
        return {
            key: tuple(y[key][c] + h / 6 * (k1[key][c] + 2 * k2[key][c] + 2 * k3[key][c] + k4[key][c]) for c in range(len(y[key])))
            for key in y
        }

    def slices(self, eps: float, substeps: int = 1) -> LocalSlices:
        states = {0: self.state0}
        h = eps / substeps
        for direction in (1, -1):
            y, t = self.state0, self.t
            for o in (1, 2):
                for _ in range(substeps):
                    y = self.step(t, y, direction * h)
                    t += direction * h
                states[direction * o] = y
        return LocalSlices(self.t, eps, [states[o] for o in FD_OFFSETS], self.scales)


@dataclass
class SubstepFields:
    """Every term of the ASM-Reynolds system after n substeps at one time."""

    n: int
    t: float
    dv: np.ndarray
    v: np.ndarray
    p: np.ndarray
    R: np.ndarray
    S: np.ndarray
    P: np.ndarray

    def terms(self, ctx: StageContext) -> dict:
        grid = ctx.grid
        return {
            "dt_v": self.dv,
            "nonlinear": ctx.B(self.v, self.v),
            "grad_p": grad(grid, self.p),
            "div_R": div(grid, self.R),
            "div_S": div(grid, self.S),
            "div_P": div(grid, self.P),
        }

    def residual(self, ctx: StageContext) -> tuple[float, float]:
        """(sup of the residual, sup of the largest single term)."""
        grid = ctx.grid
        terms = self.terms(ctx)
        res = terms["dt_v"] + terms["nonlinear"] + terms["grad_p"] - terms["div_R"] - terms["div_S"] - terms["div_P"]
        sup = lambda c: float(np.max(np.abs(grid.backward(c))))
        return sup(res), max(sup(c) for c in terms.values())


def layer_w(ctx: StageContext, t: float, state: dict, n: int) -> np.ndarray:
    psis = [(key[0], st[0]) for key, st in newton_items(state) if key[1] == n]
    W, _ = ctx.layer_fields(t, psis)
    return perp_grad(ctx.grid, W)


def substep_fields(ctx: StageContext, local: LocalSystem, sl: LocalSlices) -> list[SubstepFields]:
    """SubstepFields for n = 0..Gamma at the centre of the slices."""
    grid = ctx.grid
    st = ctx.state
    gamma = ctx.params.gamma
    t = sl.t
    center = sl.center()
    vq = [st.velocity(sl.time(i)) for i in range(len(FD_OFFSETS))]
    ws = [[layer_w(ctx, sl.time(i), s, m) for m in range(1, gamma + 1)] for i, s in enumerate(sl.states)]
    wc = ws[FD_OFFSETS.index(0)]
    stresses = [local.stress_from(t, center, n) for n in range(gamma + 1)]
    vqv = ctx.vq_minus_vbar(t)
    ub_phys = grid.to_padded(ctx.ubar(t))
    out = []
    p = st.pressure(t)
    S = np.zeros_like(stresses[0])
    P = ctx.P0(t)
    for n in range(gamma + 1):
        if n > 0:
            m = n
            w = wc[m - 1]
            for (k, layer), (psi, D) in newton_items(center):
                if layer != m or ctx.partition.chi(k, t) <= 0:
                    continue
                A, _ = ctx.amplitudes(t, k, stresses[m - 1], D, sl.scales[(k, layer)])
                p = p + float(ctx.partition.chi_tilde(k, t)) * ctx.pressure_part(t, k, m, A)
                S = S - ctx.stress_increment(t, k, m, A)
            p = p + grid.from_padded(np.sum(ub_phys * grid.to_padded(w), axis=0))
            vec = ctx.B(w, w) + ctx.B(vqv, w) + ctx.B(w, vqv)
            for l in range(1, m):
                vec = vec + ctx.B(w, wc[l - 1]) + ctx.B(wc[l - 1], w)
            P = P + ctx.antidiv(vec, "small stress argument")
        vs = [vq[i] + sum(ws[i][:n], np.zeros_like(vq[i])) for i in range(len(FD_OFFSETS))]
        out.append(SubstepFields(n, t, central_difference(vs, sl.eps), vs[FD_OFFSETS.index(0)], p, stresses[n], S, P))
    return out
