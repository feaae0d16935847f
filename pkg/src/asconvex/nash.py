"""The Nash (oscillatory) step.

Contents: temporal mollification of stresses along the mollified flow, the
oscillatory perturbation w^(p), the bilinear microlocal kernel that splits its
self-interaction into a transportable tensor plus a remainder, and the
assembly of the new stress with a pointwise check of the q+1 identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, PreconditionError, ResolutionError
from .multiplier import MultiplierSpec
from .newton import (
    FD_OFFSETS,
    LocalSlices,
    LocalSystem,
    NewtonResult,
    StageContext,
    SubstepFields,
    central_difference,
    layer_w,
    newton_items,
    substep_fields,
)
from .spectral_core import (
    Annuli,
    TorusGrid,
    band_symbol,
    div,
    grad,
    interpolate,
    inv_laplacian,
    perp_div,
    perp_grad,
    smoothstep,
)
from .transport import lagrangian_trajectories

KERNEL_CUTOFF = 1e-15
KERNEL_CHUNK = 400_000


# --- temporal mollifier -------------------------------------------------------------

_RHO_MASS = 1.5  # int_{-1}^{1} S(2 - 2|s|) ds


def rho(s):
    """Unit-mass bump on [-1, 1], equal to its maximum on [-1/2, 1/2]."""
    s = np.abs(np.asarray(s, dtype=float))
    return np.where(s < 1.0, smoothstep(2.0 - 2.0 * s), 0.0) / _RHO_MASS


def rho_scaled(s, ell: float):
    return rho(np.asarray(s, dtype=float) / ell) / ell


def check_time_scales(ell_t: float, mu: float, tau: float) -> None:
    """ell_t < 1/mu < tau, needed for the mollified stress to see one profile period."""
    if not (ell_t < 1.0 / mu < tau):
        raise ConfigurationError(f"time scales out of order: ell_t={ell_t:.3g}, 1/mu={1 / mu:.3g}, tau={tau:.3g}")


def _rho_quadrature(ell: float, points: int):
    """Gauss-Legendre nodes on the three polynomial pieces of rho_ell."""
    x, w = np.polynomial.legendre.leggauss(points)
    nodes, weights = [], []
    for a, b in ((-1.0, -0.5), (-0.5, 0.5), (0.5, 1.0)):
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    s = np.concatenate(nodes) * ell
    return s, np.concatenate(weights) * ell * rho_scaled(s, ell)


def time_mollify_stress(grid: TorusGrid, stress, velocity, t: float, ell: float, points: int = 8, dt: float | None = None):
    """Rbar(x, t) = int rho_ell(s) R(X_t(x, t + s), t + s) ds.

    ``stress`` and ``velocity`` are callables of time returning coefficients;
    X_t(x, .) is the trajectory of ``velocity`` through x at time t.  The
    integral uses Gauss-Legendre on the polynomial pieces of rho.
    """
    s, w = _rho_quadrature(ell, points)
    pts = np.stack(grid.x, axis=-1)
    dt = dt or ell / 16
    fwd = lagrangian_trajectories(velocity, grid, pts, t, t + ell, dt)
    back = lagrangian_trajectories(velocity, grid, pts, t, t - ell, dt)
    total = np.zeros((2, 2, grid.n, grid.n))
    for si, wi in zip(s, w):
        X = fwd(t + si) if si >= 0 else back(t + si)
        total += wi * interpolate(grid, stress(t + si), X)
    return grid.forward(total)


# --- the bilinear microlocal kernel ----------------------------------------------------

def _cutoff_mbar(spec: MultiplierSpec, lam: float, annuli: Annuli):
    """mbar_lam = mbar chi_tilde(|z| / lam) and its gradient."""

    def value(z):
        return np.real(spec.mbar(z)) * annuli.profile(np.linalg.norm(z, axis=-1) / lam, tilde=True)

    def gradient(z):
        r = np.linalg.norm(z, axis=-1)
        prof = annuli.profile(r / lam, tilde=True)
        g = np.real(spec.grad_mbar(z)) * prof[..., None]
        return g + np.real(spec.mbar(z))[..., None] * annuli.profile_gradient(z / lam, tilde=True) / lam

    return value, gradient


def _segment_breaks(k: np.ndarray, J: np.ndarray, radii) -> np.ndarray:
    """Parameters sigma in (0, 1) where |sigma k - J| crosses one of the radii."""
    kk = np.sum(k * k, axis=-1)
    kj = np.sum(k * J, axis=-1)
    jj = np.sum(J * J, axis=-1)
    out = [np.zeros_like(kk), np.ones_like(kk)]
    safe = np.where(kk > 0, kk, 1.0)
    for R in radii:
        disc = kj**2 - kk * (jj - R * R)
        root = np.sqrt(np.maximum(disc, 0.0))
        for sgn in (-1.0, 1.0):
            s = (kj + sgn * root) / safe
            ok = (disc > 0) & (kk > 0) & (s > 0) & (s < 1)
            out.append(np.where(ok, s, 1.0))
    return np.sort(np.stack(out, axis=-1), axis=-1)


def kernel_vectors(spec: MultiplierSpec, P: np.ndarray, J: np.ndarray, lam: float, annuli: Annuli, points: int = 12):
    """K(p, j) = int_0^1 grad mbar_lam(sigma p - (1 - sigma) j) d sigma for rows of P, J.

    The component along k = p + j is exact (fundamental theorem of calculus);
    the transverse component uses Gauss-Legendre split where |z| crosses the
    cutoff radii, so each piece has a smooth integrand.
    """
    value, gradient = _cutoff_mbar(spec, lam, annuli)
    k = P + J
    kk = np.sum(k * k, axis=-1)
    zero = kk == 0
    safe = np.where(zero, 1.0, kk)
    par = k * ((value(P) - value(-J)) / safe)[..., None]
    kp = np.stack([-k[..., 1], k[..., 0]], axis=-1)
    radii = [lam * r for level in (2, 3) for r in annuli.radii(level)]
    br = _segment_breaks(k, J, radii)
    x, w = np.polynomial.legendre.leggauss(points)
    perp_int = np.zeros(kk.shape)
    for i in range(br.shape[-1] - 1):
        a, b = br[..., i], br[..., i + 1]
        half = 0.5 * (b - a)
        active = half > 0
        if not np.any(active):
            continue
        ia = np.flatnonzero(active)
        sig = (a[ia, None] + half[ia, None] * (x[None, :] + 1.0))  # (m, q)
        z = sig[..., None] * k[ia, None, :] - J[ia, None, :]
        g = gradient(z)
        perp_int[ia] += half[ia] * np.einsum("mqc,mc,q->m", g, kp[ia], w)
    out = par + kp * (perp_int / safe)[..., None]
    if np.any(zero):
        out[zero] = gradient(P[zero])
    return out


def kernel_tensor(grid: TorusGrid, spec: MultiplierSpec, theta: np.ndarray, lam: float, annuli: Annuli | None = None, points: int = 12) -> np.ndarray:
    """B_lam with div B_lam = T1[grad theta](-Lap theta) - T1[theta] grad(-Lap theta).

    Double-frequency sum B(k) = -sum_{p+j=k} j (x) K(p, j) phi(p) phi(j) with
    phi = -Lap theta, restricted to retained output modes.  Requires mbar even.
    """
    annuli = annuli or Annuli()
    probe = np.array([[1.3, 0.4], [0.2, -2.1], [3.0, 1.0]])
    if not np.allclose(spec.mbar(probe), spec.mbar(-probe), rtol=1e-12, atol=0):
        raise PreconditionError("the kernel sum needs an even mbar")
    n = grid.n
    phi = grid.full_spectrum(grid.ksq * theta)
    kk = np.rint(np.fft.fftfreq(n) * n).astype(int)
    mag = np.abs(phi)
    top = float(mag.max(initial=0.0))
    out = np.zeros((2, 2) + grid.spectral_shape, complex)
    if top == 0:
        return out
    idx = np.argwhere(mag > KERNEL_CUTOFF * top)
    modes = np.stack([kk[idx[:, 0]], kk[idx[:, 1]]], axis=-1)
    vals = phi[idx[:, 0], idx[:, 1]]
    M = len(modes)
    K = grid.K
    nh = grid.spectral_shape[1]
    flat = np.zeros((4, n * nh), complex)
    rows = max(1, KERNEL_CHUNK // max(M, 1))
    for start in range(0, M, rows):
        pi = np.arange(start, min(M, start + rows))
        ip, ij = np.meshgrid(pi, np.arange(M), indexing="ij")
        ip, ij = ip.ravel(), ij.ravel()
        ksum = modes[ip] + modes[ij]
        keep = (np.abs(ksum[:, 0]) <= K) & (ksum[:, 1] >= 0) & (ksum[:, 1] <= K)
        ip, ij, ksum = ip[keep], ij[keep], ksum[keep]
        if len(ip) == 0:
            continue
        Pm = modes[ip].astype(float)
        Jm = modes[ij].astype(float)
        Kv = kernel_vectors(spec, Pm, Jm, lam, annuli, points)
        coef = -vals[ip] * vals[ij]
        pos = (ksum[:, 0] % n) * nh + ksum[:, 1]
        for a in range(2):
            for b in range(2):
                contrib = coef * Jm[:, a] * Kv[:, b]
                flat[2 * a + b] += np.bincount(pos, contrib.real, n * nh) + 1j * np.bincount(pos, contrib.imag, n * nh)
    out[:] = flat.reshape(2, 2, n, nh)
    # Hermitian symmetry of the k2 = 0 column is already implied by the sum.
    return out * grid.mask


def wave_scalar(grid: TorusGrid, a_phys: np.ndarray, disp_phys: np.ndarray | None, xi, lam: int) -> np.ndarray:
    """theta = Lap^{-1} P_lam [a cos(lam xi . x + lam xi . D)], D the flow displacement."""
    kvec = lam * np.asarray(xi, dtype=float)
    if not np.allclose(kvec, np.rint(kvec)):
        raise PreconditionError("lam xi must be a lattice vector")
    x1, x2 = grid.x
    phase = kvec[0] * x1 + kvec[1] * x2
    if disp_phys is not None:
        phase = phase + kvec[0] * disp_phys[0] + kvec[1] * disp_phys[1]
    return inv_laplacian(grid, band_symbol(grid, lam, "P") * grid.forward(a_phys * np.cos(phase)))


def leading_tensor(spec: MultiplierSpec, a_phys: np.ndarray, p_phys: np.ndarray, lam: float) -> np.ndarray:
    """1/2 lam^{delta-1} a^2 p (x) grad mbar(p) on the physical grid; p has a trailing 2-axis."""
    g = np.real(spec.grad_mbar(p_phys))
    outer = p_phys[..., :, None] * g[..., None, :]
    val = 0.5 * lam ** (spec.delta - 1.0) * (a_phys**2)[..., None, None] * outer
    return np.moveaxis(val, (-2, -1), (0, 1))


@dataclass
class MicrolocalReport:
    lam: float
    theta: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    leading: np.ndarray = field(repr=False)
    deltaB: np.ndarray = field(repr=False)
    identity_residual: float  # relative to sup |Q|
    Q_norm: float
    leading_norm: float
    deltaB_norm: float
    leakage: float  # fraction of sup |p| - annulus violation

    @property
    def ratio(self) -> float:
        return self.deltaB_norm / max(self.leading_norm, 1e-300)


def Q_form(grid: TorusGrid, spec: MultiplierSpec, theta: np.ndarray) -> np.ndarray:
    """Q[theta, theta] = 2 T1[grad theta] (-Lap theta), dealiased."""
    mt = spec.grid_symbols(grid)["mtilde"]
    g = grid.to_padded(grad(grid, mt * theta))
    phi = grid.to_padded(grid.ksq * theta)
    return 2.0 * grid.from_padded(g * phi[None])


def pressure_potential(grid: TorusGrid, spec: MultiplierSpec, theta: np.ndarray) -> np.ndarray:
    """T1[theta] (-Lap theta)."""
    mt = spec.grid_symbols(grid)["mtilde"]
    return grid.product(mt * theta, grid.ksq * theta)


def microlocal_tensor(
    grid: TorusGrid,
    spec: MultiplierSpec,
    a_phys: np.ndarray,
    grad_phi_phys: np.ndarray | None,
    disp_phys: np.ndarray | None,
    xi,
    lam: int,
    annuli: Annuli | None = None,
    points: int = 12,
) -> MicrolocalReport:
    """Kernel tensor of theta = Lap^{-1} P_lam[a cos(lam Phi . xi)], leading part and remainder.

    ``grad_phi_phys`` is (2, 2, n, n) with [i, j] = d_j Phi_i (identity if None).
    """
    annuli = annuli or Annuli()
    theta = wave_scalar(grid, a_phys, disp_phys, xi, lam)
    B = kernel_tensor(grid, spec, theta, lam, annuli, points)
    xi = np.asarray(xi, dtype=float)
    if grad_phi_phys is None:
        p = np.broadcast_to(xi, a_phys.shape + (2,)).copy()
    else:
        p = np.einsum("ijab,i->abj", grad_phi_phys, xi)
    lead_phys = leading_tensor(spec, a_phys, p, lam)
    lead = grid.forward(lead_phys)
    dB = B - lead
    Q = Q_form(grid, spec, theta)
    resid = Q - grad(grid, pressure_potential(grid, spec, theta)) - div(grid, B)
    sup = lambda c: float(np.max(np.abs(grid.backward(c))))
    qn = sup(Q)
    pn = np.linalg.norm(p, axis=-1)
    lo, hi = annuli.radii(0)
    leak = float(max(np.max(lo - pn, initial=0.0), np.max(pn - hi, initial=0.0)))
    return MicrolocalReport(
        float(lam), theta, B, lead, dB, sup(resid) / max(qn, 1e-300), qn, sup(lead), sup(dB), leak
    )


# --- Nash perturbation at one time -----------------------------------------------------

@dataclass(frozen=True)
class NashTerm:
    """One (i, k, n) summand: direction index i in F, window k, Newton layer n (0-based stress)."""

    i: int
    k: int
    n: int

    @property
    def direction(self) -> int:
        return self.i // 2


def active_terms(ctx: StageContext, t: float, threshold: float = 0.0, windows=None) -> list[NashTerm]:
    """Summands whose profile g_{i,k,n+1}(mu t) chi_k(t) exceeds the threshold.

    ``windows[n]`` restricts layer n to the windows k that carry a Newton solve.
    """
    out = []
    p = ctx.params
    for k in ctx.partition.indices((t, t)):
        c = float(ctx.partition.chi(k, t))
        if c <= 0:
            continue
        for n in range(p.gamma):
            if windows is not None and k not in windows[n]:
                continue
            for i in range(len(ctx.frame.F)):
                if c * float(ctx.profiles.g(i, k % 2, n + 1, p.mu * t)) > threshold:
                    out.append(NashTerm(i, k, n))
    return out


def nash_flow_displacement(result: NewtonResult, k: int, t: float, dt: float | None = None) -> np.ndarray:
    """Dtilde_k(t) with Phi_k(x, t) = x + Dtilde, transported by utilde from Dtilde(t_k) = 0."""
    ctx = result.ctx
    grid = ctx.grid
    tk = k * ctx.params.tau
    dt = dt or ctx.params.top_step

    def rhs(s, D):
        _, ut = result.mollified_velocity(s)
        g = grid.to_padded(grad(grid, D))
        up = grid.to_padded(ut)
        return -ut - grid.from_padded(up[0] * g[:, 0] + up[1] * g[:, 1])

    D = np.zeros((2,) + grid.spectral_shape, complex)
    steps = max(1, int(np.ceil(abs(t - tk) / dt - 1e-9)))
    h = (t - tk) / steps
    s = tk
    for _ in range(steps):
        k1 = rhs(s, D)
        k2 = rhs(s + h / 2, D + h / 2 * k1)
        k3 = rhs(s + h / 2, D + h / 2 * k2)
        k4 = rhs(s + h, D + h * k3)
        D = D + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        s += h
    return D


class CoupledLocalSystem(LocalSystem):
    """Newton states plus the Nash flows and the flow anchored at the check time."""

    def __init__(self, result: NewtonResult, node: int, nash_ks=()):
        super().__init__(result, node)
        grid = self.ctx.grid
        for k in nash_ks:
            self.state0[("nash", k)] = (nash_flow_displacement(result, k, self.t),)
        self.state0[("anchor", 0)] = (np.zeros((2,) + grid.spectral_shape, complex),)

    def utilde(self, t, state):
        ctx = self.ctx
        w = sum((layer_w(ctx, t, state, m) for m in range(1, ctx.params.gamma + 1)),
                np.zeros((2,) + ctx.grid.spectral_shape, complex))
        vt = ctx.vbar(t) + ctx.zeta_tilde * w
        return vt, ctx.mt * vt

    def flow_rate(self, t, state, D):
        grid = self.ctx.grid
        _, ut = self.utilde(t, state)
        g = grid.to_padded(grad(grid, D))
        up = grid.to_padded(ut)
        return -ut - grid.from_padded(up[0] * g[:, 0] + up[1] * g[:, 1])

    def rhs(self, t, state):
        out = super().rhs(t, state)
        for key, st in state.items():
            if isinstance(key[0], str):
                out[key] = (self.flow_rate(t, state, st[0]),)
        return out


@dataclass
class MollifiedStress:
    """Quadrature data for Rbar_{q,n} near a check time."""

    n: int
    nodes: np.ndarray  # level-Gamma node times s_j
    weights: float  # node spacing
    G: list  # coefficient arrays G_j(y) = R_n(X(y, s_j), s_j)
    ell: float

    def __call__(self, grid: TorusGrid, t: float, anchor_disp: np.ndarray) -> np.ndarray:
        """Rbar(x, t) = sum_j h rho_ell(s_j - t) G_j(x + Y(x)), physical values."""
        x = np.stack(grid.x, axis=-1)
        pts = x + np.moveaxis(grid.backward(anchor_disp), 0, -1)
        total = np.zeros((2, 2, grid.n, grid.n))
        wts = self.weights * rho_scaled(self.nodes - t, self.ell)
        for wj, Gj in zip(wts, self.G):
            if wj != 0.0:
                total += wj * interpolate(grid, Gj, pts)
        return total


def mollified_stress(result: NewtonResult, n: int, node: int, margin: float) -> MollifiedStress:
    """Build Rbar_{q,n} around the level-Gamma node t* (trajectories of utilde from t*)."""
    ctx = result.ctx
    p = ctx.params
    grid = ctx.grid
    H = p.top_step
    t_star = node * H
    span = int(np.ceil((p.ell_t + margin) / H))
    pts = np.stack(grid.x, axis=-1)

    def velocity(s):
        return result.mollified_velocity(s)[1]

    fwd = lagrangian_trajectories(velocity, grid, pts, t_star, t_star + span * H, H)
    back = lagrangian_trajectories(velocity, grid, pts, t_star, t_star - span * H, H)
    nodes, G = [], []
    shift = 2 ** (p.gamma - n) if n > 0 else None
    for j in range(node - span, node + span + 1):
        s = j * H
        if n == 0:
            R = ctx.R0(s)
        else:
            psis = result.psis_at_node(n, j * shift)
            R = ctx.layer_stress(s, psis)
        X = fwd(s) if j >= node else back(s)
        nodes.append(s)
        G.append(grid.forward(interpolate(grid, R, X)))
    return MollifiedStress(n, np.array(nodes), H, G, p.ell_t)


@dataclass
class NashFields:
    """All terms of the q+1 system at the check time."""

    t: float
    term: NashTerm | None
    dv: np.ndarray
    v: np.ndarray
    p: np.ndarray
    R_L: np.ndarray
    R_O: np.ndarray
    R_R: np.ndarray
    w_p: np.ndarray
    microlocal: MicrolocalReport | None
    amplitude_gap: float  # sup |Abar - A| for the active term
    components: dict = field(default_factory=dict)

    @property
    def R(self) -> np.ndarray:
        return self.R_L + self.R_O + self.R_R

    def residual(self, ctx: StageContext) -> tuple[float, float]:
        grid = ctx.grid
        terms = {
            "dt_v": self.dv,
            "nonlinear": ctx.B(self.v, self.v),
            "grad_p": grad(grid, self.p),
            "div_R": div(grid, self.R),
        }
        res = terms["dt_v"] + terms["nonlinear"] + terms["grad_p"] - terms["div_R"]
        sup = lambda c: float(np.max(np.abs(grid.backward(c))))
        return sup(res), max(sup(c) for c in terms.values())


@dataclass
class CheckResult:
    """Newton and Nash identities at one check time."""

    t: float
    newton: list  # SubstepFields, n = 0..Gamma
    newton_residuals: list  # (residual, dominant) per n
    nash: NashFields
    nash_residual: tuple


def _amplitude(ctx: StageContext, t, k, R_phys, D, scale):
    from .algebra import decompose_stress

    return decompose_stress(
        ctx.frame,
        R_phys,
        ctx.gradphi_phys(D),
        scale / ctx.scale_power,
        ctx.lam1,
        chi=float(ctx.partition.chi(k, t)),
    )


def check_stage(result: NewtonResult, node: int, eps: float = 2e-6, points: int = 12) -> CheckResult:
    """Evaluate the Newton identities and the q+1 identity at the level-Gamma node t*."""
    ctx = result.ctx
    grid = ctx.grid
    p = ctx.params
    t_star = node * p.top_step
    terms = active_terms(ctx, t_star, windows=[set(layer) for layer in result.layers])
    if len(terms) > 1:
        raise PreconditionError(f"{len(terms)} Nash terms overlap at t={t_star}")
    term = terms[0] if terms else None
    system = CoupledLocalSystem(result, node, [term.k] if term else [])
    sl = system.slices(eps)
    newton = substep_fields(ctx, system, sl)
    newton_res = [f.residual(ctx) for f in newton]
    top = newton[-1]
    center = sl.center()
    vt, ut = system.utilde(t_star, center)
    lam = p.lam_next
    if term is None:
        zero = np.zeros_like(top.R)
        nash = NashFields(t_star, None, top.dv, top.v, top.p, zero, top.S, top.R + top.P, np.zeros_like(top.v), None, 0.0)
        return CheckResult(t_star, newton, newton_res, nash, nash.residual(ctx))

    k, n, i = term.k, term.n, term.i
    xi = np.array(ctx.frame.F[i], dtype=float)
    scale = sl.scales[(k, n + 1)]
    mst = mollified_stress(result, n, node, 3 * eps)
    # amplitudes and waves on the slices
    thetas, abar, amps, disps = [], [], [], []
    for o, state in enumerate(sl.states):
        t = sl.time(o)
        Rbar = mst(grid, t, state[("anchor", 0)][0])
        Dn = state[("nash", k)][0]
        amp = _amplitude(ctx, t, k, Rbar, Dn, scale)
        a = np.sqrt(amp.a2[term.direction])
        disp = grid.backward(Dn)
        thetas.append(wave_scalar(grid, a, disp, xi, lam))
        abar.append(a)
        amps.append(amp)
        disps.append(disp)
    ic = FD_OFFSETS.index(0)
    y = p.mu * t_star
    gs = [float(ctx.profiles.g(i, k % 2, n + 1, p.mu * sl.time(o))) for o in range(len(FD_OFFSETS))]
    g, dg = gs[ic], float(ctx.profiles.dg(i, k % 2, n + 1, y)) * p.mu
    wps = [gs[o] * perp_grad(grid, thetas[o]) for o in range(len(FD_OFFSETS))]
    theta, a, amp, disp = thetas[ic], abar[ic], amps[ic], disps[ic]
    w_p = wps[ic]

    # time derivative of w^(p): profile, amplitude and phase parts
    da = central_difference(abar, sl.eps)
    Dn = center[("nash", k)][0]
    dD = grid.backward(system.flow_rate(t_star, center, Dn))
    x1, x2 = grid.x
    kv = lam * xi
    phase = kv[0] * x1 + kv[1] * x2 + kv[0] * disp[0] + kv[1] * disp[1]
    dphase = kv[0] * dD[0] + kv[1] * dD[1]
    dtheta = inv_laplacian(grid, band_symbol(grid, lam, "P") * grid.forward(da * np.cos(phase) - a * np.sin(phase) * dphase))
    dw = dg * perp_grad(grid, theta) + g * perp_grad(grid, dtheta)

    # transport / Nash error
    Pd = grid.to_padded
    up = Pd(ut)
    gw = Pd(grad(grid, w_p))
    adv = grid.from_padded(up[0] * gw[:, 0] + up[1] * gw[:, 1])
    gu = Pd(grad(grid, ut))
    tr = grid.from_padded(np.einsum("jiab,jab->iab", gu, Pd(w_p)))
    Ws = -g * ctx.mt * theta
    om = perp_div(grid, vt)
    Ws_grad_om = grid.from_padded(Pd(Ws)[None] * Pd(grad(grid, om)))
    R_L = ctx.antidiv(dw + adv + tr - Ws_grad_om, "transport error")
    Pi_L = grid.product(Ws, om)

    # oscillation error
    micro = microlocal_tensor(grid, ctx.spec, a, amp_gradphi(ctx, Dn), disp, xi, lam, points=points)
    Abar = grid.forward(amp.tensors[term.direction])
    A_new = ctx.amplitudes(t_star, k, top_stress(newton, n), center[(k, n + 1)][1], scale)[0][term.direction]
    R_O = g**2 * (Abar - A_new) + 0.5 * g**2 * micro.deltaB
    pmat = amp.p[term.direction]
    pdot = np.sum(pmat * np.real(ctx.spec.grad_mbar(pmat)), axis=-1)
    Pi_O = 0.5 * g**2 * pressure_potential(grid, ctx.spec, theta) + grid.forward(
        0.125 * g**2 * lam ** (ctx.spec.delta - 1.0) * a**2 * pdot
    )

    # residual collection
    diff = top.v - vt
    R_R = top.R + top.P + ctx.antidiv(ctx.B(w_p, diff) + ctx.B(diff, w_p), "residual error")
    pres = top.p + grid.from_padded(np.sum(up * Pd(w_p), axis=0)) - Pi_L - Pi_O
    vs = [newton_v + wp for newton_v, wp in zip(_newton_velocities(ctx, sl), wps)]
    dv = central_difference(vs, sl.eps)
    gap = float(np.max(np.abs(grid.backward(Abar - A_new))))
    nash = NashFields(
        t_star, term, dv, vs[ic], pres, R_L, R_O, R_R, w_p, micro, gap,
        {"S_top": top.S, "Abar": Abar, "A": A_new, "g": g},
    )
    return CheckResult(t_star, newton, newton_res, nash, nash.residual(ctx))


def amp_gradphi(ctx: StageContext, D: np.ndarray) -> np.ndarray:
    return ctx.gradphi_phys(D)


def top_stress(newton: list, n: int) -> np.ndarray:
    return newton[n].R


def _newton_velocities(ctx: StageContext, sl: LocalSlices) -> list:
    gamma = ctx.params.gamma
    out = []
    for o, state in enumerate(sl.states):
        t = sl.time(o)
        w = sum((layer_w(ctx, t, state, m) for m in range(1, gamma + 1)), np.zeros((2,) + ctx.grid.spectral_shape, complex))
        out.append(ctx.state.velocity(t) + w)
    return out
