"""Hamiltonian, ASM-Reynolds residuals, inductive bounds and CSV reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import PreconditionError
from .multiplier import MultiplierSpec, apply_operator_coeffs
from .spectral_core import MEAN_TOL, SpectralField, TorusGrid, div, grad, holder_norm, perp, perp_div

REPORT_COLUMNS = ("module", "label", "value", "bound", "constant", "pass")
COMPARE_RTOL = 1e-12  # floating-point slack for bounds attained with equality


# --- Hamiltonian ---------------------------------------------------------------------

def hamiltonian(theta: SpectralField, spec: MultiplierSpec) -> float:
    """H = 1/2 int theta T0[theta] = 1/2 (2 pi)^2 sum mbar |theta_hat|^2."""
    if theta.rank != "scalar":
        raise PreconditionError("the Hamiltonian takes a scalar")
    c = theta.coeffs
    if abs(c[0, 0]) > MEAN_TOL * max(1.0, float(np.max(np.abs(c)))):
        raise PreconditionError("theta must have zero mean")
    grid = theta.grid
    mbar = np.real(spec.grid_symbols(grid)["mbar"])
    return 0.5 * (2 * np.pi) ** 2 * float(np.sum(grid.weights * mbar * np.abs(c) ** 2))


def ase_rhs(grid: TorusGrid, spec: MultiplierSpec, theta: np.ndarray) -> np.ndarray:
    """-u . grad theta with u = T[theta], dealiased."""
    u = apply_operator_coeffs(spec, "T", grid, theta)
    g = grad(grid, theta)
    return -(grid.product(u[0], g[0]) + grid.product(u[1], g[1]))


@dataclass
class ConservationRun:
    times: np.ndarray
    energies: np.ndarray

    @property
    def drift(self) -> float:
        return float(np.max(np.abs(self.energies - self.energies[0])) / abs(self.energies[0]))


def solve_active_scalar(theta0: SpectralField, spec: MultiplierSpec, t_end: float, dt: float, record_every: int = 10) -> ConservationRun:
    """RK4 for d_t theta + T[theta] . grad theta = 0, recording H along the way."""
    grid = theta0.grid
    th = theta0.coeffs.copy()
    steps = int(np.ceil(t_end / dt - 1e-12))
    h = t_end / steps
    times, energies = [0.0], [hamiltonian(theta0, spec)]
    for i in range(steps):
        k1 = ase_rhs(grid, spec, th)
        k2 = ase_rhs(grid, spec, th + h / 2 * k1)
        k3 = ase_rhs(grid, spec, th + h / 2 * k2)
        k4 = ase_rhs(grid, spec, th + h * k3)
        th = th + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if (i + 1) % record_every == 0 or i + 1 == steps:
            times.append((i + 1) * h)
            energies.append(hamiltonian(SpectralField(grid, th), spec))
    return ConservationRun(np.array(times), np.array(energies))


def smooth_initial_scalar(grid: TorusGrid, kmax: int = 4, seed: int = 0) -> SpectralField:
    """Zero-mean random scalar with a handful of low modes, unit sup norm."""
    rng = np.random.default_rng(seed)
    c = np.zeros(grid.spectral_shape, complex)
    sel = (grid.kabs <= kmax) & (grid.kabs > 0) & grid.mask
    c[sel] = rng.normal(size=sel.sum()) + 1j * rng.normal(size=sel.sum())
    phys = grid.backward(c)  # real part of the Hermitian completion
    f = SpectralField.from_physical(grid, phys).without_mean()
    return f * (1.0 / f.sup_norm())


# --- ASM-Reynolds residual --------------------------------------------------------------

FD_STENCILS = {
    3: np.array([-0.5, 0.0, 0.5]),
    5: np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0,
}


def nonlinearity(grid: TorusGrid, spec: MultiplierSpec, v: np.ndarray) -> np.ndarray:
    """u . grad v - (grad v)^T u with u = T1[v], written as u^perp (curl_perp . v)."""
    u = apply_operator_coeffs(spec, "T1", grid, v)
    return grid.from_padded(grid.to_padded(perp(u)) * grid.to_padded(perp_div(grid, v))[None])


def asm_residual(
    grid: TorusGrid,
    spec: MultiplierSpec,
    v_slices,
    p: np.ndarray,
    R: np.ndarray,
    dt: float,
    relative: bool = False,
) -> float:
    """sup |d_t v + u . grad v - (grad v)^T u + grad p - div R| at the centre slice.

    ``v_slices`` holds 3 or 5 equally spaced coefficient arrays; p and R are at the
    centre.  With ``relative`` the result is divided by the largest single term.
    """
    slices = list(v_slices)
    if len(slices) not in FD_STENCILS:
        raise PreconditionError("asm_residual needs 3 or 5 time slices")
    w = FD_STENCILS[len(slices)]
    dv = sum(wi * s for wi, s in zip(w, slices) if wi != 0) / dt
    v = slices[len(slices) // 2]
    terms = [dv, nonlinearity(grid, spec, v), grad(grid, p), -div(grid, R)]
    res = sum(terms)
    sup = lambda c: float(np.max(np.abs(grid.backward(c))))
    out = sup(res)
    if relative:
        out /= max(max(sup(t) for t in terms), 1e-300)
    return out


# --- bound records -------------------------------------------------------------------------

@dataclass
class BoundRecord:
    module: str
    label: str
    value: float
    bound: float
    constant: float = 1.0

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.constant * self.bound * (1 + COMPARE_RTOL))

    @property
    def ratio(self) -> float:
        return self.value / self.bound if self.bound > 0 else np.inf

    def row(self) -> tuple:
        return (self.module, self.label, f"{self.value:.10e}", f"{self.bound:.10e}", f"{self.constant:.6g}", str(self.passed))


@dataclass
class BoundReport:
    records: list = field(default_factory=list)

    def add(self, *args, **kwargs) -> BoundRecord:
        rec = BoundRecord(*args, **kwargs)
        self.records.append(rec)
        return rec

    def extend(self, other: "BoundReport") -> None:
        self.records.extend(other.records)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.records)

    def failures(self) -> list:
        return [r for r in self.records if not r.passed]

    def by_label(self, prefix: str) -> list:
        return [r for r in self.records if r.label.startswith(prefix)]


def fit_constants(records, margin: float = 1.25) -> dict:
    """Freeze C_label = margin * max measured ratio for each label."""
    out: dict = {}
    for r in records:
        out[r.label] = max(out.get(r.label, 0.0), margin * r.ratio)
    return out


def export_report(records, path) -> None:
    """Write the fixed-schema ASCII CSV, rows in the given order."""
    path = Path(path)
    rows = [REPORT_COLUMNS] + [r.row() for r in records]
    for row in rows:
        for cell in row:
            if not str(cell).isascii():
                raise PreconditionError(f"non-ASCII report cell {cell!r}")
    with path.open("w", newline="", encoding="ascii") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


# --- inductive bounds ------------------------------------------------------------------

@dataclass(frozen=True)
class LevelScales:
    """Parameters entering the level-q inductive bounds."""

    lam: float
    lam_next: float
    delta: float
    delta_next: float
    mult_delta: float  # homogeneity of the multiplier
    alpha: float
    M: float

    @property
    def rate(self) -> float:
        """delta_q^{1/2} lam_q^{2 + d}, the inverse material time scale."""
        return self.delta**0.5 * self.lam ** (2 + self.mult_delta)

    def allowed_support(self) -> list[tuple[float, float]]:
        s = 1.0 / self.rate
        return [(-2 + s, -1 - s), (1 + s, 2 - s)]


def _norm(grid: TorusGrid, c: np.ndarray, N: int) -> float:
    return holder_norm(SpectralField(grid, c), float(N))


def check_inductive_bounds(
    grid: TorusGrid,
    spec: MultiplierSpec,
    velocity,
    stress,
    times,
    scales: LevelScales,
    constants: dict | None = None,
    n_cap: int = 4,
    dt: float = 1e-4,
    support: list | None = None,
) -> BoundReport:
    """Sampled check of the level-q bounds on v, u = T1 v, R and D_t R.

    ``velocity`` and ``stress`` are callables of time; D_t R uses a centred
    difference in time plus the dealiased advection term.  ``support`` lists
    bookkeeping intervals for supp_t R; when omitted the sampled support is used.
    """
    constants = constants or {}
    rep = BoundReport()
    mt = spec.grid_symbols(grid)["mtilde"]
    sv = {N: 0.0 for N in range(1, n_cap + 1)}
    su = dict(sv)
    sr = {N: 0.0 for N in range(0, n_cap + 1)}
    sdr = dict(sr)
    sampled = []
    for t in times:
        v = velocity(t)
        u = mt * v
        R = stress(t)
        for N in sv:
            sv[N] = max(sv[N], _norm(grid, v, N))
            su[N] = max(su[N], _norm(grid, u, N))
        if np.any(R):
            sampled.append(t)
            dR = (stress(t + dt) - stress(t - dt)) / (2 * dt)
            g = grad(grid, R)
            dR = dR + grid.product(u[0], g[..., 0, :, :]) + grid.product(u[1], g[..., 1, :, :])
            for N in sr:
                sr[N] = max(sr[N], _norm(grid, R, N))
                sdr[N] = max(sdr[N], _norm(grid, dR, N))
    s = scales
    for N in sv:
        rep.add("diagnostics", f"inductive-v[N={N}]", sv[N], s.M * s.delta**0.5 * s.lam**N, constants.get(f"inductive-v[N={N}]", 1.0))
        rep.add(
            "diagnostics", f"inductive-u[N={N}]", su[N],
            s.M * s.delta**0.5 * s.lam ** (1 + s.mult_delta + N), constants.get(f"inductive-u[N={N}]", 1.0),
        )
    base = s.delta_next * s.lam_next ** (1 + s.mult_delta)
    for N in sr:
        rep.add("diagnostics", f"inductive-R[r=0,N={N}]", sr[N], base * s.lam ** (N - 2 * s.alpha), constants.get(f"inductive-R[r=0,N={N}]", 1.0))
        rep.add(
            "diagnostics", f"inductive-R[r=1,N={N}]", sdr[N],
            base * s.rate * s.lam ** (N - 2 * s.alpha), constants.get(f"inductive-R[r=1,N={N}]", 1.0),
        )
    intervals = support if support is not None else [(t, t) for t in sampled]
    allowed = s.allowed_support()
    outside = 0.0
    for a, b in intervals:
        if not any(lo <= a and b <= hi for lo, hi in allowed):
            outside = max(outside, min(_gap(a, lo, hi) + _gap(b, lo, hi) for lo, hi in allowed))
    rep.add("diagnostics", "inductive-support", outside, 0.0, 1.0)
    return rep


def _gap(t: float, lo: float, hi: float) -> float:
    return max(lo - t, 0.0, t - hi)
