"""Bilinear and trilinear multiplier operators, a brute-force oracle and estimate probes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError
from .multiplier import MultiplierSpec
from .spectral_core import (
    SpectralField,
    TorusGrid,
    d,
    div,
    fractional,
    holder_norm,
    make_grid,
    perp,
    perp_div,
    perp_grad,
    require_zero_mean,
)

BILINEAR_OPS = ("T", "S", "S'", "S1", "S2", "S11", "S22", "S12")
TRILINEAR_OPS = ("S0", "S1", "S2", "S11", "S22", "S12")
DIVFREE_TOL = 1e-10


def _strip_mean(c: np.ndarray) -> np.ndarray:
    c = c.copy()
    c[..., 0, 0] = 0.0
    return c


def _inv_lambda(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    """Lambda^{-1}; the mean of the argument vanishes identically for these operators."""
    return fractional(grid, _strip_mean(c), -1.0)


def _require_divfree(grid: TorusGrid, c: np.ndarray, what: str) -> None:
    scale = max(float(np.max(np.abs(grid.dk[0] * c[0]) + np.abs(grid.dk[1] * c[1]), initial=0.0)), 1e-300)
    if float(np.max(np.abs(div(grid, c)), initial=0.0)) > DIVFREE_TOL * scale:
        raise PreconditionError(f"{what} must be divergence-free")


def _parse_index(op_id: str) -> tuple[int, int | None]:
    i = int(op_id[1]) - 1
    j = int(op_id[2]) - 1 if len(op_id) > 2 else None
    return i, j


class BilinearKernels:
    """Coefficient-level implementations sharing the symbol cache of ``spec``."""

    def __init__(self, spec: MultiplierSpec, grid: TorusGrid):
        self.spec = spec
        self.grid = grid
        self.mt = spec.grid_symbols(grid)["mtilde"]

    def T1(self, c):
        return self.mt * c

    def T(self, f, g):
        grid = self.grid
        lap_g = -grid.ksq * g
        lap_f = -grid.ksq * f
        out = []
        for j in range(2):
            first = grid.product(self.T1(f), d(grid, lap_g, j))
            second = grid.product(self.T1(d(grid, g, j)), lap_f)
            out.append(first - second)
        return _inv_lambda(grid, np.stack(out))

    def Si(self, i, f, g):
        grid = self.grid
        body = grid.product(d(grid, self.T1(f), i), g) - grid.product(d(grid, f, i), self.T1(g))
        return _inv_lambda(grid, body)

    def Sij(self, i, j, f, g):
        return self.Si(i, d(self.grid, f, j), g)

    def S(self, f, g):
        """f divergence-free vector, g scalar."""
        grid = self.grid
        pg = perp_grad(grid, g)
        out = []
        for i in range(2):
            acc = 0.0
            for j in range(2):
                acc = acc + grid.product(d(grid, self.T1(f[j]), i), pg[j])
                acc = acc - grid.product(d(grid, f[j], i), self.T1(pg[j]))
            out.append(acc)
        return _inv_lambda(grid, np.stack(out))

    def Sprime(self, w, v):
        grid = self.grid
        body = grid.product(perp(self.T1(w)), perp_div(grid, v)[None]) + grid.product(
            perp(self.T1(v)), perp_div(grid, w)[None]
        )
        return _inv_lambda(grid, body)

    def bilinear(self, op_id, f, g):
        if op_id == "T":
            return self.T(f, g)
        if op_id == "S":
            return self.S(f, g)
        if op_id == "S'":
            return self.Sprime(f, g)
        i, j = _parse_index(op_id)
        if j is None:
            return self.Si(i, f, g)
        return self.Sij(i, j, f, g)

    def advect(self, u, c):
        """u . grad c (mean removed; these operators act on zero-mean arguments)."""
        grid = self.grid
        return _strip_mean(grid.product(u[0], d(grid, c, 0)) + grid.product(u[1], d(grid, c, 1)))

    def trilinear(self, op_id, u, phi, psi):
        if op_id == "S0":
            inner = lambda a, b: self.T(a, b)  # noqa: E731
        else:
            i, j = _parse_index(op_id)
            if j is not None:
                phi = d(self.grid, phi, j)
            inner = lambda a, b: self.Si(i, a, b)  # noqa: E731
        base = inner(phi, psi)
        grid = self.grid
        adv = grid.product(u[0][None] if base.ndim == 3 else u[0], d(grid, base, 0))
        adv = adv + grid.product(u[1][None] if base.ndim == 3 else u[1], d(grid, base, 1))
        return adv - inner(self.advect(u, phi), psi) - inner(phi, self.advect(u, psi))


def _check_slots(op_id: str, f: SpectralField, g: SpectralField) -> None:
    if op_id == "S":
        if f.rank != "vector" or g.rank != "scalar":
            raise PreconditionError("S takes a divergence-free vector and a scalar")
        _require_divfree(f.grid, f.coeffs, "first argument of S")
    elif op_id == "S'":
        if f.rank != "vector" or g.rank != "vector":
            raise PreconditionError("S' takes two divergence-free vectors")
        _require_divfree(f.grid, f.coeffs, "first argument of S'")
        _require_divfree(g.grid, g.coeffs, "second argument of S'")
    elif f.rank != "scalar" or g.rank != "scalar":
        raise PreconditionError(f"{op_id} takes scalar arguments")
    require_zero_mean(f.coeffs, "first argument")
    require_zero_mean(g.coeffs, "second argument")


def bilinear(spec: MultiplierSpec, op_id: str, f: SpectralField, g: SpectralField) -> SpectralField:
    """Evaluate T, S, S', S_i or S_ij by operator composition with dealiased products."""
    if op_id not in BILINEAR_OPS:
        raise PreconditionError(f"unknown bilinear operator {op_id!r}")
    _check_slots(op_id, f, g)
    return SpectralField(f.grid, BilinearKernels(spec, f.grid).bilinear(op_id, f.coeffs, g.coeffs))


def trilinear(spec: MultiplierSpec, op_id: str, u: SpectralField, phi: SpectralField, psi: SpectralField) -> SpectralField:
    """Advection commutators S0, S_i, S_ij of the bilinear operators."""
    if op_id not in TRILINEAR_OPS:
        raise PreconditionError(f"unknown trilinear operator {op_id!r}")
    if u.rank != "vector" or phi.rank != "scalar" or psi.rank != "scalar":
        raise PreconditionError("trilinear operators take (vector, scalar, scalar)")
    require_zero_mean(phi.coeffs, "phi")
    require_zero_mean(psi.coeffs, "psi")
    out = BilinearKernels(spec, u.grid).trilinear(op_id, u.coeffs, phi.coeffs, psi.coeffs)
    return SpectralField(u.grid, out)


# --- brute-force double-frequency oracle ----------------------------------------------

def _retained_modes(grid: TorusGrid):
    K = grid.K
    ks = np.arange(-K, K + 1)
    k1, k2 = np.meshgrid(ks, ks, indexing="ij")
    return np.stack([k1.ravel(), k2.ravel()], axis=-1)


def bilinear_symbol(spec: MultiplierSpec, op_id: str, xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Symbol M(xi, eta) with trailing axes (out_component, f_component, g_component)."""
    mt = lambda z: spec.mtilde(z)  # noqa: E731
    s = xi + eta
    norm = np.linalg.norm(s, axis=-1)
    inv = np.where(norm > 0, 1.0 / np.where(norm > 0, norm, 1.0), 0.0)
    mx, my = mt(xi), mt(eta)
    ieta_perp = 1j * np.stack([-eta[..., 1], eta[..., 0]], -1)
    ixi_perp = 1j * np.stack([-xi[..., 1], xi[..., 0]], -1)
    if op_id == "T":
        num = 1j * eta * (-mx * np.sum(eta**2, -1) + my * np.sum(xi**2, -1))[..., None]
        return (num * inv[..., None])[..., :, None, None]
    if op_id == "S":
        diff = (mx - my) * inv
        mi = 1j * xi * diff[..., None]  # (.., i)
        return (mi[..., :, None] * ieta_perp[..., None, :])[..., :, :, None]
    if op_id == "S'":
        # T1[w]^perp (perp_div v) + T1[v]^perp (perp_div w); w at xi (index a), v at eta (index b)
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])
        t1 = mx[..., None, None, None] * rot[:, :, None] * ieta_perp[..., None, None, :]
        t2 = my[..., None, None, None] * rot[:, None, :] * ixi_perp[..., None, :, None]
        return (t1 + t2) * inv[..., None, None, None]
    i, j = _parse_index(op_id)
    val = 1j * xi[..., i] * (mx - my) * inv
    if j is not None:
        val = val * 1j * xi[..., j]
    return val[..., None, None, None]


def brute_force_bilinear(spec: MultiplierSpec, op_id: str, f: SpectralField, g: SpectralField) -> SpectralField:
    """O(N^4) double sum over retained frequency pairs; oracle for :func:`bilinear`.

    Needs a grid without a retained Nyquist mode, whose derivative is ambiguous.
    """
    grid = f.grid
    if 2 * grid.K >= grid.n:
        raise PreconditionError("brute-force oracle needs dealias_fraction < 1")
    modes = _retained_modes(grid)
    fc = grid.full_spectrum(f.coeffs)
    gc = grid.full_spectrum(g.coeffs)
    fv = fc[..., modes[:, 0] % grid.n, modes[:, 1] % grid.n].reshape(-1, len(modes))
    gv = gc[..., modes[:, 0] % grid.n, modes[:, 1] % grid.n].reshape(-1, len(modes))
    xi = modes[:, None, :].astype(float)
    eta = modes[None, :, :].astype(float)
    xi, eta = np.broadcast_arrays(xi, eta)
    sym = bilinear_symbol(spec, op_id, xi, eta)  # (P, P, out, fa, gb)
    contrib = np.einsum("pqoab,ap,bq->opq", sym, fv, gv)
    out_dim = contrib.shape[0]
    tot = modes[:, None, :] + modes[None, :, :]
    keep = (np.abs(tot[..., 0]) <= grid.K) & (np.abs(tot[..., 1]) <= grid.K)
    full = np.zeros((out_dim, grid.n, grid.n), dtype=complex)
    idx = (tot[..., 0][keep] % grid.n, tot[..., 1][keep] % grid.n)
    for o in range(out_dim):
        np.add.at(full[o], idx, contrib[o][keep])
    half = grid.half_spectrum(full) * grid.mask
    if out_dim == 1:
        half = half[0]
    return SpectralField(grid, half)


# --- estimate probes --------------------------------------------------------------------

@dataclass
class ProbeReport:
    op_id: str
    alpha: float
    ratios: dict = field(default_factory=dict)  # N -> array of per-trial ratios

    def max_ratio(self, n: int) -> float:
        return float(np.max(self.ratios[n]))

    def median_ratio(self, n: int) -> float:
        return float(np.median(self.ratios[n]))

    def stable(self, factor: float = 1.5) -> bool:
        ns = sorted(self.ratios)
        return all(self.max_ratio(b) <= factor * self.max_ratio(a) for a, b in zip(ns, ns[1:]))

    def rows(self):
        for n in sorted(self.ratios):
            for t, r in enumerate(self.ratios[n]):
                yield self.op_id, n, t, float(r)


def random_field(grid: TorusGrid, rank: str, rng: np.random.Generator, kmax: float, decay: float = 2.0, divfree: bool = False) -> SpectralField:
    """Random real zero-mean field with power-law spectrum supported in |k| <= kmax."""
    shape = {"scalar": (), "vector": (2,)}[rank]
    if divfree:
        psi = random_field(grid, "scalar", rng, kmax, decay + 1.0)
        return SpectralField(grid, perp_grad(grid, psi.coeffs))
    noise = rng.normal(size=shape + (grid.n, grid.n))
    c = grid.forward(noise)
    r = grid.kabs
    weight = np.where((r > 0) & (r <= kmax), np.where(r > 0, r, 1.0) ** (-decay), 0.0)
    c = c * weight * grid.mask
    c[..., 0, 0] = 0.0
    return SpectralField(grid, c)


def _h(f: SpectralField, s: float) -> float:
    return holder_norm(f, s)


def probe_rhs(op_id: str, delta: float, alpha: float, args: tuple) -> float:
    """Right-hand side of the N = 0 estimate for ``op_id`` evaluated with Hölder norms."""
    a, dl = alpha, delta
    if op_id == "T":
        f, g = args
        return 2 * (_h(f, 1 + dl + a) * _h(g, 2 + a) + _h(f, 2 + a) * _h(g, 1 + dl + a))
    if op_id == "S":
        f, g = args
        return 2 * (_h(f, 2 + dl + a) * _h(g, a) + _h(f, 1 + a) * _h(g, 1 + dl + a))
    if op_id == "S'":
        w, v = args
        return 2 * (_h(w, 1 + dl + a) * _h(v, a) + _h(w, a) * _h(v, 1 + dl + a))
    if op_id in ("S1", "S2") and len(args) == 2:
        f, g = args
        return 2 * (_h(f, 1 + dl + a) * _h(g, a) + _h(f, a) * _h(g, 1 + dl + a))
    if len(args) == 2:
        f, g = args
        return 2 * (_h(f, 2 + dl + a) * _h(g, a) + _h(f, 1 + a) * _h(g, 1 + dl + a))
    u, phi, psi = args
    if op_id == "S0":
        return _h(u, 1 + a) * (_h(phi, a) * _h(psi, 3 + dl + a) + _h(phi, 2 + dl + a) * _h(psi, 1 + a)) + _h(
            u, 3 + dl + a
        ) * _h(phi, a) * _h(psi, 1 + a)
    if op_id in ("S1", "S2"):
        return _h(u, 1 + a) * (_h(phi, 1 + dl + a) * _h(psi, a) + _h(phi, a) * _h(psi, 1 + dl + a)) + _h(
            u, 2 + dl + a
        ) * _h(phi, a) * _h(psi, a)
    return _h(u, 1 + a) * (_h(phi, 2 + dl + a) * _h(psi, a) + _h(phi, 1 + a) * _h(psi, 1 + dl + a)) + _h(
        u, 2 + dl + a
    ) * _h(phi, 1 + a) * _h(psi, a)


def estimate_probe(
    spec: MultiplierSpec,
    op_id: str,
    alpha: float,
    resolutions=(32, 64),
    trials: int = 20,
    arity: int | None = None,
    seed: int = 0,
    band_fraction: float = 1.0,
    decay_range: tuple[float, float] = (2.0, 3.5),
) -> ProbeReport:
    """Ratio ||op||_alpha / RHS over random band-limited inputs at each resolution.

    Inputs at resolution N have power-law spectra with exponent drawn from
    ``decay_range`` and support |k| <= band_fraction * K (half that for the
    trilinear inputs, whose nested products would otherwise be truncated).
    """
    if not (0 < alpha < 1):
        raise PreconditionError("alpha must lie in (0, 1)")
    if trials < 20:
        raise PreconditionError("at least 20 trials are required")
    if arity is None:
        arity = 3 if op_id == "S0" else 2
    report = ProbeReport(op_id if arity == 2 else f"tri:{op_id}", alpha)
    for n in resolutions:
        grid = make_grid(n)
        kmax = band_fraction * grid.K
        ratios = []
        for trial in range(trials):
            # Trial t uses the same spectral shape at every resolution.
            rng = np.random.default_rng([seed, trial, n])
            decay = np.random.default_rng([seed, trial]).uniform(*decay_range)
            if arity == 3:
                u = random_field(grid, "vector", rng, kmax / 2, decay, divfree=True)
                phi = random_field(grid, "scalar", rng, kmax / 2, decay)
                psi = random_field(grid, "scalar", rng, kmax / 2, decay)
                out = trilinear(spec, op_id, u, phi, psi)
                args = (u, phi, psi)
            else:
                kinds = {"S": ("vector", "scalar"), "S'": ("vector", "vector")}.get(op_id, ("scalar", "scalar"))
                args = tuple(
                    random_field(grid, k, rng, kmax, decay, divfree=(k == "vector")) for k in kinds
                )
                out = bilinear(spec, op_id, *args)
            rhs = probe_rhs(op_id, spec.delta, alpha, args)
            lhs = holder_norm(out, alpha)
            ratios.append(0.0 if lhs == 0 else lhs / rhs)
        report.ratios[n] = np.array(ratios)
    return report
