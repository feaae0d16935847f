"""Symbol families, the operators T, T0, T1, classification and anti-divergence."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    ExceptionalMultiplierError,
    PreconditionError,
    UnsupportedError,
)
from .spectral_core import SpectralField, TorusGrid, require_zero_mean

FAMILIES = ("msqg", "quadratic", "ipm", "mg", "custom")
FD_STEP = 1e-5


def _perp(xi: np.ndarray) -> np.ndarray:
    return np.stack([-xi[..., 1], xi[..., 0]], axis=-1)


def _norm(xi: np.ndarray) -> np.ndarray:
    return np.linalg.norm(xi, axis=-1)


@dataclass(frozen=True, eq=False)
class MultiplierSpec:
    """Symbol m together with the derived symbols mbar and mtilde.

    ``m`` maps an array of frequencies (..., d) to complex (..., d).  The 2D
    families also provide ``mbar_fn`` (and, when closed-form, ``grad_mbar_fn``).
    """

    family: str
    params: dict
    delta: float
    parity: str
    m_fn: Callable[[np.ndarray], np.ndarray]
    mbar_fn: Callable[[np.ndarray], np.ndarray] | None = None
    grad_mbar_fn: Callable[[np.ndarray], np.ndarray] | None = None
    dim: int = 2
    _grid_cache: dict = field(default_factory=dict, repr=False)

    def m(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        out = np.asarray(self.m_fn(xi), dtype=complex)
        zero = _norm(xi) == 0
        return np.where(zero[..., None], 0.0, out)

    def mbar(self, xi) -> np.ndarray:
        """mbar = -m . i xi_perp / |xi|^2 (2D only)."""
        xi = np.asarray(xi, dtype=float)
        if self.mbar_fn is not None:
            r = _norm(xi)
            with np.errstate(divide="ignore", invalid="ignore"):
                val = self.mbar_fn(np.where(r[..., None] > 0, xi, 1.0))
            return np.where(r > 0, val, 0.0)
        return self.mbar_from_m(xi)

    def mbar_from_m(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        r2 = np.sum(xi**2, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            val = -np.sum(self.m(xi) * 1j * _perp(xi), axis=-1) / np.where(r2 > 0, r2, 1.0)
        return np.where(r2 > 0, val, 0.0)

    def mtilde(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return np.sum(xi**2, axis=-1) * self.mbar(xi)

    def grad_mbar(self, xi) -> np.ndarray:
        """Gradient of mbar; analytic where available, else central differences."""
        xi = np.asarray(xi, dtype=float)
        if self.grad_mbar_fn is not None:
            r = _norm(xi)
            with np.errstate(divide="ignore", invalid="ignore"):
                val = self.grad_mbar_fn(np.where(r[..., None] > 0, xi, 1.0))
            return np.where(r[..., None] > 0, val, 0.0)
        out = []
        for j in range(2):
            e = np.zeros(2)
            e[j] = 1.0
            h = FD_STEP * np.maximum(_norm(xi), 1e-300)[..., None]
            out.append((self.mbar(xi + h * e) - self.mbar(xi - h * e)) / (2 * h[..., 0]))
        return np.stack(out, axis=-1)

    # --- symbols on a grid --------------------------------------------------
    def grid_symbols(self, grid: TorusGrid) -> dict:
        key = (grid.n, grid.dealias_fraction)
        if key not in self._grid_cache:
            xi = np.stack([grid.k1, grid.k2], axis=-1)
            m = np.moveaxis(self.m(xi), -1, 0) * grid.mask
            mbar = self.mbar(xi) * grid.mask
            mtilde = grid.ksq * mbar
            self._grid_cache[key] = {"m": m, "mbar": mbar, "mtilde": mtilde}
        return self._grid_cache[key]

    @property
    def mtilde_is_real(self) -> bool:
        return self.parity == "odd"


# --- families ------------------------------------------------------------------

def _check_delta(delta: float) -> None:
    if not (-1.0 <= delta <= 0.0):
        raise UnsupportedError(f"homogeneity delta={delta} outside [-1, 0]")


def _msqg(delta: float) -> MultiplierSpec:
    _check_delta(delta)

    def mbar(xi):
        return _norm(xi) ** (delta - 1.0)

    def grad_mbar(xi):
        return (delta - 1.0) * (_norm(xi) ** (delta - 3.0))[..., None] * xi

    def m(xi):
        return (mbar_safe(xi))[..., None] * 1j * _perp(xi)

    def mbar_safe(xi):
        r = _norm(xi)
        with np.errstate(divide="ignore"):
            return np.where(r > 0, np.where(r > 0, r, 1.0) ** (delta - 1.0), 0.0)

    return MultiplierSpec("msqg", {"delta": delta}, delta, "odd", m, mbar, grad_mbar)


def _quadratic(c1: float, c2: float, c3: float, delta: float) -> MultiplierSpec:
    _check_delta(delta)
    if c3**2 >= 4 * c1 * c2:
        raise ExceptionalMultiplierError(
            "quadratic family with c3^2 >= 4 c1 c2 is exceptional; construction refused"
        )
    if c1 <= 0 or c2 <= 0:
        raise UnsupportedError("quadratic family needs a positive definite form (c1, c2 > 0)")

    def q(xi):
        return c2 * xi[..., 0] ** 2 - c3 * xi[..., 0] * xi[..., 1] + c1 * xi[..., 1] ** 2

    def mbar(xi):
        return q(xi) ** ((delta - 1.0) / 2.0)

    def grad_mbar(xi):
        dq = np.stack(
            [2 * c2 * xi[..., 0] - c3 * xi[..., 1], -c3 * xi[..., 0] + 2 * c1 * xi[..., 1]],
            axis=-1,
        )
        return ((delta - 1.0) / 2.0 * q(xi) ** ((delta - 3.0) / 2.0))[..., None] * dq

    def m(xi):
        qq = q(xi)
        with np.errstate(divide="ignore"):
            mb = np.where(qq > 0, np.where(qq > 0, qq, 1.0) ** ((delta - 1.0) / 2.0), 0.0)
        return mb[..., None] * 1j * _perp(xi)

    params = {"c1": c1, "c2": c2, "c3": c3, "delta": delta}
    return MultiplierSpec("quadratic", params, delta, "odd", m, mbar, grad_mbar)


def _ipm() -> MultiplierSpec:
    def m(xi):
        r2 = np.sum(xi**2, axis=-1)
        r2 = np.where(r2 > 0, r2, 1.0)
        return np.stack([xi[..., 0] * xi[..., 1], -xi[..., 0] ** 2], axis=-1) / r2[..., None]

    def mbar(xi):
        return 1j * xi[..., 0] / np.sum(xi**2, axis=-1)

    return MultiplierSpec("ipm", {}, 0.0, "even", m, mbar)


def _mg() -> MultiplierSpec:
    def m(xi):
        x1, x2, x3 = xi[..., 0], xi[..., 1], xi[..., 2]
        r2 = x1**2 + x2**2 + x3**2
        den = x3**2 * r2 + x2**4
        num = np.stack(
            [
                x2 * x3 * r2 + x1 * x2**2 * x3,
                -x1 * x3 * r2 + x2**3 * x3,
                -(x2**2) * (x1**2 + x2**2),
            ],
            axis=-1,
        )
        safe = np.where(den > 0, den, 1.0)
        return np.where((x3 != 0)[..., None], num / safe[..., None], 0.0)

    return MultiplierSpec("mg", {}, 0.0, "even", m, None, None, dim=3)


def _custom(symbol: Callable, delta: float, parity: str) -> MultiplierSpec:
    """User symbol; evaluated on the unit circle and scaled by |xi|^delta."""

    def m(xi):
        r = _norm(xi)
        safe = np.where(r > 0, r, 1.0)
        unit = xi / safe[..., None]
        return np.asarray(symbol(unit), dtype=complex) * (safe**delta)[..., None]

    return MultiplierSpec("custom", {"delta": delta}, delta, parity, m)


def make_multiplier(family: str, params: dict | None = None) -> MultiplierSpec:
    """Build a :class:`MultiplierSpec` for one of the supported families."""
    params = dict(params or {})
    if family == "msqg":
        return _msqg(float(params.get("delta", 0.0)))
    if family == "quadratic":
        return _quadratic(
            float(params["c1"]), float(params["c2"]), float(params.get("c3", 0.0)),
            float(params.get("delta", 0.0)),
        )
    if family == "ipm":
        return _ipm()
    if family == "mg":
        return _mg()
    if family == "custom":
        return _custom(params["symbol"], float(params.get("delta", 0.0)), params.get("parity", "odd"))
    raise UnsupportedError(f"unknown multiplier family {family!r}")


# --- validation -------------------------------------------------------------------

@dataclass
class ValidationReport:
    parity: str
    oddness: float | None
    evenness: float | None
    perpendicularity: float
    homogeneity: float
    mbar_imag: float | None
    factorization: float | None
    samples: np.ndarray = field(repr=False)
    perp_values: np.ndarray = field(repr=False)

    @property
    def max_violation(self) -> float:
        vals = [self.perpendicularity, self.homogeneity]
        vals += [v for v in (self.oddness, self.evenness, self.mbar_imag, self.factorization) if v is not None]
        return max(vals)


def _sample_frequencies(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    rays = rng.normal(size=(count, dim))
    rays *= rng.uniform(0.2, 20.0, size=(count, 1)) / np.linalg.norm(rays, axis=1, keepdims=True)
    lattice = rng.integers(-12, 13, size=(count, dim)).astype(float)
    lattice = lattice[np.linalg.norm(lattice, axis=1) > 0]
    if dim == 3:
        lattice = lattice[lattice[:, 2] != 0]
        rays = rays[np.abs(rays[:, 2]) > 1e-3]
    return np.concatenate([rays, lattice], axis=0)


def validate_symbol(spec: MultiplierSpec, sample_count: int = 1000, seed: int = 0) -> ValidationReport:
    """Sample the structural hypotheses: parity, perpendicularity, homogeneity."""
    rng = np.random.default_rng(seed)
    xi = _sample_frequencies(spec.dim, sample_count, rng)
    m = spec.m(xi)
    scale = np.maximum(np.abs(m).max(axis=-1), 1e-300)
    perp_values = np.abs(np.sum(xi * m, axis=-1))
    mneg = spec.m(-xi)
    oddness = evenness = None
    if spec.parity == "odd":
        oddness = float(np.max(np.abs(mneg + m).max(axis=-1) / scale))
    else:
        evenness = float(np.max(np.abs(mneg - m).max(axis=-1) / scale))
    lam = rng.uniform(0.3, 7.0, size=(xi.shape[0], 1))
    hom = np.abs(spec.m(lam * xi) - lam**spec.delta * m).max(axis=-1) / (lam[:, 0] ** spec.delta * scale)
    mbar_imag = factor = None
    if spec.dim == 2:
        mbar = spec.mbar(xi)
        if spec.parity == "odd":
            mbar_imag = float(np.max(np.abs(np.imag(mbar)) / np.maximum(np.abs(mbar), 1e-300)))
        recon = mbar[..., None] * 1j * _perp(xi)
        factor = float(np.max(np.abs(recon - m).max(axis=-1) / scale))
    rel_perp = perp_values / np.maximum(_norm(xi) * scale, 1e-300)
    return ValidationReport(
        parity=spec.parity,
        oddness=oddness,
        evenness=evenness,
        perpendicularity=float(np.max(rel_perp)),
        homogeneity=float(np.max(hom)),
        mbar_imag=mbar_imag,
        factorization=factor,
        samples=xi,
        perp_values=perp_values,
    )


# --- operators ------------------------------------------------------------------

def apply_operator_coeffs(spec: MultiplierSpec, which: str, grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    sym = spec.grid_symbols(grid)
    if which == "T":
        return sym["m"] * c[..., None, :, :] if c.ndim > 2 else sym["m"] * c
    if which == "T0":
        return sym["mbar"] * c
    if which == "T1":
        return sym["mtilde"] * c
    raise PreconditionError(f"unknown operator {which!r}")


def apply_operator(spec: MultiplierSpec, which: str, f: SpectralField) -> SpectralField:
    """T (scalar -> vector), T0 or T1 (componentwise) by per-mode multiplication."""
    if spec.dim != 2:
        raise UnsupportedError("operators are implemented on the 2D torus only")
    require_zero_mean(f.coeffs)
    if which == "T" and f.rank != "scalar":
        raise PreconditionError("T acts on scalars")
    return SpectralField(f.grid, apply_operator_coeffs(spec, which, f.grid, f.coeffs))


# --- classification ----------------------------------------------------------------

def abc_vectors(spec: MultiplierSpec, xi: np.ndarray) -> np.ndarray:
    """Rows (a, b, c) = (2 xi2 d1 mbar, xi2 d2 mbar - xi1 d1 mbar, -2 xi1 d2 mbar)."""
    g = np.real(spec.grad_mbar(xi))
    x1, x2 = xi[..., 0], xi[..., 1]
    return np.stack(
        [2 * x2 * g[..., 0], x2 * g[..., 1] - x1 * g[..., 0], -2 * x1 * g[..., 1]], axis=-1
    )


def frame_tensor(spec: MultiplierSpec, xi: np.ndarray) -> np.ndarray:
    """xi (trace-free tensor) grad mbar(xi), shape (..., 2, 2)."""
    g = np.real(spec.grad_mbar(xi))
    outer = xi[..., :, None] * g[..., None, :]
    tr = 0.5 * (outer[..., 0, 0] + outer[..., 1, 1])
    outer[..., 0, 0] -= tr
    outer[..., 1, 1] -= tr
    return outer


def integer_directions(radius: int) -> list[tuple[int, int]]:
    """Primitive integer directions up to sign; by norm, then descending entries."""
    out = []
    for a in range(0, radius + 1):
        for b in range(-radius, radius + 1):
            if a == 0 and b <= 0:
                continue
            if a * a + b * b > radius * radius or np.gcd(a, b) != 1:
                continue
            out.append((a, b))
    return sorted(out, key=lambda v: (v[0] ** 2 + v[1] ** 2, -v[0], -v[1]))


@dataclass(frozen=True)
class Classification:
    kind: str  # ThreeIndependent | TwoIndependent | Exceptional
    directions: tuple
    c: tuple[float, float, float] | None
    determinant: float
    singular_values: tuple
    reason: str = ""

    @property
    def normal(self) -> tuple[float, float, float] | None:
        """Normal of A(m) in (g, e, f) coordinates of [[e, f], [g, -e]]."""
        if self.c is None:
            return None
        c1, c3, c2 = self.c
        return (c1, -c3, -c2)


THREE_INDEPENDENT_THRESHOLD = 1e-3
RANK_TOL = 1e-8


def _normalize_c(v: np.ndarray) -> tuple[float, float, float]:
    c1, c3, c2 = v
    scale = c2 if abs(c2) > 1e-8 * np.linalg.norm(v) else c1
    out = v / scale
    if out[0] < 0:
        out = -out
    out[np.abs(out) < 1e-12] = 0.0
    return tuple(float(x) for x in out)


def classify(spec: MultiplierSpec, search_radius: int = 3, sample_count: int = 400, seed: int = 0) -> Classification:
    """Rank analysis of xi (tf) grad mbar(xi); TwoIndependent carries (c1, c3, c2)."""
    if spec.parity != "odd" or spec.dim != 2:
        raise UnsupportedError("classification is defined for odd 2D multipliers")
    if search_radius < 3:
        raise PreconditionError("search_radius must be >= 3")
    rng = np.random.default_rng(seed)
    theta = rng.uniform(0, 2 * np.pi, sample_count)
    radii = rng.uniform(0.5, 5.0, sample_count)
    samples = np.stack([radii * np.cos(theta), radii * np.sin(theta)], axis=-1)
    rows = abc_vectors(spec, samples)
    rows = rows / np.maximum(np.linalg.norm(rows, axis=1, keepdims=True), 1e-300)
    _, s, vt = np.linalg.svd(rows, full_matrices=False)
    s_rel = s / max(s[0], 1e-300)
    dirs = integer_directions(search_radius)
    vecs = abc_vectors(spec, np.array(dirs, dtype=float))
    norms = np.linalg.norm(vecs, axis=1)
    best, best_det = None, 0.0
    usable = [i for i in range(len(dirs)) if norms[i] > 0]
    for i, j, k in itertools.combinations(usable, 3):
        mat = np.stack([vecs[i] / norms[i], vecs[j] / norms[j], vecs[k] / norms[k]])
        det = abs(np.linalg.det(mat))
        if det > best_det + 1e-12:
            best, best_det = (dirs[i], dirs[j], dirs[k]), det
    if s[0] < RANK_TOL or np.max(np.abs(np.real(spec.grad_mbar(samples)))) < RANK_TOL:
        return Classification("Exceptional", (), None, 0.0, tuple(s_rel), "mbar is constant")
    if best_det > THREE_INDEPENDENT_THRESHOLD:
        return Classification("ThreeIndependent", best, None, best_det, tuple(s_rel))
    if s_rel[1] < RANK_TOL:
        return Classification("Exceptional", (), None, best_det, tuple(s_rel), "rank one")
    c = _normalize_c(vt[-1])
    c1, c3, c2 = c
    if c3**2 >= 4 * c1 * c2 - 1e-9:
        return Classification("Exceptional", (), c, best_det, tuple(s_rel), "c3^2 >= 4 c1 c2")
    pair = _best_pair(dirs, vecs, norms)
    return Classification("TwoIndependent", pair, c, best_det, tuple(s_rel))


def _best_pair(dirs, vecs, norms):
    for i, j in itertools.combinations(range(len(dirs)), 2):
        if norms[i] == 0 or norms[j] == 0:
            continue
        a, b = vecs[i] / norms[i], vecs[j] / norms[j]
        if np.linalg.norm(np.cross(a, b)) > THREE_INDEPENDENT_THRESHOLD:
            return (dirs[i], dirs[j])
    return ()


# --- anti-divergence -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AntiDivOp:
    """Order -1 right inverse of the row-wise divergence."""

    case: str  # TraceFree | SecondOrderSymmetric
    c: tuple[float, float, float] | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def symbols(self, xi: np.ndarray) -> np.ndarray:
        """p1..p6 symbols (TraceFree case), shape (6, ...)."""
        c1, c3, c2 = self.c
        x1, x2 = xi[..., 0], xi[..., 1]
        q = c2 * x1**2 - c3 * x1 * x2 + c1 * x2**2
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = np.where(q != 0, 1.0 / np.where(q != 0, q, 1.0), 0.0)
        return np.stack(
            [
                -1j * c2 * x1 * inv,
                1j * c1 * x2 * inv,
                -1j * (c1 * x2 - c3 * x1) * inv,
                -1j * c1 * x1 * inv,
                -1j * c2 * x2 * inv,
                -1j * (c2 * x1 - c3 * x2) * inv,
            ]
        )

    def grid_symbols(self, grid: TorusGrid) -> np.ndarray:
        key = (grid.n, grid.dealias_fraction)
        if key not in self._cache:
            xi = np.stack([grid.k1, grid.k2], axis=-1)
            self._cache[key] = self.symbols(xi) * grid.mask
        return self._cache[key]

    def apply_coeffs(self, grid: TorusGrid, u: np.ndarray) -> np.ndarray:
        u1, u2 = u[..., 0, :, :], u[..., 1, :, :]
        if self.case == "TraceFree":
            p = self.grid_symbols(grid)
            r11 = p[0] * u1 + p[1] * u2
            r12 = p[2] * u1 + p[3] * u2
            r21 = p[4] * u1 + p[5] * u2
            out = np.stack([np.stack([r11, r12], -3), np.stack([r21, -r11], -3)], -4)
        else:
            i1, i2 = 1j * grid.dk[0], 1j * grid.dk[1]
            lap_inv = -grid.inv_ksq
            divu = i1 * u1 + i2 * u2
            r11 = lap_inv * (2 * i1 * u1 - divu)
            r22 = lap_inv * (2 * i2 * u2 - divu)
            r12 = lap_inv * (i1 * u2 + i2 * u1)
            out = np.stack([np.stack([r11, r12], -3), np.stack([r12, r22], -3)], -4)
        out[..., 0, 0] = 0.0
        return out

    def normal_pairing(self, R: np.ndarray) -> np.ndarray:
        """c1 g - c3 e - c2 f for R = [[e, f], [g, -e]] (zero on A(m))."""
        c1, c3, c2 = self.c
        return c1 * R[..., 1, 0, :, :] - c3 * R[..., 0, 0, :, :] - c2 * R[..., 0, 1, :, :]


def build_anti_divergence(classification: Classification) -> AntiDivOp:
    if classification.kind == "Exceptional":
        raise ExceptionalMultiplierError(
            f"no anti-divergence for an exceptional multiplier ({classification.reason})"
        )
    if classification.kind == "TwoIndependent":
        return AntiDivOp("TraceFree", classification.c)
    return AntiDivOp("SecondOrderSymmetric", None)


def apply_anti_divergence(op: AntiDivOp, u: SpectralField) -> SpectralField:
    """R(m) u for a zero-mean vector field u; div of the result equals u."""
    if u.rank != "vector":
        raise PreconditionError("anti-divergence acts on vector fields")
    require_zero_mean(u.coeffs, "vector field")
    return SpectralField(u.grid, op.apply_coeffs(u.grid, u.coeffs))
