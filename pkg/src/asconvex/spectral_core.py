"""Torus grid, spectral fields, calculus, Littlewood-Paley blocks and Hölder norms.

Fields on T^2 = [0, 2pi)^2 are stored as half-plane (rfft) Fourier coefficients
normalised so that f(x) = sum_k c(k) exp(i k.x).  Axis -2 carries k1, axis -1
carries k2 >= 0.  Vector fields have a leading axis of length 2, tensors a
leading (2, 2) block with index order (row i, column j).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from math import comb
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, PreconditionError, ResolutionError

RANK_SHAPES = {"scalar": (), "vector": (2,), "tensor": (2, 2)}
MEAN_TOL = 1e-12

# Smoothness order of the frozen smoothstep profile (C^SMOOTH_ORDER at the joins).
SMOOTH_ORDER = 5


def _smoothstep_lower(x, order: int):
    out = np.zeros_like(x)
    for j in range(order + 1):
        out += comb(order + j, j) * comb(2 * order + 1, order - j) * (-x) ** j
    return out * x ** (order + 1)


def smoothstep(x, order: int = SMOOTH_ORDER):
    """Generalised smoothstep: 0 for x <= 0, 1 for x >= 1, C^order in between.

    The upper half uses S(x) = 1 - S(1 - x) so values near 1 keep full precision.
    """
    x = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
    lower = x <= 0.5
    return np.where(lower, _smoothstep_lower(np.where(lower, x, 0.0), order), 1.0 - _smoothstep_lower(np.where(lower, 0.0, 1.0 - x), order))


def smoothstep_derivative(x, order: int = SMOOTH_ORDER):
    """Derivative of :func:`smoothstep` with respect to x."""
    x = np.asarray(x, dtype=float)
    inside = (x > 0.0) & (x < 1.0)
    xc = np.clip(x, 0.0, 1.0)
    # S'(x) is proportional to x^order (1-x)^order with unit mass.
    norm = 1.0 / _beta_int(order)
    return np.where(inside, norm * xc**order * (1.0 - xc) ** order, 0.0)


def _beta_int(order: int) -> float:
    from math import factorial

    return factorial(order) ** 2 / factorial(2 * order + 1)


def lp_bump(r):
    """Radial Littlewood-Paley mother profile: 1 on r <= 1, 0 on r >= 3/2."""
    return 1.0 - smoothstep((np.asarray(r, dtype=float) - 1.0) * 2.0)


def mollifier_symbol(r):
    """Fourier profile of the spatial mollifier: 1 on r <= 1, 0 on r >= 2."""
    return 1.0 - smoothstep(np.asarray(r, dtype=float) - 1.0)


def _padded_size(K: int) -> int:
    m = 3 * K + 1
    return m + (m % 2)


@dataclass(frozen=True)
class TorusGrid:
    """Square periodic grid with n points per axis and a dealiasing box."""

    n: int
    dealias_fraction: Fraction = Fraction(2, 3)

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n % 2 or self.n < 16:
            raise ConfigurationError(f"grid size must be an even integer >= 16, got {self.n}")
        frac = Fraction(self.dealias_fraction).limit_denominator(1000)
        if not (0 < frac <= 1):
            raise ConfigurationError("dealias_fraction must lie in (0, 1]")
        object.__setattr__(self, "dealias_fraction", frac)

    @cached_property
    def K(self) -> int:
        """Largest retained |k_i|."""
        return int(Fraction(self.n, 2) * self.dealias_fraction)

    @cached_property
    def spectral_shape(self) -> tuple[int, int]:
        return (self.n, self.n // 2 + 1)

    @cached_property
    def k1(self) -> np.ndarray:
        return np.rint(np.fft.fftfreq(self.n) * self.n)[:, None] * np.ones((1, self.n // 2 + 1))

    @cached_property
    def k2(self) -> np.ndarray:
        return np.ones((self.n, 1)) * np.rint(np.fft.rfftfreq(self.n) * self.n)[None, :]

    @cached_property
    def mask(self) -> np.ndarray:
        return (np.abs(self.k1) <= self.K) & (np.abs(self.k2) <= self.K)

    @cached_property
    def ksq(self) -> np.ndarray:
        return self.k1**2 + self.k2**2

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.ksq)

    @cached_property
    def dk(self) -> tuple[np.ndarray, np.ndarray]:
        """Derivative wavenumbers with the Nyquist mode zeroed."""
        nyq = self.n // 2
        d1 = np.where(np.abs(self.k1) == nyq, 0.0, self.k1) * self.mask
        d2 = np.where(np.abs(self.k2) == nyq, 0.0, self.k2) * self.mask
        return d1, d2

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each half-plane coefficient in the full spectrum."""
        w = np.full(self.spectral_shape, 2.0)
        w[:, 0] = 1.0
        w[:, -1] = 1.0
        return w

    @cached_property
    def padded_n(self) -> int:
        return max(self.n, _padded_size(self.K))

    @cached_property
    def x(self) -> tuple[np.ndarray, np.ndarray]:
        s = 2 * np.pi * np.arange(self.n) / self.n
        return np.meshgrid(s, s, indexing="ij")

    @cached_property
    def inv_ksq(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            out = np.where(self.ksq > 0, 1.0 / np.where(self.ksq > 0, self.ksq, 1.0), 0.0)
        return out * self.mask

    # --- transforms -----------------------------------------------------
    def forward(self, f: np.ndarray) -> np.ndarray:
        """Physical samples -> masked coefficients (leading axes preserved)."""
        return np.fft.rfft2(f) * (self.mask / self.n**2)

    def backward(self, c: np.ndarray, n_out: int | None = None) -> np.ndarray:
        """Coefficients -> physical samples on an n_out grid (default n)."""
        n_out = n_out or self.n
        if n_out == self.n:
            return np.fft.irfft2(c, s=(self.n, self.n)) * self.n**2
        return np.fft.irfft2(self.embed(c, n_out), s=(n_out, n_out)) * n_out**2

    def embed(self, c: np.ndarray, m: int) -> np.ndarray:
        """Copy retained coefficients into an (m, m//2+1) layout, m >= 2K+1.

        On grids that keep the Nyquist mode its aliased coefficient is split
        evenly between +n/2 and -n/2.
        """
        K = self.K
        if m < 2 * K + 1:
            raise ResolutionError("target grid too small to hold retained modes")
        out = np.zeros(c.shape[:-2] + (m, m // 2 + 1), dtype=complex)
        src = c
        if K == self.n // 2:
            src = c.copy()
            src[..., K, :] *= 0.5
            src[..., :, K] *= 0.5
        out[..., : K + 1, : K + 1] = src[..., : K + 1, : K + 1]
        out[..., m - K :, : K + 1] = src[..., self.n - K :, : K + 1]
        if K == self.n // 2:
            out[..., m - K, : K + 1] = src[..., K, : K + 1]
        return out

    def restrict(self, c: np.ndarray, m: int) -> np.ndarray:
        """Inverse of :meth:`embed`: pick retained modes from an m-grid layout."""
        K = self.K
        out = np.zeros(c.shape[:-2] + self.spectral_shape, dtype=complex)
        if K == self.n // 2:
            # Fold the +-n/2 pairs onto the aliased Nyquist coefficient.
            full = np.fft.fft(np.fft.irfft(c, n=m, axis=-1), axis=-1)
            kk = np.rint(np.fft.fftfreq(m) * m).astype(int)
            folded = np.zeros(c.shape[:-2] + (self.n, self.n), dtype=complex)
            sel = np.abs(kk) <= K
            rows, cols = np.nonzero(sel[:, None] & sel[None, :])
            np.add.at(
                folded,
                (..., kk[rows] % self.n, kk[cols] % self.n),
                full[..., rows, cols],
            )
            return folded[..., :, : self.n // 2 + 1]
        out[..., : K + 1, : K + 1] = c[..., : K + 1, : K + 1]
        out[..., self.n - K :, : K + 1] = c[..., m - K :, : K + 1]
        return out

    def to_padded(self, c: np.ndarray) -> np.ndarray:
        """Physical samples on the dealiasing grid."""
        return self.backward(c, self.padded_n)

    def from_padded(self, f: np.ndarray) -> np.ndarray:
        m = self.padded_n
        c = np.fft.rfft2(f) / m**2
        if m == self.n:
            return c * self.mask
        return self.restrict(c, m)

    def product(self, *coeffs: np.ndarray) -> np.ndarray:
        """Dealiased pointwise product of band-limited factors (exact for two)."""
        phys = self.to_padded(coeffs[0])
        for c in coeffs[1:]:
            phys = phys * self.to_padded(c)
        return self.from_padded(phys)

    def mean(self, c: np.ndarray) -> np.ndarray:
        return c[..., 0, 0].real

    def full_spectrum(self, c: np.ndarray) -> np.ndarray:
        """Full (n, n) spectrum with numpy fft ordering on both axes."""
        n = self.n
        full = np.zeros(c.shape[:-2] + (n, n), dtype=complex)
        full[..., :, : n // 2 + 1] = c
        idx1 = (-np.arange(n)) % n
        for j2 in range(1, n // 2):
            full[..., :, n - j2] = np.conj(c[..., idx1, j2])
        return full

    def half_spectrum(self, full: np.ndarray) -> np.ndarray:
        return full[..., :, : self.n // 2 + 1] * self.mask

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        """Spatial average of the product of two real fields (Parseval)."""
        return float(np.sum(self.weights * (a * np.conj(b)).real))


def make_grid(n: int, dealias_fraction=Fraction(2, 3)) -> TorusGrid:
    """Build a :class:`TorusGrid`; odd or small ``n`` raises ConfigurationError."""
    return TorusGrid(n, Fraction(dealias_fraction).limit_denominator(1000))


def _rank_of(shape: tuple[int, ...]) -> str:
    for name, s in RANK_SHAPES.items():
        if shape == s:
            return name
    raise ConfigurationError(f"unsupported component shape {shape}")


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real field on the torus stored by its retained Fourier coefficients."""

    grid: TorusGrid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.coeffs.shape[-2:] != self.grid.spectral_shape:
            raise ConfigurationError("coefficient array does not match grid")
        _rank_of(self.coeffs.shape[:-2])

    @property
    def rank(self) -> str:
        return _rank_of(self.coeffs.shape[:-2])

    @property
    def zero_mean(self) -> bool:
        return bool(np.all(self.coeffs[..., 0, 0] == 0))

    @classmethod
    def from_physical(cls, grid: TorusGrid, values) -> "SpectralField":
        return cls(grid, grid.forward(np.asarray(values, dtype=float)))

    @classmethod
    def from_function(cls, grid: TorusGrid, fn) -> "SpectralField":
        x1, x2 = grid.x
        return cls.from_physical(grid, fn(x1, x2))

    @classmethod
    def zeros(cls, grid: TorusGrid, rank: str = "scalar") -> "SpectralField":
        return cls(grid, np.zeros(RANK_SHAPES[rank] + grid.spectral_shape, dtype=complex))

    def physical(self, oversample: int = 1) -> np.ndarray:
        return self.grid.backward(self.coeffs, self.grid.n * oversample)

    def full_coeffs(self) -> np.ndarray:
        return self.grid.full_spectrum(self.coeffs)

    def hermitian_defect(self) -> float:
        full = self.full_coeffs()
        n = self.grid.n
        idx = (-np.arange(n)) % n
        mirror = np.conj(full[..., idx, :][..., :, idx])
        return float(np.max(np.abs(full - mirror), initial=0.0))

    def without_mean(self) -> "SpectralField":
        c = self.coeffs.copy()
        c[..., 0, 0] = 0.0
        return SpectralField(self.grid, c)

    def sup_norm(self, oversample: int = 1) -> float:
        return float(np.max(np.abs(self.physical(oversample)), initial=0.0))

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.grid, -self.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def times(self, other: "SpectralField") -> "SpectralField":
        """Dealiased product; a scalar factor broadcasts over components."""
        a, b = self.coeffs, other.coeffs
        if a.ndim < b.ndim:
            a = a.reshape((1,) * (b.ndim - a.ndim) + a.shape)
        elif b.ndim < a.ndim:
            b = b.reshape((1,) * (a.ndim - b.ndim) + b.shape)
        return SpectralField(self.grid, self.grid.product(a, b))


def require_zero_mean(c: np.ndarray, what: str = "input") -> None:
    scale = max(1.0, float(np.max(np.abs(c), initial=0.0)))
    if np.any(np.abs(c[..., 0, 0]) > MEAN_TOL * scale):
        raise PreconditionError(f"{what} must have zero mean")


# --- raw-array calculus (used internally on coefficient arrays) --------------

def d(grid: TorusGrid, c: np.ndarray, j: int) -> np.ndarray:
    """Partial derivative along axis j (0 -> x1, 1 -> x2)."""
    return 1j * grid.dk[j] * c


def grad(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    """Gradient with a new last component axis: (grad v)_{ij} = d_j v_i."""
    return np.stack([d(grid, c, 0), d(grid, c, 1)], axis=-3)


def perp_grad(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    """(-d_2, d_1) applied as a new last component axis."""
    return np.stack([-d(grid, c, 1), d(grid, c, 0)], axis=-3)


def div(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    """Contract the last component axis with the gradient."""
    return d(grid, c[..., 0, :, :], 0) + d(grid, c[..., 1, :, :], 1)


def perp_div(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    """grad^perp . v = -d_2 v_1 + d_1 v_2 on the last component axis."""
    return -d(grid, c[..., 0, :, :], 1) + d(grid, c[..., 1, :, :], 0)


def laplacian(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    return -grid.ksq * grid.mask * c


def inv_laplacian(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    return -grid.inv_ksq * c


def fractional(grid: TorusGrid, c: np.ndarray, s: float) -> np.ndarray:
    """Lambda^s = |D|^s; the zero mode maps to zero."""
    with np.errstate(divide="ignore"):
        sym = np.where(grid.ksq > 0, np.where(grid.ksq > 0, grid.kabs, 1.0) ** s, 0.0)
    return sym * grid.mask * c


def perp(c: np.ndarray) -> np.ndarray:
    """Rotate a vector by +90 degrees: (a, b) -> (-b, a)."""
    return np.stack([-c[..., 1, :, :], c[..., 0, :, :]], axis=-3)


CALCULUS_OPS = ("grad", "perp_grad", "div", "laplacian", "inv_laplacian", "fractional", "perp_div")


def calculus(f: SpectralField, op: str, s: float | None = None) -> SpectralField:
    """Apply a differential or integral operator by its exact Fourier symbol."""
    g, c = f.grid, f.coeffs
    if op == "grad":
        if f.rank == "tensor":
            raise PreconditionError("grad of a tensor is not supported")
        out = grad(g, c)
    elif op == "perp_grad":
        if f.rank == "tensor":
            raise PreconditionError("perp_grad of a tensor is not supported")
        out = perp_grad(g, c)
    elif op == "div":
        if f.rank == "scalar":
            raise PreconditionError("div needs a vector or tensor")
        out = div(g, c)
    elif op == "perp_div":
        if f.rank != "vector":
            raise PreconditionError("perp_div needs a vector")
        out = perp_div(g, c)
    elif op == "laplacian":
        out = laplacian(g, c)
    elif op == "inv_laplacian":
        require_zero_mean(c)
        out = inv_laplacian(g, c)
    elif op == "fractional":
        if s is None:
            raise PreconditionError("fractional needs an exponent s")
        if s < 0:
            require_zero_mean(c)
        out = fractional(g, c, s)
    else:
        raise PreconditionError(f"unknown calculus op {op!r}")
    return SpectralField(g, out)


# --- Littlewood-Paley -------------------------------------------------------

def lp_symbol(grid: TorusGrid, j: int, kind: str = "block") -> np.ndarray:
    r = grid.kabs
    if kind == "low":
        return lp_bump(r / 2.0**j) * grid.mask
    if kind != "block":
        raise PreconditionError("kind must be 'block' or 'low'")
    if j < -1:
        raise PreconditionError("block index must be >= -1")
    if j == -1:
        return (grid.ksq == 0).astype(float)
    return (lp_bump(r / 2.0**j) - lp_bump(r / 2.0 ** (j - 1))) * grid.mask


def lp_project(f: SpectralField, j: int, kind: str = "block") -> SpectralField:
    """Littlewood-Paley block Delta_j (kind='block') or low-pass S_j (kind='low')."""
    return SpectralField(f.grid, lp_symbol(f.grid, j, kind) * f.coeffs)


def lp_max_block(grid: TorusGrid) -> int:
    """Index J with Delta_j = 0 on retained modes for all j > J."""
    rmax = float(np.sqrt(2.0) * grid.K)
    return max(0, int(np.ceil(np.log2(rmax))) + 1)


@dataclass(frozen=True)
class Annuli:
    """Nested radii for the band projections (in units of lambda).

    A = [inner, outer]; each successive annulus widens both edges by ``widen``.
    chi = 1 on A with support in A1; chi_tilde = 1 on A2 with support in A3.
    """

    inner: float = 0.8
    outer: float = 2.0
    widen: float = 1.1

    def __post_init__(self):
        if not (0 < self.inner < self.outer) or self.widen <= 1:
            raise ConfigurationError("annuli need 0 < inner < outer and widen > 1")

    def radii(self, level: int) -> tuple[float, float]:
        w = self.widen**level
        return self.inner / w, self.outer * w

    def profile(self, r, tilde: bool = False):
        r = np.asarray(r, dtype=float)
        lo_one, hi_one = self.radii(2 if tilde else 0)
        lo_sup, hi_sup = self.radii(3 if tilde else 1)
        rise = smoothstep((r - lo_sup) / (lo_one - lo_sup))
        fall = 1.0 - smoothstep((r - hi_one) / (hi_sup - hi_one))
        return rise * fall

    def profile_gradient(self, xi: np.ndarray, tilde: bool = False) -> np.ndarray:
        """Gradient of profile(|xi|) with respect to xi (last axis = components)."""
        r = np.linalg.norm(xi, axis=-1)
        lo_one, hi_one = self.radii(2 if tilde else 0)
        lo_sup, hi_sup = self.radii(3 if tilde else 1)
        a = (r - lo_sup) / (lo_one - lo_sup)
        b = (r - hi_one) / (hi_sup - hi_one)
        dr = smoothstep_derivative(a) / (lo_one - lo_sup) * (1.0 - smoothstep(b)) - smoothstep(
            a
        ) * smoothstep_derivative(b) / (hi_sup - hi_one)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r[..., None] > 0, xi / np.where(r > 0, r, 1.0)[..., None], 0.0)
        return dr[..., None] * unit


def band_symbol(grid: TorusGrid, lam: float, variant: str = "P", annuli: Annuli | None = None):
    annuli = annuli or Annuli()
    if variant not in ("P", "Ptilde"):
        raise PreconditionError("variant must be 'P' or 'Ptilde'")
    tilde = variant == "Ptilde"
    outer = annuli.radii(3 if tilde else 1)[1] * lam
    if outer >= grid.K + 1:
        raise ResolutionError(
            f"annulus radius {outer:.2f} exceeds retained modes |k_i| <= {grid.K}"
        )
    return annuli.profile(grid.kabs / lam, tilde=tilde) * grid.mask


def band_project(f: SpectralField, lam: float, variant: str = "P", annuli: Annuli | None = None):
    """Frequency localisation to the lambda-annulus (P) or its widened companion (Ptilde)."""
    return SpectralField(f.grid, band_symbol(f.grid, lam, variant, annuli) * f.coeffs)


# --- mollification ------------------------------------------------------------

def mollify_symbol(grid: TorusGrid, ell: float, companion: bool = False) -> np.ndarray:
    """zeta_hat(k ell); the companion equals 1 on the support of zeta_hat."""
    if ell <= 0:
        raise PreconditionError("mollification scale must be positive")
    r = grid.kabs * ell
    if companion:
        return mollifier_symbol(r / 2.0) * grid.mask
    return mollifier_symbol(r) * grid.mask


def mollify(f: SpectralField, ell: float, companion: bool = False) -> SpectralField:
    return SpectralField(f.grid, mollify_symbol(f.grid, ell, companion) * f.coeffs)


# --- Hölder norms ------------------------------------------------------------

def _multi_index_derivatives(grid: TorusGrid, c: np.ndarray, order: int):
    for a in range(order + 1):
        sym = (1j * grid.dk[0]) ** a * (1j * grid.dk[1]) ** (order - a)
        yield sym * c


def holder_norm(f: SpectralField, s: float) -> float:
    """Besov-type estimate of the C^s norm: max_|gamma|=N sup_j 2^{j alpha}|Delta_j d^gamma f|."""
    if s < 0:
        raise PreconditionError("Hölder exponent must be non-negative")
    grid = f.grid
    order = int(np.floor(s + 1e-12))
    alpha = s - order
    c = f.coeffs
    best = 0.0
    if alpha == 0.0:
        for dc in _multi_index_derivatives(grid, c, order):
            best = max(best, float(np.max(np.abs(grid.backward(dc, 2 * grid.n)), initial=0.0)))
        return best
    J = lp_max_block(grid)
    blocks = [lp_symbol(grid, j) for j in range(-1, J + 1)]
    for dc in _multi_index_derivatives(grid, c, order):
        for j, sym in zip(range(-1, J + 1), blocks):
            val = float(np.max(np.abs(grid.backward(sym * dc, 2 * grid.n)), initial=0.0))
            best = max(best, 2.0 ** (j * alpha) * val)
    return best


# --- off-grid evaluation --------------------------------------------------------

def interpolate(grid: TorusGrid, c: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Trigonometric interpolation of coefficient arrays at arbitrary points.

    ``points`` has shape (..., 2); the result has shape c.shape[:-2] + points.shape[:-1].
    """
    pts = np.asarray(points, dtype=float)
    flat = pts.reshape(-1, 2)
    K = grid.K
    rows = np.arange(-K, K + 1)
    cols = np.arange(0, K + 1)
    sub = c[..., rows % grid.n, :][..., :, cols]
    w = np.where(cols == 0, 1.0, 2.0)
    if 2 * K == grid.n:
        w = np.where(cols == grid.n // 2, 1.0, w)
    e1 = np.exp(1j * np.outer(flat[:, 0], rows))
    e2 = np.exp(1j * np.outer(flat[:, 1], cols)) * w
    lead = c.shape[:-2]
    sub = sub.reshape((-1,) + sub.shape[-2:])
    vals = np.einsum("cmj,mj->cm", np.matmul(e1[None], sub), e2).real
    return vals.reshape(lead + pts.shape[:-1])


# --- snapshots -----------------------------------------------------------------

def write_snapshot(path, f: SpectralField, time: float = 0.0, description: str = "") -> None:
    """Text header of key:value lines, then little-endian float64 samples."""
    data = f.physical()
    comps = int(np.prod(RANK_SHAPES[f.rank], dtype=int)) if f.rank != "scalar" else 1
    desc = description.replace("\n", " ")
    header = (
        f"n:{f.grid.n}\nrank:{f.rank}\ncomponents:{comps}\ntime:{time!r}\n"
        f"dealias:{f.grid.dealias_fraction}\ndescription:{desc}\n\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def read_snapshot(path) -> tuple[SpectralField, dict]:
    raw = Path(path).read_bytes()
    head, _, body = raw.partition(b"\n\n")
    meta = dict(line.split(":", 1) for line in head.decode("ascii").splitlines())
    n = int(meta["n"])
    grid = make_grid(n, Fraction(meta.get("dealias", "2/3")))
    shape = RANK_SHAPES[meta["rank"]] + (n, n)
    values = np.frombuffer(body, dtype="<f8").reshape(shape)
    meta["time"] = float(meta["time"])
    return SpectralField.from_physical(grid, values), meta


# --- snapshots -------------------------------------------------------------------

def save_field(path, f: SpectralField) -> None:
    """Store grid size, dealias fraction and retained coefficients in an .npz file."""
    frac = f.grid.dealias_fraction
    np.savez(path, n=f.grid.n, dealias=np.array([frac.numerator, frac.denominator]), coeffs=f.coeffs)


def load_field(path) -> SpectralField:
    with np.load(path) as data:
        grid = make_grid(int(data["n"]), Fraction(int(data["dealias"][0]), int(data["dealias"][1])))
        return SpectralField(grid, data["coeffs"])
