"""Backward flows, Lagrangian trajectories, transport solves and temporal profiles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from .errors import PreconditionError, StabilityError
from .spectral_core import (
    SMOOTH_ORDER,
    SpectralField,
    TorusGrid,
    grad,
    interpolate,
    smoothstep,
    smoothstep_derivative,
)

VelocityFn = Callable[[float], np.ndarray]


def as_velocity(u) -> VelocityFn:
    """Accept a steady SpectralField, a coefficient array or a callable t -> coeffs."""
    if isinstance(u, SpectralField):
        c = u.coeffs
        return lambda t: c
    if callable(u):
        return u
    c = np.asarray(u)
    return lambda t: c


def advect(grid: TorusGrid, u: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Dealiased u . grad c for coefficient arrays (c scalar or with leading axes)."""
    g = grad(grid, c)
    return grid.product(u[0], g[..., 0, :, :]) + grid.product(u[1], g[..., 1, :, :])


def c1_norm(grid: TorusGrid, u: np.ndarray) -> float:
    """sup |grad u| over components (the [u]_1 seminorm)."""
    return float(np.max(np.abs(grid.backward(grad(grid, u))), initial=0.0))


def _rk4_step(rhs, t, y, dt):
    k1 = rhs(t, y)
    k2 = rhs(t + dt / 2, y + dt / 2 * k1)
    k3 = rhs(t + dt / 2, y + dt / 2 * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4), k1


def integrate(rhs, y0, t0: float, t1: float, dt: float):
    """RK4 from t0 to t1 (either direction) with steps of at most |dt|.

    Returns times, states and state derivatives at every node.
    """
    if t1 == t0:
        return np.array([t0]), [y0], [rhs(t0, y0)]
    steps = max(1, int(np.ceil(abs(t1 - t0) / abs(dt) - 1e-12)))
    h = (t1 - t0) / steps
    times, states, rates = [t0], [y0], []
    y = y0
    for i in range(steps):
        t = t0 + i * h
        y, k1 = _rk4_step(rhs, t, y, h)
        rates.append(k1)
        times.append(t0 + (i + 1) * h)
        states.append(y)
    rates.append(rhs(times[-1], y))
    return np.array(times), states, rates


def hermite(t, ta, tb, ya, yb, da, db):
    """Cubic Hermite interpolation between (ta, ya, da) and (tb, yb, db)."""
    h = tb - ta
    s = (t - ta) / h
    h00 = 2 * s**3 - 3 * s**2 + 1
    h10 = s**3 - 2 * s**2 + s
    h01 = -2 * s**3 + 3 * s**2
    h11 = s**3 - s**2
    return h00 * ya + h10 * h * da + h01 * yb + h11 * h * db


@dataclass
class TimeSeries:
    """Node values and time derivatives of an ODE solution; Hermite in between."""

    times: np.ndarray
    values: list
    rates: list

    def __post_init__(self):
        order = np.argsort(self.times)
        self.times = np.asarray(self.times)[order]
        self.values = [self.values[i] for i in order]
        self.rates = [self.rates[i] for i in order]

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])

    def __call__(self, t: float):
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise PreconditionError(f"time {t} outside the solved window {self.span}")
        i = int(np.clip(np.searchsorted(ts, t) - 1, 0, len(ts) - 2)) if len(ts) > 1 else 0
        if len(ts) == 1:
            return self.values[0]
        return hermite(t, ts[i], ts[i + 1], self.values[i], self.values[i + 1], self.rates[i], self.rates[i + 1])

    def rate(self, t: float):
        ts = self.times
        i = int(np.clip(np.searchsorted(ts, t) - 1, 0, len(ts) - 2))
        h = ts[i + 1] - ts[i]
        s = (t - ts[i]) / h
        ya, yb, da, db = self.values[i], self.values[i + 1], self.rates[i], self.rates[i + 1]
        return (
            (6 * s**2 - 6 * s) / h * ya
            + (3 * s**2 - 4 * s + 1) * da
            + (-6 * s**2 + 6 * s) / h * yb
            + (3 * s**2 - 2 * s) * db
        )


def _merge(back: tuple, fwd: tuple) -> TimeSeries:
    tb, yb, rb = back
    tf, yf, rf = fwd
    times = np.concatenate([tb[1:][::-1], tf])
    values = yb[1:][::-1] + list(yf)
    rates = rb[1:][::-1] + list(rf)
    return TimeSeries(times, values, rates)


def default_dt(window_length: float, unorm: float, tau: float | None = None) -> float:
    tau = window_length if tau is None else tau
    return min(tau / 64, 0.1 / max(unorm, 1e-300)) if tau > 0 else 1.0


def _check_window(grid, velocity, s0, s1, samples: int = 5) -> float:
    norms = [c1_norm(grid, velocity(t)) for t in np.linspace(s0, s1, samples)]
    unorm = max(norms)
    if (s1 - s0) / 2 * unorm > 1.0 + 1e-12 and max(abs(s1 - s0), 0) > 0:
        raise StabilityError(
            f"window half-length {(s1 - s0) / 2:.3g} times [u]_1 = {unorm:.3g} exceeds 1"
        )
    return unorm


# --- flows -------------------------------------------------------------------------

@dataclass
class FlowMap:
    """Backward flow Phi(x, s) = x + D(x, s) with D periodic; Phi(., anchor) = x."""

    grid: TorusGrid
    anchor: float
    series: TimeSeries = field(repr=False)
    velocity_norm: float = 0.0

    def displacement(self, s: float) -> np.ndarray:
        return self.series(s)

    def grad(self, s: float) -> np.ndarray:
        """Physical (2, 2, n, n) array of grad Phi, entry [i, j] = d_j Phi_i."""
        g = self.grid.backward(grad(self.grid, self.displacement(s)))
        g[0, 0] += 1.0
        g[1, 1] += 1.0
        return g

    def grad_coeffs(self, s: float) -> np.ndarray:
        return grad(self.grid, self.displacement(s))

    def evaluate(self, s: float, points: np.ndarray) -> np.ndarray:
        """Phi at arbitrary points (..., 2)."""
        disp = interpolate(self.grid, self.displacement(s), points)
        return np.asarray(points) + np.moveaxis(disp, 0, -1)

    def deviation(self, s: float) -> float:
        """sup |grad Phi - Id|."""
        return float(np.max(np.abs(self.grid.backward(grad(self.grid, self.displacement(s))))))


def backward_flow(u, grid: TorusGrid, t_k: float, window: tuple[float, float], dt: float | None = None, tau: float | None = None) -> FlowMap:
    """Solve d_s Phi + u . grad Phi = 0, Phi(t_k) = x, on the window.

    Pseudo-spectral RK4 for the periodic displacement D = Phi - x, which obeys
    d_s D + u . grad D = -u.
    """
    s0, s1 = window
    if not (s0 <= t_k <= s1):
        raise PreconditionError("anchor must lie inside the window")
    velocity = as_velocity(u)
    unorm = _check_window(grid, velocity, s0, s1)
    half = max(t_k - s0, s1 - t_k)
    dt = dt or default_dt(half, unorm, tau)

    def rhs(s, D):
        v = velocity(s)
        return -v - advect(grid, v, D)

    zero = np.zeros((2,) + grid.spectral_shape, dtype=complex)
    back = integrate(rhs, zero, t_k, s0, dt)
    fwd = integrate(rhs, zero, t_k, s1, dt)
    return FlowMap(grid, t_k, _merge(back, fwd), unorm)


def lagrangian_trajectories(u, grid: TorusGrid, points: np.ndarray, t0: float, t1: float, dt: float) -> TimeSeries:
    """Integrate dX/ds = u(X, s) from X(t0) = points with RK4 and spectral interpolation."""
    velocity = as_velocity(u)
    pts = np.asarray(points, dtype=float)

    def rhs(s, X):
        return np.moveaxis(interpolate(grid, velocity(s), X), 0, -1)

    return TimeSeries(*integrate(rhs, pts, t0, t1, dt))


# --- transport -----------------------------------------------------------------------

def solve_transport(
    u,
    grid: TorusGrid,
    rhs: Callable[[float], np.ndarray] | None,
    init: np.ndarray,
    t_k: float,
    window: tuple[float, float],
    dt: float | None = None,
    tau: float | None = None,
) -> TimeSeries:
    """psi with d_t psi + u . grad psi = rhs and psi(t_k) = init, on the window.

    ``init`` and the values of ``rhs`` are coefficient arrays; the returned series
    stores coefficient arrays and their time derivatives.
    """
    s0, s1 = window
    if not (s0 <= t_k <= s1):
        raise PreconditionError("anchor must lie inside the window")
    velocity = as_velocity(u)
    unorm = _check_window(grid, velocity, s0, s1)
    half = max(t_k - s0, s1 - t_k)
    dt = dt or default_dt(half, unorm, tau)

    def f(t, psi):
        out = -advect(grid, velocity(t), psi)
        if rhs is not None:
            out = out + rhs(t)
        return out

    init = np.asarray(init, dtype=complex)
    return _merge(integrate(f, init, t_k, s0, dt), integrate(f, init, t_k, s1, dt))


# --- temporal partition -----------------------------------------------------------------

@dataclass(frozen=True)
class TemporalPartition:
    """Cutoffs chi_k, chi_tilde_k on the lattice t_k = k tau."""

    tau: float

    def __post_init__(self):
        if self.tau <= 0:
            raise PreconditionError("tau must be positive")

    def t(self, k: int) -> float:
        return k * self.tau

    def _y(self, k, t):
        return (np.asarray(t, dtype=float) - k * self.tau) / self.tau

    def chi(self, k: int, t):
        s = smoothstep(3.0 * np.abs(self._y(k, t)) - 1.0)
        return np.where(s >= 1.0, 0.0, np.cos(0.5 * np.pi * s))

    def dchi(self, k: int, t):
        y = self._y(k, t)
        a = np.abs(y)
        s = smoothstep(3.0 * a - 1.0)
        ds = smoothstep_derivative(3.0 * a - 1.0) * 3.0 * np.sign(y) / self.tau
        return -np.sin(0.5 * np.pi * s) * 0.5 * np.pi * ds

    def chi_tilde(self, k: int, t):
        y = np.abs(self._y(k, t))
        return 1.0 - smoothstep(3.0 * y - 2.0)

    def dchi_tilde(self, k: int, t):
        y = self._y(k, t)
        return -smoothstep_derivative(3.0 * np.abs(y) - 2.0) * 3.0 * np.sign(y) / self.tau

    def chi_support(self, k: int) -> tuple[float, float]:
        return (k - 2 / 3) * self.tau, (k + 2 / 3) * self.tau

    def chi_tilde_support(self, k: int) -> tuple[float, float]:
        return (k - 1) * self.tau, (k + 1) * self.tau

    def indices(self, t_range: tuple[float, float]) -> list[int]:
        """All k whose chi_k is not identically zero on t_range."""
        lo = int(np.floor(t_range[0] / self.tau - 2 / 3)) + 1
        hi = int(np.ceil(t_range[1] / self.tau + 2 / 3)) - 1
        return list(range(lo, hi + 1))

    def derivative_constants(self, orders=(1, 2, 3), samples: int = 20001) -> dict:
        """C_N = tau^N sup |d^N chi| and the same for chi_tilde (finite differences)."""
        t = np.linspace(-self.tau, self.tau, samples)
        h = t[1] - t[0]
        out = {}
        for name, fn in (("chi", self.chi), ("chi_tilde", self.chi_tilde)):
            vals = fn(0, t)
            for N in orders:
                deriv = np.diff(vals, n=N) / h**N
                out[(name, N)] = float(np.max(np.abs(deriv)) * self.tau**N)
        return out


def temporal_partition(tau: float, t_range: tuple[float, float] | None = None) -> TemporalPartition:
    return TemporalPartition(tau)


# --- oscillation profiles ------------------------------------------------------------------

def _smoothstep_poly(order: int = SMOOTH_ORDER) -> Polynomial:
    from math import comb

    coef = np.zeros(2 * order + 2)
    for j in range(order + 1):
        coef[order + 1 + j] = comb(order + j, j) * comb(2 * order + 1, order - j) * (-1) ** j
    return Polynomial(coef)


@dataclass
class OscillationProfiles:
    """1-periodic profiles g_{xi,p,n} in disjoint slots of the unit period."""

    F: list
    gamma: int
    slots: int
    amplitude: float
    _rise: Polynomial = field(repr=False)
    _rise_sq_int: Polynomial = field(repr=False)
    _fall_sq_int: Polynomial = field(repr=False)

    def slot(self, i: int, parity: int, n: int) -> int:
        """Slot index of (direction index i in F, parity 0=even/1=odd, n in 1..Gamma)."""
        if not (1 <= n <= self.gamma):
            raise PreconditionError("profile index n must lie in 1..Gamma")
        return (i * 2 + parity) * self.gamma + (n - 1)

    def _z(self, slot, y):
        return np.mod(np.asarray(y, dtype=float), 1.0) * self.slots - slot

    def _bump(self, z):
        z = np.asarray(z, dtype=float)
        left = (z >= 0) & (z < 0.5)
        right = (z >= 0.5) & (z <= 1.0)
        out = np.zeros_like(z)
        out[left] = self._rise(np.clip(2 * z[left], 0, 1))
        out[right] = self._rise(np.clip(2 - 2 * z[right], 0, 1))
        return out

    def _bump_d(self, z):
        z = np.asarray(z, dtype=float)
        dr = self._rise.deriv()
        left = (z >= 0) & (z < 0.5)
        right = (z >= 0.5) & (z <= 1.0)
        out = np.zeros_like(z)
        out[left] = 2 * dr(np.clip(2 * z[left], 0, 1))
        out[right] = -2 * dr(np.clip(2 - 2 * z[right], 0, 1))
        return out

    def g(self, i, parity, n, y):
        return self.amplitude * self._bump(self._z(self.slot(i, parity, n), y))

    def dg(self, i, parity, n, y):
        """Derivative with respect to y."""
        return self.amplitude * self.slots * self._bump_d(self._z(self.slot(i, parity, n), y))

    def f(self, i, parity, n, y):
        return 1.0 - self.g(i, parity, n, y) ** 2

    def f1(self, i, parity, n, y):
        """Primitive int_0^y f; 1-periodic because int_0^1 g^2 = 1."""
        y = np.asarray(y, dtype=float)
        slot = self.slot(i, parity, n)
        frac = np.mod(y, 1.0)
        z = np.clip(frac * self.slots - slot, 0.0, 1.0)
        # int_0^z bump^2 dz' in slot units, then scale to y units.
        zl = np.clip(z, 0, 0.5)
        part = self._rise_sq_int(2 * zl) / 2
        zr = np.clip(z, 0.5, 1.0)
        half = self._rise_sq_int(1.0) / 2
        part = part + np.where(z > 0.5, half - self._rise_sq_int(2 - 2 * zr) / 2, 0.0)
        g2_int = self.amplitude**2 * part / self.slots
        return frac - g2_int

    def max_g_squared(self) -> float:
        return self.amplitude**2


def oscillation_profiles(F, gamma: int) -> OscillationProfiles:
    """Tile the unit period into 2 Gamma |F| slots; slot order (xi, parity, n)."""
    F = list(F)
    if len(F) not in (4, 6):
        raise PreconditionError("|F| must be 4 or 6")
    if gamma < 1:
        raise PreconditionError("Gamma must be >= 1")
    rise = _smoothstep_poly()
    sq_int = (rise**2).integ()
    # int_0^1 bump^2 dz = 2 * (1/2) int_0^1 S(x)^2 dx
    mass = float(sq_int(1.0))
    slots = 2 * gamma * len(F)
    amplitude = float(np.sqrt(slots / mass))
    return OscillationProfiles(F, gamma, slots, amplitude, rise, sq_int, sq_int)
