"""Direction frames, the linear map L_p and stress decomposition into frame tensors."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DecompositionError,
    ExceptionalMultiplierError,
    NearSingularError,
    PreconditionError,
)
from .multiplier import Classification, MultiplierSpec, abc_vectors, frame_tensor, integer_directions

CONDITION_LIMIT = 1e8
COMPONENT_RANGE = (1.0, 4.0)


def tf_coords(R: np.ndarray) -> np.ndarray:
    """(e, f, g) coordinates of the trace-free part of R[..., 2, 2]."""
    e = 0.5 * (R[..., 0, 0] - R[..., 1, 1])
    return np.stack([e, R[..., 0, 1], R[..., 1, 0]], axis=-1)


def tf_matrix(v: np.ndarray) -> np.ndarray:
    e, f, g = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([np.stack([e, f], -1), np.stack([g, -e], -1)], -2)


@dataclass(frozen=True, eq=False)
class DirectionFrame:
    """Two or three integer directions whose frame tensors span A(m)."""

    spec: MultiplierSpec
    directions: tuple
    tensors: np.ndarray = field(repr=False)
    D: np.ndarray = field(repr=False)
    conditioning: float = 1.0
    normal: tuple | None = None

    @property
    def size(self) -> int:
        return len(self.directions)

    @property
    def F(self) -> list[tuple[int, int]]:
        """Signed directions, ordered (+xi1, -xi1, +xi2, -xi2, ...)."""
        out = []
        for d in self.directions:
            out += [tuple(d), (-d[0], -d[1])]
        return out

    @property
    def xi0(self) -> np.ndarray:
        return np.array(self.directions, dtype=float)

    @property
    def max_direction(self) -> float:
        return float(np.max(np.linalg.norm(self.xi0, axis=1)))


def _tensor_rank_ok(tensors: np.ndarray, need: int) -> float:
    mat = tf_coords(tensors)
    mat = mat / np.linalg.norm(mat, axis=1, keepdims=True)
    s = np.linalg.svd(mat, compute_uv=False)
    if len(s) < need or s[need - 1] < 1e-3:
        return 0.0
    return float(s[need - 1] / s[0])


def choose_frame(spec: MultiplierSpec, classification: Classification, search_radius: int = 3) -> DirectionFrame:
    """Smallest-norm integer directions whose frame tensors are independent."""
    if classification.kind == "Exceptional":
        raise ExceptionalMultiplierError("no frame for an exceptional multiplier")
    need = 2 if classification.kind == "TwoIndependent" else 3
    dirs = [d for d in integer_directions(search_radius) if np.linalg.norm(abc_vectors(spec, np.array(d, float))) > 0]
    for combo in itertools.combinations(dirs, need):
        tensors = frame_tensor(spec, np.array(combo, dtype=float))
        quality = _tensor_rank_ok(tensors, need)
        if quality > 0:
            return DirectionFrame(
                spec,
                tuple(tuple(int(x) for x in d) for d in combo),
                tensors,
                tensors.sum(axis=0),
                quality,
                classification.normal,
            )
    raise PreconditionError(f"no valid frame within search radius {search_radius}")


# --- the linear map ---------------------------------------------------------------

def _columns(frame: DirectionFrame, p: np.ndarray) -> np.ndarray:
    """Matrix (..., 3, k) whose column i is 1/2 p_i (tf) grad mbar(p_i) in (e, f, g)."""
    p = np.asarray(p, dtype=float)
    if p.shape[-2:] != (frame.size, 2):
        raise PreconditionError(f"p must have trailing shape ({frame.size}, 2)")
    if np.any(np.linalg.norm(p, axis=-1) == 0):
        raise PreconditionError("frame parameters must be nonzero")
    return 0.5 * np.swapaxes(tf_coords(frame_tensor(frame.spec, p)), -1, -2)


def linear_map_apply(frame: DirectionFrame, p, x) -> np.ndarray:
    """L_p(x) = 1/2 sum_i x_i p_i (tf) grad mbar(p_i)."""
    cols = _columns(frame, p)
    return tf_matrix(np.einsum("...ak,...k->...a", cols, np.asarray(x, dtype=float)))


def linear_map_invert(frame: DirectionFrame, p, R) -> np.ndarray:
    """Solve L_p(x) = R for x; normal equations when the frame has two slots."""
    cols = _columns(frame, p)
    r = tf_coords(np.asarray(R, dtype=float))
    cols, r = np.broadcast_arrays(cols, r[..., :, None])
    r = r[..., 0]
    gram = np.einsum("...ak,...al->...kl", cols, cols)
    rhs = np.einsum("...ak,...a->...k", cols, r)
    if gram.shape[-1] == 2:
        # closed form for the common two-slot case
        a, b, d = gram[..., 0, 0], gram[..., 0, 1], gram[..., 1, 1]
        det = a * d - b * b
        half = 0.5 * (a + d)
        disc = np.sqrt(np.maximum(half * half - det, 0.0))
        cond = (half + disc) / np.maximum(np.abs(half - disc), 1e-300)
    else:
        ev = np.abs(np.linalg.eigvalsh(gram))
        cond = ev.max(axis=-1) / np.maximum(ev.min(axis=-1), 1e-300)
    if np.any(cond > CONDITION_LIMIT):
        raise NearSingularError(f"linear map is near singular (condition {float(np.max(cond)):.3g})")
    if gram.shape[-1] == 2:
        x0 = (d * rhs[..., 0] - b * rhs[..., 1]) / det
        x1 = (a * rhs[..., 1] - b * rhs[..., 0]) / det
        return np.stack([x0, x1], axis=-1)
    return np.linalg.solve(gram, rhs[..., None])[..., 0]


def subspace_basis(frame: DirectionFrame) -> np.ndarray:
    """Orthonormal basis (rows, (e, f, g) coordinates) of the span of the frame tensors."""
    mat = tf_coords(frame.tensors)
    u, s, vt = np.linalg.svd(mat, full_matrices=False)
    return vt[: frame.size]


# --- Monte-Carlo calibration of the perturbation ball -------------------------------

@dataclass(frozen=True)
class CalibratedBall:
    c1: float  # radius for |p_i - xi_i|
    c2: float  # radius for |R - D| (Frobenius norm)
    safety: float
    draws: int
    worst: tuple[float, float]


def sample_ball(frame: DirectionFrame, c1: float, c2: float, count: int, rng: np.random.Generator):
    """Uniform draws p in the c1-ball around the frame and R in the c2-ball around D in A(m)."""
    k = frame.size
    ang = rng.uniform(0, 2 * np.pi, size=(count, k))
    rad = c1 * np.sqrt(rng.uniform(0, 1, size=(count, k)))
    p = frame.xi0[None] + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)
    basis = subspace_basis(frame)
    dirs = rng.normal(size=(count, k))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radius = c2 * rng.uniform(0, 1, size=(count, 1)) ** (1.0 / k)
    # Frobenius norm of tf_matrix(v) is sqrt(2e^2 + f^2 + g^2); rescale accordingly.
    v = (radius * dirs) @ basis
    fro = np.linalg.norm(tf_matrix(v).reshape(count, 4), axis=1)
    v *= (np.linalg.norm(radius * dirs, axis=1) / np.maximum(fro, 1e-300))[:, None]
    R = frame.D[None] + tf_matrix(v)
    return p, R


def calibrate_ball(frame: DirectionFrame, draws: int = 20000, safety: float = 0.5, seed: int = 0) -> CalibratedBall:
    """Largest scale s with all sampled components in (1, 4); radii frozen at safety * s.

    Radii are c1 = s * min|xi_i| and c2 = s * |D|.
    """
    scale_p = float(np.min(np.linalg.norm(frame.xi0, axis=1)))
    scale_r = float(np.linalg.norm(frame.D))

    def ok(s: float):
        local = np.random.default_rng(seed + 1)
        p, R = sample_ball(frame, s * scale_p, s * scale_r, draws, local)
        try:
            x = linear_map_invert(frame, p, R)
        except NearSingularError:
            return False, None
        return bool(np.all((x > COMPONENT_RANGE[0]) & (x < COMPONENT_RANGE[1]))), x

    lo, hi = 0.0, 0.05
    while ok(hi)[0] and hi < 8:
        lo, hi = hi, 2 * hi
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        if ok(mid)[0]:
            lo = mid
        else:
            hi = mid
    s = safety * lo
    _, x = ok(s)
    return CalibratedBall(s * scale_p, s * scale_r, safety, draws, (float(x.min()), float(x.max())))


def in_ball(frame: DirectionFrame, ball: CalibratedBall, p: np.ndarray, R: np.ndarray) -> np.ndarray:
    dp = np.max(np.linalg.norm(p - frame.xi0, axis=-1), axis=-1)
    dr = np.linalg.norm((R - frame.D).reshape(R.shape[:-2] + (4,)), axis=-1)
    return (dp <= ball.c1) & (dr <= ball.c2)


# --- stress decomposition --------------------------------------------------------------

@dataclass
class AmplitudeSet:
    """Pointwise amplitudes for one time cutoff; arrays live on the physical grid."""

    frame: DirectionFrame
    gamma2: np.ndarray  # (k, n, n), shared by +-xi
    a2: np.ndarray  # (k, n, n) squared amplitudes a^2 = delta lam^2 chi^2 gamma^2
    p: np.ndarray  # (k, n, n, 2): grad(Phi)^T xi
    tensors: np.ndarray  # (k, 2, 2, n, n): A_xi for +xi (equal for -xi)
    identity_residual: float
    in_calibrated_ball: bool | None = None

    @property
    def a(self) -> np.ndarray:
        return np.sqrt(self.a2)


def decompose_stress(
    frame: DirectionFrame,
    R: np.ndarray,
    grad_phi: np.ndarray,
    delta_n: float,
    lam: float,
    chi: float = 1.0,
    ball: CalibratedBall | None = None,
    strict: bool = False,
) -> AmplitudeSet:
    """Decompose chi^2 (delta lam^{1+delta} D - R) into the tensors A_xi.

    ``R`` has shape (2, 2, n, n); ``grad_phi`` (2, 2, n, n) with entry [i, j] = d_j Phi_i.
    The returned tensors satisfy sum_{xi in F} A_xi = chi^2 (delta lam^{1+d} D - R)
    pointwise for R in A(m).  Squared amplitudes must be positive; ``strict``
    additionally enforces the calibrated ball where all four components lie in (1, 4).
    """
    dmul = frame.spec.delta
    scale = delta_n * lam ** (1.0 + dmul)
    target = np.moveaxis(frame.D[:, :, None, None] - R / scale, (0, 1), (-2, -1))
    gphi = np.moveaxis(grad_phi, (0, 1), (-2, -1))
    p = np.einsum("...ij,ki->...kj", gphi, frame.xi0)
    inside = None
    if ball is not None:
        inside = bool(np.all(in_ball(frame, ball, p, target)))
        if strict and not inside:
            raise PreconditionError("stress or flow outside the calibrated perturbation ball")
    gamma2 = linear_map_invert(frame, p, target)
    if np.any(gamma2 <= 0):
        raise DecompositionError(f"non-positive squared amplitude (min {float(gamma2.min()):.3g})")
    chi2 = float(chi) ** 2
    a2 = delta_n * lam**2 * chi2 * gamma2
    ft = frame_tensor(frame.spec, p)
    tensors = 0.25 * lam ** (dmul - 1.0) * a2[..., None, None] * ft
    total = 2.0 * tensors.sum(axis=-3)
    expected = chi2 * scale * target
    resid = tf_coords(total - expected)
    denom = max(float(np.max(np.abs(tf_coords(expected)))), 1e-300)
    gamma2 = np.moveaxis(gamma2, -1, 0)
    return AmplitudeSet(
        frame,
        gamma2,
        np.moveaxis(a2, -1, 0),
        np.moveaxis(p, -2, 0),
        np.moveaxis(tensors, (-3, -2, -1), (0, 1, 2)),
        float(np.max(np.abs(resid)) / denom),
        inside,
    )
