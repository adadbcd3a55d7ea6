"""ARD squared-exponential kernel, input domains, and kernel Lipschitz constants.

The kernel is parameterized by an amplitude and one positive weight per input
dimension, the weights acting as inverse squared length scales:

    k(a, b) = amplitude * exp(-sum_i w_i * (a_i - b_i)^2)

All Gram-matrix construction, normalization boxes, and the analytic gradient
supremum used by the error-bound module live here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Relative jitter policy: fits add DEFAULT_JITTER_REL * amplitude to the Gram
# diagonal, escalating by x10 on Cholesky failure up to MAX_JITTER_REL * amplitude.
DEFAULT_JITTER_REL = 1e-8
MAX_JITTER_REL = 1e-2
JITTER_GROWTH = 10.0


def _as_float_array(x, name: str, ndim: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass
class DomainBox:
    """Axis-aligned box of admissible inputs, used for normalization and bounds.

    lower and upper are length-l vectors with lower < upper in every dimension.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = _as_float_array(self.lower, "lower", 1)
        self.upper = _as_float_array(self.upper, "upper", 1)
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper must have the same length")
        if self.lower.size == 0:
            raise ValueError("domain must have at least one dimension")
        if not np.all(self.lower < self.upper):
            raise ValueError("domain requires lower < upper in every dimension")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, atol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(
            np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol)
        )

    def normalize(self, x) -> np.ndarray:
        """Affinely map raw coordinates onto [0, 1]^l."""
        x = np.asarray(x, dtype=float)
        return (x - self.lower) / self.width

    def denormalize(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return self.lower + u * self.width

    def is_hypercube(self, atol: float = 1e-12) -> bool:
        w = self.width
        return bool(np.all(np.abs(w - w[0]) <= atol))

    @staticmethod
    def unit(dim: int) -> "DomainBox":
        return DomainBox(np.zeros(dim), np.ones(dim))


@dataclass
class KernelHyperparams:
    """Amplitude, per-dimension weights, and optional observation noise variance."""

    amplitude: float
    weights: np.ndarray
    noise: float = 0.0

    def __post_init__(self):
        self.amplitude = float(self.amplitude)
        self.weights = _as_float_array(self.weights, "weights", 1)
        self.noise = float(self.noise)
        if not (np.isfinite(self.amplitude) and self.amplitude > 0):
            raise ValueError("amplitude must be positive and finite")
        if self.weights.size == 0 or not np.all(self.weights > 0):
            raise ValueError("weights must be positive")
        if not (np.isfinite(self.noise) and self.noise >= 0):
            raise ValueError("noise variance must be non-negative and finite")

    @property
    def dim(self) -> int:
        return self.weights.size


def _weighted_sq_dists(params: KernelHyperparams, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum_i w_i (a_i - b_i)^2 for every row pair, shape (len(a), len(b))."""
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("mnl,l->mn", diff * diff, params.weights)


def ard_eval(params: KernelHyperparams, a, b) -> float:
    """Kernel value amplitude * exp(-sum_i w_i (a_i - b_i)^2) for two points."""
    a = _as_float_array(a, "a", 1)
    b = _as_float_array(b, "b", 1)
    if a.size != params.dim or b.size != params.dim:
        raise ValueError("point dimension does not match kernel weights")
    d2 = float(np.dot(params.weights, (a - b) ** 2))
    return params.amplitude * float(np.exp(-d2))


def gram(params: KernelHyperparams, points, jitter: float = 0.0) -> np.ndarray:
    """Gram matrix of the kernel over N points plus (jitter + noise) on the diagonal.

    jitter is an absolute value added to the diagonal; callers that want the
    relative policy pass jitter_rel * amplitude.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError(f"points must be a 2-d array, got shape {pts.shape}")
    if pts.shape[1] != params.dim:
        raise ValueError("point dimension does not match kernel weights")
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    K = params.amplitude * np.exp(-_weighted_sq_dists(params, pts, pts))
    # symmetrize away roundoff so Cholesky sees an exactly symmetric matrix
    K = 0.5 * (K + K.T)
    diag = jitter + params.noise
    if diag > 0:
        K[np.diag_indices_from(K)] += diag
    return K


def cross_vec(params: KernelHyperparams, query, points) -> np.ndarray:
    """Kernel values between query point(s) and N training points, noise-free.

    query of shape (l,) gives a length-N vector; shape (M, l) gives an (M, N)
    matrix. No jitter or noise enters the cross covariances.
    """
    pts = np.asarray(points, dtype=float)
    q = np.asarray(query, dtype=float)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    if q.shape[1] != params.dim or pts.shape[1] != params.dim:
        raise ValueError("point dimension does not match kernel weights")
    out = params.amplitude * np.exp(-_weighted_sq_dists(params, q, pts))
    return out[0] if single else out


def _grad_norm_sup(params: KernelHyperparams, max_offsets: np.ndarray) -> float:
    """Exact supremum of the kernel gradient norm over the given offset box.

    With v_i = w_i * delta_i^2 the squared-distance budget, the gradient norm is
    2 * amplitude * exp(-sum v) * sqrt(sum w_i v_i). For a fixed budget the sum
    is maximized by loading the largest weights first, and the exponential decay
    caps the useful budget at the point where sum w_i v_i reaches w_i / 2, so a
    greedy fill over weights in decreasing order attains the supremum.
    """
    caps = params.weights * max_offsets**2
    order = np.argsort(params.weights)[::-1]
    weighted_sum = 0.0
    budget = 0.0
    for i in order:
        w = params.weights[i]
        if w <= 2.0 * weighted_sum:
            break
        v_to_target = (0.5 * w - weighted_sum) / w
        v = min(caps[i], v_to_target)
        weighted_sum += w * v
        budget += v
        if v == v_to_target:
            break
    return 2.0 * params.amplitude * np.exp(-budget) * np.sqrt(weighted_sum)


def kernel_lipschitz(params: KernelHyperparams, domain: DomainBox, grid_points: int = 10_000) -> float:
    """Upper estimate of sup |grad_a k(a, b)| over the domain, with 1% headroom.

    The analytic supremum over the offset box is cross-checked against a dense
    grid evaluation; the returned constant dominates both.
    """
    if domain.dim != params.dim:
        raise ValueError("domain dimension does not match kernel weights")
    hw = domain.width
    if np.any(hw <= 0):
        raise ValueError("degenerate domain: zero width dimension")
    analytic = _grad_norm_sup(params, hw)

    # grid over the offset box; only |delta_i| matters so the positive orthant suffices
    per_dim = max(2, int(round(grid_points ** (1.0 / domain.dim))))
    axes = [np.linspace(0.0, hw[i], per_dim) for i in range(domain.dim)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.dim)
    v = mesh**2 * params.weights
    s = v.sum(axis=1)
    norms = 2.0 * params.amplitude * np.exp(-s) * np.sqrt((v * params.weights).sum(axis=1))
    grid_sup = float(norms.max())

    return 1.01 * max(analytic, grid_sup)
