"""Single-level zero-mean GP regression on a residual dataset.

One level owns an ARD kernel, a set of training inputs, and a matrix of
residual outputs sharing that kernel across all output columns. Fitting
maximizes the marginal likelihood over log-hyperparameters with a quasi-Newton
method and analytic gradients; the resulting Cholesky factor and dual weights
are cached for prediction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .kernel import (
    DEFAULT_JITTER_REL,
    JITTER_GROWTH,
    MAX_JITTER_REL,
    KernelHyperparams,
    cross_vec,
    gram,
)

# optimization runs in log-parameter space, clipped to this symmetric box
LOG_BOUND = 10.0
LOG2PI = math.log(2.0 * math.pi)


class IllConditionedError(RuntimeError):
    """Cholesky failed even at the maximum admissible jitter."""

    def __init__(self, message: str, params: KernelHyperparams | None = None):
        super().__init__(message)
        self.params = params


@dataclass
class OptimizerConfig:
    """Multi-start quasi-Newton settings for hyperparameter fitting."""

    restarts: int = 5
    max_iters: int = 200
    grad_tol: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be positive")


@dataclass
class ResidualDataset:
    """Training inputs (N, l) paired with residual outputs (N, d)."""

    inputs: np.ndarray
    residuals: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.residuals = np.asarray(self.residuals, dtype=float)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a 2-d array (N, l)")
        if self.residuals.ndim != 2:
            raise ValueError("residuals must be a 2-d array (N, d)")
        if self.inputs.shape[0] != self.residuals.shape[0]:
            raise ValueError("inputs and residuals disagree on N")
        if self.inputs.shape[0] == 0:
            raise ValueError("dataset must contain at least one row")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("inputs must be finite")
        if not np.all(np.isfinite(self.residuals)):
            raise ValueError("residuals must be finite")

    @property
    def n_points(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.residuals.shape[1]


@dataclass
class TrainedLevel:
    """Frozen state of one fitted residual GP.

    residuals holds the column-centered residual matrix actually regressed on;
    column_means restores the raw residuals at prediction time. chol is the
    lower Cholesky factor of the Gram plus (noise + jitter) diagonal, alpha the
    dual weights solving K alpha = residuals, and jitter the absolute diagonal
    shift that made the factorization succeed.
    """

    params: KernelHyperparams
    inputs: np.ndarray
    residuals: np.ndarray
    column_means: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float
    fit_nll: float

    @property
    def n_points(self) -> int:
        return self.inputs.shape[0]

    @property
    def output_dim(self) -> int:
        return self.residuals.shape[1]


def cholesky_with_escalation(
    params: KernelHyperparams, points: np.ndarray, jitter: float
) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of the Gram, escalating jitter x10 on failure.

    Escalation stops at MAX_JITTER_REL * amplitude; beyond that the Gram is
    declared ill-conditioned.
    """
    amp = params.amplitude
    j = float(jitter)
    while True:
        K = gram(params, points, j)
        try:
            return np.linalg.cholesky(K), j
        except np.linalg.LinAlgError:
            if j >= MAX_JITTER_REL * amp:
                raise IllConditionedError(
                    f"Gram matrix not positive definite at jitter {j:.3e} "
                    f"(amplitude {amp:.3e})",
                    params=params,
                ) from None
            j = max(DEFAULT_JITTER_REL * amp, j * JITTER_GROWTH)
            j = min(j, MAX_JITTER_REL * amp)


def _sq_diff_tensor(points: np.ndarray) -> np.ndarray:
    """(N, N, l) tensor of squared per-coordinate differences."""
    diff = points[:, None, :] - points[None, :, :]
    return diff * diff


def _nll_core(
    amplitude: float,
    weights: np.ndarray,
    tau: float,
    sq_diffs: np.ndarray,
    outer: np.ndarray,
    n_outputs: int,
    jitter: float,
    jitter_scales_with_amplitude: bool,
    want_grad: bool,
    learn_noise: bool,
):
    """NLL and optional log-space gradient from precomputed structures.

    outer is R R^T for the (centered) residual matrix R, so the cost per call
    does not depend on the number of output columns. jitter is absolute; when
    jitter_scales_with_amplitude it is amplitude-proportional and its
    derivative folds into the amplitude component.
    """
    n = sq_diffs.shape[0]
    d = n_outputs
    unit = np.exp(-sq_diffs @ weights)
    C = amplitude * unit
    K = C + (jitter + tau) * np.eye(n)
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        if not want_grad:
            return np.inf
        return np.inf, np.zeros(1 + weights.size + (1 if learn_noise else 0))
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    kinv_outer = cho_solve((L, True), outer)
    nll = 0.5 * d * logdet + 0.5 * float(np.trace(kinv_outer)) + 0.5 * n * d * LOG2PI
    if not want_grad:
        return nll
    kinv = cho_solve((L, True), np.eye(n))
    bmat = d * kinv - kinv_outer @ kinv
    bc = bmat * C
    g_amp = 0.5 * float(np.sum(bc))
    if jitter_scales_with_amplitude and jitter > 0:
        g_amp += 0.5 * jitter * float(np.trace(bmat))
    g_weights = -0.5 * weights * np.einsum("nm,nml->l", bc, sq_diffs)
    parts = [np.array([g_amp]), g_weights]
    if learn_noise:
        parts.append(np.array([0.5 * tau * float(np.trace(bmat))]))
    return nll, np.concatenate(parts)


def neg_log_likelihood(
    params: KernelHyperparams, data: ResidualDataset, jitter: float = 0.0
) -> float:
    """Negative log marginal likelihood of the residual matrix under the level GP.

    Equals the sum over output columns of the negated Gaussian log-density:
    (d/2) log|K| + (1/2) tr(R^T K^-1 R) + (N d / 2) log 2pi, with K the Gram
    plus (noise + jitter) diagonal. jitter is absolute; on Cholesky failure it
    escalates like the fitting path before an ill-conditioned error is raised.
    """
    if data.input_dim != params.dim:
        raise ValueError("data dimension does not match kernel weights")
    _, j = cholesky_with_escalation(params, data.inputs, jitter)
    sq = _sq_diff_tensor(data.inputs)
    outer = data.residuals @ data.residuals.T
    return float(
        _nll_core(
            params.amplitude,
            params.weights,
            params.noise,
            sq,
            outer,
            data.output_dim,
            j,
            False,
            False,
            False,
        )
    )


def nll_gradient(
    params: KernelHyperparams, data: ResidualDataset, jitter: float = 0.0
) -> np.ndarray:
    """Gradient of neg_log_likelihood with respect to log-hyperparameters.

    Component order is [log amplitude, log w_1 .. log w_l] with a trailing
    log-noise component when params.noise > 0. Validated against central
    finite differences in the test suite.
    """
    if data.input_dim != params.dim:
        raise ValueError("data dimension does not match kernel weights")
    _, j = cholesky_with_escalation(params, data.inputs, jitter)
    sq = _sq_diff_tensor(data.inputs)
    outer = data.residuals @ data.residuals.T
    learn_noise = params.noise > 0
    _, grad = _nll_core(
        params.amplitude,
        params.weights,
        params.noise,
        sq,
        outer,
        data.output_dim,
        j,
        False,
        True,
        learn_noise,
    )
    return grad


def _finalize_level(
    params: KernelHyperparams,
    inputs: np.ndarray,
    centered: np.ndarray,
    means: np.ndarray,
    jitter_rel: float,
) -> TrainedLevel:
    chol, j = cholesky_with_escalation(params, inputs, jitter_rel * params.amplitude)
    alpha = cho_solve((chol, True), centered)
    n, d = centered.shape
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    white = solve_triangular(chol, centered, lower=True)
    nll = 0.5 * d * logdet + 0.5 * float(np.sum(white * white)) + 0.5 * n * d * LOG2PI
    return TrainedLevel(
        params=params,
        inputs=np.array(inputs, dtype=float, copy=True),
        residuals=centered,
        column_means=means,
        chol=chol,
        alpha=alpha,
        jitter=j,
        fit_nll=nll,
    )


def build_level(
    params: KernelHyperparams,
    data: ResidualDataset,
    jitter_rel: float = DEFAULT_JITTER_REL,
    center: bool = True,
) -> TrainedLevel:
    """Construct a TrainedLevel with fixed hyperparameters, no optimization."""
    if data.input_dim != params.dim:
        raise ValueError("data dimension does not match kernel weights")
    if center:
        means = data.residuals.mean(axis=0)
    else:
        means = np.zeros(data.output_dim)
    centered = data.residuals - means
    return _finalize_level(params, data.inputs, centered, means, jitter_rel)


def _start_points(
    opt: OptimizerConfig,
    n_free: int,
    init: np.ndarray | None,
    tau_index: int | None,
    tau_init_log: float,
    heuristic: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Unit-scale start plus log-uniform random restarts.

    An explicit warm start and a data-driven heuristic start are prepended as
    extras on top of the opt.restarts recipe starts. Without the heuristic the
    short-length-scale likelihood mode can capture every start on unlucky
    designs, so it is always tried when available.
    """
    rng = np.random.default_rng(opt.seed)
    unit = np.zeros(n_free)
    if tau_index is not None:
        unit[tau_index] = tau_init_log
    starts = [unit]
    lo, hi = math.log(1e-2), math.log(1e2)
    while len(starts) < max(opt.restarts, 1):
        starts.append(rng.uniform(lo, hi, size=n_free))
    if heuristic is not None:
        starts = [np.clip(heuristic, -LOG_BOUND, LOG_BOUND)] + starts
    if init is not None:
        init = np.clip(np.asarray(init, dtype=float), -LOG_BOUND, LOG_BOUND)
        starts = [init] + starts
    return starts


def fit_level(
    data: ResidualDataset,
    opt: OptimizerConfig | None = None,
    *,
    jitter_rel: float = DEFAULT_JITTER_REL,
    noise: float = 0.0,
    learn_noise: bool = False,
    init: np.ndarray | None = None,
) -> TrainedLevel:
    """Fit hyperparameters by maximum likelihood and cache prediction state.

    Residual columns are centered before fitting; the means are stored on the
    level and restored by level_predict. Optimization runs over log-parameters
    in [-LOG_BOUND, LOG_BOUND] with opt.restarts recipe starts (one at unit
    scales, the rest log-uniform in [1e-2, 1e2]) plus a moment-matched start
    (amplitude at the mean squared residual, every weight at the inverse
    median pairwise squared distance); an explicit init is prepended as a
    warm start. noise fixes the observation variance; with learn_noise it is
    optimized as an additional log-parameter instead.
    """
    if opt is None:
        opt = OptimizerConfig()
    if noise < 0:
        raise ValueError("noise must be non-negative")
    n, l = data.inputs.shape
    d = data.output_dim
    means = data.residuals.mean(axis=0)
    centered = data.residuals - means
    outer = centered @ centered.T
    sq = _sq_diff_tensor(data.inputs)

    n_free = 1 + l + (1 if learn_noise else 0)
    tau_index = n_free - 1 if learn_noise else None
    if learn_noise:
        tau0 = noise if noise > 0 else max(1e-6, 1e-3 * float(np.mean(centered**2)))
        tau_init_log = float(np.clip(math.log(tau0), -LOG_BOUND, LOG_BOUND))
    else:
        tau_init_log = 0.0

    def objective(logvec: np.ndarray):
        amp = math.exp(logvec[0])
        weights = np.exp(logvec[1 : 1 + l])
        tau = math.exp(logvec[tau_index]) if learn_noise else noise
        out = _nll_core(
            amp, weights, tau, sq, outer, d, jitter_rel * amp, True, True, learn_noise
        )
        nll, grad = out
        if not np.isfinite(nll):
            return 1e25, np.zeros(n_free)
        return nll, grad

    amp0 = float(np.mean(centered**2))
    med = 0.0
    if n > 1:
        med = float(np.median(sq.sum(axis=2)[np.triu_indices(n, k=1)]))
    heuristic = None
    if amp0 > 0 and med > 0:
        heuristic = np.full(n_free, math.log(1.0 / med))
        heuristic[0] = math.log(amp0)
        if learn_noise:
            heuristic[tau_index] = tau_init_log

    bounds = [(-LOG_BOUND, LOG_BOUND)] * n_free
    best_val = np.inf
    best_x = None
    for x0 in _start_points(opt, n_free, init, tau_index, tau_init_log, heuristic):
        res = minimize(
            objective,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": opt.max_iters, "gtol": opt.grad_tol, "ftol": 1e-13},
        )
        f_start = objective(x0)[0]
        for val, x in ((float(res.fun), res.x), (f_start, x0)):
            if val < best_val:
                best_val = val
                best_x = np.array(x)
    if best_x is None:
        raise IllConditionedError("no hyperparameter start produced a finite likelihood")

    amp = math.exp(best_x[0])
    weights = np.exp(best_x[1 : 1 + l])
    tau = math.exp(best_x[tau_index]) if learn_noise else noise
    params = KernelHyperparams(amplitude=amp, weights=weights, noise=tau)
    return _finalize_level(params, data.inputs, centered, means, jitter_rel)


def level_predict(level: TrainedLevel, query):
    """Posterior mean and variance of the residual at query point(s).

    For a (l,) query returns (mean (d,), var float); for (M, l) returns
    (means (M, d), vars (M,)). The variance is the latent-function posterior
    variance, clamped at zero, identical across output columns.
    """
    q = np.asarray(query, dtype=float)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    k = cross_vec(level.params, q, level.inputs)  # (M, N)
    mean = k @ level.alpha + level.column_means
    white = solve_triangular(level.chol, k.T, lower=True)  # (N, M)
    var = level.params.amplitude - np.sum(white * white, axis=0)
    var = np.maximum(var, 0.0)
    if single:
        return mean[0], float(var[0])
    return mean, var
