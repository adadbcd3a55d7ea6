"""Multi-fidelity benchmark functions, designs, metrics, and dataset files.

Every benchmark exposes fidelities 1 (cheapest) .. F (target) over a fixed
input box. The analytic functions are vectorized over query rows; the double
pendulum integrates its equations of motion with a fixed-step RK4 whose step
size sets the fidelity.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .gp_level import OptimizerConfig
from .kernel import DEFAULT_JITTER_REL, DomainBox
from .model import MultiFidelityData, predict, train

# seed offsets keeping test designs and pools disjoint from training designs
TEST_SEED_OFFSET = 104729
POOL_SEED_OFFSET = 15485863

DEFAULT_BUDGETS = {
    "currin": [20, 5],
    "park": [30, 5],
    "borehole": [60, 10],
    "branin3": [80, 30, 10],
    "hartmann3": [80, 30, 10],
    "pendulum": [41, 14],
}


class DatasetFormatError(ValueError):
    """A dataset CSV failed to parse; the message names the offending line."""


# ---------------------------------------------------------------------------
# analytic benchmark functions


def _currin_high_vals(x1, x2):
    with np.errstate(divide="ignore"):
        damp = 1.0 - np.exp(-1.0 / (2.0 * x2))
    num = 2300.0 * x1**3 + 1900.0 * x1**2 + 2092.0 * x1 + 60.0
    den = 100.0 * x1**3 + 500.0 * x1**2 + 4.0 * x1 + 20.0
    return damp * num / den


def _currin_high(x):
    return _currin_high_vals(x[:, 0], x[:, 1])[:, None]


def _currin_low(x):
    x1, x2 = x[:, 0], x[:, 1]
    up = x2 + 0.05
    dn = np.maximum(0.0, x2 - 0.05)
    vals = (
        _currin_high_vals(x1 + 0.05, up)
        + _currin_high_vals(x1 + 0.05, dn)
        + _currin_high_vals(x1 - 0.05, up)
        + _currin_high_vals(x1 - 0.05, dn)
    ) / 4.0
    return vals[:, None]


def _park_high_vals(x1, x2, x3, x4):
    first = 0.5 * x1 * (np.sqrt(1.0 + (x2 + x3**2) * x4 / x1**2) - 1.0)
    second = (x1 + 3.0 * x4) * np.exp(1.0 + np.sin(x3))
    return first + second


def _park_high(x):
    return _park_high_vals(x[:, 0], x[:, 1], x[:, 2], x[:, 3])[:, None]


def _park_low(x):
    x1, x2, x3, x4 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
    high = _park_high_vals(x1, x2, x3, x4)
    vals = (1.0 + np.sin(x1) / 10.0) * high - 2.0 * x1 + x2**2 + x3**2 + 0.5
    return vals[:, None]


def _borehole_frac(x, top_coef, base):
    rw, r, tu, hu, tl, hl, length, kw = (x[:, i] for i in range(8))
    logratio = np.log(r / rw)
    # the tu/tl term adds to the whole denominator, not inside the parentheses
    den = logratio * (base + 2.0 * length * tu / (logratio * rw**2 * kw)) + tu / tl
    return top_coef * tu * (hu - hl) / den


def _borehole_high(x):
    return _borehole_frac(x, 2.0 * np.pi, 1.0)[:, None]


def _borehole_low(x):
    return _borehole_frac(x, 5.0, 1.5)[:, None]


def _branin1_vals(x1, x2):
    quad = -1.275 * x1**2 / math.pi**2 + 5.0 * x1 / math.pi + x2 - 6.0
    return quad**2 + (10.0 - 5.0 / (4.0 * math.pi)) * np.cos(x1) + 10.0


def _branin1(x):
    return _branin1_vals(x[:, 0], x[:, 1])[:, None]


def _branin2_vals(x1, x2):
    inner = _branin1_vals(x1 - 2.0, x2 - 2.0)
    return 10.0 * np.sqrt(inner) + 2.0 * (x1 - 0.5) - 3.0 * (3.0 * x2 - 1.0) - 1.0


def _branin2(x):
    return _branin2_vals(x[:, 0], x[:, 1])[:, None]


def _branin3(x):
    x1, x2 = x[:, 0], x[:, 1]
    vals = _branin2_vals(1.2 * (x1 + 2.0), 1.2 * (x2 + 2.0)) - 3.0 * x2 + 1.0
    return vals[:, None]


_HARTMANN_A = np.array(
    [[3.0, 10.0, 30.0], [0.1, 10.0, 35.0], [3.0, 10.0, 30.0], [0.1, 10.0, 35.0]]
)
_HARTMANN_P = np.array(
    [
        [0.3689, 0.1170, 0.2673],
        [0.4699, 0.4387, 0.7470],
        [0.1091, 0.8732, 0.5547],
        [0.0381, 0.5743, 0.8828],
    ]
)
_HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HARTMANN_SHIFT = np.array([0.01, -0.01, -0.1, 0.1])


def _hartmann_vals(x, alpha):
    diff = x[:, None, :] - _HARTMANN_P[None, :, :]
    expo = np.einsum("nij,ij->ni", diff * diff, _HARTMANN_A)
    return np.exp(-expo) @ alpha


def _hartmann_level(f):
    alpha = _HARTMANN_ALPHA + (3 - f) * _HARTMANN_SHIFT

    def fn(x):
        return _hartmann_vals(x, alpha)[:, None]

    return fn


# ---------------------------------------------------------------------------
# double pendulum

_PEND_M1 = 2.0
_PEND_M2 = 1.0
_PEND_L1 = 1.0
_PEND_L2 = 2.0
_PEND_G = 9.81
_PEND_THETA2_0 = 2.2
_PEND_T_END = 5.0


def _pendulum_rhs(state):
    """Time derivative of (theta1, theta2, omega1, omega2), vectorized."""
    th1, th2, w1, w2 = state
    delta = th1 - th2
    sin_d = np.sin(delta)
    cos_d = np.cos(delta)
    m11 = (_PEND_M1 + _PEND_M2) * _PEND_L1
    m12 = _PEND_M2 * _PEND_L2 * cos_d
    m21 = _PEND_M2 * _PEND_L1 * cos_d
    m22 = _PEND_M2 * _PEND_L2
    b1 = -_PEND_M2 * _PEND_L2 * w2**2 * sin_d - (_PEND_M1 + _PEND_M2) * _PEND_G * np.sin(th1)
    b2 = _PEND_M2 * _PEND_L1 * w1**2 * sin_d - _PEND_M2 * _PEND_G * np.sin(th2)
    det = m11 * m22 - m12 * m21
    a1 = (m22 * b1 - m12 * b2) / det
    a2 = (m11 * b2 - m21 * b1) / det
    return np.stack([w1, w2, a1, a2])


def _pendulum_integrate(theta1_0, dt, keep_path=False):
    """Classic four-stage RK4 with fixed step from t=0 to t=5."""
    th0 = np.atleast_1d(np.asarray(theta1_0, dtype=float))
    if dt <= 0 or dt > _PEND_T_END:
        raise ValueError("dt must lie in (0, 5]")
    n_steps = max(1, int(round(_PEND_T_END / dt)))
    h = _PEND_T_END / n_steps
    state = np.stack(
        [th0, np.full_like(th0, _PEND_THETA2_0), np.zeros_like(th0), np.zeros_like(th0)]
    )
    path = [state.copy()] if keep_path else None
    for _ in range(n_steps):
        k1 = _pendulum_rhs(state)
        k2 = _pendulum_rhs(state + 0.5 * h * k1)
        k3 = _pendulum_rhs(state + 0.5 * h * k2)
        k4 = _pendulum_rhs(state + h * k3)
        state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if keep_path:
            path.append(state.copy())
    if keep_path:
        times = np.linspace(0.0, _PEND_T_END, n_steps + 1)
        return times, np.stack(path)
    return state


def pendulum_solve(theta1_0: float, dt: float = 0.01) -> tuple[float, float]:
    """Angles (theta1, theta2) at t=5 for the given release angle and step."""
    state = _pendulum_integrate(float(theta1_0), dt)
    return float(state[0, 0]), float(state[1, 0])


def pendulum_trajectory(theta1_0: float, dt: float = 0.01):
    """Times and full (theta1, theta2, omega1, omega2) path, for diagnostics."""
    times, path = _pendulum_integrate(float(theta1_0), dt, keep_path=True)
    return times, path[:, :, 0]


def pendulum_energy(states) -> np.ndarray:
    """Total mechanical energy of trajectory states (..., 4)."""
    s = np.asarray(states, dtype=float)
    th1, th2, w1, w2 = s[..., 0], s[..., 1], s[..., 2], s[..., 3]
    kinetic = (
        0.5 * (_PEND_M1 + _PEND_M2) * _PEND_L1**2 * w1**2
        + 0.5 * _PEND_M2 * _PEND_L2**2 * w2**2
        + _PEND_M2 * _PEND_L1 * _PEND_L2 * w1 * w2 * np.cos(th1 - th2)
    )
    potential = -(_PEND_M1 + _PEND_M2) * _PEND_G * _PEND_L1 * np.cos(th1) - (
        _PEND_M2 * _PEND_G * _PEND_L2 * np.cos(th2)
    )
    return kinetic + potential


def _pendulum_level(dt):
    def fn(x):
        state = _pendulum_integrate(x[:, 0], dt)
        return np.stack([state[0], state[1]], axis=1)

    return fn


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class BenchmarkSpec:
    """Name, input box, output dimension, and per-fidelity evaluators."""

    name: str
    domain: DomainBox
    output_dim: int
    funcs: tuple

    @property
    def n_fidelities(self) -> int:
        return len(self.funcs)

    @property
    def input_dim(self) -> int:
        return self.domain.dim


def _make_registry() -> dict:
    unit2 = DomainBox(np.zeros(2), np.ones(2))
    unit3 = DomainBox(np.zeros(3), np.ones(3))
    unit4 = DomainBox(np.zeros(4), np.ones(4))
    borehole_box = DomainBox(
        np.array([0.05, 100.0, 63070.0, 990.0, 63.1, 700.0, 1120.0, 9855.0]),
        np.array([0.15, 50000.0, 115600.0, 1110.0, 115.0, 820.0, 1680.0, 12045.0]),
    )
    branin_box = DomainBox(np.array([-5.0, 0.0]), np.array([10.0, 15.0]))
    pend_box = DomainBox(np.array([1.25]), np.array([1.57]))
    return {
        "currin": BenchmarkSpec("currin", unit2, 1, (_currin_low, _currin_high)),
        "park": BenchmarkSpec("park", unit4, 1, (_park_low, _park_high)),
        "borehole": BenchmarkSpec(
            "borehole", borehole_box, 1, (_borehole_low, _borehole_high)
        ),
        "branin3": BenchmarkSpec("branin3", branin_box, 1, (_branin1, _branin2, _branin3)),
        "hartmann3": BenchmarkSpec(
            "hartmann3", unit3, 1, tuple(_hartmann_level(f) for f in (1, 2, 3))
        ),
        "pendulum": BenchmarkSpec(
            "pendulum", pend_box, 2, (_pendulum_level(0.1), _pendulum_level(0.01))
        ),
    }


BENCHMARKS = _make_registry()


def get_benchmark(bench) -> BenchmarkSpec:
    if isinstance(bench, BenchmarkSpec):
        return bench
    try:
        return BENCHMARKS[bench]
    except KeyError:
        raise ValueError(
            f"unknown benchmark {bench!r}; known: {sorted(BENCHMARKS)}"
        ) from None


def evaluate(bench, fidelity: int, query) -> np.ndarray:
    """Evaluate a benchmark fidelity at query point(s) inside its domain.

    A (l,) query returns a (d,) output; an (M, l) query returns (M, d).
    """
    spec = get_benchmark(bench)
    if not 1 <= fidelity <= spec.n_fidelities:
        raise ValueError(
            f"{spec.name} has fidelities 1..{spec.n_fidelities}, got {fidelity}"
        )
    q = np.asarray(query, dtype=float)
    single = q.ndim == 1
    if single:
        q = q[None, :]
    if q.ndim != 2 or q.shape[1] != spec.input_dim:
        raise ValueError(f"{spec.name} expects {spec.input_dim}-dimensional inputs")
    lo, hi = spec.domain.lower, spec.domain.upper
    bad = np.any(q < lo - 1e-12, axis=1) | np.any(q > hi + 1e-12, axis=1)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValueError(
            f"{spec.name}: point {q[i].tolist()} outside the benchmark domain"
        )
    out = spec.funcs[fidelity - 1](q)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# designs


def design_uniform(domain: DomainBox, n: int, seed: int) -> np.ndarray:
    """n uniform random points inside the box, deterministic per seed."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    return domain.lower + rng.random((n, domain.dim)) * domain.width


def nested_subsample(design, n_sub: int, seed: int):
    """Exact-row subsample without replacement; returns (subset, indices)."""
    pts = np.asarray(design, dtype=float)
    if pts.ndim != 2:
        raise ValueError("design must be a 2-d array")
    if not 1 <= n_sub <= pts.shape[0]:
        raise ValueError(f"n_sub must lie in [1, {pts.shape[0]}], got {n_sub}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(pts.shape[0], size=n_sub, replace=False)
    return pts[idx], idx


def nested_random_data(bench, budgets, seed: int) -> MultiFidelityData:
    """Uniform random nested designs evaluated at every fidelity."""
    spec = get_benchmark(bench)
    budgets = [int(b) for b in budgets]
    if len(budgets) != spec.n_fidelities:
        raise ValueError(
            f"{spec.name} needs {spec.n_fidelities} budgets, got {len(budgets)}"
        )
    designs = [design_uniform(spec.domain, budgets[0], seed)]
    for f in range(2, spec.n_fidelities + 1):
        sub, _ = nested_subsample(designs[-1], budgets[f - 1], seed + f)
        designs.append(sub)
    outputs = [evaluate(spec, f + 1, designs[f]) for f in range(spec.n_fidelities)]
    return MultiFidelityData(inputs=designs, outputs=outputs)


# ---------------------------------------------------------------------------
# metrics


class Metrics(NamedTuple):
    rmse: float
    r2: float
    mnll: float
    nrmse: float


def metrics(pred_mean, pred_var, truth) -> Metrics:
    """Error metrics of predictions against ground truth.

    rmse over all N*d entries; r2 about the flattened truth mean; mnll the
    mean negative log Gaussian density using the per-point shared variance
    (+inf when a zero-variance prediction misses); nrmse normalized by the
    truth's root sum of squares.
    """
    mean = np.asarray(pred_mean, dtype=float)
    var = np.asarray(pred_var, dtype=float)
    y = np.asarray(truth, dtype=float)
    if mean.ndim == 1:
        mean = mean[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if mean.shape != y.shape:
        raise ValueError("prediction and truth shapes differ")
    if var.shape != (mean.shape[0],):
        raise ValueError("pred_var must have one entry per prediction row")
    if np.any(var < 0):
        raise ValueError("predictive variances must be non-negative")
    err = mean - y
    rmse = float(np.sqrt(np.mean(err**2)))
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0:
        raise ValueError("truth has zero variance; r2 undefined")
    r2 = 1.0 - float(np.sum(err**2)) / sst
    denom = float(np.sum(y**2))
    if denom == 0:
        raise ValueError("truth has zero norm; nrmse undefined")
    nrmse = float(np.sqrt(np.sum(err**2) / denom))

    zero = var == 0
    safe = np.where(zero, 1.0, var)
    terms = 0.5 * np.log(2.0 * math.pi * safe)[:, None] + err**2 / (2.0 * safe[:, None])
    if np.any(zero):
        exact = err[zero] == 0
        terms[zero] = np.where(exact, -np.inf, np.inf)
    mnll = float(np.mean(terms))
    return Metrics(rmse=rmse, r2=r2, mnll=mnll, nrmse=nrmse)


# ---------------------------------------------------------------------------
# dataset files


def _dataset_header(l: int, d: int) -> list:
    return [f"x{i + 1}" for i in range(l)] + [f"y{j + 1}" for j in range(d)] + ["fidelity"]


def write_dataset_csv(path: str, data: MultiFidelityData) -> None:
    """One CSV across all fidelities: columns x1..xl, y1..yd, fidelity."""
    from .model import _atomic_write_text

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_dataset_header(data.input_dim, data.output_dim))
    for f in range(1, data.n_fidelities + 1):
        X = data.inputs[f - 1]
        Y = data.outputs[f - 1]
        for xi, yi in zip(X, Y):
            writer.writerow([repr(float(v)) for v in xi] + [repr(float(v)) for v in yi] + [f])
    _atomic_write_text(path, buf.getvalue())


def read_dataset_csv(path: str) -> MultiFidelityData:
    """Parse a dataset CSV back into per-fidelity arrays.

    Malformed content raises DatasetFormatError naming the 1-based line.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("line 1: empty file") from None
        header = [h.strip() for h in header]
        if not header or header[-1] != "fidelity":
            raise DatasetFormatError("line 1: last column must be 'fidelity'")
        l = sum(1 for h in header if h.startswith("x"))
        d = sum(1 for h in header if h.startswith("y"))
        if l == 0 or d == 0 or header != _dataset_header(l, d):
            raise DatasetFormatError(
                "line 1: header must be x1..xl, y1..yd, fidelity"
            )
        groups: dict = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != l + d + 1:
                raise DatasetFormatError(
                    f"line {lineno}: expected {l + d + 1} fields, got {len(row)}"
                )
            try:
                xs = [float(v) for v in row[:l]]
                ys = [float(v) for v in row[l : l + d]]
                f = int(row[-1])
            except ValueError as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from None
            if f < 1:
                raise DatasetFormatError(f"line {lineno}: fidelity must be >= 1")
            groups.setdefault(f, ([], []))
            groups[f][0].append(xs)
            groups[f][1].append(ys)
    if not groups:
        raise DatasetFormatError("line 2: no data rows")
    fids = sorted(groups)
    if fids != list(range(1, len(fids) + 1)):
        raise DatasetFormatError(f"fidelity labels must be contiguous from 1, got {fids}")
    return MultiFidelityData(
        inputs=[np.array(groups[f][0]) for f in fids],
        outputs=[np.array(groups[f][1]) for f in fids],
    )


# ---------------------------------------------------------------------------
# benchmark harness


def standardization_scale(data: MultiFidelityData) -> tuple[float, float]:
    """Scalar mean and std of the lowest-fidelity training outputs."""
    flat = data.outputs[0].ravel()
    m = float(flat.mean())
    s = float(flat.std())
    if s <= 0:
        s = 1.0
    return m, s


def run_benchmark_case(
    bench,
    budgets=None,
    seed: int = 0,
    opt: OptimizerConfig | None = None,
    test_points: int = 1000,
    standardize: bool = True,
    jitter_rel: float = DEFAULT_JITTER_REL,
) -> dict:
    """Train on a random nested design and score on fresh test points.

    With standardize=True the metrics are computed after shifting and scaling
    predictions and truth by the lowest-fidelity training output statistics,
    so scores are comparable across benchmarks with different output scales;
    raw metrics are always included alongside.
    """
    spec = get_benchmark(bench)
    if budgets is None:
        budgets = DEFAULT_BUDGETS[spec.name]
    if opt is None:
        opt = OptimizerConfig(seed=seed)
    data = nested_random_data(spec, budgets, seed)
    t0 = time.perf_counter()
    model = train(data, opt, domain=spec.domain, jitter_rel=jitter_rel)
    fit_seconds = time.perf_counter() - t0
    test_x = design_uniform(spec.domain, test_points, seed + TEST_SEED_OFFSET)
    truth = evaluate(spec, spec.n_fidelities, test_x)
    post = predict(model, test_x)
    raw = metrics(post.mean, post.var, truth)
    if standardize:
        m, s = standardization_scale(data)
        scored = metrics((post.mean - m) / s, post.var / s**2, (truth - m) / s)
        scale = (m, s)
    else:
        scored = raw
        scale = None
    return {
        "name": spec.name,
        "budgets": list(budgets),
        "seed": seed,
        "metrics": scored,
        "raw_metrics": raw,
        "scale": scale,
        "model": model,
        "data": data,
        "test_inputs": test_x,
        "test_truth": truth,
        "posterior": post,
        "fit_seconds": fit_seconds,
    }
