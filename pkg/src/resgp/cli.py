"""Command line interface: train, predict, active, bounds, bench.

Configs are JSON files; outputs are written atomically into --out. Exit codes:
0 success, 1 usage or config problems, 2 data problems (malformed CSV, broken
nesting, domain violations), 3 numerical or simulator failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .active import OracleError, read_audit, sequential_construct, write_audit
from .benchmarks import (
    DEFAULT_BUDGETS,
    POOL_SEED_OFFSET,
    TEST_SEED_OFFSET,
    DatasetFormatError,
    design_uniform,
    evaluate,
    get_benchmark,
    metrics,
    nested_random_data,
    read_dataset_csv,
    run_benchmark_case,
    standardization_scale,
    write_dataset_csv,
)
from .bounds import (
    BoundConfig,
    ResourceLimitError,
    UnsupportedModelError,
    covering_number_bound,
    empirical_coverage,
    uniform_bound,
)
from .gp_level import IllConditionedError, OptimizerConfig
from .kernel import DEFAULT_JITTER_REL, DomainBox
from .model import (
    MultiFidelityData,
    NestingError,
    _atomic_write_text,
    compute_residuals,
    load_model,
    nesting_check,
    predict,
    save_model,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

THREADS_ENV = "RESGP_THREADS"


class UsageError(Exception):
    """Bad invocation or config; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return cfg


def _config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _jsonable(value):
    """Replace non-finite floats with explicit string sentinels for JSON."""
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(value, np.integer):
        return int(value)
    return value


def _write_json(path: str, payload: dict) -> None:
    _atomic_write_text(path, json.dumps(_jsonable(payload), sort_keys=True, indent=1) + "\n")


def _metrics_dict(m) -> dict:
    return {"rmse": m.rmse, "r2": m.r2, "mnll": m.mnll, "nrmse": m.nrmse}


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be at least 1")
    return n


def _optimizer(config: dict, seed: int) -> OptimizerConfig:
    sub = dict(config.get("optimizer", {}))
    sub.setdefault("seed", seed)
    try:
        return OptimizerConfig(**sub)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid optimizer config: {exc}") from exc


def _domain_from(entry) -> DomainBox:
    try:
        return DomainBox(np.array(entry["lower"]), np.array(entry["upper"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid domain entry: {exc}") from exc


def _resolve_seed(config: dict, override) -> int:
    if override is not None:
        return int(override)
    return int(config.get("seed", 0))


# ---------------------------------------------------------------------------
# train


def cmd_train(config: dict, out_dir: str = ".", seed=None) -> dict:
    """Train a model from a benchmark protocol or a dataset CSV."""
    run_seed = _resolve_seed(config, seed)
    opt = _optimizer(config, run_seed)
    jitter_rel = float(config.get("jitter_rel", DEFAULT_JITTER_REL))
    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, "model.json")
    t0 = time.perf_counter()

    has_bench = "benchmark" in config
    has_dataset = "dataset" in config
    if has_bench == has_dataset:
        raise UsageError("config must name exactly one of 'benchmark' or 'dataset'")

    scale = None
    if has_bench:
        spec = get_benchmark(config["benchmark"])
        budgets = config.get("budgets", DEFAULT_BUDGETS[spec.name])
        standardize = bool(config.get("standardize", True))
        case = run_benchmark_case(
            spec,
            budgets=budgets,
            seed=run_seed,
            opt=opt,
            test_points=int(config.get("test_points", 1000)),
            standardize=standardize,
            jitter_rel=jitter_rel,
        )
        model = case["model"]
        data = case["data"]
        scored = case["metrics"]
        raw = case["raw_metrics"]
        scale = case["scale"]
        write_dataset_csv(os.path.join(out_dir, "dataset.csv"), data)
        _write_json(
            os.path.join(out_dir, "dataset_meta.json"),
            {
                "benchmark": spec.name,
                "budgets": list(budgets),
                "design_seed": run_seed,
                "subsample_seeds": [run_seed + f for f in range(2, spec.n_fidelities + 1)],
                "test_seed": run_seed + TEST_SEED_OFFSET,
            },
        )
        domain = spec.domain
    else:
        data = read_dataset_csv(config["dataset"])
        domain = _domain_from(config["domain"]) if "domain" in config else None
        standardize = bool(config.get("standardize", False))
        model = train(
            data,
            opt,
            domain=domain,
            jitter_rel=jitter_rel,
            noise=float(config.get("noise", 0.0)),
            learn_noise=bool(config.get("learn_noise", False)),
        )
        domain = model.domain
        scored = raw = None
        if "test_dataset" in config:
            test = read_dataset_csv(config["test_dataset"])
            test_x = test.inputs[-1]
            test_y = test.outputs[-1]
            post = predict(model, test_x)
            raw = metrics(post.mean, post.var, test_y)
            if standardize:
                m, s = standardization_scale(data)
                scored = metrics((post.mean - m) / s, post.var / s**2, (test_y - m) / s)
                scale = (m, s)
            else:
                scored = raw

    norm = MultiFidelityData(
        inputs=[domain.normalize(x) for x in data.inputs], outputs=data.outputs
    )
    residuals = compute_residuals(norm, nesting_check(norm))
    residual_rms = [float(np.sqrt(np.mean(ds.residuals**2))) for ds in residuals]

    save_model(model, model_path)
    record = {
        "command": "train",
        "config_hash": _config_hash(config),
        "seed": run_seed,
        "counts": data.counts,
        "metrics": None if scored is None else _metrics_dict(scored),
        "raw_metrics": None if raw is None else _metrics_dict(raw),
        "standardize": standardize,
        "scale": scale,
        "per_fidelity_nll": [lvl.fit_nll for lvl in model.levels],
        "joint_nll": model.joint_nll,
        "residual_rms": residual_rms,
        "model_path": model_path,
        "wall_time_s": time.perf_counter() - t0,
    }
    _write_json(os.path.join(out_dir, "record.json"), record)
    return record


# ---------------------------------------------------------------------------
# predict


def _read_query_csv(path: str, input_dim: int) -> np.ndarray:
    expected = [f"x{i + 1}" for i in range(input_dim)]
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DatasetFormatError(f"cannot read queries {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("line 1: empty query file") from None
        if [h.strip() for h in header] != expected:
            raise DatasetFormatError(
                f"line 1: query header must be {','.join(expected)}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != input_dim:
                raise DatasetFormatError(
                    f"line {lineno}: expected {input_dim} fields, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DatasetFormatError(f"line {lineno}: {exc}") from None
    if not rows:
        return np.zeros((0, input_dim))
    return np.array(rows)


def cmd_predict(
    model_path: str, query_file: str, out_dir: str = ".", fmt: str = "csv"
) -> str:
    """Predict at query points; writes predictions.csv or predictions.json."""
    model = load_model(model_path)
    queries = _read_query_csv(query_file, model.input_dim)
    os.makedirs(out_dir, exist_ok=True)
    if queries.shape[0] > 0:
        post = predict(model, queries)
        means = np.atleast_2d(post.mean)
        variances = np.atleast_1d(post.var)
    else:
        means = np.zeros((0, model.output_dim))
        variances = np.zeros(0)
    if fmt == "structured":
        out_path = os.path.join(out_dir, "predictions.json")
        _write_json(
            out_path,
            {"means": means.tolist(), "variances": variances.tolist()},
        )
        return out_path
    out_path = os.path.join(out_dir, "predictions.csv")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"y{j + 1}" for j in range(model.output_dim)] + ["variance"])
    for m, v in zip(means, variances):
        writer.writerow([repr(float(x)) for x in m] + [repr(float(v))])
    _atomic_write_text(out_path, buf.getvalue())
    return out_path


# ---------------------------------------------------------------------------
# active


def cmd_active(config: dict, out_dir: str = ".", seed=None) -> dict:
    """Sequential variance-driven design on a benchmark oracle."""
    run_seed = _resolve_seed(config, seed)
    if "benchmark" not in config:
        raise UsageError("active config must name a 'benchmark'")
    spec = get_benchmark(config["benchmark"])
    budgets = config.get("budgets", DEFAULT_BUDGETS[spec.name])
    pool_size = int(config.get("pool_size", 200))
    strategy = config.get("strategy", "variance")
    opt = _optimizer(config, run_seed)
    jitter_rel = float(config.get("jitter_rel", DEFAULT_JITTER_REL))
    os.makedirs(out_dir, exist_ok=True)
    audit_path = os.path.join(out_dir, "audit.jsonl")
    t0 = time.perf_counter()

    pool = design_uniform(spec.domain, pool_size, run_seed + POOL_SEED_OFFSET)

    def oracle(f, x):
        return evaluate(spec, f, x)

    try:
        result = sequential_construct(
            pool,
            budgets,
            oracle,
            opt,
            run_seed,
            domain=spec.domain,
            jitter_rel=jitter_rel,
            strategy=strategy,
        )
    except OracleError as exc:
        write_audit(exc.audit, audit_path)
        raise
    write_audit(result.audit, audit_path)

    model = result.model
    model_path = os.path.join(out_dir, "model.json")
    save_model(model, model_path)

    test_points = int(config.get("test_points", 1000))
    test_x = design_uniform(spec.domain, test_points, run_seed + TEST_SEED_OFFSET)
    truth = evaluate(spec, spec.n_fidelities, test_x)
    post = predict(model, test_x)
    raw = metrics(post.mean, post.var, truth)
    standardize = bool(config.get("standardize", True))
    scale = None
    if standardize:
        # scale from the acquired lowest-fidelity outputs
        low_y = np.array([oracle(1, pool[i]) for i in result.selected[1]])
        flat = low_y.ravel()
        s = float(flat.std()) or 1.0
        m = float(flat.mean())
        scored = metrics((post.mean - m) / s, post.var / s**2, (truth - m) / s)
        scale = (m, s)
    else:
        scored = raw

    record = {
        "command": "active",
        "config_hash": _config_hash(config),
        "seed": run_seed,
        "strategy": strategy,
        "budgets": [int(b) for b in budgets],
        "pool_size": pool_size,
        "metrics": _metrics_dict(scored),
        "raw_metrics": _metrics_dict(raw),
        "standardize": standardize,
        "scale": scale,
        "per_fidelity_nll": [lvl.fit_nll for lvl in model.levels],
        "joint_nll": model.joint_nll,
        "audit_path": audit_path,
        "model_path": model_path,
        "acquisitions": len(result.audit),
        "wall_time_s": time.perf_counter() - t0,
    }
    _write_json(os.path.join(out_dir, "record.json"), record)
    return record


# ---------------------------------------------------------------------------
# bounds


def cmd_bounds(model_path: str, config: dict, out_dir: str = ".", seed=None) -> dict:
    """Uniform-bound constants for a saved univariate model, plus a sampled curve."""
    run_seed = _resolve_seed(config, seed)
    model = load_model(model_path)
    for key in ("delta", "tau", "l_y"):
        if key not in config:
            raise UsageError(f"bounds config requires '{key}'")
    domain = _domain_from(config["domain"]) if "domain" in config else model.domain
    cfg = BoundConfig(
        delta=float(config["delta"]),
        tau=float(config["tau"]),
        l_y=float(config["l_y"]),
        domain=domain,
    )
    bound, bound_fn = uniform_bound(model, cfg)
    os.makedirs(out_dir, exist_ok=True)

    grid_points = int(config.get("grid_points", 512))
    if model.input_dim == 1:
        grid = np.linspace(domain.lower[0], domain.upper[0], grid_points)[:, None]
    else:
        grid = design_uniform(domain, grid_points, run_seed)
    post = predict(model, grid)
    sigma = np.sqrt(np.asarray(post.var))
    g = bound_fn(grid)

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [f"x{i + 1}" for i in range(model.input_dim)] + ["mean", "sigma", "bound"]
    )
    means = np.atleast_2d(post.mean)
    for i in range(grid.shape[0]):
        writer.writerow(
            [repr(float(v)) for v in grid[i]]
            + [repr(float(means[i, 0])), repr(float(sigma[i])), repr(float(g[i]))]
        )
    curve_path = os.path.join(out_dir, "curve.csv")
    _atomic_write_text(curve_path, buf.getvalue())

    coverage = None
    if "truth" in config:
        truth_data = read_dataset_csv(config["truth"])
        tx = truth_data.inputs[-1]
        ty = truth_data.outputs[-1]
        coverage = empirical_coverage(model, bound_fn, tx, ty)

    report = {
        "command": "bounds",
        "config_hash": _config_hash(config),
        "beta": bound.beta,
        "gamma": bound.gamma,
        "l_mu": bound.l_mu,
        "omega_coeff": bound.omega_coeff,
        "covering": bound.covering,
        "covering_consistent": bound.covering == covering_number_bound(domain, cfg.tau),
        "delta": cfg.delta,
        "tau": cfg.tau,
        "l_y": cfg.l_y,
        "coverage": coverage,
        "curve_path": curve_path,
    }
    _write_json(os.path.join(out_dir, "bounds.json"), report)
    return report


# ---------------------------------------------------------------------------
# bench


def cmd_bench(config: dict, out_dir: str = ".", seed=None, fmt: str = "csv") -> list:
    """Run the benchmark suite and write a results table plus summary."""
    run_seed = _resolve_seed(config, seed)
    names = config.get("benchmarks", sorted(DEFAULT_BUDGETS))
    repeats = int(config.get("repeats", 1))
    if repeats < 1:
        raise UsageError("repeats must be at least 1")
    test_points = int(config.get("test_points", 1000))
    standardize = bool(config.get("standardize", True))
    budgets_override = config.get("budgets", {})
    os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()

    tasks = []
    for name in names:
        spec = get_benchmark(name)
        budgets = budgets_override.get(spec.name, DEFAULT_BUDGETS[spec.name])
        for rep in range(repeats):
            tasks.append((spec.name, list(budgets), rep, run_seed + rep))

    def run_one(task):
        name, budgets, rep, s = task
        opt = _optimizer(config, s)
        case = run_benchmark_case(
            name,
            budgets=budgets,
            seed=s,
            opt=opt,
            test_points=test_points,
            standardize=standardize,
        )
        return {
            "benchmark": name,
            "budgets": budgets,
            "repeat": rep,
            "seed": s,
            **_metrics_dict(case["metrics"]),
            "raw_rmse": case["raw_metrics"].rmse,
            "raw_r2": case["raw_metrics"].r2,
            "joint_nll": case["model"].joint_nll,
            "fit_seconds": case["fit_seconds"],
        }

    n_threads = _threads()
    if n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            rows = list(pool.map(run_one, tasks))
    else:
        rows = [run_one(t) for t in tasks]

    metric_cols = ["rmse", "r2", "mnll", "nrmse", "raw_rmse", "raw_r2", "joint_nll"]
    if fmt == "structured":
        results_path = os.path.join(out_dir, "results.json")
        _write_json(
            results_path,
            {
                "rows": [
                    {k: row[k] for k in ["benchmark", "budgets", "repeat", "seed"] + metric_cols}
                    for row in rows
                ]
            },
        )
    else:
        results_path = os.path.join(out_dir, "results.csv")
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["benchmark", "budgets", "repeat", "seed"] + metric_cols
        writer.writerow(header)
        for row in rows:
            formatted = []
            for k in header:
                v = row[k]
                if isinstance(v, float):
                    formatted.append(repr(v))
                elif isinstance(v, list):
                    formatted.append("-".join(str(b) for b in v))
                else:
                    formatted.append(str(v))
            writer.writerow(formatted)
        _atomic_write_text(results_path, buf.getvalue())

    summary = {}
    for name in names:
        sub = [r for r in rows if r["benchmark"] == name]
        summary[name] = {
            k: float(np.mean([r[k] for r in sub])) for k in ["rmse", "r2", "mnll", "nrmse"]
        }
        summary[name]["repeats"] = len(sub)
    _write_json(
        os.path.join(out_dir, "summary.json"),
        {
            "command": "bench",
            "config_hash": _config_hash(config),
            "seed": run_seed,
            "standardize": standardize,
            "benchmarks": summary,
            "results_path": results_path,
            "wall_time_s": time.perf_counter() - t0,
            "threads": n_threads,
        },
    )
    return rows


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> _Parser:
    parser = _Parser(prog="resgp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", default=".")

    p_pred = sub.add_parser("predict", help="predict at query points")
    p_pred.add_argument("--model", required=True)
    p_pred.add_argument("--queries", required=True)
    p_pred.add_argument("--out", default=".")
    p_pred.add_argument("--format", choices=["csv", "structured"], default="csv")

    p_act = sub.add_parser("active", help="sequential design on a benchmark")
    p_act.add_argument("--config", required=True)
    p_act.add_argument("--seed", type=int, default=None)
    p_act.add_argument("--out", default=".")

    p_bnd = sub.add_parser("bounds", help="uniform error bound for a saved model")
    p_bnd.add_argument("--model", required=True)
    p_bnd.add_argument("--config", required=True)
    p_bnd.add_argument("--seed", type=int, default=None)
    p_bnd.add_argument("--out", default=".")

    p_bench = sub.add_parser("bench", help="run the benchmark suite")
    p_bench.add_argument("--config", default=None)
    p_bench.add_argument("--seed", type=int, default=None)
    p_bench.add_argument("--out", default=".")
    p_bench.add_argument("--format", choices=["csv", "structured"], default="csv")

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "train":
            cmd_train(_load_config(args.config), args.out, args.seed)
        elif args.command == "predict":
            cmd_predict(args.model, args.queries, args.out, args.format)
        elif args.command == "active":
            cmd_active(_load_config(args.config), args.out, args.seed)
        elif args.command == "bounds":
            cmd_bounds(args.model, _load_config(args.config), args.out, args.seed)
        elif args.command == "bench":
            config = _load_config(args.config) if args.config else {}
            cmd_bench(config, args.out, args.seed, args.format)
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ResourceLimitError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetFormatError, NestingError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OracleError, IllConditionedError, np.linalg.LinAlgError, OverflowError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, UnsupportedModelError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
