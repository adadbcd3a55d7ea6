"""Score the analytic benchmarks on regenerated designs and print a table."""

import numpy as np

from resgp import DEFAULT_BUDGETS, run_benchmark_case

SEEDS = range(3)

print(f"{'benchmark':<12}{'budgets':<12}{'R2':>8}{'RMSE':>8}{'MNLL':>8}")
for name in ("currin", "park", "borehole", "branin3", "hartmann3"):
    cases = [run_benchmark_case(name, DEFAULT_BUDGETS[name], seed=s) for s in SEEDS]
    r2 = np.mean([c["metrics"].r2 for c in cases])
    rmse = np.mean([c["metrics"].rmse for c in cases])
    mnll = np.mean([c["metrics"].mnll for c in cases])
    budgets = "-".join(str(b) for b in DEFAULT_BUDGETS[name])
    print(f"{name:<12}{budgets:<12}{r2:>8.3f}{rmse:>8.3f}{mnll:>8.2f}")
print(f"\n(standardized metrics, mean over {len(list(SEEDS))} seeds, 1000 test points)")
