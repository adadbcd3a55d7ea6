"""
Two-fidelity emulation basics
=============================

Train an additive residual emulator on the two-fidelity Currin function,
then look at interpolation quality and held-out accuracy.
"""

import numpy as np

from resgp import (
    OptimizerConfig,
    design_uniform,
    evaluate,
    get_benchmark,
    metrics,
    nested_random_data,
    predict,
    predict_fidelity,
    train,
)

spec = get_benchmark("currin")

# 20 cheap evaluations, 5 expensive ones on a nested subset
data = nested_random_data(spec, [20, 5], seed=0)
model = train(data, OptimizerConfig(seed=0), domain=spec.domain)

print("fitted levels:")
for f, level in enumerate(model.levels, start=1):
    print(
        f"  fidelity {f}: amplitude {level.params.amplitude:.3f}, "
        f"weights {np.round(level.params.weights, 3)}, nll {level.fit_nll:.2f}"
    )

# the model reproduces its expensive training points almost exactly
post = predict(model, data.inputs[-1])
err = np.abs(np.atleast_2d(post.mean) - data.outputs[-1]).max()
print(f"\nmax interpolation error at the 5 high-fidelity points: {err:.2e}")

# held-out accuracy, and what the cheap level alone would give
test_x = design_uniform(spec.domain, 1000, seed=123)
truth = evaluate(spec, 2, test_x)
full = predict(model, test_x)
cheap = predict_fidelity(model, test_x, fidelity=1)
m_full = metrics(full.mean, full.var, truth)
m_cheap = metrics(cheap.mean, cheap.var, truth)
print(f"\nheld-out R2, both levels:  {m_full.r2:.4f}")
print(f"held-out R2, level 1 only: {m_cheap.r2:.4f}")
print(f"held-out RMSE, both levels: {m_full.rmse:.4f}")
