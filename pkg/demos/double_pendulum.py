"""
Emulating a chaotic simulator
=============================

The double pendulum benchmark maps a release angle to both arm angles at
t=5, integrated with fixed-step RK4. The coarse step plays the cheap
fidelity, the fine step the expensive one.
"""

import numpy as np

from resgp import (
    OptimizerConfig,
    design_uniform,
    evaluate,
    get_benchmark,
    nested_random_data,
    pendulum_energy,
    pendulum_trajectory,
    predict,
    train,
)

# energy drift is the usual integrator sanity check
for dt in (0.1, 0.01):
    _, path = pendulum_trajectory(1.4, dt=dt)
    energy = pendulum_energy(path)
    drift = np.max(np.abs(energy - energy[0]))
    print(f"dt={dt:<5} energy drift over [0, 5]: {drift:.2e}")

spec = get_benchmark("pendulum")
data = nested_random_data(spec, [41, 14], seed=0)
model = train(data, OptimizerConfig(seed=0), domain=spec.domain)

test_x = design_uniform(spec.domain, 200, seed=99)
truth = evaluate(spec, 2, test_x)
post = predict(model, test_x)
err = np.abs(np.atleast_2d(post.mean) - truth)
print(f"\nemulator trained on 41 coarse + 14 fine runs")
print(f"max |error| over 200 release angles: theta1 {err[:, 0].max():.3f}, theta2 {err[:, 1].max():.3f}")
print(f"rms  |error|:                        theta1 {np.sqrt((err[:, 0]**2).mean()):.3f}, theta2 {np.sqrt((err[:, 1]**2).mean()):.3f}")

# the coarse fidelity alone is visibly off near the chaotic end of the range
gap = np.abs(evaluate(spec, 2, test_x) - evaluate(spec, 1, test_x))
print(f"\ncoarse-vs-fine simulator gap, max over the same angles: {gap.max():.3f}")
