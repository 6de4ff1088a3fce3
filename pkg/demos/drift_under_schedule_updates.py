"""
How far does the forward marginal move when the schedule moves?
================================================================

The KL between two forward marginals q(x_t | x_0) is compared with the
quadratic bound C * max|beta' - beta|^2 for shrinking perturbations.
"""

import numpy as np

from stats_ts.diffusion import drift_bound
from stats_ts.rng import RandomSource

rng = RandomSource(4)
T, t = 20, 12
beta = np.linspace(0.005, 0.05, T)
x0 = rng.normal(24)
direction = rng.uniform(-1, 1, T)

print(" delta        KL          bound      ratio")
for delta in (1e-2, 3e-3, 1e-3, 3e-4, 1e-4):
    beta_p = np.clip(beta + delta * direction, 1e-4, 0.2)
    kl, bound = drift_bound(beta, beta_p, t, x0, a=0.1, beta_max=0.2)
    print(f"{delta:7.0e}  {kl:11.3e}  {bound:11.3e}  {kl / bound:8.2e}")

# both columns shrink like delta^2, so the ratio settles to a constant
