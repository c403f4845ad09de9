"""
Five ways to measure a step mismatch
====================================

The penalty that keeps the student close to the teacher can use any of five
divergences. For one pair of Gaussians they disagree on scale but agree on
direction.
"""

import numpy as np

from stepdistill.divergences import DivergenceSpec, GaussianParams, divergence, quadrature_oracle

specs = [DivergenceSpec("kl"), DivergenceSpec("js"), DivergenceSpec("chi2"),
         DivergenceSpec("power", lam=1.0), DivergenceSpec("renyi", alpha=0.5)]
p = GaussianParams([0.0], [1.0])

print("shift   " + "  ".join(f"{s.kind:>8s}" for s in specs))
for shift in (0.1, 0.5, 1.0, 2.0):
    q = GaussianParams([shift], [1.2])
    print(f"{shift:5.1f}   " + "  ".join(f"{divergence(s, p, q):8.5f}" for s in specs))

# the closed forms and the grid oracle agree to many digits
q = GaussianParams([0.7], [1.3])
for s in specs:
    print(f"{s.kind:6s} closed/adaptive {divergence(s, p, q):.10f}  oracle {quadrature_oracle(s, p, q):.10f}")

# dimensions add up for the log-type divergences
p2, q2 = GaussianParams([0.0, 0.3], [1.0, 0.8]), GaussianParams([0.5, 0.0], [1.1, 1.0])
kl = DivergenceSpec("kl")
parts = [divergence(kl, GaussianParams([p2.mean[i]], [p2.std[i]]), GaussianParams([q2.mean[i]], [q2.std[i]]))
         for i in range(2)]
print("2-d KL", divergence(kl, p2, q2), "sum of 1-d", np.sum(parts))
