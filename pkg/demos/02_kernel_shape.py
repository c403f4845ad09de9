"""
What one coarse step has to represent
=====================================

A student step replaces ten teacher steps with a single Gaussian. Composing
those ten steps on a grid shows when that is exact and when it is not.
"""

import numpy as np

from stepdistill.config import ExperimentConfig
from stepdistill.harness import get_teacher
from stepdistill.nets import LinearDenoiser
from stepdistill.verify import (
    chapman_kolmogorov_gap, compose_kernel_grid, default_grid, linear_chain_moments, probe_states,
)

cfg = ExperimentConfig(output_dir="demo_runs")
schedule, data = cfg.noise_schedule(), cfg.data_spec()

# an affine noise predictor keeps every step affine, so the chain stays Gaussian
lin = LinearDenoiser(np.array([[0.3, 0.1], [-0.2, 0.5]]), np.array([0.1, -0.2]))
x = np.array([1.0, -0.5])
rep = compose_kernel_grid(lin, schedule, 30, 20, x, default_grid(lin, schedule, 30, 20, x, n=128))
m, c = linear_chain_moments(lin, schedule, 30, 20, x)
print("affine teacher: grid mean", rep.mean.round(6), "closed form", m.round(6))
print("  skew", rep.skew.round(5), "excess kurtosis", rep.excess_kurtosis.round(5), "gaussian:", rep.is_gaussian)

# composing in two stages lands on the same kernel
gap = chapman_kolmogorov_gap(lin, schedule, 30, 25, 20, x, grid=default_grid(lin, schedule, 30, 20, x, n=128))
print(f"two-stage vs direct composition, total variation {gap:.1e}")

# the trained teacher between two modes: the kernel splits
teacher = get_teacher(cfg)
for state in probe_states(data):
    r = compose_kernel_grid(teacher, schedule, 12, 2, state)
    print(f"start {state.round(2)}: modes {r.modes}, excess kurtosis {r.excess_kurtosis.round(3)}")

# the last density can be written out for plotting elsewhere
with open("demo_runs/kernel.txt", "w") as fh:
    r.density.dump_text(fh)
