"""
A 50-step teacher and its 5-step clone
======================================

Train (or reuse) the ring-of-Gaussians teacher, then copy its weights into
a five-step student and see what step truncation costs before any RL.
"""

import numpy as np

from stepdistill.config import ExperimentConfig
from stepdistill.diffusion import sample_reverse
from stepdistill.harness import get_teacher, make_evaluator, teacher_metrics
from stepdistill.metrics import mode_metrics
from stepdistill.student import init_from_teacher, rollout_batch

cfg = ExperimentConfig(output_dir="demo_runs")
schedule, coarse, data = cfg.noise_schedule(), cfg.coarse_schedule(), cfg.data_spec()

# first call trains for ~20 s and caches the checkpoint under demo_runs/teachers
teacher = get_teacher(cfg)

conds = np.arange(4096) % data.mode_count
full = sample_reverse(teacher, schedule, 4096, record=False, seed=1, cond=conds).finals
print("teacher modes covered:", mode_metrics(full, data)["covered"])

# the clone takes one teacher evaluation per coarse step
student = init_from_teacher(teacher, schedule, coarse)
print("coarse timesteps:", coarse.taus)
print("per-step stds:   ", np.round(student.stds(), 4))

few = rollout_batch(student, conds, seed=1).finals
for name, x in (("teacher", full), ("5-step", few)):
    within = x - data.mode_means[data.nearest_mode(x)]
    print(f"{name:8s} within-mode std {within.std(0).round(4)}")

# the same comparison in the evaluation space
ev = make_evaluator(cfg)
print("teacher  ", {k: round(v, 5) for k, v in teacher_metrics(teacher, schedule, ev).items()})
print("5-step   ", {k: round(v, 5) for k, v in ev(student).items()})
