"""Recovering the direction of a single causal edge from interventions.

Observational data alone cannot orient X1 -> X2 in a linear-Gaussian pair;
with perfect interventions on both nodes the orientation becomes
identifiable, and the constrained training run finds it. This script builds
one such dataset, trains the Gaussian-head model, and prints the learned
edge probabilities next to the ground truth.
"""

import numpy as np

import dagfit as df
from dagfit.training import TrainConfig, train

rng = np.random.default_rng(5)
scm = df.sample_scm(2, 0.5, "linear", rng)
plan = df.make_plan(scm, "perfect", rng)
dataset = df.sample_data(scm, plan, 5000, rng)

print("ground truth adjacency (row -> column):")
print(scm.dag.astype(int))
print(f"regimes: {plan.family.K} (observational + one per node)")

config = TrainConfig(score_type="known-perfect", density="gaussian",
                     lam=0.01, seed=0)
report = train(config, dataset)

print(f"\ntraining: {report.status} after {report.iterations} minibatch steps "
      f"({report.subproblems} subproblems, h = {report.final_h:.2e})")
print("learned edge probabilities sigma(lambda):")
print(np.round(report.edge_probs, 4))
print("thresholded graph:")
print(report.dag.astype(int))
print("correct orientation:", bool(np.array_equal(report.dag, scm.dag)))
