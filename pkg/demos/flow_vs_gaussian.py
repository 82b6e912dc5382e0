"""When a Gaussian head is too weak to see the dependence, a flow is not.

The "X" dataset mixes two opposite-slope linear mechanisms, so the effect's
conditional density is bimodal with a mean that never moves: a Gaussian
head fits it as noise, while the sigmoidal-flow head models both branches.
This script fits both heads with the direction fixed to the truth and
compares held-out likelihoods, then runs full structure learning with the
flow head.
"""

from dataclasses import replace

import numpy as np

import dagfit as df
from dagfit.training import TrainConfig, fit_fixed_graph, train

rng = np.random.default_rng(1)
dataset, w = df.sample_bimodal_pair_dataset(5000, rng)
truth = dataset.scm.dag
print(f"mixture slope +-{abs(w):.3f}; true edge 1->2; regimes: obs, do(1), do(2)")

base = TrainConfig(score_type="known-perfect", lam=0.0, seed=0)
mask = np.arange(dataset.n) % 5 == 0
gauss, _ = fit_fixed_graph(dataset.X, dataset.regimes, truth, dataset.family,
                           replace(base, density="gaussian"), max_steps=8000)
flow, _ = fit_fixed_graph(dataset.X, dataset.regimes, truth, dataset.family,
                          replace(base, density="dsf"), max_steps=8000)
nll_g = gauss.heldout_nll(dataset.X[mask], dataset.regimes[mask])
nll_f = flow.heldout_nll(dataset.X[mask], dataset.regimes[mask])
print(f"fixed-direction held-out NLL: gaussian {nll_g:.4f}  flow {nll_f:.4f}")
print("flow fits the bimodal conditional better:", nll_f < nll_g)

report = train(replace(base, density="dsf", lam=0.01), dataset)
print(f"\nflow-head structure learning: {report.status}, learned graph")
print(report.dag.astype(int))
print("direction recovered:", bool(np.array_equal(report.dag, truth)))
