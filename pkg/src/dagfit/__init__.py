"""Causal DAG learning from interventional data by constrained optimization."""

from .autodiff import Tape, Tensor, grad_check
from .densities import (ConditionalModelBank, DsfHead, GaussianHead,
                        conditional_params, dsf_transform, flow_log_density,
                        gaussian_log_density, make_head)
from .graph import (BinaryAdjacency, DagEstimate, EdgeLogits, acyclicity,
                    is_acyclic, sample_adjacency, threshold_graph)
from .metrics import (edge_counts, heldout_nll, imec_equivalent,
                      metrics_report, model_log_density, shd, sid)
from .scm import (Dataset, GroundTruthScm, RegimePlan, make_plan, read_dataset,
                  sample_bimodal_pair_dataset, sample_dag, sample_data,
                  sample_scm, write_dataset)
from .scores import (InterventionalFamily, TargetLogits, family_from_lists,
                     joint_log_density, observational_family, score_known,
                     score_perfect, score_unknown)
from .training import (AugLagState, RMSprop, TrainConfig, TrainReport,
                       aug_lagrangian_objective, default_lambda_grid,
                       default_lambda_r_grid, fit_fixed_graph,
                       select_hyperparameters, solve_subproblem, train,
                       update_multipliers)

__version__ = "0.1.0"
