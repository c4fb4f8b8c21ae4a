"""Label-efficient model evaluation by adaptive importance sampling.

Estimate classifier performance measures (accuracy, F-scores, MCC, PR curves,
regression risks) from a small, adaptively chosen set of labeled items, with
importance-weight-exact estimates, delta-method confidence regions, and a
Bayesian label model that steers sampling toward the items that matter.
"""

from ._kernels import BACKEND, HAS_NUMBA, AliasSampler
from .harness import (DeterministicOracle, ExperimentConfig,
                      StochasticLabelOracle, SyntheticPoolSpec,
                      export_results, generate_synthetic_pool, run_experiment,
                      simulate_oracle)
from .measures import (BINARY_KINDS, REGRESSION_KINDS, Measure,
                       PredictionSource, UndefinedMeasureError,
                       custom_measure, eval_risk, make_binary_measure,
                       make_pr_curve_measure, make_regression_measure,
                       measure_from_spec)
from .oracle_model import (DirichletTreeModel, StochasticOracleModel,
                           init_hyperparams, init_stochastic_model)
from .partition import (DegenerateStratificationError, PartitionTree,
                        assign_blocks, build_tree, csf_bin_edges,
                        grid_block_edges, stratify_pool,
                        uniform_grid_thresholds)
from .pool import PoolFormatError, TestPool, load_pool_csv, save_pool_csv
from .proposals import (DegenerateProposalError, MeasureBinding, Proposal,
                        adapted_proposal_det, adapted_proposal_stoch,
                        epsilon_det, epsilon_stoch, kl_to_optimal,
                        mix_with_marginal, optimal_proposal,
                        static_score_proposal, uniform_proposal)
from .sampler import (AISLoop, EmptyHistoryError, EstimateReport,
                      OracleUnavailable, RunConfig, RunHistory, RunSuspended,
                      SupportAuditError, confidence_region,
                      estimate_covariance, estimate_G, passive_estimate,
                      pool_exact_measure, resume_run, run_ais,
                      static_is_estimate, stratified_estimate)

__version__ = "0.1.0"

__all__ = [
    "AISLoop", "AliasSampler", "BACKEND", "BINARY_KINDS",
    "DegenerateProposalError", "DegenerateStratificationError",
    "DeterministicOracle", "DirichletTreeModel", "EmptyHistoryError",
    "EstimateReport", "ExperimentConfig", "HAS_NUMBA", "Measure",
    "MeasureBinding", "OracleUnavailable", "PartitionTree", "PoolFormatError",
    "PredictionSource", "Proposal", "REGRESSION_KINDS", "RunConfig",
    "RunHistory", "RunSuspended", "StochasticLabelOracle",
    "StochasticOracleModel", "SupportAuditError", "SyntheticPoolSpec",
    "TestPool", "UndefinedMeasureError", "adapted_proposal_det",
    "adapted_proposal_stoch", "assign_blocks", "build_tree",
    "confidence_region", "csf_bin_edges", "custom_measure", "epsilon_det",
    "epsilon_stoch", "estimate_G", "estimate_covariance", "eval_risk",
    "export_results", "generate_synthetic_pool", "grid_block_edges",
    "init_hyperparams", "init_stochastic_model", "kl_to_optimal",
    "load_pool_csv", "make_binary_measure", "make_pr_curve_measure",
    "make_regression_measure", "measure_from_spec", "mix_with_marginal",
    "optimal_proposal", "passive_estimate", "pool_exact_measure",
    "resume_run", "run_ais", "run_experiment", "save_pool_csv",
    "simulate_oracle", "static_is_estimate", "static_score_proposal",
    "stratified_estimate", "stratify_pool", "uniform_grid_thresholds",
    "uniform_proposal",
]
