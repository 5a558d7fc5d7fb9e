"""Random exploration for nonsmooth nonconvex descent oracles."""
from .core import (ExplorationParams, FeasibleSet, HalfSpace, InfeasibleOracleOutput,
                   RepOutcome, RunState, Trajectory, augmented_iteration, budget_bound,
                   check_run_invariants, rep_step, run, step_budget)
from .diagnostics import (CertifierTolerances, DStatReport, box_constrained_lsq,
                          brute_force_dstat_check, certify, certify_lts, certify_relu,
                          certify_trimmed_lasso)
from .harness import (ExperimentConfig, PairedResult, SummaryTable, classify_delta,
                      mcnemar_exact_one_sided, run_experiment, verify_rate_bound)
from .oracles import DcaConfig, DcaOracle, ProxLinearConfig, ProxLinearOracle
from .problems import (LtsInstance, ReluInstance, TrimmedLassoInstance, generate_lts,
                       generate_relu, generate_trimmed_lasso, load_instance, save_instance)
from .samplers import DirectionSampler, StepSampler

__version__ = "0.1.0"
