"""Tabular lab for mixing a small target dataset with an exact source model
in fitted Q-iteration, with Monte-Carlo checks of the accompanying bounds."""
from .bounds import (BoundInputs, ConvergenceInputs, convergence_bound_rhs, dynamics_gap_xi,
                     expected_bound_rhs, neighborhood_c, optimal_lambda_closed,
                     optimal_lambda_numeric, varsigma, worst_case_bound_rhs)
from .data import (DomainPair, SamplingDistribution, TransitionDataset, beta_bounds,
                   coverage_check, perturb_dynamics, random_mdp, sample_dataset)
from .mdp import (OPTIMALITY, Optimality, Policy, PolicyEvaluation, TabularMDP, exact_backup,
                  greedy_policy, optimal_q, policy_value, validate_mdp)
from .solver import SolveConfig, brute_force_minimizer, run_fqi, weighted_update

__version__ = "0.1.0"
