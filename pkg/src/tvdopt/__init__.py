"""
Distributed asynchronous stochastic optimization for time-varying problems.

Nodes on a randomly activated network track the minimizer of a sum of
expected local costs. Each tick they mix copies with their connected
neighbors and take a projected epsilon-gradient step. Noise densities and
gradient snapshots are exchanged only when a utility test says the stale
copies could break the gradient accuracy target.
"""

from .analysis import (BoundError, BoundInputs, contraction_factor, estimate_delta_x, estimate_G,
                       fit_rate, gamma_of, gradient_spread, proof_rate, psi_hat, theorem1_bound,
                       tracking_error, trailing_error, true_optimizer)
from .distributions import (Empirical, TruncatedRayleigh, Weibull, decode_pdf, encode_pdf,
                            evolve_rayleigh, evolve_weibull, sup_density_diff)
from .netgraph import (GraphError, NetworkModel, expected_laplacian, grid_model, lambda2,
                       lambda_max, laplacian, random_geometric_model, sample_adjacency)
from .objective import (BoxSet, GradientSnapshot, NodeObjective, QuadraticNode, estimate_constants,
                        mc_expected_gradient, moment_expected_gradient, project)
from .solver import (InvariantError, StepSizes, World, consensus_mix, node_update,
                     run_replication)
from .trigger import (PolicyParams, decide, decide_linear, utility_receiver, utility_sender_grad,
                      utility_sender_pdf, verify_epsilon_guarantee)

__version__ = "0.1.0"
