"""Risk-seeking conservative policy iteration for finite-horizon Dec-POMDPs.

Plan over agent-state (finite-state-controller) policies with exact
evaluation, an entropic-risk annealing schedule, and a `.dpomdp` benchmark
harness. See the README for the CLI and file conventions.
"""

from .dpomdp_parser import (ParseDiagnostic, RawDpomdpFile, compile_model,
                            parse_dpomdp, serialize_canonical)
from .evaluation import (evaluate_exact, evaluate_risk, forward_marginals,
                         rollout_monte_carlo)
from .model import (DecPomdpModel, JointIndexer, make_initial_distribution,
                    matrix_game_model)
from .policy import (DeterministicAgentSlice, JointPolicy, dump_policy,
                     mix_policies, policy_from_json, policy_to_json,
                     random_policy)
from .risk import (FiniteMdp, RiskParameter, certainty_equivalent,
                   risk_policy_evaluation_mdp, risk_value_iteration,
                   weighted_logmeanexp)
from .solver import (AveragedLocalQ, NumericError, SolveResult, SolverConfig,
                     averaged_local_q, backward_tilted_values,
                     greedy_agent_update, rscpi, sweep)

__version__ = "0.1.0"

__all__ = [
    "AveragedLocalQ", "DecPomdpModel", "DeterministicAgentSlice",
    "FiniteMdp", "JointIndexer", "JointPolicy", "NumericError",
    "ParseDiagnostic", "RawDpomdpFile", "RiskParameter", "SolveResult",
    "SolverConfig", "averaged_local_q", "backward_tilted_values",
    "certainty_equivalent", "compile_model", "dump_policy", "evaluate_exact",
    "evaluate_risk", "forward_marginals", "greedy_agent_update",
    "make_initial_distribution", "matrix_game_model", "mix_policies",
    "parse_dpomdp", "policy_from_json", "policy_to_json", "random_policy",
    "risk_policy_evaluation_mdp", "risk_value_iteration",
    "rollout_monte_carlo", "rscpi", "serialize_canonical", "sweep",
    "weighted_logmeanexp",
]
