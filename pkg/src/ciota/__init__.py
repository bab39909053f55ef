"""Collaborative control-flow anomaly detection over memory-region jump traces."""

from ciota.emm import (
    FrequencyMatrix,
    MarkovChain,
    ModelParams,
    ScoreWindow,
    attest,
    avg_window_prob,
    combine,
    distance,
    simple_merge,
    state_of_address,
    to_markov,
    trajectory_prob,
)

__version__ = "0.1.0"

__all__ = [
    "FrequencyMatrix",
    "MarkovChain",
    "ModelParams",
    "ScoreWindow",
    "attest",
    "avg_window_prob",
    "combine",
    "distance",
    "simple_merge",
    "state_of_address",
    "to_markov",
    "trajectory_prob",
]
