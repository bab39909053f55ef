"""Discrete-event simulation of the ledger protocol over agent topologies."""

from ciota.simnet.kernel import BACKEND, EpochKernel
from ciota.simnet.sim import (
    Scenario,
    SimConfig,
    SimMetrics,
    apply_scenario,
    deadlock_oracle,
    run_simulation,
)
from ciota.simnet.topology import (
    Topology,
    gen_barabasi_albert,
    gen_complete,
    gen_watts_strogatz,
    make_topology,
)

__all__ = [
    "BACKEND",
    "EpochKernel",
    "Scenario",
    "SimConfig",
    "SimMetrics",
    "Topology",
    "apply_scenario",
    "deadlock_oracle",
    "gen_barabasi_albert",
    "gen_complete",
    "gen_watts_strogatz",
    "make_topology",
    "run_simulation",
]
