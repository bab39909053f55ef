"""Epoch-driven discrete-event simulation of chain sharing.

Every active agent fires one share event per epoch at ``e*T + phase + jitter``;
events are processed in time order.  A firing agent adds itself to its partial
block (closing it when full) and sends its chain to ``b`` random neighbors.
Deliveries and direct messages are processed synchronously inside the event.

Two fidelities share this driver: the abstract kernels reduce partial blocks
to member sets and script attestation through a poisoned flag, while the
concrete network runs the real ledger code with signed records and
FrequencyMatrix attestation.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from ciota.errors import InvalidParameter
from ciota.simnet.kernel import get_kernel
from ciota.simnet.topology import Topology

logger = logging.getLogger(__name__)

SCENARIO_KINDS = ("none", "poisoned_agents", "late_join", "no_direct_messaging")


@dataclass(frozen=True)
class Scenario:
    kind: str = "none"
    poisoned_fraction: float = 0.0
    poison_transitions: int = 2
    poison_count: int = 1000
    late_fraction: float = 0.0
    join_epoch: int = 0

    def __post_init__(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise InvalidParameter(f"unknown scenario {self.kind!r}")
        if not 0.0 <= self.poisoned_fraction <= 1.0:
            raise InvalidParameter("poisoned fraction must lie in [0, 1]")
        if not 0.0 <= self.late_fraction <= 1.0:
            raise InvalidParameter("late-join fraction must lie in [0, 1]")
        if self.join_epoch < 0:
            raise InvalidParameter("join epoch must be non-negative")


@dataclass(frozen=True)
class SimConfig:
    n_agents: int
    block_size: int
    interval: float = 60.0
    jitter: float = 0.1
    fanout: Optional[int] = None
    rate_limit: Optional[int] = None
    seed: int = 0
    k_dm: int = 1
    alpha: float = 0.05
    p_a: float = 0.25
    direct_messaging: bool = True
    max_epochs: int = 10_000
    blocks: int = 1
    mode: str = "abstract"
    backend: str = "auto"
    scenario: Scenario = field(default_factory=Scenario)
    # concrete mode workload
    gt_states: int = 12
    gt_out_degree: int = 3
    train_steps: int = 4000

    def __post_init__(self) -> None:
        if isinstance(self.scenario, Mapping):
            object.__setattr__(self, "scenario", Scenario(**self.scenario))
        if self.n_agents < 2:
            raise InvalidParameter("a simulation needs at least two agents")
        if not 1 <= self.block_size <= self.n_agents:
            raise InvalidParameter(f"block size must lie in [1, n_agents], got {self.block_size}")
        if self.interval <= 0:
            raise InvalidParameter("share interval must be positive")
        if not 0.0 <= self.jitter <= 1.0:
            raise InvalidParameter("jitter is a fraction of the interval in [0, 1]")
        if self.fanout is not None and self.fanout < 1:
            raise InvalidParameter("fan-out must be positive (or None for all neighbors)")
        if self.rate_limit is not None and self.rate_limit < 1:
            raise InvalidParameter("rate limit must be positive (or None for unlimited)")
        if self.k_dm < 1:
            raise InvalidParameter("k_dm must be at least 1")
        if self.max_epochs < 1 or self.blocks < 1:
            raise InvalidParameter("max_epochs and blocks must be positive")
        if self.mode not in ("abstract", "concrete"):
            raise InvalidParameter(f"unknown simulation mode {self.mode!r}")
        if not 0.0 < self.p_a < 1.0 or self.alpha < 0:
            raise InvalidParameter("p_a must lie in (0, 1) and alpha must be non-negative")

    @property
    def dm_enabled(self) -> bool:
        return self.direct_messaging and self.scenario.kind != "no_direct_messaging"

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidParameter(f"unknown simulation settings: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class AgentSnapshot:
    """What the deadlock predicate looks at: chain length and partial-block members."""

    chain_length: int
    members: frozenset[int]

    @property
    def pb_length(self) -> int:
        return len(self.members)


@dataclass
class SimMetrics:
    epochs_to_close: list[int] = field(default_factory=list)
    epochs_run: int = 0
    messages_sent: int = 0
    direct_messages: int = 0
    reports: int = 0
    dropped: int = 0
    degree_stats: dict[str, float] = field(default_factory=dict)
    deadlock_detected: bool = False
    completed: bool = False
    final_chain_lengths: list[int] = field(default_factory=list)
    final_pb_lengths: list[int] = field(default_factory=list)
    deadlock_dump: Optional[list[list[int]]] = None
    closers: list[int] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def deadlock_oracle(
    before: Mapping[Any, AgentSnapshot], after: Mapping[Any, AgentSnapshot], block_size: int
) -> bool:
    """Predicate D for every agent: partial block unchanged and shorter than L."""
    if set(before) != set(after):
        raise InvalidParameter("snapshots cover different agent sets")
    for agent, b in before.items():
        a = after[agent]
        if a != b or a.pb_length >= block_size:
            return False
    return True


def apply_scenario(config: SimConfig, rng: np.random.Generator) -> tuple[list[bool], list[int]]:
    """Draw the poisoned agents and per-agent activation epochs for ``config.scenario``."""
    n = config.n_agents
    sc = config.scenario
    poisoned = [False] * n
    join = [0] * n
    if sc.kind == "poisoned_agents" and sc.poisoned_fraction > 0:
        count = int(round(sc.poisoned_fraction * n))
        for a in rng.choice(n, size=count, replace=False):
            poisoned[int(a)] = True
    elif sc.kind == "late_join" and sc.late_fraction > 0:
        count = int(round(sc.late_fraction * n))
        for a in rng.choice(n, size=count, replace=False):
            join[int(a)] = sc.join_epoch
    return poisoned, join


class Simulation:
    """One seeded run; :meth:`step_epoch` advances a single epoch."""

    def __init__(self, config: SimConfig, topology: Topology):
        if topology.n != config.n_agents:
            raise InvalidParameter(f"topology has {topology.n} agents, config expects {config.n_agents}")
        topology.require_connected()
        self.config = config
        self.topology = topology
        self.rng = np.random.default_rng(config.seed)
        self.poisoned, self.join_epoch = apply_scenario(config, self.rng)
        indptr, indices = topology.csr
        if config.mode == "concrete":
            from ciota.simnet.concrete import ConcreteNetwork

            self.net = ConcreteNetwork(config, topology, self.poisoned)
        else:
            kernel_cls = get_kernel(config.backend)
            self.net = kernel_cls(
                indptr,
                indices,
                config.block_size,
                k_dm=config.k_dm,
                direct_messaging=config.dm_enabled,
                fanout=config.fanout or 0,
                rate_limit=config.rate_limit or 0,
                poisoned=[int(p) for p in self.poisoned],
                poison_tolerance=config.p_a,
            )
        T = config.interval
        self.phase = self.rng.uniform(0.0, (1.0 - config.jitter) * T, config.n_agents)
        self.epoch = 0
        self.close_epochs: list[int] = []
        for a in range(config.n_agents):
            if self.join_epoch[a] > 0:
                self.net.set_active(a, False)

    def snapshot(self) -> dict[int, AgentSnapshot]:
        return {
            a: AgentSnapshot(self.net.chain_length(a), frozenset(self.net.pb_members(a)))
            for a in range(self.config.n_agents)
        }

    def all_active(self) -> bool:
        # an agent joining at epoch j is switched on when step j starts
        return all(j < self.epoch for j in self.join_epoch)

    def step_epoch(self) -> None:
        cfg = self.config
        e = self.epoch
        for a, j in enumerate(self.join_epoch):
            if j == e and j > 0:
                self.net.set_active(a, True)
        T = cfg.interval
        times = e * T + self.phase + self.rng.uniform(0.0, cfg.jitter * T, cfg.n_agents)
        order = np.argsort(times, kind="stable").astype(np.int32)
        seed = int(self.rng.integers(0, 2**63, dtype=np.int64))
        if cfg.mode == "concrete":
            self.net.run_epoch(order, seed, times)
        else:
            self.net.run_epoch(order, seed)
        self.epoch += 1
        while len(self.close_epochs) < self.net.max_chain:
            self.close_epochs.append(self.epoch)

    def run(self) -> SimMetrics:
        cfg = self.config
        metrics = SimMetrics(degree_stats=self.topology.degree_stats())
        # With full broadcast and k_dm = 1 the epoch is deterministic given the
        # state, so one epoch without change is a permanent deadlock.
        deterministic = cfg.fanout is None and cfg.k_dm == 1 and cfg.rate_limit is None
        while self.epoch < cfg.max_epochs and len(self.close_epochs) < cfg.blocks:
            changes_before = self.net.changes
            closes_before = len(self.close_epochs)
            self.step_epoch()
            stalled = self.net.changes == changes_before and len(self.close_epochs) == closes_before
            if stalled and deterministic and self.all_active():
                metrics.deadlock_detected = True
                break
        metrics.completed = len(self.close_epochs) >= cfg.blocks
        if not metrics.completed and not metrics.deadlock_detected:
            metrics.deadlock_detected = True
            logger.warning("no block closed within %d epochs", cfg.max_epochs)
        if metrics.deadlock_detected:
            metrics.deadlock_dump = [sorted(self.net.pb_members(a)) for a in range(cfg.n_agents)]
        prev = 0
        for c in self.close_epochs[: cfg.blocks]:
            metrics.epochs_to_close.append(c - prev)
            prev = c
        metrics.epochs_run = self.epoch
        metrics.messages_sent = int(self.net.messages)
        metrics.direct_messages = int(self.net.dm_messages)
        metrics.reports = int(self.net.reports)
        metrics.dropped = int(self.net.dropped)
        metrics.closers = [int(a) for a in self.net.closes]
        metrics.final_chain_lengths = [int(self.net.chain_length(a)) for a in range(cfg.n_agents)]
        metrics.final_pb_lengths = [int(self.net.pb_length(a)) for a in range(cfg.n_agents)]
        return metrics


def run_simulation(config: SimConfig, topology: Topology) -> SimMetrics:
    return Simulation(config, topology).run()


def summarize(epochs: Sequence[float]) -> dict[str, float]:
    """Mean and population std of per-trial epoch counts (sorted first so the sum is order-independent)."""
    arr = np.sort(np.asarray(epochs, dtype=float))
    if arr.size == 0:
        return {"trials": 0, "mean": float("nan"), "std": float("nan")}
    return {"trials": int(arr.size), "mean": float(arr.mean()), "std": float(arr.std())}
