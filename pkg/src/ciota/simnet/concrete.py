"""Full-fidelity network: real agents, signed records and model attestation.

Exposes the same surface as the abstract kernels so the simulation driver can
use either.  Direct-message targets are visited in agent-index order, which
keeps honest runs step-for-step identical to the abstract kernel.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ciota.agent import AgentState, ProtocolConfig, mock_keyring, new_agent, share
from ciota.chain import Chain
from ciota.emm import FrequencyMatrix, ModelParams, train
from ciota.protocol import Action, receive_chain
from ciota.simnet._pykernel import select_targets
from ciota.simnet.topology import Topology
from ciota.traces import GroundTruthModel, gen_benign_states


def agent_name(i: int) -> str:
    return f"agent-{i:05d}"


def poison_model(model: FrequencyMatrix, first_state: int, transitions: int, count: int) -> FrequencyMatrix:
    """Copy of ``model`` where every benign region also jumps into a malicious path.

    The path visits ``transitions`` fresh regions starting at ``first_state``
    and returns to the lowest benign region; each malicious edge is seen
    ``count`` times.
    """
    out = model.copy()
    benign = sorted(model.states)
    for s in benign:
        out.add_count(s, first_state, count)
    prev = first_state
    for k in range(1, transitions):
        out.add_count(prev, first_state + k, count)
        prev = first_state + k
    out.add_count(prev, benign[0] if benign else first_state, count)
    return out


class ConcreteNetwork:
    backend = "concrete"

    def __init__(self, config, topology: Topology, poisoned: Sequence[bool]):
        self.config = config
        n = config.n_agents
        self.n = n
        self.names = [agent_name(i) for i in range(n)]
        self.index = {name: i for i, name in enumerate(self.names)}
        indptr, indices = topology.csr
        self.neighbors = [indices[indptr[i] : indptr[i + 1]].tolist() for i in range(n)]
        self.active = [True] * n
        self.keyring = mock_keyring()
        params = ModelParams(p_a=config.p_a, alpha=config.alpha, window_k=100)
        protocol = ProtocolConfig(
            block_size=config.block_size,
            interval=config.interval,
            k_dm=config.k_dm,
            direct_messaging=config.dm_enabled,
        )
        self.gt = GroundTruthModel.random(config.gt_states, config.gt_out_degree, seed=config.seed)
        sc = config.scenario
        self.agents: list[AgentState] = []
        for i, name in enumerate(self.names):
            model = train(FrequencyMatrix(), gen_benign_states(self.gt, config.train_steps, seed=config.seed * 1_000_003 + i))
            if poisoned[i]:
                model = poison_model(model, config.gt_states + 1, sc.poison_transitions, sc.poison_count)
            agent = new_agent(
                name,
                self.keyring,
                params=params,
                protocol=protocol,
                local_model=model,
                peer_budget=config.rate_limit,
                clock=lambda: 0.0,
            )
            self.agents.append(agent)
        self.changes = 0
        self.messages = 0
        self.dm_messages = 0
        self.reports = 0
        self.dropped = 0
        self.max_chain = 0
        self.closes: list[int] = []

    # -- kernel-compatible queries ------------------------------------------------

    def set_active(self, agent: int, flag: bool) -> None:
        self.active[agent] = bool(flag)

    def pb_members(self, agent: int) -> list[int]:
        pb = self.agents[agent].chain.partial
        return sorted(self.index[i] for i in pb.agent_ids) if pb is not None else []

    def pb_length(self, agent: int) -> int:
        pb = self.agents[agent].chain.partial
        return len(pb) if pb is not None else 0

    def chain_length(self, agent: int) -> int:
        return len(self.agents[agent].chain)

    # -- protocol --------------------------------------------------------------

    def _deliver(self, r: int, chain: Chain, sender: int, now: float, direct: bool) -> None:
        if not self.active[r]:
            return
        self.messages += 1
        agent = self.agents[r]
        decision = receive_chain(agent, chain, self.names[sender], now, direct=direct)
        if decision.action is Action.DROPPED:
            self.dropped += 1
        elif decision.action is Action.REPORT:
            self.reports += 1
        elif decision.replaced:
            self.changes += 1
        elif decision.action is Action.DIRECT_MESSAGE:
            local = agent.chain
            for t in sorted(self.index[name] for name in decision.targets):
                self.dm_messages += 1
                self._deliver(t, local, r, now, True)

    def fire(self, a: int, rng_state: int, now: float = 0.0) -> int:
        agent = self.agents[a]
        # the receive budget renews when the agent's own interval starts
        agent.rx_window_start = now
        agent.rx_count = 0
        before = agent.chain
        chain = share(agent, now)
        if chain is not before:
            self.changes += 1
            if len(chain) > self.max_chain:
                self.max_chain = len(chain)
                self.closes.append(a)
        targets, rng_state = select_targets(self.neighbors[a], self.config.fanout or 0, rng_state)
        for r in targets:
            self._deliver(r, chain, a, now, False)
        return rng_state

    def run_epoch(self, order: Sequence[int], seed: int, times: Optional[np.ndarray] = None) -> None:
        state = seed & ((1 << 64) - 1)
        for a in order:
            a = int(a)
            if self.active[a]:
                now = float(times[a]) if times is not None else 0.0
                state = self.fire(a, state, now)
