"""Receive-side decision procedure of the ledger protocol."""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Optional

from ciota.agent import AgentState, Alert, AlertKind, adopt_global
from ciota.chain import BlockMeta, Chain, PartialBlock, pb_effective_length, validate_linkage, validate_partial
from ciota.emm import combine, distance
from ciota.errors import InvalidParameter

logger = logging.getLogger(__name__)


class Action(str, enum.Enum):
    REPLACE_CHAIN = "replace_chain"
    REPLACE_CHAIN_AND_ADOPT = "replace_chain_and_adopt"
    DISCARD = "discard"
    DIRECT_MESSAGE = "direct_message"
    REPORT = "report"
    DROPPED = "dropped"


@dataclass(frozen=True)
class Decision:
    action: Action
    targets: tuple[str, ...] = ()
    reason: Optional[str] = None
    distance: Optional[float] = None

    @property
    def replaced(self) -> bool:
        return self.action in (Action.REPLACE_CHAIN, Action.REPLACE_CHAIN_AND_ADOPT)


def _rate_limited(agent: AgentState, now: float) -> bool:
    if agent.peer_budget is None:
        return False
    interval = agent.protocol.interval
    if agent.rx_window_start is None or now - agent.rx_window_start >= interval:
        agent.rx_window_start = now
        agent.rx_count = 0
    if agent.rx_count >= agent.peer_budget:
        return True
    agent.rx_count += 1
    return False


def _report(agent: AgentState, sender: str, now: float, reason: str, dist: Optional[float]) -> Decision:
    alert = Alert(AlertKind.REJECTED_AGENT, agent.agent_id, now, score=dist, detail=f"sender={sender} reason={reason}")
    agent.reports.append(alert)
    agent.emit(alert)
    return Decision(Action.REPORT, reason=reason, distance=dist)


def _adopt_longer(agent: AgentState, incoming: Chain) -> Decision:
    block = incoming.last_block
    if not validate_linkage(Chain(incoming.blocks)):
        return Decision(Action.DISCARD, reason="linkage")
    old_length = len(agent.chain)
    if not adopt_global(agent, block):
        return Decision(Action.DISCARD, reason="invalid-block")
    pb = incoming.partial
    keep_pb = (
        pb is not None
        and validate_linkage(incoming)
        and validate_partial(pb, agent.keyring, agent.protocol.block_size)
    )
    if not keep_pb:
        pb = PartialBlock(_next_meta(incoming))
    agent.chain = Chain(incoming.blocks, pb)
    logger.debug("%s adopted block %d (previous chain length %d)", agent.agent_id, len(incoming), old_length)
    return Decision(Action.REPLACE_CHAIN_AND_ADOPT)


def _next_meta(chain: Chain) -> BlockMeta:
    last = chain.last_block
    return BlockMeta(last.digest, last.meta.app_id, last.meta.app_version, last.meta.block_index + 1)


def receive_chain(
    agent: AgentState,
    incoming: Chain,
    sender: str,
    now: Optional[float] = None,
    *,
    direct: bool = False,
) -> Decision:
    """Process a chain received from ``sender`` and update ``agent`` in place.

    ``direct`` marks chains delivered through a direct message; those never
    trigger a further direct message.
    """
    if now is None:
        now = agent.clock()
    if _rate_limited(agent, now):
        return Decision(Action.DROPPED, reason="rate-limit")

    local = agent.chain
    if len(incoming) < len(local):
        return Decision(Action.DISCARD, reason="shorter")
    if len(incoming) > len(local):
        return _adopt_longer(agent, incoming)

    me = agent.agent_id
    cfg = agent.protocol
    in_pb = incoming.partial
    local_pb = local.partial
    if in_pb is None:
        return Decision(Action.DISCARD, reason="no-partial")
    eff_in = pb_effective_length(in_pb, me)
    eff_local = pb_effective_length(local_pb, me)

    failure: Optional[str] = None
    dist: Optional[float] = None
    significant = False

    validity = validate_linkage(incoming)
    if validity:
        validity = validate_partial(in_pb, agent.keyring, cfg.block_size)

    if eff_in > eff_local:
        if not validity:
            failure, significant = validity.reason, True
        else:
            candidate = combine(in_pb.models(), agent.params.p_a) if in_pb.records else None
            dist = 0.0 if candidate is None else distance(agent.local_model, candidate)
            if dist < agent.params.alpha:
                agent.chain = incoming
                return Decision(Action.REPLACE_CHAIN, distance=dist)
            failure = "attestation"
            significant = dist >= cfg.report_factor * agent.params.alpha
    elif eff_in == eff_local:
        local_ids = local_pb.agent_ids if local_pb is not None else frozenset()
        if in_pb.agent_ids != local_ids:
            if not validity:
                failure, significant = validity.reason, True
            elif cfg.direct_messaging and not direct:
                agent.dm_counter += 1
                if agent.dm_counter % cfg.k_dm == 0:
                    targets = tuple(
                        r.agent_id for r in in_pb.records if r.agent_id not in local_ids and r.agent_id != me
                    )
                    if targets:
                        return Decision(Action.DIRECT_MESSAGE, targets=targets)

    if failure is not None and significant:
        return _report(agent, sender, now, failure, dist)
    return Decision(Action.DISCARD, reason=failure, distance=dist)


def interval_schedule(chain_length: int, decay: float, t_min: float, t_max: float) -> float:
    """Share interval that grows from ``t_min`` toward ``t_max`` as blocks accumulate."""
    if t_min > t_max:
        raise InvalidParameter(f"t_min {t_min} exceeds t_max {t_max}")
    if decay <= 0:
        raise InvalidParameter("decay rate must be positive")
    if chain_length < 0:
        raise InvalidParameter("chain length must be non-negative")
    return (1.0 - 2.0 ** (-decay * chain_length)) * (t_max - t_min) + t_min
