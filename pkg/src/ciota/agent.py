"""A device agent: local monitoring plus its share of the ledger protocol."""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from ciota.chain import Block, Chain, PartialBlock, close_if_full, make_record, validate_block
from ciota.emm import FrequencyMatrix, ModelParams, ScoreWindow, State, combine
from ciota.signing import HmacSigner, KeyPair, Keyring, SignatureProvider

logger = logging.getLogger(__name__)


class AlertKind(str, enum.Enum):
    ANOMALY = "anomaly"
    REJECTED_BLOCK = "rejected_block"
    REJECTED_AGENT = "rejected_agent"


@dataclass(frozen=True)
class Alert:
    kind: AlertKind
    agent_id: str
    timestamp: float
    score: Optional[float] = None
    src_state: Optional[State] = None
    dst_state: Optional[State] = None
    detail: str = ""

    def to_csv(self) -> str:
        def fmt(v: object) -> str:
            return "" if v is None else str(v)

        detail = self.detail.replace(",", ";").replace("\n", " ")
        return ",".join(
            [
                repr(self.timestamp),
                self.agent_id,
                self.kind.value,
                "" if self.score is None else repr(self.score),
                fmt(self.src_state),
                fmt(self.dst_state),
                detail,
            ]
        )


ALERT_CSV_HEADER = "ts,agent_id,kind,score,src_state,dst_state,detail"

AlertSink = Callable[[Alert], None]


def log_sink(alert: Alert) -> None:
    logger.warning("%s", alert.to_csv())


@dataclass(frozen=True)
class ProtocolConfig:
    """Ledger parameters shared by every agent on one chain."""

    block_size: int = 20
    interval: float = 60.0
    k_dm: int = 1
    report_factor: float = 2.0
    direct_messaging: bool = True
    app_id: str = "app"
    app_version: str = "1"


@dataclass
class AgentState:
    agent_id: str
    keys: KeyPair
    keyring: Keyring
    params: ModelParams = field(default_factory=ModelParams)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    local_model: FrequencyMatrix = field(default_factory=FrequencyMatrix)
    score_window: Optional[ScoreWindow] = None
    current_state: Optional[State] = None
    chain: Optional[Chain] = None
    start_time: float = 0.0
    clock: Callable[[], float] = time.monotonic
    peer_budget: Optional[int] = None
    address: str = ""
    alert_sink: Optional[AlertSink] = None
    # receive-side bookkeeping
    dm_counter: int = 0
    rx_window_start: Optional[float] = None
    rx_count: int = 0
    reports: list[Alert] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.score_window is None:
            self.score_window = ScoreWindow(self.params.window_k)
        if self.chain is None:
            self.chain = Chain.genesis(self.protocol.app_id, self.protocol.app_version)
        if not self.address:
            self.address = self.agent_id

    @property
    def provider(self) -> SignatureProvider:
        return self.keyring.provider

    def emit(self, alert: Alert) -> None:
        if self.alert_sink is not None:
            self.alert_sink(alert)


def new_agent(
    agent_id: str,
    keyring: Keyring,
    *,
    seed: Optional[bytes] = None,
    **kwargs,
) -> AgentState:
    """Create an agent, generate its key pair and register it in ``keyring``."""
    keys = keyring.provider.generate(seed if seed is not None else agent_id.encode())
    keyring.add(agent_id, keys.public)
    return AgentState(agent_id=agent_id, keys=keys, keyring=keyring, **kwargs)


def mock_keyring() -> Keyring:
    return Keyring(HmacSigner())


def in_grace(agent: AgentState, now: float) -> bool:
    return now - agent.start_time < agent.params.t_grace


def monitor_batch(agent: AgentState, addresses: Iterable[int], now: float) -> list[Alert]:
    """Score and learn a batch of jump addresses; returns the anomaly alerts raised."""
    B = agent.params.region_size_bytes
    return monitor_states(agent, (_region(a, B) for a in addresses), now)


def _region(addr: int, region_size: int) -> State:
    if addr < 0:
        raise ValueError(f"negative address {addr}")
    return addr // region_size


def monitor_states(
    agent: AgentState,
    states: Iterable[State],
    now: float,
    scores_out: Optional[list[float]] = None,
) -> list[Alert]:
    """Monitor loop over already-mapped region states.

    When ``scores_out`` is given, the window score after every transition is
    appended to it (one entry per transition, in order).
    """
    p_thr = agent.params.p_thr
    window = agent.score_window
    model = agent.local_model
    alerting = not in_grace(agent, now)
    alerts: list[Alert] = []
    i = agent.current_state
    for j in states:
        if i is None:
            i = j
            continue
        window.push(model.prob(i, j))
        score = window.mean()
        if scores_out is not None:
            scores_out.append(score)
        if alerting and score < p_thr:
            alert = Alert(AlertKind.ANOMALY, agent.agent_id, now, score, i, j)
            alerts.append(alert)
            agent.emit(alert)
        else:
            # anomalous transitions are never learned
            model.add_count(i, j, 1)
        i = j
    agent.current_state = i
    return alerts


def adopt_global(agent: AgentState, block: Block) -> bool:
    """Replace the local model with the filtered combination of ``block``'s models.

    Returns False (state untouched) when the block does not validate.
    """
    check = validate_block(block, agent.keyring, agent.protocol.block_size)
    if not check:
        logger.info("%s: refusing to adopt invalid block (%s)", agent.agent_id, check.reason)
        return False
    agent.local_model = combine(block.models(), agent.params.p_a)
    agent.score_window.clear()
    return True


def contribute_record(agent: AgentState, pb: PartialBlock, now: float) -> PartialBlock:
    if in_grace(agent, now) or agent.agent_id in pb.agent_ids:
        return pb
    record = make_record(pb, agent.agent_id, agent.address, agent.local_model, agent.provider, agent.keys.secret)
    return pb.with_record(record)


def share(agent: AgentState, now: float) -> Chain:
    """Add the local record to the partial block, close it when full, and return the chain to send."""
    chain = agent.chain
    if chain.partial is not None:
        pb = contribute_record(agent, chain.partial, now)
        if pb is not chain.partial:
            chain = close_if_full(chain.with_partial(pb), agent.protocol.block_size)
            if len(chain) > len(agent.chain):
                adopt_global(agent, chain.last_block)
            agent.chain = chain
    return chain
