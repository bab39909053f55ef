"""Extensible Markov model over memory regions.

A :class:`FrequencyMatrix` holds sparse transition counts and is the only
mutable model representation; probabilities are derived on demand with
:func:`to_markov`.  States are non-negative integer region indices.
"""
from __future__ import annotations

import logging
import math
import struct
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from ciota.errors import DecodeError, InvalidInput, InvalidParameter

logger = logging.getLogger(__name__)

State = int
Pair = tuple[int, int]

MODEL_MAGIC = b"CEMM"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sHHQ")
_ENTRY = struct.Struct("<QQQ")
_U64_MAX = (1 << 64) - 1

# every finite double in [0, 1] is an integer multiple of 2**-1074
_EXACT_SHIFT = 1074


def state_of_address(addr: int, region_size: int) -> State:
    if region_size <= 0:
        raise InvalidParameter(f"region size must be positive, got {region_size}")
    if addr < 0:
        raise InvalidParameter(f"address must be non-negative, got {addr}")
    return addr // region_size


class FrequencyMatrix:
    """Sparse transition-count matrix with cached per-row totals."""

    __slots__ = ("counts", "row_totals", "_states")

    def __init__(self, counts: Optional[dict[Pair, int]] = None):
        self.counts: dict[Pair, int] = {}
        self.row_totals: dict[State, int] = {}
        self._states: set[State] = set()
        if counts:
            for (i, j), c in counts.items():
                self.add_count(i, j, c)

    @property
    def states(self) -> set[State]:
        return self._states

    def add_count(self, i: State, j: State, count: int) -> "FrequencyMatrix":
        if count < 0:
            raise InvalidInput(f"negative count {count} for ({i}, {j})")
        if count == 0:
            return self
        key = (i, j)
        self.counts[key] = self.counts.get(key, 0) + count
        self.row_totals[i] = self.row_totals.get(i, 0) + count
        self._states.add(i)
        self._states.add(j)
        return self

    def record_transition(self, i: State, j: State) -> "FrequencyMatrix":
        return self.add_count(i, j, 1)

    def prob(self, i: State, j: State) -> float:
        """Transition probability i -> j; 0.0 for unseen rows or entries."""
        c = self.counts.get((i, j))
        if c is None:
            return 0.0
        return c / self.row_totals[i]

    def total_count(self) -> int:
        return sum(self.row_totals.values())

    def copy(self) -> "FrequencyMatrix":
        out = FrequencyMatrix()
        out.counts = dict(self.counts)
        out.row_totals = dict(self.row_totals)
        out._states = set(self._states)
        return out

    def scaled(self, factor: int) -> "FrequencyMatrix":
        return FrequencyMatrix({k: c * factor for k, c in self.counts.items()})

    def __len__(self) -> int:
        return len(self.counts)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FrequencyMatrix):
            return NotImplemented
        return self.counts == other.counts

    def __repr__(self) -> str:
        return f"FrequencyMatrix({len(self.counts)} entries, {len(self._states)} states)"


def record_transition(model: FrequencyMatrix, i: State, j: State) -> FrequencyMatrix:
    return model.record_transition(i, j)


@dataclass
class MarkovChain:
    probs: dict[Pair, float] = field(default_factory=dict)
    states: set[State] = field(default_factory=set)

    def get(self, i: State, j: State) -> float:
        return self.probs.get((i, j), 0.0)


def to_markov(model: FrequencyMatrix) -> MarkovChain:
    totals = model.row_totals
    probs = {(i, j): c / totals[i] for (i, j), c in model.counts.items()}
    return MarkovChain(probs, set(model.states))


def trajectory_prob(chain: MarkovChain, trajectory: Sequence[State]) -> float:
    if len(trajectory) < 2:
        raise InvalidInput("a trajectory needs at least two states")
    p = 1.0
    for a, b in zip(trajectory, trajectory[1:]):
        p *= chain.probs.get((a, b), 0.0)
        if p == 0.0:
            return 0.0
    return p


class ScoreWindow:
    """FIFO of the last ``capacity`` transition probabilities.

    The running sum is kept as an exact integer so the mean is the correctly
    rounded average of the stored floats, independent of insertion history.
    """

    __slots__ = ("capacity", "entries", "_exact_sum")

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise InvalidParameter(f"window capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.entries: deque[float] = deque()
        self._exact_sum = 0

    @staticmethod
    def _scaled(p: float) -> int:
        num, den = p.as_integer_ratio()
        return num << (_EXACT_SHIFT - den.bit_length() + 1)

    def push(self, p: float) -> None:
        if not 0.0 <= p <= 1.0:
            raise InvalidInput(f"probability out of range: {p}")
        if len(self.entries) == self.capacity:
            self._exact_sum -= self._scaled(self.entries.popleft())
        self.entries.append(p)
        self._exact_sum += self._scaled(p)

    def clear(self) -> None:
        self.entries.clear()
        self._exact_sum = 0

    def mean(self) -> Optional[float]:
        if not self.entries:
            return None
        return self._exact_sum / (len(self.entries) << _EXACT_SHIFT)

    def __len__(self) -> int:
        return len(self.entries)


def avg_window_prob(window: ScoreWindow) -> Optional[float]:
    """Mean probability held in ``window``; ``None`` when the window is empty."""
    return window.mean()


def simple_merge(models: Sequence[FrequencyMatrix]) -> FrequencyMatrix:
    if not models:
        raise InvalidInput("cannot merge an empty list of models")
    out = FrequencyMatrix()
    for m in models:
        for (i, j), c in m.counts.items():
            out.add_count(i, j, c)
    return out


def combine(models: Sequence[FrequencyMatrix], p_a: float) -> FrequencyMatrix:
    """Sum ``models`` keeping only transitions seen by more than a ``p_a`` fraction."""
    if not models:
        raise InvalidInput("cannot combine an empty list of models")
    if not 0.0 < p_a < 1.0:
        raise InvalidParameter(f"p_a must lie in (0, 1), got {p_a}")
    n_models = len(models)
    sums: dict[Pair, int] = {}
    seen_by: dict[Pair, int] = {}
    for m in models:
        for key, c in m.counts.items():
            sums[key] = sums.get(key, 0) + c
            seen_by[key] = seen_by.get(key, 0) + 1
    out = FrequencyMatrix()
    for key in sorted(sums):
        if seen_by[key] / n_models <= p_a:
            continue
        out.add_count(key[0], key[1], sums[key])
    return out


def distance(a: FrequencyMatrix, b: FrequencyMatrix) -> float:
    """Mean absolute difference of transition probabilities over the joint state grid."""
    dim = len(a.states | b.states)
    if dim == 0:
        return 0.0
    ma, mb = to_markov(a).probs, to_markov(b).probs
    # fsum is exactly rounded, so the result is independent of set iteration order
    total = math.fsum(abs(ma.get(key, 0.0) - mb.get(key, 0.0)) for key in ma.keys() | mb.keys())
    return total / (dim * dim)


def distance_grid(a: FrequencyMatrix, b: FrequencyMatrix) -> dict[Pair, float]:
    """Per-entry |M_a - M_b| over entries nonzero in either model."""
    ma, mb = to_markov(a).probs, to_markov(b).probs
    return {key: abs(ma.get(key, 0.0) - mb.get(key, 0.0)) for key in sorted(ma.keys() | mb.keys())}


def attest(local: FrequencyMatrix, other: FrequencyMatrix, alpha: float) -> bool:
    if alpha < 0:
        raise InvalidParameter(f"alpha must be non-negative, got {alpha}")
    return distance(local, other) < alpha


def serialize_model(model: FrequencyMatrix) -> bytes:
    items = sorted(model.counts.items())
    parts = [_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, 0, len(items))]
    for (i, j), c in items:
        if i > _U64_MAX or j > _U64_MAX or c > _U64_MAX:
            raise InvalidInput(f"entry ({i}, {j}) = {c} does not fit in 64 bits")
        parts.append(_ENTRY.pack(i, j, c))
    return b"".join(parts)


def deserialize_model(data: bytes) -> FrequencyMatrix:
    if len(data) < _HEADER.size:
        raise DecodeError("truncated model header", len(data))
    magic, version, _reserved, n = _HEADER.unpack_from(data, 0)
    if magic != MODEL_MAGIC:
        raise DecodeError(f"bad model magic {magic!r}", 0)
    if version != MODEL_VERSION:
        raise DecodeError(f"unsupported model version {version}", 4)
    expected = _HEADER.size + n * _ENTRY.size
    if len(data) != expected:
        raise DecodeError(f"model length {len(data)} does not match {n} entries", min(len(data), expected))
    model = FrequencyMatrix()
    prev: Optional[Pair] = None
    for k in range(n):
        offset = _HEADER.size + k * _ENTRY.size
        i, j, c = _ENTRY.unpack_from(data, offset)
        if c == 0:
            raise DecodeError("zero count entry", offset)
        if prev is not None and (i, j) <= prev:
            raise DecodeError("entries not in canonical order", offset)
        prev = (i, j)
        model.add_count(i, j, c)
    return model


@dataclass(frozen=True)
class ModelParams:
    region_size_bytes: int = 256
    window_k: int = 10_000
    p_thr: float = 0.012
    p_a: float = 0.25
    alpha: float = 0.05
    t_grace: float = 0.0

    def __post_init__(self) -> None:
        if self.region_size_bytes <= 0:
            raise InvalidParameter("region_size_bytes must be positive")
        if self.window_k <= 0:
            raise InvalidParameter("window_k must be positive")
        if not 0.0 < self.p_thr < 1.0:
            raise InvalidParameter(f"p_thr must lie in (0, 1), got {self.p_thr}")
        if not 0.0 < self.p_a < 1.0:
            raise InvalidParameter(f"p_a must lie in (0, 1), got {self.p_a}")
        if self.alpha < 0:
            raise InvalidParameter("alpha must be non-negative")
        if self.t_grace < 0:
            raise InvalidParameter("t_grace must be non-negative")
        if not self.region_size_is_power_of_two:
            logger.warning("region size %d is not a power of two", self.region_size_bytes)

    @property
    def region_size_is_power_of_two(self) -> bool:
        b = self.region_size_bytes
        return b & (b - 1) == 0


def train(model: FrequencyMatrix, states: Iterable[State]) -> FrequencyMatrix:
    """Record every consecutive transition of ``states`` into ``model``."""
    it = iter(states)
    prev = next(it, None)
    if prev is None:
        return model
    for s in it:
        model.add_count(prev, s, 1)
        prev = s
    return model
