"""Jump-address traces: file I/O, synthetic benign workloads and attack injection.

A :class:`GroundTruthModel` stands in for an application's control flow.  Each
region ``r`` emits addresses uniformly from ``[r*B, (r+1)*B)``, so mapping a
generated trace back through :func:`ciota.emm.state_of_address` recovers the
random walk exactly.
"""
from __future__ import annotations

import bisect
import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from ciota.emm import MarkovChain, Pair, State
from ciota.errors import InvalidInput, InvalidParameter, TraceParseError

TRACE_HEADER = "#ciota-trace v1"


class TraceRecord(NamedTuple):
    seq: int
    address: int


@dataclass(frozen=True)
class GroundTruthModel:
    """A row-stochastic chain over memory regions.

    ``n_regions`` is the size of the application's address space in regions;
    regions without a row in ``chain`` are unused and available to the
    code-injection attack.
    """

    chain: MarkovChain
    region_size: int = 256
    n_regions: int = 0
    seed: Optional[int] = None
    _rows: dict[State, tuple[list[State], list[float]]] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.region_size <= 0:
            raise InvalidParameter("region_size must be positive")
        rows: dict[State, tuple[list[State], list[float]]] = {}
        for (i, j), p in sorted(self.chain.probs.items()):
            if not 0.0 < p <= 1.0:
                raise InvalidParameter(f"ground-truth probability {p} at ({i}, {j}) outside (0, 1]")
            succ, cum = rows.setdefault(i, ([], []))
            succ.append(j)
            cum.append((cum[-1] if cum else 0.0) + p)
        for i, (_, cum) in rows.items():
            if abs(cum[-1] - 1.0) > 1e-9:
                raise InvalidParameter(f"ground-truth row {i} sums to {cum[-1]}")
        object.__setattr__(self, "_rows", rows)
        top = max(self.states, default=-1) + 1
        if self.n_regions == 0:
            object.__setattr__(self, "n_regions", 2 * top)
        elif self.n_regions < top:
            raise InvalidParameter(f"n_regions={self.n_regions} smaller than the used regions")

    @property
    def states(self) -> set[State]:
        return self.chain.states

    def prob(self, i: State, j: State) -> float:
        return self.chain.get(i, j)

    def min_prob(self) -> float:
        return min(self.chain.probs.values())

    def unused_regions(self) -> list[State]:
        used = self.states
        return [r for r in range(self.n_regions) if r not in used]

    def region_range(self, r: State) -> tuple[int, int]:
        return r * self.region_size, (r + 1) * self.region_size

    def step(self, i: State, u: float) -> State:
        row = self._rows.get(i)
        if row is None:
            raise InvalidInput(f"ground-truth state {i} has no outgoing transitions")
        succ, cum = row
        k = bisect.bisect_right(cum, u * cum[-1])
        return succ[min(k, len(succ) - 1)]

    # -- factories ----------------------------------------------------------

    @classmethod
    def from_probs(cls, probs: dict[Pair, float], **kwargs) -> "GroundTruthModel":
        states = {s for pair in probs for s in pair}
        return cls(MarkovChain(dict(probs), states), **kwargs)

    @classmethod
    def loop(cls, states: Sequence[State], **kwargs) -> "GroundTruthModel":
        """Deterministic cycle through ``states``."""
        probs = {(a, b): 1.0 for a, b in zip(states, list(states[1:]) + [states[0]])}
        return cls.from_probs(probs, **kwargs)

    @classmethod
    def random(
        cls,
        n_states: int,
        out_degree: int,
        seed: int,
        *,
        regular: bool = False,
        concentration: float = 1.0,
        **kwargs,
    ) -> "GroundTruthModel":
        """Random chain where every state has ``out_degree`` successors.

        Row ``i`` always contains ``i -> i+1 (mod n)`` so the chain is
        irreducible.  With ``regular`` every transition has probability
        ``1/out_degree``; otherwise row weights are Dirichlet distributed.
        """
        if not 1 <= out_degree <= n_states:
            raise InvalidParameter(f"out_degree must lie in [1, {n_states}], got {out_degree}")
        rng = np.random.default_rng(seed)
        probs: dict[Pair, float] = {}
        for i in range(n_states):
            nxt = (i + 1) % n_states
            others = [s for s in range(n_states) if s != nxt]
            extra = rng.choice(others, size=out_degree - 1, replace=False) if out_degree > 1 else []
            succ = sorted([nxt, *(int(s) for s in extra)])
            if regular:
                weights = np.full(out_degree, 1.0 / out_degree)
            else:
                weights = rng.dirichlet(np.full(out_degree, concentration))
            for j, w in zip(succ, weights):
                probs[(i, j)] = float(w)
            # absorb rounding so the row sums to 1 within float precision
            last = (i, succ[-1])
            probs[last] = 1.0 - sum(probs[(i, j)] for j in succ[:-1])
        kwargs.setdefault("seed", seed)
        return cls.from_probs(probs, **kwargs)


def gen_benign_states(gt: GroundTruthModel, length: int, seed: int, start: Optional[State] = None) -> list[State]:
    if length < 1:
        raise InvalidParameter(f"trace length must be at least 1, got {length}")
    rng = np.random.default_rng(seed)
    if start is None:
        rows = sorted(gt._rows)
        if not rows:
            raise InvalidInput("ground-truth model has no transitions")
        start = rows[int(rng.integers(len(rows)))]
    out = [start]
    draws = rng.random(length - 1)
    s = start
    for u in draws:
        s = gt.step(s, float(u))
        out.append(s)
    return out


def addresses_for(gt: GroundTruthModel, states: Sequence[State], rng: np.random.Generator) -> list[int]:
    B = gt.region_size
    offs = rng.integers(0, B, size=len(states))
    return [s * B + int(o) for s, o in zip(states, offs)]


def gen_benign_trace(
    gt: GroundTruthModel, length: int, seed: int, start: Optional[State] = None
) -> list[TraceRecord]:
    """Random walk over ``gt`` emitting one in-region address per step."""
    states = gen_benign_states(gt, length, seed, start)
    rng = np.random.default_rng([seed, 1])
    return [TraceRecord(k, a) for k, a in enumerate(addresses_for(gt, states, rng))]


# -- attacks ------------------------------------------------------------------

ATTACK_KINDS = ("code_injection", "code_reuse", "replay_blip")


@dataclass(frozen=True)
class AttackSpec:
    """An attack burst of ``length`` addresses inserted before index ``start``.

    With ``repeats > 1`` the burst is inserted again every ``period`` original
    records, modelling an attacker who re-sends the same trigger.
    """

    kind: str
    start: int
    length: int
    seed: int = 0
    target_regions: tuple[State, ...] = ()
    repeats: int = 1
    period: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise InvalidParameter(f"unknown attack kind {self.kind!r}")
        if self.start < 0 or self.length < 0:
            raise InvalidParameter("attack start and length must be non-negative")
        if self.repeats < 1:
            raise InvalidParameter("repeats must be at least 1")
        if self.repeats > 1 and self.period < 1:
            raise InvalidParameter("repeated attacks need a positive period")

    def positions(self) -> list[int]:
        return [self.start + r * self.period for r in range(self.repeats)]


def _injection_states(gt: GroundTruthModel, spec: AttackSpec) -> list[State]:
    """Unused regions, all distinct while the address space has enough of them."""
    regions = list(spec.target_regions) or gt.unused_regions()
    used = gt.states
    if not regions:
        raise InvalidInput("no unused region available for code injection")
    if any(r in used for r in regions):
        raise InvalidInput("code-injection target regions must be unused by the application")
    rng = np.random.default_rng(spec.seed)
    total = spec.length * spec.repeats
    order = [regions[int(k)] for k in rng.permutation(len(regions))]
    return [order[k % len(order)] for k in range(total)]


def _reuse_states(
    gt: GroundTruthModel, length: int, rng: np.random.Generator, before: Optional[State], after: Optional[State]
) -> list[State]:
    """Valid regions chained through transitions the application never takes."""
    states = sorted(gt.states)
    for _ in range(200):
        seq: list[State] = []
        seen: set[Pair] = set()
        prev = before
        ok = True
        for k in range(length):
            cand = [s for s in states if prev is None or (gt.prob(prev, s) == 0.0 and (prev, s) not in seen)]
            if k == length - 1 and after is not None:
                cand = [s for s in cand if gt.prob(s, after) == 0.0]
            if not cand:
                ok = False
                break
            s = cand[int(rng.integers(len(cand)))]
            if prev is not None:
                seen.add((prev, s))
            seq.append(s)
            prev = s
        if ok:
            return seq
    raise InvalidInput("could not build a code-reuse sequence of never-seen transitions")


def _replay_states(gt: GroundTruthModel, length: int) -> list[State]:
    """Alternate over the rarest transition the application does take."""
    (a, b), _ = min(gt.chain.probs.items(), key=lambda kv: (kv[1], kv[0]))
    return [(a, b)[k % 2] for k in range(length)]


def inject_attack(
    trace: Sequence[TraceRecord], spec: AttackSpec, gt: GroundTruthModel
) -> tuple[list[TraceRecord], list[bool]]:
    """Insert attack bursts; returns the renumbered trace and a per-record attack mask."""
    positions = spec.positions()
    if positions[-1] > len(trace):
        raise InvalidInput(f"attack position {positions[-1]} beyond trace of length {len(trace)}")
    if spec.length == 0:
        return list(trace), [False] * len(trace)
    B = gt.region_size
    rng = np.random.default_rng([spec.seed, 2])
    injected = _injection_states(gt, spec) if spec.kind == "code_injection" else None
    addrs: list[int] = []
    mask: list[bool] = []
    prev_pos = 0
    for r, pos in enumerate(positions):
        addrs.extend(rec.address for rec in trace[prev_pos:pos])
        mask.extend([False] * (pos - prev_pos))
        before = addrs[-1] // B if addrs else None
        after = trace[pos].address // B if pos < len(trace) else None
        if injected is not None:
            states = injected[r * spec.length : (r + 1) * spec.length]
        elif spec.kind == "code_reuse":
            states = _reuse_states(gt, spec.length, np.random.default_rng([spec.seed, 3, r]), before, after)
        else:
            states = _replay_states(gt, spec.length)
        addrs.extend(addresses_for(gt, states, rng))
        mask.extend([True] * spec.length)
        prev_pos = pos
    addrs.extend(rec.address for rec in trace[prev_pos:])
    mask.extend([False] * (len(trace) - prev_pos))
    return [TraceRecord(k, a) for k, a in enumerate(addrs)], mask


def attack_period(mask: Sequence[bool]) -> list[bool]:
    """Mark everything from the first to the last attack record."""
    marked = [k for k, m in enumerate(mask) if m]
    if not marked:
        return [False] * len(mask)
    lo, hi = marked[0], marked[-1]
    return [lo <= k <= hi for k in range(len(mask))]


# -- file format ----------------------------------------------------------------


def write_trace(path: str | os.PathLike, records: Iterable[TraceRecord], *, hex_addresses: bool = False) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(TRACE_HEADER + "\n")
        for rec in records:
            addr = hex(rec.address) if hex_addresses else str(rec.address)
            fh.write(f"{rec.seq},{addr}\n")


def _parse_int(text: str) -> int:
    text = text.strip()
    if text.lower().startswith("0x"):
        return int(text[2:], 16)
    if not text.isdigit():
        raise ValueError(text)
    return int(text)


def read_trace(path: str | os.PathLike) -> list[TraceRecord]:
    out: list[TraceRecord] = []
    with open(path, encoding="ascii", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if lineno == 1 and line != TRACE_HEADER:
                    raise TraceParseError(f"unsupported trace header {line!r}", lineno)
                continue
            parts = line.split(",")
            if len(parts) != 2:
                raise TraceParseError(f"expected '<seq>,<address>', got {line!r}", lineno)
            try:
                seq, addr = _parse_int(parts[0]), _parse_int(parts[1])
            except ValueError:
                raise TraceParseError(f"malformed number in {line!r}", lineno) from None
            if out and seq <= out[-1].seq:
                raise TraceParseError(f"sequence number {seq} not increasing", lineno)
            out.append(TraceRecord(seq, addr))
    return out


def read_labels(path: str | os.PathLike) -> list[bool]:
    """One 0/1 label per line (header lines starting with ``#`` are skipped)."""
    out = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line not in ("0", "1"):
                raise TraceParseError(f"label must be 0 or 1, got {line!r}", lineno)
            out.append(line == "1")
    return out


def write_labels(path: str | os.PathLike, mask: Iterable[bool]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("#ciota-labels v1\n")
        for m in mask:
            fh.write("1\n" if m else "0\n")
