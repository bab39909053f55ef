"""Pure-Python epoch kernel for the abstract (model-free) protocol simulation.

Partial blocks are reduced to member sets encoded as Python integers (bit i
set when agent i has a record).  The compiled kernel in ``_ckernel.pyx``
implements the same state machine and must stay in lock-step with this file;
the test-suite compares them trial by trial.
"""
from __future__ import annotations

from typing import Optional, Sequence

MASK64 = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def select_targets(neighbors: Sequence[int], fanout: int, state: int) -> tuple[list[int], int]:
    """Pick ``fanout`` neighbors by partial Fisher-Yates; all of them when fanout is 0 or covers the degree."""
    deg = len(neighbors)
    if fanout <= 0 or deg <= fanout:
        return list(neighbors), state
    scratch = list(neighbors)
    for k in range(fanout):
        state, r = splitmix64(state)
        j = k + r % (deg - k)
        scratch[k], scratch[j] = scratch[j], scratch[k]
    return scratch[:fanout], state


class PyEpochKernel:
    backend = "python"

    def __init__(
        self,
        indptr: Sequence[int],
        indices: Sequence[int],
        block_size: int,
        *,
        k_dm: int = 1,
        direct_messaging: bool = True,
        fanout: int = 0,
        rate_limit: int = 0,
        poisoned: Optional[Sequence[int]] = None,
        poison_tolerance: float = 0.25,
    ):
        n = len(indptr) - 1
        self.n = n
        self.neighbors = [[int(j) for j in indices[indptr[i] : indptr[i + 1]]] for i in range(n)]
        self.block_size = block_size
        self.k_dm = k_dm
        self.direct_messaging = direct_messaging
        self.fanout = fanout
        self.rate_limit = rate_limit
        self.poisoned = [bool(p) for p in poisoned] if poisoned is not None else [False] * n
        self.poison_tolerance = poison_tolerance
        # partial block = (member bits, length, poisoned members)
        self.pb = [(0, 0, 0)] * n
        self.chain = [0] * n
        self.active = [True] * n
        self.rx = [0] * n
        self.dm_count = [0] * n
        self.changes = 0
        self.messages = 0
        self.dm_messages = 0
        self.reports = 0
        self.dropped = 0
        self.max_chain = 0
        self.closes: list[int] = []

    # -- queries ------------------------------------------------------------

    def set_active(self, agent: int, flag: bool) -> None:
        self.active[agent] = bool(flag)

    def pb_members(self, agent: int) -> list[int]:
        bits = self.pb[agent][0]
        out = []
        while bits:
            low = bits & -bits
            out.append(low.bit_length() - 1)
            bits ^= low
        return out

    def pb_length(self, agent: int) -> int:
        return self.pb[agent][1]

    def chain_length(self, agent: int) -> int:
        return self.chain[agent]

    # -- protocol -----------------------------------------------------------

    def _attest(self, r: int, pb: tuple[int, int, int]) -> bool:
        _, length, poison = pb
        contaminated = length > 0 and poison / length > self.poison_tolerance
        return contaminated == self.poisoned[r]

    def _deliver(self, r: int, spb: tuple[int, int, int], schain: int, direct: bool) -> None:
        if not self.active[r]:
            return
        self.messages += 1
        if self.rate_limit:
            if self.rx[r] >= self.rate_limit:
                self.dropped += 1
                return
            self.rx[r] += 1
        lchain = self.chain[r]
        if schain < lchain:
            return
        if schain > lchain:
            self.chain[r] = schain
            self.pb[r] = spb
            self.changes += 1
            return
        lpb = self.pb[r]
        bit = 1 << r
        eff_in = spb[1] - (1 if spb[0] & bit else 0)
        eff_local = lpb[1] - (1 if lpb[0] & bit else 0)
        if eff_in > eff_local:
            if self._attest(r, spb):
                self.pb[r] = spb
                self.changes += 1
            else:
                self.reports += 1
            return
        if eff_in == eff_local and spb[0] != lpb[0] and self.direct_messaging and not direct:
            self.dm_count[r] += 1
            if self.dm_count[r] % self.k_dm:
                return
            targets = spb[0] & ~lpb[0] & ~bit
            while targets:
                low = targets & -targets
                t = low.bit_length() - 1
                targets ^= low
                self.dm_messages += 1
                self._deliver(t, lpb, lchain, True)

    def fire(self, a: int, rng_state: int) -> int:
        self.rx[a] = 0
        bits, length, poison = self.pb[a]
        bit = 1 << a
        if not bits & bit:
            length += 1
            poison += 1 if self.poisoned[a] else 0
            if length >= self.block_size:
                self.chain[a] += 1
                self.pb[a] = (0, 0, 0)
                if self.chain[a] > self.max_chain:
                    self.max_chain = self.chain[a]
                    self.closes.append(a)
            else:
                self.pb[a] = (bits | bit, length, poison)
            self.changes += 1
        targets, rng_state = select_targets(self.neighbors[a], self.fanout, rng_state)
        spb, schain = self.pb[a], self.chain[a]
        for r in targets:
            self._deliver(r, spb, schain, False)
        return rng_state

    def run_epoch(self, order: Sequence[int], seed: int) -> None:
        state = seed & MASK64
        for a in order:
            a = int(a)
            if self.active[a]:
                state = self.fire(a, state)
