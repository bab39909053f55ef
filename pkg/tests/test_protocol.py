import math

import pytest
from hypothesis import given, settings, strategies as st

from ciota.agent import AlertKind, ProtocolConfig, mock_keyring, new_agent
from ciota.chain import Chain, PartialBlock, close_if_full, make_record
from ciota.emm import FrequencyMatrix, ModelParams, combine, distance, train
from ciota.errors import InvalidParameter
from ciota.protocol import Action, interval_schedule, receive_chain

BENIGN = [0, 1, 2, 0, 1, 0, 2, 1, 0] * 20


class World:
    """A keyring plus named agents sharing one benign model."""

    def __init__(self, names="abcdexyz", block_size=3, **proto):
        self.ring = mock_keyring()
        self.proto = ProtocolConfig(block_size=block_size, **proto)
        self.agents = {}
        for n in names:
            a = new_agent(n, self.ring, protocol=self.proto, params=ModelParams(t_grace=0.0))
            train(a.local_model, BENIGN)
            self.agents[n] = a

    def __getitem__(self, name):
        return self.agents[name]

    def extend(self, chain, names, model=None):
        """Append records by ``names`` to ``chain``'s partial, closing blocks as they fill."""
        for n in names:
            a = self.agents[n]
            rec = make_record(chain.partial, n, n, model or a.local_model, self.ring.provider, a.keys.secret)
            chain = close_if_full(chain.with_partial(chain.partial.with_record(rec)), self.proto.block_size)
        return chain


def poisoned_model():
    m = train(FrequencyMatrix(), BENIGN)
    for k in range(3):
        m.add_count(k, k, 500)
    return m


@pytest.fixture
def w():
    return World()


def test_shorter_chain_discarded(w):
    g = Chain.genesis("app", "1")
    two = w.extend(g, "xyzxyz")
    one = w.extend(g, "xyz")
    d = w["a"]
    d.chain = two
    dec = receive_chain(d, one, "b", now=0.0)
    assert dec.action is Action.DISCARD and d.chain is two


def test_longer_valid_partial_replaces(w):
    base = w.extend(Chain.genesis("app", "1"), "xyz")
    d = w["d"]
    d.chain = w.extend(base, "a")
    incoming = w.extend(base, "bc")
    dec = receive_chain(d, incoming, "b", now=0.0)
    assert dec.action is Action.REPLACE_CHAIN
    assert d.chain is incoming and dec.distance < d.params.alpha


def test_own_record_does_not_count(w):
    base = w.extend(Chain.genesis("app", "1"), "xyz")
    a = w["a"]
    a.chain = w.extend(base, "b")
    # {a, c} has effective length 1 for a, same as {b}
    dec = receive_chain(a, w.extend(base, "ac"), "c", now=0.0)
    assert dec.action is Action.DIRECT_MESSAGE and dec.targets == ("c",)


def test_poisoned_equal_length_is_reported(w):
    base = w.extend(Chain.genesis("app", "1"), "xyz")
    d = w["d"]
    d.chain = w.extend(base, "a")
    bad = w.extend(base, "bc", model=poisoned_model())
    combined = combine(bad.partial.models(), d.params.p_a)
    assert distance(d.local_model, combined) > d.params.alpha
    dec = receive_chain(d, bad, "b", now=0.0)
    assert dec.action is Action.REPORT and dec.reason == "attestation"
    assert dec.distance >= d.protocol.report_factor * d.params.alpha
    assert d.chain.partial.agent_ids == {"a"}
    assert d.reports and d.reports[0].kind is AlertKind.REJECTED_AGENT
    assert "sender=b" in d.reports[0].detail


def test_mild_attestation_failure_is_discarded_silently():
    w = World()
    base = w.extend(Chain.genesis("app", "1"), "xyz")
    d = w["d"]
    d.chain = w.extend(base, "a")
    mild = train(FrequencyMatrix(), BENIGN)
    mild.add_count(0, 1, 40)
    dist = distance(d.local_model, combine([mild, mild], d.params.p_a))
    # tune alpha so the distance lands between alpha and report_factor * alpha
    d.params = ModelParams(t_grace=0.0, alpha=dist / 1.5)
    dec = receive_chain(d, w.extend(base, "bc", model=mild), "b", now=0.0)
    assert dec.action is Action.DISCARD and dec.reason == "attestation"
    assert not d.reports


def test_tampered_partial_reported(w):
    base = w.extend(Chain.genesis("app", "1"), "xyz")
    d = w["d"]
    d.chain = w.extend(base, "a")
    incoming = w.extend(base, "bc")
    incoming.partial.records[1].model.add_count(0, 1, 3)
    dec = receive_chain(d, incoming, "b", now=0.0)
    assert dec.action is Action.REPORT and dec.reason == "signature"


def test_equal_length_conflict_sends_direct_message(w):
    base = w.extend(Chain.genesis("app", "1"), "xyz")
    d = w["d"]
    d.chain = w.extend(base, "a")
    dec = receive_chain(d, w.extend(base, "b"), "b", now=0.0)
    assert dec.action is Action.DIRECT_MESSAGE and dec.targets == ("b",)
    # chains arriving through a direct message never trigger another one
    dec = receive_chain(d, w.extend(base, "c"), "c", now=0.0, direct=True)
    assert dec.action is Action.DISCARD
    same = receive_chain(d, w.extend(base, "a"), "a", now=0.0)
    assert same.action is Action.DISCARD


def test_k_dm_counts_qualifying_conflicts():
    w = World(k_dm=3)
    base = w.extend(Chain.genesis("app", "1"), "xyz")
    d = w["d"]
    d.chain = w.extend(base, "a")
    actions = [receive_chain(d, w.extend(base, n), n, now=0.0).action for n in "bcebc"]
    assert actions == [Action.DISCARD, Action.DISCARD, Action.DIRECT_MESSAGE, Action.DISCARD, Action.DISCARD]
    assert d.dm_counter == 5


def test_direct_messaging_can_be_disabled():
    w = World(direct_messaging=False)
    base = w.extend(Chain.genesis("app", "1"), "xyz")
    d = w["d"]
    d.chain = w.extend(base, "a")
    assert receive_chain(d, w.extend(base, "b"), "b", now=0.0).action is Action.DISCARD


def test_longer_chain_adopts_without_attestation(w):
    g = Chain.genesis("app", "1")
    poisoned = poisoned_model()
    longer = w.extend(g, "xyz", model=poisoned)
    d = w["d"]
    dec = receive_chain(d, longer, "x", now=0.0)
    assert dec.action is Action.REPLACE_CHAIN_AND_ADOPT
    assert d.local_model == poisoned.scaled(3)
    assert len(d.chain) == 1 and len(d.score_window) == 0


def test_longer_chain_invalid_partial_is_stripped(w):
    longer = w.extend(Chain.genesis("app", "1"), "xyzab")
    longer.partial.records[0].model.add_count(0, 1, 1)
    d = w["d"]
    dec = receive_chain(d, longer, "x", now=0.0)
    assert dec.action is Action.REPLACE_CHAIN_AND_ADOPT
    assert len(d.chain) == 1 and len(d.chain.partial) == 0
    assert d.chain.partial.meta == longer.partial.meta


def test_longer_chain_with_invalid_block_is_discarded(w):
    longer = w.extend(Chain.genesis("app", "1"), "xyz")
    longer.blocks[0].records[2].model.add_count(0, 1, 1)
    d = w["d"]
    before = d.local_model.copy()
    dec = receive_chain(d, longer, "x", now=0.0)
    assert dec.action is Action.DISCARD
    assert len(d.chain) == 0 and d.local_model == before


def test_rate_limit_drops_excess():
    w = World()
    d = w["d"]
    d.peer_budget = 2
    g = w.extend(Chain.genesis("app", "1"), "a")
    got = [receive_chain(d, g, "a", now=t).action for t in (0.0, 1.0, 2.0, 59.0, 60.0)]
    assert got[2] is Action.DROPPED and got[3] is Action.DROPPED
    assert got[0] is not Action.DROPPED and got[4] is not Action.DROPPED


def _chains(w):
    g = Chain.genesis("app", "1")
    one = w.extend(g, "xyz")
    two = w.extend(one, "abc")
    return [g, w.extend(g, "a"), w.extend(g, "bc"), one, w.extend(one, "e"), w.extend(one, "de"), two,
            w.extend(two, "x")]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 7), max_size=25))
def test_monotone_knowledge(order):
    w = World()
    chains = _chains(w)
    d = w["d"]
    prev_blocks, prev_eff = 0, 0
    for k in order:
        receive_chain(d, chains[k], "z", now=0.0)
        blocks = len(d.chain)
        eff = len(d.chain.partial.agent_ids - {"d"})
        assert blocks >= prev_blocks
        if blocks == prev_blocks:
            assert eff >= prev_eff
        prev_blocks, prev_eff = blocks, eff


@pytest.mark.parametrize(
    "m,lam,lo,hi,expected", [(0, 0.5, 60.0, 600.0, 60.0), (1, 1.0, 60.0, 120.0, 90.0), (2, 1.0, 0.0, 4.0, 3.0)]
)
def test_interval_schedule(m, lam, lo, hi, expected):
    assert interval_schedule(m, lam, lo, hi) == expected


def test_interval_schedule_asymptote_and_errors():
    assert math.isclose(interval_schedule(10_000, 1.0, 60.0, 120.0), 120.0)
    values = [interval_schedule(m, 0.3, 10.0, 20.0) for m in range(50)]
    assert values == sorted(values)
    with pytest.raises(InvalidParameter):
        interval_schedule(1, 1.0, 120.0, 60.0)
    with pytest.raises(InvalidParameter):
        interval_schedule(1, 0.0, 60.0, 120.0)


def test_receive_on_empty_partial_meta_mismatch(w):
    # a partial signed for another block index fails validation and is reported
    base = w.extend(Chain.genesis("app", "1"), "xyz")
    d = w["d"]
    d.chain = base
    foreign = w.extend(Chain.genesis("app", "1"), "ab")
    moved = Chain(base.blocks, PartialBlock(base.partial.meta, foreign.partial.records))
    dec = receive_chain(d, moved, "a", now=0.0)
    assert dec.action is Action.REPORT and dec.reason == "signature"
