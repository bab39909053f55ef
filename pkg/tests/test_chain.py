import json
from dataclasses import replace
from pathlib import Path

import pytest

from ciota.chain import (
    Block,
    BlockMeta,
    Chain,
    PartialBlock,
    ZERO_HASH,
    close_if_full,
    decode_chain,
    encode_chain,
    make_record,
    pb_effective_length,
    validate_block,
    validate_linkage,
    validate_partial,
)
from ciota.emm import FrequencyMatrix
from ciota.errors import DecodeError
from ciota.signing import Ed25519Signer, HmacSigner, Keyring

VECTORS = Path(__file__).parent / "vectors"


def keyring_for(names, provider=None):
    provider = provider or HmacSigner()
    ring = Keyring(provider)
    secrets = {}
    for name in names:
        kp = provider.generate(name.encode())
        ring.add(name, kp.public)
        secrets[name] = kp.secret
    return ring, secrets


def fill(pb, names, ring, secrets, model=None):
    for k, name in enumerate(names):
        m = model or FrequencyMatrix({(0, 1): k + 1, (1, 0): 1})
        pb = pb.with_record(make_record(pb, name, f"host-{name}", m, ring.provider, secrets[name]))
    return pb


@pytest.fixture
def abc():
    ring, secrets = keyring_for(["a", "b", "c", "d"])
    return ring, secrets


def test_genesis_meta():
    g = Chain.genesis("app", "1")
    assert g.partial.meta.prev_hash == ZERO_HASH
    assert g.partial.meta.block_index == 1
    assert len(g) == 0


def test_pb_effective_length(abc):
    ring, secrets = abc
    pb = fill(Chain.genesis("app", "1").partial, ["a", "b", "c"], ring, secrets)
    assert pb_effective_length(pb, "a") == 2
    assert pb_effective_length(pb, "d") == 3
    assert pb_effective_length(PartialBlock(pb.meta), "a") == 0


def test_validate_block_honest_and_length(abc):
    ring, secrets = abc
    pb = fill(Chain.genesis("app", "1").partial, ["a", "b", "c"], ring, secrets)
    block = Block(pb.meta, pb.records)
    assert validate_block(block, ring, 3)
    short = Block(pb.meta, pb.records[:2])
    assert validate_block(short, ring, 3).reason == "length"


def test_tampered_model_detected(abc):
    ring, secrets = abc
    pb = fill(Chain.genesis("app", "1").partial, ["a", "b", "c"], ring, secrets)
    pb.records[1].model.add_count(0, 1, 5)
    assert validate_block(Block(pb.meta, pb.records), ring, 3).reason == "signature"
    pb = fill(Chain.genesis("app", "1").partial, ["a", "b", "c"], ring, secrets)
    bad = replace(pb.records[2], signature=bytes(32))
    assert validate_block(Block(pb.meta, pb.records[:2] + (bad,)), ring, 3).reason == "signature"


def test_prefix_signature_binds_earlier_models(abc):
    ring, secrets = abc
    pb = fill(Chain.genesis("app", "1").partial, ["a", "b"], ring, secrets)
    other = fill(Chain.genesis("app", "1").partial, ["c"], ring, secrets, model=FrequencyMatrix({(5, 5): 1}))
    # b's record moved behind a different first record no longer verifies
    spliced = PartialBlock(pb.meta, (other.records[0], pb.records[1]))
    assert validate_partial(spliced, ring, 5).reason == "signature"


def test_unknown_signer_and_duplicates(abc):
    ring, secrets = abc
    pb = fill(Chain.genesis("app", "1").partial, ["a"], ring, secrets)
    stranger_ring, stranger_secrets = keyring_for(["zed"])
    pb2 = fill(pb, ["zed"], stranger_ring, stranger_secrets)
    assert validate_partial(pb2, ring, 5).reason == "unknown-signer"
    dup = PartialBlock(pb.meta, pb.records + pb.records)
    assert validate_partial(dup, ring, 5).reason == "duplicate-agent"


def test_partial_must_be_shorter_than_L(abc):
    ring, secrets = abc
    pb = fill(Chain.genesis("app", "1").partial, ["a", "b"], ring, secrets)
    assert validate_partial(pb, ring, 3)
    assert validate_partial(pb, ring, 2).reason == "length"


def test_replay_to_other_block_index_fails(abc):
    ring, secrets = abc
    pb = fill(Chain.genesis("app", "1").partial, ["a", "b"], ring, secrets)
    moved = PartialBlock(replace(pb.meta, block_index=2), pb.records)
    assert validate_partial(moved, ring, 5).reason == "signature"


def test_close_if_full(abc):
    ring, secrets = abc
    g = Chain.genesis("app", "1")
    pb = fill(g.partial, ["a", "b"], ring, secrets)
    assert close_if_full(g.with_partial(pb), 3).partial is pb
    pb = fill(pb, ["c"], ring, secrets)
    closed = close_if_full(g.with_partial(pb), 3)
    assert len(closed) == 1 and len(closed.partial) == 0
    assert closed.partial.meta.block_index == 2
    assert closed.partial.meta.prev_hash == closed.blocks[0].digest
    assert validate_linkage(closed)
    broken = Chain(closed.blocks, PartialBlock(BlockMeta(ZERO_HASH, "app", "1", 2)))
    assert validate_linkage(broken).reason == "linkage"


def test_ed25519_records(abc):
    ring, secrets = keyring_for(["a", "b", "c"], Ed25519Signer())
    pb = fill(Chain.genesis("app", "1").partial, ["a", "b", "c"], ring, secrets)
    assert validate_block(Block(pb.meta, pb.records), ring, 3)
    signer = Ed25519Signer()
    kp = signer.generate(b"x")
    sig = signer.sign(kp.secret, b"message")
    assert signer.verify(kp.public, b"message", sig)
    assert not signer.verify(kp.public, b"messagf", sig)


def test_hmac_tamper():
    s = HmacSigner()
    kp = s.generate(b"k")
    sig = s.sign(kp.secret, b"m")
    assert s.verify(kp.public, b"m", sig)
    assert not s.verify(kp.public, b"n", sig)


# -- wire format --------------------------------------------------------------------


def test_wire_roundtrip(abc):
    ring, secrets = abc
    g = Chain.genesis("app", "1")
    pb = fill(g.partial, ["a", "b", "c"], ring, secrets)
    chain = close_if_full(g.with_partial(pb), 3)
    chain = chain.with_partial(fill(chain.partial, ["d"], ring, secrets))
    back = decode_chain(encode_chain(chain))
    assert back == chain
    assert back.blocks[0].digest == chain.blocks[0].digest
    assert validate_block(back.blocks[0], ring, 3)
    assert decode_chain(encode_chain(Chain())) == Chain()


def test_wire_decode_errors(abc):
    ring, secrets = abc
    data = encode_chain(Chain.genesis("app", "1").with_partial(fill(Chain.genesis("app", "1").partial, ["a"], ring, secrets)))
    with pytest.raises(DecodeError) as exc:
        decode_chain(b"NOTACHN!" + data[8:])
    assert exc.value.offset == 0
    with pytest.raises(DecodeError) as exc:
        decode_chain(data[:20])
    assert exc.value.offset <= 20
    with pytest.raises(DecodeError):
        decode_chain(data + b"\x00")
    with pytest.raises(DecodeError):
        decode_chain(data[:8] + b"\x02\x00" + data[10:])


def test_committed_vectors():
    from vectors.generate import build

    committed = json.loads((VECTORS / "chain_vectors.json").read_text())
    assert build() == committed
    genesis = decode_chain(bytes.fromhex(committed["genesis_chain"]))
    assert genesis == Chain.genesis("app", "1")
    two = decode_chain(bytes.fromhex(committed["partial_two_records_chain"]))
    assert [r.agent_id for r in two.partial.records] == ["alice", "bob"]
    closed = decode_chain(bytes.fromhex(committed["closed_chain"]))
    assert closed.blocks[0].digest.hex() == committed["closed_block_digest"]
