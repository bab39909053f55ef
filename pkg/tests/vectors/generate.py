"""Regenerate chain_vectors.json (run only when the wire format changes on purpose)."""
import json
from pathlib import Path

from ciota.chain import Chain, close_if_full, encode_chain, make_record
from ciota.emm import FrequencyMatrix
from ciota.signing import HmacSigner


def build():
    signer = HmacSigner()
    genesis = Chain.genesis("app", "1")
    keys = {a: signer.generate(a.encode()) for a in ("alice", "bob")}
    pb = genesis.partial
    models = {"alice": FrequencyMatrix({(0, 1): 3, (1, 0): 3}), "bob": FrequencyMatrix({(0, 1): 2, (1, 2): 1, (2, 0): 1})}
    for a in ("alice", "bob"):
        pb = pb.with_record(make_record(pb, a, f"10.0.0.{len(pb) + 1}", models[a], signer, keys[a].secret))
    two = genesis.with_partial(pb)
    closed = close_if_full(two, 2)
    return {
        "genesis_chain": encode_chain(genesis).hex(),
        "partial_two_records_chain": encode_chain(two).hex(),
        "closed_block_digest": closed.blocks[0].digest.hex(),
        "closed_chain": encode_chain(closed).hex(),
    }


if __name__ == "__main__":
    out = Path(__file__).with_name("chain_vectors.json")
    out.write_text(json.dumps(build(), indent=2) + "\n")
