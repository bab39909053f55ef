"""Ledger data model: records, partial blocks, blocks and chains.

All ledger values are immutable.  Growing a partial block or closing a block
returns new objects, so a chain handed to a peer can never be mutated by the
sender afterwards.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

from ciota.emm import FrequencyMatrix, deserialize_model, serialize_model
from ciota.errors import DecodeError, InvalidParameter
from ciota.signing import Keyring, SignatureProvider

ZERO_HASH = bytes(32)
CHAIN_MAGIC = b"CIOTACHN"
CHAIN_VERSION = 1

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


def _lp(data: bytes) -> bytes:
    return _U32.pack(len(data)) + data


@dataclass(frozen=True)
class BlockMeta:
    prev_hash: bytes
    app_id: str
    app_version: str
    block_index: int

    def encode(self) -> bytes:
        if len(self.prev_hash) != 32:
            raise InvalidParameter("prev_hash must be a 32-byte digest")
        return (
            self.prev_hash
            + _lp(self.app_id.encode())
            + _lp(self.app_version.encode())
            + _U64.pack(self.block_index)
        )


def genesis_meta(app_id: str, app_version: str) -> BlockMeta:
    return BlockMeta(ZERO_HASH, app_id, app_version, 1)


@dataclass(frozen=True)
class Record:
    agent_id: str
    address: str
    model: FrequencyMatrix = field(compare=False)
    signature: bytes
    model_bytes: bytes

    def encode(self) -> bytes:
        return (
            _lp(self.agent_id.encode())
            + _lp(self.address.encode())
            + _lp(self.model_bytes)
            + _lp(self.signature)
        )


def _prefix_digests(model_bytes: Iterable[bytes]) -> list[bytes]:
    h = hashlib.sha256(b"ciota-models").digest()
    out = []
    for mb in model_bytes:
        h = hashlib.sha256(h + hashlib.sha256(mb).digest()).digest()
        out.append(h)
    return out


def signing_message(meta: BlockMeta, prefix_digest: bytes) -> bytes:
    """Bytes a record signs: metadata, block counter and the digest of all models so far."""
    return b"ciota-record-v1" + meta.encode() + _U64.pack(meta.block_index) + prefix_digest


class _RecordList:
    meta: BlockMeta
    records: tuple[Record, ...]

    @cached_property
    def agent_ids(self) -> frozenset[str]:
        return frozenset(r.agent_id for r in self.records)

    def models(self) -> list[FrequencyMatrix]:
        return [r.model for r in self.records]

    def encode(self) -> bytes:
        parts = [self.meta.encode(), _U32.pack(len(self.records))]
        parts.extend(r.encode() for r in self.records)
        return b"".join(parts)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class PartialBlock(_RecordList):
    meta: BlockMeta
    records: tuple[Record, ...] = ()

    def with_record(self, record: Record) -> "PartialBlock":
        return PartialBlock(self.meta, self.records + (record,))

    def next_message(self, model_bytes: bytes) -> bytes:
        """The message a new record carrying ``model_bytes`` would sign."""
        digest = _prefix_digests([r.model_bytes for r in self.records] + [model_bytes])[-1]
        return signing_message(self.meta, digest)


@dataclass(frozen=True)
class Block(_RecordList):
    meta: BlockMeta
    records: tuple[Record, ...]

    @cached_property
    def digest(self) -> bytes:
        return hashlib.sha256(b"ciota-block-v1" + self.encode()).digest()


@dataclass(frozen=True)
class Chain:
    blocks: tuple[Block, ...] = ()
    partial: Optional[PartialBlock] = None

    @classmethod
    def genesis(cls, app_id: str, app_version: str) -> "Chain":
        return cls((), PartialBlock(genesis_meta(app_id, app_version)))

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def last_block(self) -> Optional[Block]:
        return self.blocks[-1] if self.blocks else None

    def with_partial(self, pb: PartialBlock) -> "Chain":
        return Chain(self.blocks, pb)


def make_record(
    pb: PartialBlock,
    agent_id: str,
    address: str,
    model: FrequencyMatrix,
    provider: SignatureProvider,
    secret: bytes,
) -> Record:
    mb = serialize_model(model)
    sig = provider.sign(secret, pb.next_message(mb))
    return Record(agent_id, address, model.copy(), sig, mb)


def pb_effective_length(pb: Optional[PartialBlock], viewer: str) -> int:
    if pb is None:
        return 0
    return len(pb.records) - (1 if viewer in pb.agent_ids else 0)


@dataclass(frozen=True)
class Validation:
    valid: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.valid


VALID = Validation(True)


def _validate_records(meta: BlockMeta, records: Sequence[Record], keyring: Keyring) -> Validation:
    if meta.block_index < 1 or len(meta.prev_hash) != 32:
        return Validation(False, "meta")
    if len({r.agent_id for r in records}) != len(records):
        return Validation(False, "duplicate-agent")
    digests = _prefix_digests(r.model_bytes for r in records)
    for rec, digest in zip(records, digests):
        if rec.agent_id not in keyring:
            return Validation(False, "unknown-signer")
        if serialize_model(rec.model) != rec.model_bytes:
            return Validation(False, "signature")
        if not keyring.verify(rec.agent_id, signing_message(meta, digest), rec.signature):
            return Validation(False, "signature")
    return VALID


def validate_block(block: Block, keyring: Keyring, block_size: int) -> Validation:
    if len(block.records) != block_size:
        return Validation(False, "length")
    return _validate_records(block.meta, block.records, keyring)


def validate_partial(pb: PartialBlock, keyring: Keyring, block_size: int) -> Validation:
    if len(pb.records) >= block_size:
        return Validation(False, "length")
    return _validate_records(pb.meta, pb.records, keyring)


def validate_linkage(chain: Chain) -> Validation:
    """Hash links and consecutive indices from the first block through the partial."""
    prev = ZERO_HASH
    for idx, block in enumerate(chain.blocks, start=1):
        if block.meta.prev_hash != prev or block.meta.block_index != idx:
            return Validation(False, "linkage")
        prev = block.digest
    if chain.partial is not None:
        m = chain.partial.meta
        if m.prev_hash != prev or m.block_index != len(chain.blocks) + 1:
            return Validation(False, "linkage")
    return VALID


def close_if_full(chain: Chain, block_size: int) -> Chain:
    pb = chain.partial
    if pb is None or len(pb.records) < block_size:
        return chain
    block = Block(pb.meta, pb.records)
    meta = BlockMeta(block.digest, pb.meta.app_id, pb.meta.app_version, pb.meta.block_index + 1)
    return Chain(chain.blocks + (block,), PartialBlock(meta))


# -- wire format ------------------------------------------------------------


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError(f"truncated {what}", self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what: str) -> int:
        return self.take(1, what)[0]

    def u16(self, what: str) -> int:
        return _U16.unpack(self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return _U64.unpack(self.take(8, what))[0]

    def lp(self, what: str) -> bytes:
        n = self.u32(what + " length")
        return self.take(n, what)

    def text(self, what: str) -> str:
        start = self.pos
        raw = self.lp(what)
        try:
            return raw.decode()
        except UnicodeDecodeError:
            raise DecodeError(f"invalid utf-8 in {what}", start) from None


def _read_meta(r: _Reader) -> BlockMeta:
    prev = r.take(32, "prev_hash")
    app_id = r.text("app_id")
    app_version = r.text("app_version")
    return BlockMeta(prev, app_id, app_version, r.u64("block_index"))


def _read_records(r: _Reader) -> tuple[Record, ...]:
    n = r.u32("record count")
    out = []
    for _ in range(n):
        agent_id = r.text("agent_id")
        address = r.text("address")
        start = r.pos + 4
        mb = r.lp("model")
        try:
            model = deserialize_model(mb)
        except DecodeError as exc:
            raise DecodeError(f"bad model: {exc}", start + exc.offset) from None
        sig = r.lp("signature")
        out.append(Record(agent_id, address, model, sig, mb))
    return tuple(out)


def encode_chain(chain: Chain) -> bytes:
    parts = [CHAIN_MAGIC, _U16.pack(CHAIN_VERSION), _U32.pack(len(chain.blocks))]
    parts.extend(_lp(b.encode()) for b in chain.blocks)
    if chain.partial is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + _lp(chain.partial.encode()))
    return b"".join(parts)


def decode_chain(data: bytes) -> Chain:
    r = _Reader(data)
    if r.take(len(CHAIN_MAGIC), "magic") != CHAIN_MAGIC:
        raise DecodeError("bad chain magic", 0)
    version = r.u16("version")
    if version != CHAIN_VERSION:
        raise DecodeError(f"unsupported chain version {version}", len(CHAIN_MAGIC))
    blocks = []
    for _ in range(r.u32("block count")):
        size = r.u32("block length")
        end = r.pos + size
        meta = _read_meta(r)
        blocks.append(Block(meta, _read_records(r)))
        if r.pos != end:
            raise DecodeError("block length mismatch", r.pos)
    partial = None
    flag = r.u8("partial flag")
    if flag == 1:
        size = r.u32("partial length")
        end = r.pos + size
        meta = _read_meta(r)
        partial = PartialBlock(meta, _read_records(r))
        if r.pos != end:
            raise DecodeError("partial block length mismatch", r.pos)
    elif flag != 0:
        raise DecodeError(f"bad partial flag {flag}", r.pos - 1)
    if r.pos != len(data):
        raise DecodeError("trailing bytes after chain", r.pos)
    return Chain(tuple(blocks), partial)
