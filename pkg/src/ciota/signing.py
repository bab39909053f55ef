"""Signature providers used to sign ledger records.

``HmacSigner`` is a deterministic keyed-hash stand-in for simulations: its
"public" key equals the secret, so it offers tamper detection but no
non-repudiation.  ``Ed25519Signer`` is the asymmetric scheme for realistic runs.
"""
from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from typing import Mapping, Optional, Protocol

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey


@dataclass(frozen=True)
class KeyPair:
    secret: bytes
    public: bytes


class SignatureProvider(Protocol):
    name: str

    def generate(self, seed: Optional[bytes] = None) -> KeyPair: ...

    def sign(self, secret: bytes, message: bytes) -> bytes: ...

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool: ...


class HmacSigner:
    name = "hmac-sha256"

    def generate(self, seed: Optional[bytes] = None) -> KeyPair:
        if seed is None:
            import os

            seed = os.urandom(32)
        key = hashlib.sha256(b"ciota-mock-key" + seed).digest()
        return KeyPair(key, key)

    def sign(self, secret: bytes, message: bytes) -> bytes:
        return hmac.new(secret, message, hashlib.sha256).digest()

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(public, message), signature)


class Ed25519Signer:
    name = "ed25519"

    def generate(self, seed: Optional[bytes] = None) -> KeyPair:
        if seed is None:
            sk = Ed25519PrivateKey.generate()
        else:
            sk = Ed25519PrivateKey.from_private_bytes(hashlib.sha256(seed).digest())
        secret = sk.private_bytes(
            serialization.Encoding.Raw, serialization.PrivateFormat.Raw, serialization.NoEncryption()
        )
        public = sk.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        return KeyPair(secret, public)

    def sign(self, secret: bytes, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(secret).sign(message)

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True


class Keyring:
    """Maps agent ids to public keys under a single provider."""

    def __init__(self, provider: SignatureProvider, keys: Optional[Mapping[str, bytes]] = None):
        self.provider = provider
        self.keys: dict[str, bytes] = dict(keys or {})

    def add(self, agent_id: str, public: bytes) -> None:
        self.keys[agent_id] = public

    def __contains__(self, agent_id: object) -> bool:
        return agent_id in self.keys

    def verify(self, agent_id: str, message: bytes, signature: bytes) -> bool:
        return self.provider.verify(self.keys[agent_id], message, signature)
