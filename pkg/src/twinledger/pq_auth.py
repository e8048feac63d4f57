"""Winternitz one-time signatures (w=16, 256-bit digests).

A key pair holds 67 secret chain starts: 64 cover the base-16 digits of the
message digest and 3 cover the checksum ``sum(15 - digit)``.  Signing walks
each chain forward by its digit; verifying walks the remainder of the way to
the chain top and compares the hash of all tops with the public key.  Security
rests only on the hash function, which is why the construction is considered
quantum-immune.

Every key pair signs at most once.  The ``used`` flag is flipped under a lock
in the same critical section that produces the signature.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .encoding import HashFn, sha256
from .errors import KeyReuse

W = 16
DIGEST_BYTES = 32
MSG_CHAINS = DIGEST_BYTES * 2          # one base-16 digit per nibble
CHECKSUM_CHAINS = 3                    # 64 * 15 = 960 < 16**3
CHAINS = MSG_CHAINS + CHECKSUM_CHAINS

_SK_TAG = b"wots-sk"
_STEP_TAG = b"wots-step"
_PK_TAG = b"wots-pk"


def _chain(value: bytes, index: int, start: int, steps: int, hash_fn: HashFn) -> bytes:
    for j in range(start, start + steps):
        value = hash_fn(_STEP_TAG + index.to_bytes(2, "big") + bytes((j,)) + value)
    return value


def digits(message_digest: bytes) -> list[int]:
    """Base-16 digits of the digest followed by the 3 checksum digits."""
    msg = []
    for byte in message_digest:
        msg.append(byte >> 4)
        msg.append(byte & 0x0F)
    checksum = sum(W - 1 - d for d in msg)
    csum = [(checksum >> 8) & 0xF, (checksum >> 4) & 0xF, checksum & 0xF]
    return msg + csum


def public_key_from_tops(tops: list[bytes], hash_fn: HashFn = sha256) -> bytes:
    return hash_fn(_PK_TAG + b"".join(tops))


@dataclass(frozen=True)
class Signature:
    chain_values: tuple[bytes, ...]
    checksum_values: tuple[bytes, ...]

    def to_fields(self) -> list[bytes]:
        return list(self.chain_values) + list(self.checksum_values)

    @classmethod
    def from_fields(cls, values: list) -> "Signature":
        if not isinstance(values, list) or len(values) != CHAINS:
            raise ValueError("signature must hold %d chain values" % CHAINS)
        if not all(isinstance(v, bytes) and len(v) == DIGEST_BYTES for v in values):
            raise ValueError("signature chain values must be 32-byte digests")
        return cls(tuple(values[:MSG_CHAINS]), tuple(values[MSG_CHAINS:]))


@dataclass(eq=False)
class OneTimeKeyPair:
    secret_chains: list[bytes]
    public_key: bytes
    used: bool = False
    hash_fn: HashFn = field(default=sha256, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __repr__(self) -> str:
        return f"OneTimeKeyPair(public_key={self.public_key.hex()[:16]}..., used={self.used})"


def keygen(seed: bytes, hash_fn: HashFn = sha256) -> OneTimeKeyPair:
    """Derive a fresh key pair deterministically from 32 bytes of entropy."""
    if len(seed) != 32:
        raise ValueError("seed must be 32 bytes")
    secrets = [hash_fn(_SK_TAG + seed + i.to_bytes(2, "big")) for i in range(CHAINS)]
    tops = [_chain(sk, i, 0, W - 1, hash_fn) for i, sk in enumerate(secrets)]
    return OneTimeKeyPair(secrets, public_key_from_tops(tops, hash_fn), hash_fn=hash_fn)


def sign(keypair: OneTimeKeyPair, message_digest: bytes) -> Signature:
    if len(message_digest) != DIGEST_BYTES:
        raise ValueError("message digest must be 32 bytes")
    with keypair._lock:
        if keypair.used:
            raise KeyReuse(f"key {keypair.public_key.hex()[:16]} already signed a message")
        keypair.used = True
        hash_fn = keypair.hash_fn
        values = [
            _chain(sk, i, 0, d, hash_fn)
            for i, (sk, d) in enumerate(zip(keypair.secret_chains, digits(message_digest)))
        ]
    return Signature(tuple(values[:MSG_CHAINS]), tuple(values[MSG_CHAINS:]))


def verify(public_key: bytes, message_digest: bytes, signature: Signature,
           hash_fn: HashFn = sha256) -> bool:
    try:
        values = signature.to_fields()
    except AttributeError:
        return False
    if len(message_digest) != DIGEST_BYTES or len(values) != CHAINS:
        return False
    if not all(isinstance(v, bytes) and len(v) == DIGEST_BYTES for v in values):
        return False
    tops = [
        _chain(v, i, d, W - 1 - d, hash_fn)
        for i, (v, d) in enumerate(zip(values, digits(message_digest)))
    ]
    return public_key_from_tops(tops, hash_fn) == public_key
