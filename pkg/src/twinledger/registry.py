"""Entity lifecycle anchored on the ledger: registration, attestation, revocation.

The :class:`Registry` doubles as the ledger's gatekeeper.  Its state is
derived purely from committed ``Registration``/``Revocation`` transactions, so
replaying an export through a fresh registry reproduces it exactly.
"""

from __future__ import annotations

import hmac
import random
import threading
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Optional

from . import pq_auth
from .encoding import sha256
from .errors import (
    AlreadyRevoked,
    BadCertificate,
    DuplicateEntity,
    InvalidTransaction,
    KeyReuse,
    KeysExhausted,
    NoFirmwareRecord,
    NotARegulator,
    UnauthorizedIssuer,
    UnknownEntity,
)
from .payloads import (
    DEVICE_ROLES,
    Certificate,
    PayloadKind,
    Registration,
    Revocation,
    Role,
    certificate_message,
)

if TYPE_CHECKING:
    from .dag_ledger import Ledger, LedgerTransaction


class Status(str, Enum):
    ACTIVE = "Active"
    REVOKED = "Revoked"


READ, WRITE = "read", "write"


@dataclass
class EntityRecord:
    entity_id: str
    role: Role
    public_keys: list[bytes]
    certificate: Certificate
    firmware_hash: Optional[bytes] = None
    status: Status = Status.ACTIVE
    batches: int = 1
    registered_at: int = 0
    revoked_at: Optional[int] = None
    revocation_reason: Optional[str] = None


class AccessPolicy:
    """Total map from (role, payload kind, action) to allow/deny."""

    def __init__(self, table: dict[tuple[Role, PayloadKind, str], bool]):
        missing = [(r, k, a) for r in Role for k in PayloadKind for a in (READ, WRITE)
                   if (r, k, a) not in table]
        if missing:
            raise ValueError(f"policy table is not total; missing {missing[0]}")
        if any(table[(Role.SENSOR, k, WRITE)] for k in PayloadKind):
            raise ValueError("sensors may never write to the ledger")
        self.table = dict(table)

    @classmethod
    def default(cls) -> "AccessPolicy":
        writes = {
            Role.REGULATOR: {PayloadKind.REGISTRATION, PayloadKind.REVOCATION},
            Role.GATEWAY: {PayloadKind.PROVENANCE, PayloadKind.READING_BATCH},
            Role.TWIN_SERVICE: {PayloadKind.MODEL_ANCHOR, PayloadKind.BOUNDS,
                                PayloadKind.REPUTATION},
        }
        table = {}
        for role in Role:
            for kind in PayloadKind:
                table[(role, kind, WRITE)] = kind in writes.get(role, ())
                if kind is PayloadKind.REPUTATION:
                    table[(role, kind, READ)] = role in (Role.REGULATOR, Role.TWIN_SERVICE)
                else:
                    table[(role, kind, READ)] = True
        return cls(table)

    def allows(self, role: Role, kind: PayloadKind, action: str) -> bool:
        return self.table.get((Role(role), PayloadKind(kind), action), False)


class KeyRing:
    """Deterministic supply of one-time key pairs for one entity.

    Key ``i`` is derived from ``sha256(seed || i)``.  Keys are handed out in
    order and only once they belong to a registered batch.
    """

    def __init__(self, entity_id: str, seed: bytes, batch_size: int = 32):
        if batch_size < 3:
            raise ValueError("batch_size must be at least 3")
        self.entity_id = entity_id
        self.seed = seed
        self.batch_size = batch_size
        self._pairs: dict[int, pq_auth.OneTimeKeyPair] = {}
        self.next_index = 0
        self.registered_upto = 0
        self._lock = threading.Lock()

    def keypair(self, index: int) -> pq_auth.OneTimeKeyPair:
        pair = self._pairs.get(index)
        if pair is None:
            pair = pq_auth.keygen(sha256(self.seed + index.to_bytes(8, "big")))
            self._pairs[index] = pair
        return pair

    def batch_keys(self, batch: int) -> tuple[bytes, ...]:
        start = batch * self.batch_size
        return tuple(self.keypair(i).public_key for i in range(start, start + self.batch_size))

    def mark_registered(self, batch: int) -> None:
        self.registered_upto = max(self.registered_upto, (batch + 1) * self.batch_size)

    @property
    def remaining(self) -> int:
        return self.registered_upto - self.next_index

    def next_key(self) -> pq_auth.OneTimeKeyPair:
        with self._lock:
            if self.next_index >= self.registered_upto:
                raise KeysExhausted(f"{self.entity_id} has no registered unused keys")
            pair = self.keypair(self.next_index)
            self._pairs.pop(self.next_index)
            self.next_index += 1
            return pair


def issue_certificate(regulator: KeyRing, entity_id: str, role: Role,
                      public_keys: tuple[bytes, ...], batch: int) -> Certificate:
    key = regulator.next_key()
    message = certificate_message(entity_id, role, public_keys, batch)
    return Certificate(regulator.entity_id, key.public_key, pq_auth.sign(key, message))


class Registry:
    """Registered entities, key ownership and the access policy."""

    def __init__(self, policy: Optional[AccessPolicy] = None):
        self.policy = policy or AccessPolicy.default()
        self.entities: dict[str, EntityRecord] = {}
        self.key_owner: dict[bytes, str] = {}
        self.used_keys: set[bytes] = set()
        self.ledger: Optional["Ledger"] = None
        self._lock = threading.RLock()

    def attach(self, ledger: "Ledger") -> None:
        self.ledger = ledger

    # -- queries -------------------------------------------------------------
    def entity(self, entity_id: str) -> EntityRecord:
        try:
            return self.entities[entity_id]
        except KeyError:
            raise UnknownEntity(f"unknown entity {entity_id!r}") from None

    def is_registered(self, entity_id: str) -> bool:
        return entity_id in self.entities

    def is_active(self, entity_id: Optional[str]) -> bool:
        record = self.entities.get(entity_id) if entity_id is not None else None
        return record is not None and record.status is Status.ACTIVE

    def authorize(self, entity: Optional[str], payload_kind: PayloadKind, action: str) -> bool:
        if not self.is_active(entity):
            return False
        return self.policy.allows(self.entities[entity].role, payload_kind, action)

    def attest_firmware(self, device: str, reported_hash: Optional[bytes]) -> bool:
        record = self.entity(device)
        if record.firmware_hash is None:
            raise NoFirmwareRecord(f"{device} ({record.role.value}) has no firmware record")
        if reported_hash is None:
            return False
        return hmac.compare_digest(record.firmware_hash, reported_hash)

    # -- gatekeeper ----------------------------------------------------------
    def admit(self, tx: "LedgerTransaction", ledger: "Ledger") -> None:
        with self._lock:
            if len(ledger) == 0:
                self._admit_genesis(tx)
                return
            issuer = self.entities.get(tx.issuer)
            if issuer is None:
                raise UnauthorizedIssuer(f"issuer {tx.issuer!r} is not registered")
            owner = self.key_owner.get(tx.issuer_key)
            if owner != tx.issuer:
                raise UnauthorizedIssuer(f"issuer key is not registered to {tx.issuer!r}")
            if tx.issuer_key in self.used_keys:
                raise KeyReuse(f"issuer key {tx.issuer_key.hex()[:16]} already used")
            if issuer.status is not Status.ACTIVE:
                raise UnauthorizedIssuer(f"issuer {tx.issuer!r} is revoked")
            if not self.policy.allows(issuer.role, tx.kind, WRITE):
                raise UnauthorizedIssuer(
                    f"{issuer.role.value} {tx.issuer!r} may not write {tx.kind.value}")
            if len(ledger) == 1 and issuer.role is not Role.REGULATOR:
                raise UnauthorizedIssuer("the bootstrap transaction must be regulator-signed")
            if isinstance(tx.payload, Registration):
                self.validate_registration(tx.payload)
            elif isinstance(tx.payload, Revocation):
                self._validate_revocation(tx.payload)

    def _admit_genesis(self, tx: "LedgerTransaction") -> None:
        payload = tx.payload
        if not isinstance(payload, Registration) or payload.role is not Role.REGULATOR:
            raise UnauthorizedIssuer("genesis must register the root regulator")
        if payload.entity_id != tx.issuer or payload.batch != 0:
            raise UnauthorizedIssuer("genesis must be the root regulator's own registration")
        cert = payload.certificate
        if cert.regulator_id != payload.entity_id:
            raise BadCertificate("genesis certificate must be self-issued")
        keys = set(payload.public_keys)
        if tx.issuer_key not in keys or cert.regulator_key not in keys:
            raise UnauthorizedIssuer("genesis keys must come from its own key batch")
        if cert.regulator_key == tx.issuer_key:
            raise KeyReuse("certificate key reused as issuer key")
        self._check_certificate_signature(payload)

    def _check_certificate_signature(self, payload: Registration) -> None:
        message = certificate_message(payload.entity_id, payload.role, payload.public_keys,
                                      payload.batch)
        if not pq_auth.verify(payload.certificate.regulator_key, message,
                              payload.certificate.signature):
            raise BadCertificate(f"certificate for {payload.entity_id!r} does not verify")

    def validate_registration(self, payload: Registration) -> None:
        """Checks shared by ledger admission and :meth:`register_entity`."""
        cert = payload.certificate
        regulator = self.entities.get(cert.regulator_id)
        if regulator is None or regulator.role is not Role.REGULATOR:
            raise NotARegulator(f"{cert.regulator_id!r} is not a registered regulator")
        if regulator.status is not Status.ACTIVE:
            raise NotARegulator(f"regulator {cert.regulator_id!r} is revoked")
        if self.key_owner.get(cert.regulator_key) != cert.regulator_id:
            raise BadCertificate("certificate key is not registered to the regulator")
        if cert.regulator_key in self.used_keys or (
                self.ledger is not None and self.ledger.key_used(cert.regulator_key)):
            raise KeyReuse("certificate key already used")
        self._check_certificate_signature(payload)
        if (payload.firmware_hash is not None) != (payload.role in DEVICE_ROLES):
            raise InvalidTransaction("firmware_hash is required for devices and only for them")
        if not payload.public_keys or len(set(payload.public_keys)) != len(payload.public_keys):
            raise InvalidTransaction("key batch must be non-empty and duplicate-free")
        existing = self.entities.get(payload.entity_id)
        if payload.batch == 0 and existing is not None:
            raise DuplicateEntity(f"{payload.entity_id!r} is already registered")
        if any(k in self.key_owner for k in payload.public_keys):
            raise InvalidTransaction("key batch reuses an already registered key")
        if payload.batch == 0:
            return
        if existing is None:
            raise UnknownEntity(f"key batch for unregistered {payload.entity_id!r}")
        if existing.status is not Status.ACTIVE:
            raise AlreadyRevoked(f"{payload.entity_id!r} is revoked")
        if existing.role is not payload.role or existing.firmware_hash != payload.firmware_hash:
            raise InvalidTransaction("key batch must repeat the entity's role and firmware")
        if payload.batch != existing.batches:
            raise InvalidTransaction(f"expected key batch {existing.batches}")

    def _validate_revocation(self, payload: Revocation) -> None:
        record = self.entity(payload.entity_id)
        if record.status is Status.REVOKED:
            raise AlreadyRevoked(f"{payload.entity_id!r} is already revoked")

    def on_commit(self, tx: "LedgerTransaction") -> None:
        with self._lock:
            self.used_keys.add(tx.issuer_key)
            payload = tx.payload
            if isinstance(payload, Registration):
                self.used_keys.add(payload.certificate.regulator_key)
                for key in payload.public_keys:
                    self.key_owner[key] = payload.entity_id
                record = self.entities.get(payload.entity_id)
                if record is None:
                    self.entities[payload.entity_id] = EntityRecord(
                        payload.entity_id, payload.role, list(payload.public_keys),
                        payload.certificate, payload.firmware_hash,
                        registered_at=tx.logical_time)
                else:
                    record.public_keys.extend(payload.public_keys)
                    record.batches += 1
            elif isinstance(payload, Revocation):
                record = self.entities[payload.entity_id]
                record.status = Status.REVOKED
                record.revoked_at = tx.logical_time
                record.revocation_reason = payload.reason

    # -- operations ----------------------------------------------------------
    def _require_regulator(self, regulator_id: str) -> None:
        record = self.entities.get(regulator_id)
        if record is None or record.role is not Role.REGULATOR or record.status is not Status.ACTIVE:
            raise NotARegulator(f"{regulator_id!r} is not an active regulator")

    def register_entity(self, registration: Registration, regulator: KeyRing,
                        rng: random.Random) -> bytes:
        """Commit a Registration signed by ``regulator``; returns its transaction id."""
        if self.ledger is None:
            raise RuntimeError("registry is not attached to a ledger")
        self._require_regulator(regulator.entity_id)
        self.validate_registration(registration)
        return self.ledger.commit(registration, regulator, rng).id

    def revoke(self, entity: str, regulator: KeyRing, reason: str,
               rng: random.Random) -> bytes:
        if self.ledger is None:
            raise RuntimeError("registry is not attached to a ledger")
        record = self.entity(entity)
        if record.status is Status.REVOKED:
            raise AlreadyRevoked(f"{entity!r} is already revoked")
        self._require_regulator(regulator.entity_id)
        return self.ledger.commit(Revocation(entity, reason), regulator, rng).id

    def registrations(self) -> Iterable[EntityRecord]:
        return list(self.entities.values())
