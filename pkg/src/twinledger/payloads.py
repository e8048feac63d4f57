"""Ledger payload types: the typed records carried inside transactions.

Every payload converts to and from a plain ``dict`` of canonical-encodable
values (see :mod:`twinledger.encoding`).  Field names and order are part of
the hashed format; changing them changes every transaction id.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from decimal import Decimal
from enum import Enum
from typing import Any, ClassVar, Optional, Union

from .encoding import ZERO_DIGEST, digest
from .pq_auth import Signature


class PayloadKind(str, Enum):
    REGISTRATION = "Registration"
    REVOCATION = "Revocation"
    BOUNDS = "BoundsDefinition"
    PROVENANCE = "ProvenanceEntry"
    READING_BATCH = "ReadingBatchDigest"
    MODEL_ANCHOR = "ModelAnchor"
    REPUTATION = "ReputationUpdate"


class Role(str, Enum):
    SENSOR = "Sensor"
    GATEWAY = "Gateway"
    MACHINE = "Machine"
    HUMAN = "Human"
    REGULATOR = "Regulator"
    TWIN_SERVICE = "TwinService"


DEVICE_ROLES = frozenset({Role.SENSOR, Role.GATEWAY, Role.MACHINE})


class Activity(str, Enum):
    CREATED = "Created"
    PROCESSED = "Processed"
    TRANSFERRED = "Transferred"
    STORED = "Stored"
    CALIBRATED = "Calibrated"


def _float(obj: Any, name: str) -> None:
    value = getattr(obj, name)
    if value is not None and not isinstance(value, float):
        object.__setattr__(obj, name, float(value))


def _require(kind: str, body: Any, names: list[str]) -> dict:
    if not isinstance(body, dict) or sorted(body) != sorted(names):
        raise ValueError(f"{kind} payload must have fields {sorted(names)}")
    return body


@dataclass(frozen=True)
class Certificate:
    """Regulator signature over (entity_id, role, key-list digest)."""

    regulator_id: str
    regulator_key: bytes
    signature: Signature

    def to_fields(self) -> dict:
        return {
            "regulator_id": self.regulator_id,
            "regulator_key": self.regulator_key,
            "signature": self.signature.to_fields(),
        }

    @classmethod
    def from_fields(cls, body: dict) -> "Certificate":
        _require("Certificate", body, ["regulator_id", "regulator_key", "signature"])
        return cls(body["regulator_id"], body["regulator_key"],
                   Signature.from_fields(body["signature"]))


def certificate_message(entity_id: str, role: Role, public_keys: tuple[bytes, ...],
                        batch: int) -> bytes:
    """Digest a regulator signs to certify a key batch."""
    return digest(["certificate", entity_id, Role(role).value, digest(list(public_keys)), batch])


@dataclass(frozen=True)
class Registration:
    KIND: ClassVar[PayloadKind] = PayloadKind.REGISTRATION

    entity_id: str
    role: Role
    public_keys: tuple[bytes, ...]
    certificate: Certificate
    firmware_hash: Optional[bytes] = None
    batch: int = 0          # 0 registers the entity; n > 0 adds key batch n

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        object.__setattr__(self, "public_keys", tuple(self.public_keys))

    def to_fields(self) -> dict:
        return {
            "entity_id": self.entity_id,
            "role": self.role.value,
            "public_keys": list(self.public_keys),
            "certificate": self.certificate.to_fields(),
            "firmware_hash": self.firmware_hash,
            "batch": self.batch,
        }

    @classmethod
    def from_fields(cls, body: dict) -> "Registration":
        _require("Registration", body, [f.name for f in fields(cls)])
        return cls(body["entity_id"], Role(body["role"]), tuple(body["public_keys"]),
                   Certificate.from_fields(body["certificate"]), body["firmware_hash"],
                   body["batch"])


@dataclass(frozen=True)
class Revocation:
    KIND: ClassVar[PayloadKind] = PayloadKind.REVOCATION

    entity_id: str
    reason: str

    def to_fields(self) -> dict:
        return {"entity_id": self.entity_id, "reason": self.reason}

    @classmethod
    def from_fields(cls, body: dict) -> "Revocation":
        _require("Revocation", body, ["entity_id", "reason"])
        return cls(body["entity_id"], body["reason"])


@dataclass(frozen=True)
class PerformanceBounds:
    """Static data: the acceptable range and freshness limits for one metric."""

    KIND: ClassVar[PayloadKind] = PayloadKind.BOUNDS

    machine_id: str
    metric: str
    lower: float
    upper: float
    max_age: int
    divergence_tolerance: float

    def __post_init__(self):
        for name in ("lower", "upper", "divergence_tolerance"):
            _float(self, name)
        if not self.lower < self.upper:
            raise ValueError("bounds require lower < upper")
        if self.max_age <= 0 or self.divergence_tolerance <= 0:
            raise ValueError("max_age and divergence_tolerance must be positive")

    @property
    def midpoint(self) -> float:
        return (self.lower + self.upper) / 2

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_fields(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_fields(cls, body: dict) -> "PerformanceBounds":
        _require("BoundsDefinition", body, [f.name for f in fields(cls)])
        return cls(**body)


@dataclass(frozen=True)
class TwinModel:
    """Per-metric linear predictor: ``nominal + drift_rate * (tick - anchor_tick)``.

    ``last_observed``/``last_observed_tick`` remember the in-bounds observation
    used at the previous calibration; drift is re-estimated from it.
    """

    KIND: ClassVar[PayloadKind] = PayloadKind.MODEL_ANCHOR

    machine_id: str
    metric: str
    version: int
    nominal: float
    drift_rate: float
    anchor_tick: int
    last_observed: Optional[float] = None
    last_observed_tick: Optional[int] = None

    def __post_init__(self):
        _float(self, "nominal")
        _float(self, "drift_rate")
        _float(self, "last_observed")

    def predicted(self, tick: int) -> float:
        return self.nominal + self.drift_rate * (tick - self.anchor_tick)

    def _hashed_fields(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def model_hash(self) -> bytes:
        return digest(["TwinModel", self._hashed_fields()])

    def to_fields(self) -> dict:
        body = self._hashed_fields()
        body["model_hash"] = self.model_hash
        return body

    @classmethod
    def from_fields(cls, body: dict) -> "TwinModel":
        names = [f.name for f in fields(cls)]
        _require("ModelAnchor", body, names + ["model_hash"])
        model = cls(**{k: body[k] for k in names})
        if model.model_hash != body["model_hash"]:
            raise ValueError("model_hash does not match model fields")
        return model


@dataclass(frozen=True)
class ProvenanceRecord:
    """One hash-linked lineage entry for a data subject.

    ``record_id`` is filled in from the other fields when left empty.  A record
    whose stored id no longer matches its fields has been tampered with; see
    :func:`twinledger.provenance.verify_chain`.
    """

    KIND: ClassVar[PayloadKind] = PayloadKind.PROVENANCE

    subject: str
    activity: Activity
    agent: str
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    location: str
    timestamp: int
    prev: bytes = ZERO_DIGEST
    record_id: bytes = b""

    def __post_init__(self):
        object.__setattr__(self, "activity", Activity(self.activity))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if not self.record_id:
            object.__setattr__(self, "record_id", self.compute_id())

    def _hashed_fields(self) -> dict:
        return {
            "subject": self.subject,
            "activity": self.activity.value,
            "agent": self.agent,
            "inputs": list(self.inputs),
            "outputs": list(self.outputs),
            "location": self.location,
            "timestamp": self.timestamp,
            "prev": self.prev,
        }

    def compute_id(self) -> bytes:
        return digest(["ProvenanceRecord", self._hashed_fields()])

    def to_fields(self) -> dict:
        body = self._hashed_fields()
        body["record_id"] = self.record_id
        return body

    @classmethod
    def from_fields(cls, body: dict) -> "ProvenanceRecord":
        _require("ProvenanceEntry", body, [f.name for f in fields(cls)])
        return cls(**body)


@dataclass(frozen=True)
class ReadingBatchDigest:
    KIND: ClassVar[PayloadKind] = PayloadKind.READING_BATCH

    gateway: str
    tick: int
    digest: bytes
    entries: tuple[tuple[str, int], ...]     # (device_id, seq) per reading

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple((d, s) for d, s in self.entries))

    def to_fields(self) -> dict:
        return {
            "gateway": self.gateway,
            "tick": self.tick,
            "digest": self.digest,
            "entries": [[d, s] for d, s in self.entries],
        }

    @classmethod
    def from_fields(cls, body: dict) -> "ReadingBatchDigest":
        _require("ReadingBatchDigest", body, ["gateway", "tick", "digest", "entries"])
        return cls(body["gateway"], body["tick"], body["digest"],
                   tuple((d, s) for d, s in body["entries"]))


@dataclass(frozen=True)
class ReputationUpdate:
    KIND: ClassVar[PayloadKind] = PayloadKind.REPUTATION

    entity_id: str
    tick: int
    delta: Decimal
    cause: str
    score: Decimal          # score after applying the clamped delta

    def to_fields(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_fields(cls, body: dict) -> "ReputationUpdate":
        _require("ReputationUpdate", body, [f.name for f in fields(cls)])
        return cls(**body)


Payload = Union[Registration, Revocation, PerformanceBounds, ProvenanceRecord,
                ReadingBatchDigest, TwinModel, ReputationUpdate]

PAYLOAD_TYPES: dict[PayloadKind, type] = {
    t.KIND: t for t in (Registration, Revocation, PerformanceBounds, ProvenanceRecord,
                        ReadingBatchDigest, TwinModel, ReputationUpdate)
}


def payload_to_fields(payload: Payload) -> dict:
    return {"kind": payload.KIND.value, "body": payload.to_fields()}


def payload_from_fields(value: Any) -> Payload:
    if not isinstance(value, dict) or sorted(value) != ["body", "kind"]:
        raise ValueError("payload must be {kind, body}")
    kind = PayloadKind(value["kind"])
    return PAYLOAD_TYPES[kind].from_fields(value["body"])


def payload_subject(payload: Payload) -> Optional[str]:
    """The id a payload is 'about', used by ledger queries."""
    if isinstance(payload, (Registration, Revocation, ReputationUpdate)):
        return payload.entity_id
    if isinstance(payload, (PerformanceBounds, TwinModel)):
        return payload.machine_id
    if isinstance(payload, ProvenanceRecord):
        return payload.subject
    if isinstance(payload, ReadingBatchDigest):
        return payload.gateway
    return None
