from __future__ import annotations

import pytest

from twinledger import pq_auth
from twinledger.errors import (
    AlreadyRevoked,
    DuplicateEntity,
    KeysExhausted,
    NoFirmwareRecord,
    NotARegulator,
    UnauthorizedIssuer,
)
from twinledger.payloads import (
    PayloadKind,
    ProvenanceRecord,
    Registration,
    Role,
    certificate_message,
)
from twinledger.registry import READ, WRITE, AccessPolicy, KeyRing, Status, issue_certificate


def test_register_gateway_happy_path(consortium):
    tx_id = consortium.enroll("gw3", Role.GATEWAY, b"\x09" * 32)
    record = consortium.registry.entity("gw3")
    assert record.status is Status.ACTIVE and record.role is Role.GATEWAY
    assert consortium.ledger.get(tx_id).payload.entity_id == "gw3"


def test_duplicate_registration(consortium):
    with pytest.raises(DuplicateEntity):
        consortium.enroll("gw1", Role.GATEWAY, b"\x01" * 32)
    ring = KeyRing("gw1", b"other-seed" * 4, 4)
    keys = ring.batch_keys(0)
    cert = issue_certificate(consortium.signer("regulator", reserve=2), "gw1", Role.GATEWAY,
                             keys, 0)
    with pytest.raises(DuplicateEntity):
        consortium.registry.register_entity(
            Registration("gw1", Role.GATEWAY, keys, cert, b"\x01" * 32),
            consortium.signer("regulator"), consortium.rng)


def test_certificate_from_gateway_is_refused(consortium):
    ring = KeyRing("gw9", b"seed" * 8, 4)
    keys = ring.batch_keys(0)
    cert = issue_certificate(consortium.signer("gw1"), "gw9", Role.GATEWAY, keys, 0)
    registration = Registration("gw9", Role.GATEWAY, keys, cert, b"\x09" * 32)
    with pytest.raises(NotARegulator):
        consortium.registry.register_entity(registration, consortium.signer("regulator"),
                                            consortium.rng)
    assert not consortium.registry.is_registered("gw9")


def test_attest_firmware(consortium):
    registry = consortium.registry
    assert registry.attest_firmware("s1", b"\x04" * 32)
    assert not registry.attest_firmware("s1", b"\x05" + b"\x04" * 31)
    assert not registry.attest_firmware("s1", None)
    with pytest.raises(NoFirmwareRecord):
        registry.attest_firmware("alice", b"\x00" * 32)


def test_revocation_is_absorbing(consortium):
    consortium.revoke("gw2", "decommissioned")
    registry = consortium.registry
    assert registry.entity("gw2").status is Status.REVOKED
    assert not registry.authorize("gw2", PayloadKind.PROVENANCE, WRITE)
    assert not registry.authorize("gw2", PayloadKind.BOUNDS, READ)
    with pytest.raises(UnauthorizedIssuer):
        consortium.ledger.commit(
            ProvenanceRecord("lot-1", "Created", "gw2", (), (), "bay", 1),
            consortium.keyrings["gw2"], consortium.rng)
    with pytest.raises(AlreadyRevoked):
        consortium.revoke("gw2", "again")


def test_policy_table_is_exhaustively_consistent(consortium):
    registry = consortium.registry
    writers = {
        Role.REGULATOR: {PayloadKind.REGISTRATION, PayloadKind.REVOCATION},
        Role.GATEWAY: {PayloadKind.PROVENANCE, PayloadKind.READING_BATCH},
        Role.TWIN_SERVICE: {PayloadKind.MODEL_ANCHOR, PayloadKind.BOUNDS,
                            PayloadKind.REPUTATION},
    }
    entity_of = {Role.REGULATOR: "regulator", Role.GATEWAY: "gw1", Role.MACHINE: "press-1",
                 Role.SENSOR: "s1", Role.HUMAN: "alice", Role.TWIN_SERVICE: "twin"}
    for role, entity in entity_of.items():
        for kind in PayloadKind:
            assert registry.authorize(entity, kind, WRITE) == (kind in writers.get(role, ()))
            readable = kind is not PayloadKind.REPUTATION or role in (Role.REGULATOR,
                                                                     Role.TWIN_SERVICE)
            assert registry.authorize(entity, kind, READ) == readable
            assert registry.authorize(entity, kind, READ) == registry.policy.allows(
                role, kind, READ)


def test_policy_must_be_total_and_sensor_silent():
    table = dict(AccessPolicy.default().table)
    table.pop(next(iter(table)))
    with pytest.raises(ValueError):
        AccessPolicy(table)
    table = dict(AccessPolicy.default().table)
    table[(Role.SENSOR, PayloadKind.READING_BATCH, WRITE)] = True
    with pytest.raises(ValueError):
        AccessPolicy(table)


def test_key_batches_are_topped_up(consortium):
    ring = consortium.keyrings["gw1"]
    before = consortium.registry.entity("gw1").batches
    for _ in range(ring.batch_size + 2):
        consortium.signer("gw1").next_key()
    assert consortium.registry.entity("gw1").batches > before


def test_keyring_exhaustion():
    ring = KeyRing("x", b"\x00" * 32, 3)
    ring.mark_registered(0)
    for _ in range(3):
        ring.next_key()
    with pytest.raises(KeysExhausted):
        ring.next_key()


def test_ledger_invariants(consortium):
    consortium.revoke("gw2", "test")
    registry, ledger = consortium.registry, consortium.ledger
    for record in registry.registrations():
        if record.status is Status.ACTIVE:
            regs = ledger.query("regulator", kind=PayloadKind.REGISTRATION,
                                subject=record.entity_id)
            assert regs
            cert = regs[0].payload.certificate
            message = certificate_message(record.entity_id, record.role,
                                          regs[0].payload.public_keys, 0)
            assert pq_auth.verify(cert.regulator_key, message, cert.signature)
        assert (record.firmware_hash is not None) == (
            record.role in (Role.SENSOR, Role.GATEWAY, Role.MACHINE))
    for tx in ledger.transactions()[1:]:
        issuer = registry.entity(tx.issuer)
        assert issuer.revoked_at is None or issuer.revoked_at > tx.logical_time
