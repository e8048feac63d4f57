"""Convenience wiring of a ledger, its registry and the participants' key rings."""

from __future__ import annotations

import random
from typing import Optional

from .dag_ledger import DEFAULT_ALPHA, Ledger, LedgerTransaction
from .encoding import sha256
from .errors import DuplicateEntity
from .payloads import Payload, Registration, Role
from .registry import AccessPolicy, KeyRing, Registry, issue_certificate

LOW_WATER = 3


class Consortium:
    """A permissioned network rooted at one self-certified regulator.

    The root regulator signs genesis (its own registration) and the
    bootstrap transaction (its second key batch).  Key batches are topped up
    automatically through :meth:`signer` so callers never run dry.
    """

    def __init__(self, seed: bytes, root_regulator: str = "regulator",
                 batch_size: int = 32, alpha: float = DEFAULT_ALPHA,
                 policy: Optional[AccessPolicy] = None, rng: Optional[random.Random] = None):
        self.seed = seed
        self.batch_size = batch_size
        self.rng = rng or random.Random(int.from_bytes(sha256(b"rng" + seed)[:8], "big"))
        self.registry = Registry(policy)
        self.ledger = Ledger(self.registry, alpha=alpha)
        self.keyrings: dict[str, KeyRing] = {}
        self.root = root_regulator

        ring = self._new_ring(root_regulator)
        keys = ring.batch_keys(0)
        ring.mark_registered(0)
        cert = issue_certificate(ring, root_regulator, Role.REGULATOR, keys, 0)
        self.ledger.commit(Registration(root_regulator, Role.REGULATOR, keys, cert), ring, self.rng)
        self.add_key_batch(root_regulator)

    def _new_ring(self, entity_id: str) -> KeyRing:
        ring = KeyRing(entity_id, sha256(b"keyring" + self.seed + entity_id.encode()),
                       self.batch_size)
        self.keyrings[entity_id] = ring
        return ring

    def enroll(self, entity_id: str, role: Role, firmware_hash: Optional[bytes] = None,
               regulator: Optional[str] = None) -> bytes:
        """Create a key ring for ``entity_id`` and register it; returns the tx id."""
        regulator = regulator or self.root
        if self.registry.is_registered(entity_id):
            raise DuplicateEntity(f"{entity_id!r} is already registered")
        ring = self._new_ring(entity_id)
        keys = ring.batch_keys(0)
        cert = issue_certificate(self.signer(regulator, reserve=2), entity_id, role, keys, 0)
        registration = Registration(entity_id, Role(role), keys, cert, firmware_hash, 0)
        tx_id = self.registry.register_entity(registration, self.signer(regulator), self.rng)
        ring.mark_registered(0)
        return tx_id

    def add_key_batch(self, entity_id: str, regulator: Optional[str] = None) -> bytes:
        regulator = regulator or self.root
        ring = self.keyrings[entity_id]
        record = self.registry.entity(entity_id)
        batch = record.batches
        keys = ring.batch_keys(batch)
        if entity_id == regulator:
            reg_ring = ring       # self-renewal; LOW_WATER leaves the two keys needed
        else:
            reg_ring = self.signer(regulator, reserve=2)
        cert = issue_certificate(reg_ring, entity_id, record.role, keys, batch)
        registration = Registration(entity_id, record.role, keys, cert, record.firmware_hash, batch)
        tx_id = self.registry.register_entity(registration, reg_ring, self.rng)
        ring.mark_registered(batch)
        return tx_id

    def signer(self, entity_id: str, reserve: int = 1) -> KeyRing:
        """The entity's key ring, topped up so at least ``reserve`` keys remain."""
        ring = self.keyrings[entity_id]
        if ring.remaining < max(reserve, LOW_WATER) and self.registry.is_active(entity_id):
            self.add_key_batch(entity_id)
        return ring

    def commit(self, entity_id: str, payload: Payload) -> LedgerTransaction:
        return self.ledger.commit(payload, self.signer(entity_id), self.rng)

    def revoke(self, entity_id: str, reason: str, regulator: Optional[str] = None) -> bytes:
        regulator = regulator or self.root
        return self.registry.revoke(entity_id, self.signer(regulator), reason, self.rng)
