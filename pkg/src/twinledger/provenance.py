"""Hash-linked lineage per data subject: record, trace, verify, attribute.

Each subject owns a linear chain of :class:`ProvenanceRecord` entries whose
``prev`` field holds the predecessor's ``record_id``.  Verification walks the
chain once and reports the first break, which is enough to name the entity
responsible for it.
"""

from __future__ import annotations

import random
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

from .dag_ledger import Ledger, LedgerTransaction
from .encoding import ZERO_DIGEST
from .errors import (
    ChainIsComplete,
    InvalidTransaction,
    ProvenanceError,
    StalePrev,
    UnauthorizedIssuer,
    UnknownSubject,
)
from .payloads import Activity, PayloadKind, ProvenanceRecord
from .registry import Registry

__all__ = [
    "Activity", "ChainState", "ChainStatus", "ProvenanceRecord", "ProvenanceStore",
    "identify_faulty_entity", "records_from_export", "report_lines", "verify_chain",
]


class ChainState(str, Enum):
    COMPLETE = "Complete"
    GAP = "GapAt"
    TAMPERED = "TamperedAt"


@dataclass(frozen=True)
class ChainStatus:
    state: ChainState
    index: Optional[int] = None

    @classmethod
    def complete(cls) -> "ChainStatus":
        return cls(ChainState.COMPLETE)

    @classmethod
    def gap_at(cls, index: int) -> "ChainStatus":
        return cls(ChainState.GAP, index)

    @classmethod
    def tampered_at(cls, index: int) -> "ChainStatus":
        return cls(ChainState.TAMPERED, index)

    @property
    def is_complete(self) -> bool:
        return self.state is ChainState.COMPLETE

    def __str__(self) -> str:
        return self.state.value if self.is_complete else f"{self.state.value}({self.index})"


def verify_chain(records: Sequence[ProvenanceRecord]) -> ChainStatus:
    """First integrity failure of a presented chain.

    Record ``i`` is checked for a hash mismatch before its link to record
    ``i - 1``; the first record must link to the zero digest.
    """
    expected_prev = ZERO_DIGEST
    for i, record in enumerate(records):
        if record.compute_id() != record.record_id:
            return ChainStatus.tampered_at(i)
        if record.prev != expected_prev:
            return ChainStatus.gap_at(i)
        expected_prev = record.record_id
    return ChainStatus.complete()


def identify_faulty_entity(records: Sequence[ProvenanceRecord],
                           status: Optional[ChainStatus] = None) -> str:
    """Agent accountable for the first break.

    A tampered record blames its own agent.  A gap blames the agent of the
    record before it, the last holder with proven custody; a gap at index 0
    has no predecessor, so the first presented record's agent is blamed.
    """
    status = status or verify_chain(records)
    if status.is_complete:
        raise ChainIsComplete("chain verifies; no faulty entity to identify")
    if status.state is ChainState.TAMPERED or status.index == 0:
        return records[status.index].agent
    return records[status.index - 1].agent


def report_lines(records: Iterable[ProvenanceRecord]) -> list[str]:
    """One tab-separated line per record: index, activity, agent, location, timestamp."""
    return [
        f"{i}\t{r.activity.value}\t{r.agent}\t{r.location}\t{r.timestamp}"
        for i, r in enumerate(records)
    ]


def records_from_export(lines: Iterable[str], subject: str) -> list[ProvenanceRecord]:
    """Provenance records for ``subject`` from ledger export lines, in order.

    Parsing is lenient on purpose: transaction ids and signatures are not
    checked and undecodable lines are skipped, so damaged exports can still
    be audited with :func:`verify_chain`.
    """
    records = []
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            tx = LedgerTransaction.decode(bytes.fromhex(line), check_id=False)
        except (InvalidTransaction, ValueError):
            continue
        if isinstance(tx.payload, ProvenanceRecord) and tx.payload.subject == subject:
            records.append(tx.payload)
    return records


class ProvenanceStore:
    """Ledger-backed provenance chains, indexed as transactions commit."""

    def __init__(self, ledger: Ledger, registry: Registry, rng: random.Random):
        self.ledger = ledger
        self.registry = registry
        self.rng = rng
        self._chains: dict[str, list[ProvenanceRecord]] = {}
        self._tx_ids: dict[bytes, bytes] = {}
        self._lock = threading.RLock()
        for tx in ledger.transactions():
            self._index(tx)
        ledger.subscribe(self._index)

    def _index(self, tx: LedgerTransaction) -> None:
        if tx.kind is PayloadKind.PROVENANCE:
            record = tx.payload
            self._chains.setdefault(record.subject, []).append(record)
            self._tx_ids[record.record_id] = tx.id

    def subjects(self) -> list[str]:
        return sorted(self._chains)

    def latest(self, subject: str) -> Optional[ProvenanceRecord]:
        chain = self._chains.get(subject)
        return chain[-1] if chain else None

    def transaction_of(self, record: ProvenanceRecord) -> bytes:
        return self._tx_ids[record.record_id]

    def record(self, subject: str, activity: Activity, agent: str, inputs: Sequence[str],
               outputs: Sequence[str], location: str, timestamp: int, signer,
               prev: Optional[bytes] = None) -> bytes:
        """Append a record to ``subject``'s chain via ``signer`` (normally a gateway).

        ``prev`` defaults to the subject's latest record; passing an older one
        raises :class:`StalePrev`.
        """
        with self._lock:
            if not self.registry.is_active(agent):
                raise UnauthorizedIssuer(f"agent {agent!r} is not an active entity")
            if not self.registry.authorize(signer.entity_id, PayloadKind.PROVENANCE, "write"):
                raise UnauthorizedIssuer(f"{signer.entity_id!r} may not write provenance")
            latest = self.latest(subject)
            head = latest.record_id if latest else ZERO_DIGEST
            if prev is None:
                prev = head
            elif prev != head:
                raise StalePrev(f"prev is not the latest record of {subject!r}")
            if latest is not None and timestamp <= latest.timestamp:
                raise ProvenanceError("provenance timestamps must strictly increase")
            record = ProvenanceRecord(subject, Activity(activity), agent, tuple(inputs),
                                      tuple(outputs), location, timestamp, prev)
            return self.ledger.commit(record, signer, self.rng).id

    def trace(self, subject: str) -> list[ProvenanceRecord]:
        chain = self._chains.get(subject)
        if not chain:
            raise UnknownSubject(f"no provenance for {subject!r}")
        chain = list(chain)
        status = verify_chain(chain)
        if not status.is_complete:
            raise ProvenanceError(f"stored chain for {subject!r} is broken: {status}")
        return chain

    def verify_chain(self, subject: str) -> ChainStatus:
        if subject not in self._chains:
            raise UnknownSubject(f"no provenance for {subject!r}")
        return verify_chain(self._chains[subject])

    def identify_faulty_entity(self, subject: str) -> str:
        if subject not in self._chains:
            raise UnknownSubject(f"no provenance for {subject!r}")
        return identify_faulty_entity(self._chains[subject])
