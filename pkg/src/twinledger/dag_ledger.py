"""Permissioned DAG ledger (a "tangle").

Each transaction approves two earlier transactions.  The structure lives in
:class:`Tangle` (parents, approvers, tips, cumulative weights); :class:`Ledger`
wraps it with signature checks, admission policy, queries and export/replay.

Admission checks run in a fixed order and the first failure is raised:
encoding/structure (:class:`InvalidTransaction`), :class:`UnknownParent`,
:class:`InvalidSignature`, :class:`KeyReuse`, then the gatekeeper's policy
(:class:`UnauthorizedIssuer`).
"""

from __future__ import annotations

import math
import random
import threading
from collections import deque
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Protocol

from . import pq_auth
from .encoding import EncodingError, HashFn, decode, digest, encode, sha256
from .errors import (
    EmptyLedger,
    InvalidSignature,
    InvalidTransaction,
    KeyReuse,
    UnauthorizedReader,
    UnknownParent,
    UnknownTransaction,
)
from .payloads import Payload, PayloadKind, payload_from_fields, payload_subject, payload_to_fields

TransactionId = bytes

DEFAULT_ALPHA = 0.01
MAX_REWALKS = 64


@dataclass(frozen=True)
class LedgerTransaction:
    """A signed ledger entry.

    ``id`` is the hash of the canonical encoding of every field except the
    signature, and the signature is made over ``id`` with ``issuer_key``.
    """

    parents: tuple[TransactionId, ...]
    payload: Payload
    issuer: str
    issuer_key: bytes
    logical_time: int
    signature: pq_auth.Signature
    id: TransactionId

    @staticmethod
    def body(parents, payload, issuer, issuer_key, logical_time) -> dict:
        return {
            "parents": list(parents),
            "payload": payload_to_fields(payload),
            "issuer": issuer,
            "issuer_key": issuer_key,
            "logical_time": logical_time,
        }

    @staticmethod
    def compute_id(body: dict, hash_fn: HashFn = sha256) -> TransactionId:
        return digest(["LedgerTransaction", body], hash_fn)

    @classmethod
    def create(cls, parents: Iterable[TransactionId], payload: Payload, issuer: str,
               keypair: pq_auth.OneTimeKeyPair, logical_time: int,
               hash_fn: HashFn = sha256) -> "LedgerTransaction":
        parents = tuple(parents)
        body = cls.body(parents, payload, issuer, keypair.public_key, logical_time)
        tx_id = cls.compute_id(body, hash_fn)
        signature = pq_auth.sign(keypair, tx_id)
        return cls(parents, payload, issuer, keypair.public_key, logical_time, signature, tx_id)

    @property
    def kind(self) -> PayloadKind:
        return self.payload.KIND

    def to_fields(self) -> dict:
        return {
            "body": self.body(self.parents, self.payload, self.issuer, self.issuer_key,
                              self.logical_time),
            "id": self.id,
            "signature": self.signature.to_fields(),
        }

    def encode(self) -> bytes:
        return encode(self.to_fields())

    def rehash(self, hash_fn: HashFn = sha256) -> TransactionId:
        return self.compute_id(self.body(self.parents, self.payload, self.issuer,
                                         self.issuer_key, self.logical_time), hash_fn)

    @classmethod
    def decode(cls, data: bytes, hash_fn: HashFn = sha256,
               check_id: bool = True) -> "LedgerTransaction":
        try:
            raw = decode(data)
            if not isinstance(raw, dict) or sorted(raw) != ["body", "id", "signature"]:
                raise ValueError("transaction must be {body, id, signature}")
            body = raw["body"]
            if not isinstance(body, dict) or sorted(body) != sorted(
                    ["parents", "payload", "issuer", "issuer_key", "logical_time"]):
                raise ValueError("bad transaction body")
            tx = cls(
                parents=tuple(body["parents"]),
                payload=payload_from_fields(body["payload"]),
                issuer=body["issuer"],
                issuer_key=body["issuer_key"],
                logical_time=body["logical_time"],
                signature=pq_auth.Signature.from_fields(raw["signature"]),
                id=raw["id"],
            )
        except (EncodingError, ValueError, KeyError, TypeError) as exc:
            raise InvalidTransaction(f"undecodable transaction: {exc}") from exc
        if check_id and tx.rehash(hash_fn) != tx.id:
            raise InvalidTransaction(f"id mismatch for transaction {tx.id.hex()[:16]}")
        return tx


class Tangle:
    """DAG structure with incrementally maintained cumulative weights.

    Adding a transaction increments the weight of every transaction it
    (directly or indirectly) approves, so weights are always exact.
    """

    def __init__(self):
        self._parents: dict[TransactionId, tuple[TransactionId, ...]] = {}
        self._approvers: dict[TransactionId, list[TransactionId]] = {}
        self._weight: dict[TransactionId, int] = {}
        self._tips: set[TransactionId] = set()
        self.order: list[TransactionId] = []

    def __len__(self) -> int:
        return len(self.order)

    def __contains__(self, tx_id: object) -> bool:
        return tx_id in self._parents

    @property
    def genesis(self) -> TransactionId:
        if not self.order:
            raise EmptyLedger("tangle is empty")
        return self.order[0]

    @property
    def tips(self) -> frozenset[TransactionId]:
        return frozenset(self._tips)

    def parents(self, tx_id: TransactionId) -> tuple[TransactionId, ...]:
        self._require(tx_id)
        return self._parents[tx_id]

    def approvers(self, tx_id: TransactionId) -> list[TransactionId]:
        self._require(tx_id)
        return list(self._approvers[tx_id])

    def _require(self, tx_id: TransactionId) -> None:
        if tx_id not in self._parents:
            raise UnknownTransaction(f"unknown transaction {tx_id.hex()[:16]}")

    def check_parents(self, tx_id: TransactionId, parents: tuple[TransactionId, ...]) -> None:
        if tx_id in self._parents:
            raise InvalidTransaction(f"duplicate transaction {tx_id.hex()[:16]}")
        if not self.order:
            if parents:
                raise InvalidTransaction("genesis must have no parents")
            return
        if len(parents) != 2:
            raise InvalidTransaction("transactions must approve exactly two parents")
        for parent in parents:
            if parent not in self._parents:
                raise UnknownParent(f"unknown parent {parent.hex()[:16]}")
        if parents[0] == parents[1] and not (len(self.order) == 1 and parents[0] == self.genesis):
            # only the bootstrap transaction may approve (genesis, genesis)
            raise InvalidTransaction("parents must be distinct")

    def add(self, tx_id: TransactionId, parents: Iterable[TransactionId]) -> None:
        parents = tuple(parents)
        self.check_parents(tx_id, parents)
        self._parents[tx_id] = parents
        self._approvers[tx_id] = []
        self._weight[tx_id] = 1
        self._tips.add(tx_id)
        self.order.append(tx_id)
        for parent in set(parents):
            self._approvers[parent].append(tx_id)
            self._tips.discard(parent)
        seen: set[TransactionId] = set()
        queue = deque(set(parents))
        while queue:
            current = queue.popleft()
            if current in seen:
                continue
            seen.add(current)
            self._weight[current] += 1
            queue.extend(self._parents[current])

    def cumulative_weight(self, tx_id: TransactionId) -> int:
        self._require(tx_id)
        return self._weight[tx_id]

    def walk(self, rng: random.Random, alpha: float = DEFAULT_ALPHA) -> TransactionId:
        """Weighted random walk from genesis to a tip.

        At each step the approvers are ordered by id; with two or more of them
        exactly one ``rng.random()`` is drawn and the next step is chosen with
        probability proportional to ``exp(alpha * cumulative_weight)``.
        """
        current = self.genesis
        while True:
            children = sorted(self._approvers[current])
            if not children:
                return current
            if len(children) == 1:
                current = children[0]
                continue
            weights = [self._weight[c] for c in children]
            top = max(weights)
            probs = [math.exp(alpha * (w - top)) for w in weights]
            threshold = rng.random() * sum(probs)
            acc = 0.0
            chosen = children[-1]
            for child, p in zip(children, probs):
                acc += p
                if threshold < acc:
                    chosen = child
                    break
            current = chosen

    def select_tips(self, rng: random.Random,
                    alpha: float = DEFAULT_ALPHA) -> tuple[TransactionId, TransactionId]:
        """Two tips from independent walks; equal only if a single tip exists.

        When the second walk lands on the first tip it is repeated (up to
        ``MAX_REWALKS`` times), then the smallest other tip id is taken.
        """
        if not self.order:
            raise EmptyLedger("cannot select tips of an empty tangle")
        first = self.walk(rng, alpha)
        second = self.walk(rng, alpha)
        if len(self._tips) > 1:
            attempts = 0
            while second == first and attempts < MAX_REWALKS:
                second = self.walk(rng, alpha)
                attempts += 1
            if second == first:
                second = min(self._tips - {first})
        return first, second


class Gatekeeper(Protocol):
    """Admission policy plugged into a :class:`Ledger` (normally the registry)."""

    def admit(self, tx: LedgerTransaction, ledger: "Ledger") -> None: ...

    def on_commit(self, tx: LedgerTransaction) -> None: ...

    def authorize(self, entity: str, kind: PayloadKind, action: str) -> bool: ...


class Ledger:
    """A single logical ledger shared by concurrent writers.

    ``submit`` is linearizable: validation and append happen under one lock
    and ``logical_time`` must strictly increase in commit order.
    """

    def __init__(self, gatekeeper: Optional[Gatekeeper] = None, alpha: float = DEFAULT_ALPHA,
                 hash_fn: HashFn = sha256):
        self.tangle = Tangle()
        self.alpha = alpha
        self.hash_fn = hash_fn
        self.gatekeeper = gatekeeper
        self._tx: dict[TransactionId, LedgerTransaction] = {}
        self._issuer_keys: set[bytes] = set()
        self._lock = threading.RLock()
        self._subscribers: list[Callable[[LedgerTransaction], None]] = []
        if gatekeeper is not None and hasattr(gatekeeper, "attach"):
            gatekeeper.attach(self)

    # -- state ---------------------------------------------------------------
    def __len__(self) -> int:
        return len(self.tangle)

    def __contains__(self, tx_id: object) -> bool:
        return tx_id in self._tx

    def __iter__(self) -> Iterator[LedgerTransaction]:
        return iter(self.transactions())

    def get(self, tx_id: TransactionId) -> LedgerTransaction:
        try:
            return self._tx[tx_id]
        except KeyError:
            raise UnknownTransaction(f"unknown transaction {tx_id.hex()[:16]}") from None

    def transactions(self) -> list[LedgerTransaction]:
        with self._lock:
            return [self._tx[i] for i in self.tangle.order]

    @property
    def last_logical_time(self) -> int:
        with self._lock:
            if not self.tangle.order:
                return -1
            return self._tx[self.tangle.order[-1]].logical_time

    def key_used(self, public_key: bytes) -> bool:
        return public_key in self._issuer_keys

    def subscribe(self, callback: Callable[[LedgerTransaction], None]) -> None:
        self._subscribers.append(callback)

    # -- writes --------------------------------------------------------------
    def submit(self, tx: LedgerTransaction) -> TransactionId:
        with self._lock:
            if tx.rehash(self.hash_fn) != tx.id:
                raise InvalidTransaction(f"id mismatch for transaction {tx.id.hex()[:16]}")
            if tx.logical_time <= self.last_logical_time:
                raise InvalidTransaction("logical_time must increase in commit order")
            self.tangle.check_parents(tx.id, tx.parents)
            if not pq_auth.verify(tx.issuer_key, tx.id, tx.signature, self.hash_fn):
                raise InvalidSignature(f"signature of {tx.id.hex()[:16]} does not verify")
            if tx.issuer_key in self._issuer_keys:
                raise KeyReuse(f"issuer key {tx.issuer_key.hex()[:16]} already used")
            if self.gatekeeper is not None:
                self.gatekeeper.admit(tx, self)
            self.tangle.add(tx.id, tx.parents)
            self._tx[tx.id] = tx
            self._issuer_keys.add(tx.issuer_key)
            if self.gatekeeper is not None:
                self.gatekeeper.on_commit(tx)
            for callback in self._subscribers:
                callback(tx)
            return tx.id

    def commit(self, payload: Payload, signer, rng: random.Random,
               parents: Optional[tuple[TransactionId, TransactionId]] = None) -> LedgerTransaction:
        """Select tips, build, sign and submit ``payload`` as one atomic step.

        ``signer`` must expose ``entity_id`` and ``next_key()``.  Holding the
        commit lock across signing guarantees the chosen logical time and
        parents are still valid when the transaction is submitted.
        """
        with self._lock:
            if parents is None:
                if not self.tangle.order:
                    parents = ()
                elif len(self.tangle) == 1:
                    parents = (self.tangle.genesis, self.tangle.genesis)
                else:
                    parents = self.select_tips(rng)
                    if parents[0] == parents[1]:
                        parents = self._second_parent(parents[0])
            tx = LedgerTransaction.create(parents, payload, signer.entity_id, signer.next_key(),
                                          self.last_logical_time + 1, self.hash_fn)
            self.submit(tx)
            return tx

    def _second_parent(self, tip: TransactionId) -> tuple[TransactionId, TransactionId]:
        # a lone tip still needs a distinct second parent: take its first parent
        other = self.tangle.parents(tip)[0]
        return (tip, other)

    # -- reads ---------------------------------------------------------------
    def select_tips(self, rng: random.Random) -> tuple[TransactionId, TransactionId]:
        with self._lock:
            return self.tangle.select_tips(rng, self.alpha)

    def cumulative_weight(self, tx_id: TransactionId) -> int:
        with self._lock:
            return self.tangle.cumulative_weight(tx_id)

    def is_confirmed(self, tx_id: TransactionId, threshold: int) -> bool:
        if threshold < 1:
            raise ValueError("threshold must be a positive integer")
        return self.cumulative_weight(tx_id) >= threshold

    @property
    def tips(self) -> frozenset[TransactionId]:
        with self._lock:
            return self.tangle.tips

    def query(self, reader: Optional[str] = None, kind: Optional[PayloadKind] = None,
              issuer: Optional[str] = None, subject: Optional[str] = None,
              time_range: Optional[tuple[int, int]] = None) -> list[LedgerTransaction]:
        """Matching transactions in logical-time order.

        With a gatekeeper installed, ``reader`` must be allowed to read
        ``kind``; when ``kind`` is omitted only kinds the reader may read are
        returned.  ``time_range`` is inclusive on both ends.
        """
        kind = PayloadKind(kind) if kind is not None else None
        readable: Optional[set[PayloadKind]] = None
        if self.gatekeeper is not None:
            if kind is not None:
                if not self.gatekeeper.authorize(reader, kind, "read"):
                    raise UnauthorizedReader(f"{reader} may not read {kind.value}")
            else:
                readable = {k for k in PayloadKind if self.gatekeeper.authorize(reader, k, "read")}
        result = []
        for tx in self.transactions():
            if kind is not None and tx.kind != kind:
                continue
            if readable is not None and tx.kind not in readable:
                continue
            if issuer is not None and tx.issuer != issuer:
                continue
            if subject is not None and payload_subject(tx.payload) != subject:
                continue
            if time_range is not None and not time_range[0] <= tx.logical_time <= time_range[1]:
                continue
            result.append(tx)
        return result

    # -- export / replay -----------------------------------------------------
    def export_lines(self) -> list[str]:
        return [tx.encode().hex() for tx in self.transactions()]

    def export(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            for line in self.export_lines():
                fh.write(line + "\n")

    @classmethod
    def replay(cls, lines: Iterable[str], gatekeeper: Optional[Gatekeeper] = None,
               alpha: float = DEFAULT_ALPHA, hash_fn: HashFn = sha256) -> "Ledger":
        """Rebuild a ledger from export lines, re-validating every transaction.

        Raises the first admission error, annotated with its 1-based line.
        """
        ledger = cls(gatekeeper, alpha, hash_fn)
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line:
                continue
            try:
                try:
                    data = bytes.fromhex(line)
                except ValueError as exc:
                    raise InvalidTransaction(f"line is not hex: {exc}") from exc
                ledger.submit(LedgerTransaction.decode(data, hash_fn))
            except Exception as exc:
                exc.line = lineno
                raise
        return ledger
