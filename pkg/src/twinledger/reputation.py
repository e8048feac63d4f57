"""Additive, clamped trust scores with threshold-triggered revocation.

Scores are :class:`~decimal.Decimal` so that replaying the ledger's
ReputationUpdate transactions reproduces live state exactly.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Optional

from .dag_ledger import LedgerTransaction
from .errors import RevokedEntity, UnknownEntity
from .events import EventLog
from .payloads import PayloadKind, ReputationUpdate

ZERO, ONE = Decimal(0), Decimal(1)


def clamp(score: Decimal) -> Decimal:
    return min(ONE, max(ZERO, score))


@dataclass
class ReputationScore:
    entity_id: str
    score: Decimal
    history: list[tuple[int, Decimal, str]] = field(default_factory=list)


@dataclass(frozen=True)
class ReputationParams:
    initial: Decimal = Decimal("0.5")
    reward: Decimal = Decimal("0.01")
    penalty: Decimal = Decimal("0.1")
    threshold: Decimal = Decimal("0.2")

    def __post_init__(self):
        for name in ("initial", "reward", "penalty", "threshold"):
            object.__setattr__(self, name, Decimal(str(getattr(self, name))))


def replay_scores(transactions: Iterable[LedgerTransaction],
                  initial: Decimal = ReputationParams.initial) -> dict[str, Decimal]:
    """Recompute every score from ReputationUpdate transactions alone."""
    scores: dict[str, Decimal] = {}
    for tx in transactions:
        if tx.kind is PayloadKind.REPUTATION:
            update = tx.payload
            scores[update.entity_id] = clamp(scores.get(update.entity_id, initial) + update.delta)
    return scores


class ReputationService:
    """Keeps scores and anchors every change as a ReputationUpdate.

    ``consortium`` supplies the ledger, the registry and signing; ``issuer``
    is the twin-service entity that writes updates and ``authority`` the
    regulator that carries out reputation-triggered revocations.
    """

    def __init__(self, consortium, issuer: str, authority: Optional[str] = None,
                 params: Optional[ReputationParams] = None,
                 event_log: Optional[EventLog] = None):
        self.consortium = consortium
        self.registry = consortium.registry
        self.issuer = issuer
        self.authority = authority or consortium.root
        self.params = params or ReputationParams()
        self.log = event_log
        self._scores: dict[str, ReputationScore] = {}
        self._lock = threading.RLock()

    def _state(self, entity: str) -> ReputationScore:
        if not self.registry.is_registered(entity):
            raise UnknownEntity(f"unknown entity {entity!r}")
        state = self._scores.get(entity)
        if state is None:
            state = self._scores[entity] = ReputationScore(entity, self.params.initial)
        return state

    def score_of(self, entity: str) -> Decimal:
        return self._state(entity).score

    def table(self) -> dict[str, Decimal]:
        return {e: s.score for e, s in sorted(self._scores.items())}

    def _apply(self, entity: str, delta: Decimal, tick: int, cause: str) -> ReputationScore:
        with self._lock:
            state = self._state(entity)
            if not self.registry.is_active(entity):
                raise RevokedEntity(f"{entity!r} is revoked")
            state.score = clamp(state.score + delta)
            state.history.append((tick, delta, cause))
            tx = self.consortium.commit(
                self.issuer, ReputationUpdate(entity, tick, delta, cause, state.score))
            if self.log is not None:
                self.log.append("ReputationUpdate", tick, entity=entity, delta=delta,
                                score=state.score, cause=cause, txid=tx.id)
            return state

    def reward(self, entity: str, tick: int, cause: str) -> ReputationScore:
        return self._apply(entity, self.params.reward, tick, cause)

    def penalize(self, entity: str, tick: int, cause: str) -> ReputationScore:
        with self._lock:
            state = self._apply(entity, -self.params.penalty, tick, cause)
            if state.score < self.params.threshold and self.registry.is_active(entity):
                tx_id = self.consortium.revoke(entity, "reputation", self.authority)
                if self.log is not None:
                    self.log.append("Revocation", tick, entity=entity, reason="reputation",
                                    txid=tx_id)
            return state

    def apply_referral(self, referral) -> ReputationScore:
        cause = f"referral:{referral.cause}"
        if referral.penalize:
            return self.penalize(referral.entity_id, referral.tick, cause)
        return self.reward(referral.entity_id, referral.tick, cause)
