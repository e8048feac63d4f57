from __future__ import annotations

from decimal import Decimal
from types import SimpleNamespace

import pytest
from hypothesis import given
from hypothesis import strategies as st

from twinledger.errors import RevokedEntity, UnauthorizedIssuer, UnknownEntity
from twinledger.events import EventLog
from twinledger.payloads import PayloadKind, ProvenanceRecord
from twinledger.reputation import ReputationParams, ReputationService, replay_scores

D = Decimal


class FakeConsortium:
    """In-memory stand-in that records commits instead of signing them."""

    def __init__(self):
        self.active = {"dev"}
        self.committed = []
        self.root = "regulator"
        self.registry = SimpleNamespace(is_registered=lambda e: e == "dev",
                                        is_active=lambda e: e in self.active)

    def commit(self, issuer, payload):
        tx = SimpleNamespace(id=bytes(32), kind=PayloadKind.REPUTATION, payload=payload)
        self.committed.append(tx)
        return tx

    def revoke(self, entity, reason, regulator=None):
        self.active.discard(entity)
        return bytes(32)


@pytest.fixture
def service(consortium):
    return ReputationService(consortium, "twin", event_log=EventLog())


def test_arithmetic_examples(service):
    assert service.score_of("s1") == D("0.5")
    assert service.reward("s1", 1, "ok").score == D("0.51")
    assert service.penalize("s1", 2, "bad").score == D("0.41")
    assert service.penalize("gw1", 3, "bad").score == D("0.4")
    with pytest.raises(UnknownEntity):
        service.score_of("ghost")


def test_fifty_rewards_clamp():
    svc = ReputationService(FakeConsortium(), "twin")
    scores = [svc.reward("dev", t, "ok").score for t in range(60)]
    assert scores[49] == D(1) and scores[48] < 1 and scores[-1] == D(1)


def test_clamp_at_zero_and_threshold():
    svc = ReputationService(FakeConsortium(), "twin", params=ReputationParams(threshold=D(0)))
    svc._state("dev").score = D("0.05")
    assert svc.penalize("dev", 1, "x").score == D(0)
    fake = FakeConsortium()
    svc = ReputationService(fake, "twin")
    svc._state("dev").score = D("0.25")
    assert svc.penalize("dev", 1, "x").score == D("0.15")
    assert "dev" not in fake.active
    with pytest.raises(RevokedEntity):
        svc.reward("dev", 2, "x")


@given(st.lists(st.booleans(), max_size=60))
def test_scores_stay_clamped_and_replay(ops):
    fake = FakeConsortium()
    svc = ReputationService(fake, "twin", params=ReputationParams(threshold=D(0)))
    for tick, good in enumerate(ops):
        score = (svc.reward if good else svc.penalize)("dev", tick, "x").score
        assert D(0) <= score <= D(1)
    if ops:
        assert replay_scores(fake.committed) == {"dev": svc.score_of("dev")}


def test_threshold_revocation_on_ledger(service, consortium):
    for tick in range(4):
        service.penalize("gw1", tick, f"referral:{tick}")
    assert service.score_of("gw1") == D("0.1")
    revocations = consortium.ledger.query("regulator", kind=PayloadKind.REVOCATION,
                                          subject="gw1")
    assert [t.payload.reason for t in revocations] == ["reputation"]
    with pytest.raises(UnauthorizedIssuer):
        consortium.ledger.commit(ProvenanceRecord("lot", "Created", "gw1", (), (), "x", 1),
                                 consortium.keyrings["gw1"], consortium.rng)
    live = {e: s for e, s in service.table().items()}
    assert replay_scores(consortium.ledger.transactions()) == live
    active = [r.entity_id for r in consortium.registry.registrations()
              if consortium.registry.is_active(r.entity_id)]
    assert all(service.score_of(e) >= service.params.threshold for e in active)
