"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest (lines are collected into the terminal summary) or directly
with ``python tests/test_acceptance.py``.
"""

from __future__ import annotations

import hashlib
import random
import sys
from dataclasses import replace
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

from twinledger import cli, pq_auth
from twinledger.consortium import Consortium
from twinledger.dag_ledger import LedgerTransaction, Tangle
from twinledger.errors import InactiveSource, KeyReuse, UnauthorizedIssuer
from twinledger.events import EventLog
from twinledger.payloads import Activity, PayloadKind, PerformanceBounds, ProvenanceRecord, Role
from twinledger.provenance import (
    ChainState,
    ProvenanceStore,
    identify_faulty_entity,
    records_from_export,
    verify_chain,
)
from twinledger.reputation import ReputationService, replay_scores
from twinledger.sim import check_invariants, load_config, run_full
from twinledger.wrangling import FAHRENHEIT_TO_CELSIUS, RawReading, SchemaDescriptor, Wrangler

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
RESULTS: list[str] = []
try:  # share the scenario cache with the rest of the suite when under pytest
    from .conftest import scenario_run as run_of
except ImportError:
    _runs: dict = {}

    def run_of(name: str):
        if name not in _runs:
            _runs[name] = run_full(load_config(SCENARIOS / f"{name}.yaml"))
        return _runs[name]


def record(number: int, title: str, ok: bool, detail: str) -> bool:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


# -- 1 ------------------------------------------------------------------------

def _closure_weights(tangle: Tangle) -> dict[bytes, int]:
    ancestors: dict[bytes, set[bytes]] = {}
    for node in tangle.order:
        seen, stack = set(), list(tangle.parents(node))
        while stack:
            cur = stack.pop()
            if cur not in seen:
                seen.add(cur)
                stack.extend(tangle.parents(cur))
        ancestors[node] = seen
    return {n: 1 + sum(n in ancestors[o] for o in tangle.order) for n in tangle.order}


def _acyclic(tangle: Tangle) -> bool:
    indegree = {n: len(set(tangle.parents(n))) for n in tangle.order}
    ready = [n for n, d in indegree.items() if d == 0]
    seen = 0
    while ready:
        node = ready.pop()
        seen += 1
        for child in tangle.approvers(node):
            indegree[child] -= 1
            if indegree[child] == 0:
                ready.append(child)
    return seen == len(tangle.order)


def _check_tangle_after_each_add(tangle: Tangle, referenced: set[bytes]) -> bool:
    node = tangle.order[-1]
    referenced.update(tangle.parents(node))
    return tangle.tips == frozenset(set(tangle.order) - referenced) and _acyclic(tangle)


def check_ledger_oracle() -> bool:
    rng = random.Random(2024)
    mismatches = invariant_failures = 0
    for _ in range(50):
        size = rng.randint(20, 200)
        tangle, referenced = Tangle(), set()
        ids = [hashlib.sha256(b"tx" + i.to_bytes(4, "big")).digest() for i in range(size)]
        tangle.add(ids[0], ())
        tangle.add(ids[1], (ids[0], ids[0]))
        referenced.add(ids[0])
        for i in range(2, size):
            tips = sorted(tangle.tips)
            a = rng.choice(tips)
            b = rng.choice([t for t in tangle.order[-12:] if t != a])
            tangle.add(ids[i], (a, b))
            invariant_failures += not _check_tangle_after_each_add(tangle, referenced)
        expected = _closure_weights(tangle)
        mismatches += sum(tangle.cumulative_weight(n) != w for n, w in expected.items())

    # fully signed ledgers grown through submit with registry admission
    for seed in (b"acc-1", b"acc-2"):
        c = Consortium(seed, batch_size=16, rng=random.Random(seed[-1]))
        c.enroll("twin", Role.TWIN_SERVICE)
        referenced = set()
        for n in list(c.ledger.tangle.order):
            referenced.update(c.ledger.tangle.parents(n))
        for i in range(60):
            c.commit("twin", PerformanceBounds("m", "t", 0, 10 + i, 5, 1))
            invariant_failures += not _check_tangle_after_each_add(c.ledger.tangle, referenced)
        expected = _closure_weights(c.ledger.tangle)
        mismatches += sum(c.ledger.cumulative_weight(n) != w for n, w in expected.items())
    return record(1, "ledger oracle equivalence", mismatches == 0 and invariant_failures == 0,
                  f"50 tangles + 2 signed ledgers, {mismatches} weight mismatches, "
                  f"{invariant_failures} invariant failures")


# -- 2 ------------------------------------------------------------------------

def check_signatures() -> bool:
    rng = random.Random(7)
    round_trips = corrupt_rejected = reuse_rejected = 0
    for i in range(1000):
        key = pq_auth.keygen(rng.randbytes(32))
        d = rng.randbytes(32)
        sig = pq_auth.sign(key, d)
        round_trips += pq_auth.verify(key.public_key, d, sig)
        bit = rng.randrange(256)
        if i % 2 == 0:
            bad = bytearray(d)
            bad[bit // 8] ^= 1 << (bit % 8)
            corrupt_rejected += not pq_auth.verify(key.public_key, bytes(bad), sig)
        else:
            values = sig.to_fields()
            j = rng.randrange(len(values))
            v = bytearray(values[j])
            v[bit // 8] ^= 1 << (bit % 8)
            values[j] = bytes(v)
            corrupt_rejected += not pq_auth.verify(key.public_key, d,
                                                   pq_auth.Signature.from_fields(values))
        try:
            pq_auth.sign(key, rng.randbytes(32))
        except KeyReuse:
            reuse_rejected += 1

    # ledger level: a cloned spent key is refused on submit
    c = Consortium(b"acc-reuse", batch_size=8, rng=random.Random(1))
    c.enroll("twin", Role.TWIN_SERVICE)
    first = c.commit("twin", PerformanceBounds("m", "t", 0, 1, 5, 1))
    ring = c.keyrings["twin"]
    seed = next(s for s in (hashlib.sha256(ring.seed + i.to_bytes(8, "big")).digest()
                            for i in range(ring.next_index))
                if pq_auth.keygen(s).public_key == first.issuer_key)
    ledger_attempts = ledger_rejected = 0
    for k in range(20):
        tx = LedgerTransaction.create((first.id, c.ledger.tangle.genesis),
                                      PerformanceBounds("m", "t", 0, 2 + k, 5, 1), "twin",
                                      pq_auth.keygen(seed), c.ledger.last_logical_time + 1)
        ledger_attempts += 1
        try:
            c.ledger.submit(tx)
        except KeyReuse:
            ledger_rejected += 1
    ok = (round_trips == 1000 and corrupt_rejected == 1000 and reuse_rejected == 1000
          and ledger_rejected == ledger_attempts)
    return record(2, "signature properties", ok,
                  f"{round_trips}/1000 round trips, {corrupt_rejected}/1000 corruptions "
                  f"rejected, key reuse rejected {reuse_rejected + ledger_rejected}/"
                  f"{1000 + ledger_attempts}")


# -- 3 ------------------------------------------------------------------------

def check_provenance_attribution() -> bool:
    rng = random.Random(99)
    c = Consortium(b"acc-prov", batch_size=64, rng=random.Random(3))
    agents = ["SupplierA", "SupplierB", "Assembler", "Carrier", "Warehouse"]
    for agent in agents:
        c.enroll(agent, Role.HUMAN)
    c.enroll("gw", Role.GATEWAY, b"\x01" * 32)
    store = ProvenanceStore(c.ledger, c.registry, c.rng)
    plans = []
    for s in range(100):
        subject = f"part-{s:03d}"
        length = rng.randint(3, 7)
        chain_agents = [rng.choice(agents) for _ in range(length)]
        for i, agent in enumerate(chain_agents):
            activity = Activity.CREATED if i == 0 else Activity.PROCESSED
            store.record(subject, activity, agent, [f"in{i}"], [f"out{i}"], f"site{i}", i,
                         c.signer("gw"))
        plans.append((subject, chain_agents))
    by_subject: dict[str, list[tuple[str, LedgerTransaction]]] = {}
    for line in c.ledger.export_lines():
        tx = LedgerTransaction.decode(bytes.fromhex(line), check_id=False)
        if tx.kind is PayloadKind.PROVENANCE:
            by_subject.setdefault(tx.payload.subject, []).append((line, tx))
    correct = 0
    for subject, chain_agents in plans:
        n = len(chain_agents)
        tamper = rng.random() < 0.5
        index = rng.randrange(n) if tamper else rng.randrange(n - 1)  # deleting the tail is silent
        out = []
        for i, (line, tx) in enumerate(by_subject[subject]):
            if i == index:
                if not tamper:
                    continue
                forged = replace(tx.payload, location="forged-site")
                line = replace(tx, payload=forged).encode().hex()
            out.append(line)
        records = records_from_export(out, subject)
        status = verify_chain(records)
        if tamper:
            expected_state, culprit = ChainState.TAMPERED, chain_agents[index]
        else:
            expected_state = ChainState.GAP
            culprit = chain_agents[index - 1] if index else chain_agents[1]
        correct += (status.state is expected_state and status.index == index
                    and identify_faulty_entity(records, status) == culprit)
    return record(3, "provenance attribution", correct == 100,
                  f"{correct}/100 seeded tamper/deletion scenarios attributed")


# -- 4 ------------------------------------------------------------------------

def check_detection() -> bool:
    quiet = run_of("fault_free").report
    mixed = run_of("all_faults").report
    quiet_ok = (not quiet.inconsistency_events
                and all(m["precision"] == 1.0 for m in quiet.metrics.values()))
    kinds = {k: (m["recall"], m["precision"]) for k, m in mixed.metrics.items()}
    mixed_ok = all(m["faults"] == 1 for m in mixed.metrics.values()) and all(
        v == (1.0, 1.0) for v in kinds.values())
    return record(4, "detection soundness/completeness", quiet_ok and mixed_ok,
                  f"fault-free events={len(quiet.inconsistency_events)}; "
                  f"per-kind (recall, precision)={kinds}")


# -- 5 ------------------------------------------------------------------------

def check_closed_loop() -> bool:
    run = run_of("transient_drift")
    config = load_config(SCENARIOS / "transient_drift.yaml")
    tolerance = config.bounds[0].divergence_tolerance
    divergences = [e for e in run.report.events if e["kind"] == "Divergence"]
    magnitudes = [e["magnitude"] for e in divergences]
    calibrations = [e for e in run.report.events if e["kind"] == "CalibrationAction"]
    last = divergences[-1]["tick"]
    errors = run.calibration_errors[("oven-1", "temperature")]
    after = [(t, e) for t, e in errors if t > last]
    settled = after[0] if after else (None, None)
    fault_end = config.faults[0].end_tick
    ok = (magnitudes == [5.0, 2.5] and settled[1] == 1.25 and settled[1] < tolerance
          and len(calibrations) <= 3 and settled[0] - fault_end <= 10
          and all(e < tolerance for t, e in after))
    return record(5, "closed-loop convergence", ok,
                  f"divergence magnitudes {magnitudes} then {settled[1]} at tick {settled[0]} "
                  f"after {len(calibrations)} calibrations")


# -- 6 ------------------------------------------------------------------------

def check_virtual_first() -> bool:
    violations = anchored_setpoints = 0
    names = sorted(p.stem for p in SCENARIOS.glob("*.yaml"))
    for name in names:
        run = run_of(name)
        records = run.report.events
        by_id = {r["id"]: r for r in records}
        for sp in (r for r in records if r["kind"] == "SetpointCommand"):
            cause = by_id.get(sp.get("cause"))
            if cause is not None and cause["kind"] == "Divergence":
                anchored_setpoints += 1
        violations += sum("precedes its model anchor" in v for v in check_invariants(
            records, run.provenance, run.ledger, run.registry))
    return record(6, "virtual-first ordering", violations == 0,
                  f"{violations} violations over {len(names)} scenarios "
                  f"({anchored_setpoints} divergence-caused setpoints checked)")


# -- 7 ------------------------------------------------------------------------

def check_determinism() -> bool:
    config = load_config(SCENARIOS / "small.yaml")
    first = run_full(config).report.report_hash
    again = run_full(config).report.report_hash
    hashes = {run_full(replace(config, seed=seed)).report.report_hash for seed in range(100, 110)}
    ok = first == again and len(hashes) == 10
    return record(7, "determinism", ok,
                  f"repeat identical={first == again}, {len(hashes)}/10 distinct seed hashes")


# -- 8 ------------------------------------------------------------------------

def check_replay_integrity(tmp: Path) -> bool:
    import contextlib
    import io
    quiet = io.StringIO()
    names = sorted(p.stem for p in SCENARIOS.glob("*.yaml"))
    clean = corrupted = caught = 0
    rng = random.Random(8)
    with contextlib.redirect_stdout(quiet), contextlib.redirect_stderr(quiet):
        for name in names:
            out = tmp / name
            cli.main(["run", "--config", str(SCENARIOS / f"{name}.yaml"), "--out", str(out)])
            ledger = out / "ledger.hex"
            clean += cli.main(["verify", "--ledger", str(ledger)]) == 0
            data = ledger.read_bytes()
            # many corruptions on the smaller exports, a few on the large ones
            trials = 60 if len(data) < 400_000 else 4
            for _ in range(trials):
                pos = rng.randrange(len(data))
                new = rng.choice([b for b in range(256) if b != data[pos]])
                bad = tmp / f"{name}-bad.hex"
                bad.write_bytes(data[:pos] + bytes([new]) + data[pos + 1:])
                corrupted += 1
                caught += cli.main(["verify", "--ledger", str(bad)]) == 1
    ok = clean == len(names) and caught == corrupted
    return record(8, "replay integrity", ok,
                  f"{clean}/{len(names)} clean exports verify, {caught}/{corrupted} "
                  f"single-byte corruptions rejected")


# -- 9 ------------------------------------------------------------------------

def check_wrangling() -> bool:
    wrangler = Wrangler()
    wrangler.register_schema(SchemaDescriptor(
        "thermo-f", {"temp_f": ("temperature", "fahrenheit")},
        {"fahrenheit": FAHRENHEIT_TO_CELSIUS}))
    boil = wrangler.wrangle(RawReading("thermo-f", {"temp_f": 212}, "s", 0)).value
    freeze = wrangler.wrangle(RawReading("thermo-f", {"temp_f": 32}, "s", 0)).value
    rng = random.Random(9)
    worst = 0.0
    for _ in range(1000):
        f = rng.uniform(-500.0, 3000.0)
        c = float(FAHRENHEIT_TO_CELSIUS.to_canonical(Fraction(f)))
        back = FAHRENHEIT_TO_CELSIUS.to_raw(c)
        worst = max(worst, abs(back - f) / max(abs(f), 1e-300))
    ok = boil == 100 and freeze == 0 and worst <= 1e-9
    return record(9, "wrangling exactness", ok,
                  f"212F->{boil}C, 32F->{freeze}C, worst round-trip relative error {worst:.2e}")


# -- 10 -----------------------------------------------------------------------

def check_reputation_replay() -> bool:
    run = run_of("forge_revocation")
    live = {e: Decimal(s) for e, s in run.report.reputation.items()}
    replayed = replay_scores(run.ledger.transactions())
    sim_ok = all(live[e] == s for e, s in replayed.items()) and replayed
    revocations = [t for t in run.ledger.query("regulator", kind=PayloadKind.REVOCATION)
                   if t.payload.reason == "reputation"]
    rejected_after = [e for e in run.report.events if e["kind"] == "SourceRejected"
                      and e.get("reason") == "revoked"]

    # a gateway pushed below threshold loses ledger write access
    c = Consortium(b"acc-rep", batch_size=8, rng=random.Random(10))
    c.enroll("twin", Role.TWIN_SERVICE)
    c.enroll("gw", Role.GATEWAY, b"\x01" * 32)
    c.enroll("s1", Role.SENSOR, b"\x02" * 32)
    service = ReputationService(c, "twin", event_log=EventLog())
    for tick in range(4):
        service.penalize("gw", tick, "referral")
    blocked = 0
    try:
        c.ledger.commit(ProvenanceRecord("lot", "Created", "gw", (), (), "x", 9),
                        c.keyrings["gw"], c.rng)
    except UnauthorizedIssuer:
        blocked += 1
    wrangler = Wrangler(c.registry)
    wrangler.register_schema(SchemaDescriptor(
        "f", {"t": ("temperature", "f")}, {"f": FAHRENHEIT_TO_CELSIUS}))
    for tick in range(4):
        service.penalize("s1", tick, "referral")
    try:
        wrangler.wrangle(RawReading("f", {"t": 50}, "s1", 9))
    except InactiveSource:
        blocked += 1
    gw_ok = (replay_scores(c.ledger.transactions()) == service.table()
             and [t.payload.reason for t in c.ledger.query("regulator",
                                                            kind=PayloadKind.REVOCATION)]
             == ["reputation", "reputation"])
    ok = bool(sim_ok) and len(revocations) == 1 and bool(rejected_after) and gw_ok \
        and blocked == 2
    return record(10, "reputation replay", ok,
                  f"replayed {len(replayed)} sim scores exactly, {len(revocations)} reputation "
                  f"revocation in sim, {len(rejected_after)} later readings rejected, "
                  f"{blocked}/2 post-revocation writes refused")


# -- pytest wiring ------------------------------------------------------------

def test_criterion_01_ledger_oracle():
    assert check_ledger_oracle()


def test_criterion_02_signatures():
    assert check_signatures()


def test_criterion_03_provenance_attribution():
    assert check_provenance_attribution()


def test_criterion_04_detection():
    assert check_detection()


def test_criterion_05_closed_loop():
    assert check_closed_loop()


def test_criterion_06_virtual_first():
    assert check_virtual_first()


def test_criterion_07_determinism():
    assert check_determinism()


def test_criterion_08_replay_integrity(tmp_path):
    assert check_replay_integrity(tmp_path)


def test_criterion_09_wrangling():
    assert check_wrangling()


def test_criterion_10_reputation_replay():
    assert check_reputation_replay()


if __name__ == "__main__":
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        outcomes = [check_ledger_oracle(), check_signatures(), check_provenance_attribution(),
                    check_detection(), check_closed_loop(), check_virtual_first(),
                    check_determinism(), check_replay_integrity(Path(tmp)), check_wrangling(),
                    check_reputation_replay()]
    sys.exit(0 if all(outcomes) else 1)
