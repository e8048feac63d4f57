"""Tick-synchronous shop floor driving every other module end to end.

Per tick ``t``:

1. apply commands queued at ``t - 1`` (setpoints, halts);
2. draw one noise sample per sensor, in sensor-id order, whether or not the
   sensor emits (keeps the draw order fixed);
3. apply faults and emit raw readings;
4. per gateway (id order): reject inactive sources, wrangle and clean, commit a
   ReadingBatchDigest and extend the gateway's provenance chain;
5. ingest each canonical reading into the twin and let feedback react;
6. sweep every stream for staleness.

All randomness (noise and tip selection) comes from one ``random.Random``
seeded with the scenario seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..consortium import Consortium
from ..dag_ledger import Ledger
from ..encoding import digest, encode, sha256
from ..errors import RevokedEntity
from ..events import EventLog
from ..feedback import FeedbackController, HaltCommand, ReputationReferral, SetpointCommand
from ..payloads import (
    Activity,
    PayloadKind,
    PerformanceBounds,
    ReadingBatchDigest,
    Role,
    TwinModel,
)
from ..provenance import ProvenanceStore
from ..registry import Registry
from ..reputation import ReputationService
from ..twin_sync import TwinSynchronizer
from ..wrangling import CanonicalReading, RawReading, Wrangler
from .config import FaultKind, ScenarioConfig, firmware_hash
from .evaluate import INCONSISTENCY_KINDS, evaluate


def lineage_subject(gateway: str) -> str:
    return f"lineage/{gateway}"


@dataclass
class _Process:
    base: float
    noise: float
    drift: float
    offset: float = 0.0       # accumulated drift since the last setpoint


@dataclass
class SimReport:
    name: str
    seed: int
    events: list[dict]
    ground_truth: list[dict]
    metrics: dict[str, dict]
    ledger_stats: dict
    reputation: dict[str, str]
    violations: list[str]
    report_hash: str = ""

    def content(self) -> dict:
        return {"name": self.name, "seed": self.seed, "events": self.events,
                "ground_truth": self.ground_truth, "metrics": self.metrics,
                "ledger_stats": self.ledger_stats, "reputation": self.reputation,
                "violations": self.violations}

    def compute_hash(self) -> str:
        return digest(self.content()).hex()

    def to_fields(self) -> dict:
        body = self.content()
        body["report_hash"] = self.report_hash
        return body

    @property
    def inconsistency_events(self) -> list[dict]:
        return [e for e in self.events if e["kind"] in INCONSISTENCY_KINDS]


@dataclass
class SimRun:
    """A finished run: the report plus the live objects behind it."""

    report: SimReport
    consortium: Consortium
    event_log: EventLog
    provenance: ProvenanceStore
    twin: TwinSynchronizer
    reputation: ReputationService
    calibration_errors: dict[tuple[str, str], list[tuple[int, float]]] = field(
        default_factory=dict)

    @property
    def ledger(self) -> Ledger:
        return self.consortium.ledger

    @property
    def registry(self) -> Registry:
        return self.consortium.registry


class ShopFloor:
    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.rng = random.Random(config.seed)
        pol = config.policies
        self.consortium = Consortium(config.seed_bytes, config.regulators[0],
                                     pol.key_batch_size, pol.tip_alpha, rng=self.rng)
        self.log = EventLog()
        self.machine_of = {s.sensor_id: s.machine for s in config.sensors}
        self.sensors = sorted(config.sensors, key=lambda s: s.sensor_id)
        self.processes = {
            (m.machine_id, metric): _Process(p.base, p.noise, p.drift)
            for m in config.machines for metric, p in m.metrics.items()
        }
        self.halted: set[str] = set()
        self.pending: list = []
        self.errors: dict[tuple[str, str], list[tuple[int, float]]] = {}
        self._enroll()
        self.wrangler = Wrangler(self.consortium.registry)
        for schema in config.schemas:
            self.wrangler.register_schema(schema)
        self.provenance = ProvenanceStore(self.consortium.ledger, self.consortium.registry,
                                          self.rng)
        self.twin = TwinSynchronizer(self.consortium.ledger, self.consortium.registry,
                                     config.twin_service, self.machine_of, self.log)
        self._anchor_static()
        self.feedback = FeedbackController(
            self.twin, lambda payload: self.consortium.commit(config.twin_service, payload),
            self.log, pol.alpha, pol.k)
        self.reputation = ReputationService(self.consortium, config.twin_service,
                                            config.regulators[0], pol.reputation, self.log)

    # -- setup ---------------------------------------------------------------
    def _enroll(self) -> None:
        c, cfg = self.consortium, self.config
        for regulator in cfg.regulators[1:]:
            c.enroll(regulator, Role.REGULATOR)
        c.enroll(cfg.twin_service, Role.TWIN_SERVICE)
        for human in cfg.humans:
            c.enroll(human, Role.HUMAN)
        for g in cfg.gateways:
            c.enroll(g.gateway_id, Role.GATEWAY, firmware_hash(g.firmware))
        for m in cfg.machines:
            c.enroll(m.machine_id, Role.MACHINE, firmware_hash(m.firmware))
        for s in self.sensors:
            c.enroll(s.sensor_id, Role.SENSOR, firmware_hash(s.firmware))

    def _anchor_static(self) -> None:
        cfg = self.config
        for b in cfg.bounds:
            self.consortium.commit(cfg.twin_service, PerformanceBounds(
                b.machine, b.metric, b.lower, b.upper, b.max_age, b.divergence_tolerance))
        models = {(m.machine, m.metric): m for m in cfg.models}
        for s in self.sensors:
            key = (s.machine, s.metric)
            spec = models.get(key)
            nominal = spec.nominal if spec else self.processes[key].base
            drift = spec.drift_rate if spec else 0.0
            self.consortium.commit(cfg.twin_service,
                                   TwinModel(s.machine, s.metric, 1, nominal, drift, 0))

    # -- physical space --------------------------------------------------------
    def _apply_commands(self) -> None:
        for command in self.pending:
            if isinstance(command, SetpointCommand):
                process = self.processes[(command.machine_id, command.metric)]
                process.base = command.target
                process.offset = 0.0
            elif isinstance(command, HaltCommand):
                self.halted.add(command.machine_id)
        self.pending = []

    def _advance_processes(self, tick: int) -> None:
        for key, process in self.processes.items():
            if tick > 0:
                process.offset += process.drift
        for fault in self.config.faults:
            if fault.kind is FaultKind.DRIFT and fault.elapsed_active(tick):
                sensor = self.config.sensor(fault.target)
                self.processes[(sensor.machine, sensor.metric)].offset += float(
                    fault.params["rate"])

    def _emit(self, tick: int, noise: dict[str, float]) -> dict[str, list[RawReading]]:
        cfg = self.config
        by_gateway: dict[str, list[RawReading]] = {g.gateway_id: [] for g in cfg.gateways}
        faults = [f for f in cfg.faults]
        for s in self.sensors:
            if s.machine in self.halted:
                continue
            if any(f.kind is FaultKind.DROPOUT and f.target == s.sensor_id
                   and f.elapsed_active(tick) for f in faults):
                continue
            process = self.processes[(s.machine, s.metric)]
            value = process.base + process.offset + noise[s.sensor_id]
            fw = firmware_hash(s.firmware)
            for f in faults:
                if f.target != s.sensor_id or not f.point_active(tick):
                    continue
                if f.kind is FaultKind.TAMPER:
                    value += float(f.params["offset"])
                elif f.kind is FaultKind.FORGE:
                    fw = firmware_hash("forged:" + s.firmware)
            by_gateway[s.gateway].append(self._raw(s.schema, value, s.sensor_id, tick, fw))
        for f in faults:
            if f.kind is FaultKind.UNREGISTERED_SOURCE and f.point_active(tick):
                s = cfg.sensor(f.params["sensor"])
                process = self.processes[(s.machine, s.metric)]
                value = process.base + process.offset + float(f.params.get("offset", 0.0))
                by_gateway[s.gateway].append(
                    self._raw(s.schema, value, f.target, tick, firmware_hash("rogue")))
        return by_gateway

    def _raw(self, schema_id: str, value: float, device: str, tick: int,
             fw: bytes) -> RawReading:
        schema = self.wrangler.schema(schema_id)
        raw_key = schema.value_field
        unit = schema.field_map[raw_key][1]
        raw_value = schema.unit_conversions[unit].to_raw(value)
        return RawReading(schema_id, {raw_key: raw_value}, device, tick, fw)

    # -- gateways --------------------------------------------------------------
    def _gateway(self, gateway: str, location: str, tick: int,
                 raws: list[RawReading]) -> list[CanonicalReading]:
        registry = self.consortium.registry
        accepted = []
        for raw in raws:
            if registry.is_active(raw.source_device):
                accepted.append(raw)
                continue
            reason = "revoked" if registry.is_registered(raw.source_device) else "unregistered"
            schema = self.wrangler.schema(raw.schema_id)
            metric = schema.field_map[schema.value_field][0]
            machine = self.machine_of.get(raw.source_device)
            if machine is None:
                imitated = next(f.params["sensor"] for f in self.config.faults
                                if f.target == raw.source_device)
                machine = self.machine_of[imitated]
            self.log.append("SourceRejected", tick, machine=machine, metric=metric,
                            device=raw.source_device, reason=reason, gateway=gateway)
        readings = self.wrangler.clean(accepted, self.config.policies.cleaning)
        if not readings:
            return []
        batch_digest = sha256(encode([r.to_fields() for r in readings]))
        self.consortium.commit(gateway, ReadingBatchDigest(
            gateway, tick, batch_digest, tuple((r.device_id, r.seq) for r in readings)))
        subject = lineage_subject(gateway)
        activity = Activity.CREATED if self.provenance.latest(subject) is None \
            else Activity.PROCESSED
        self.provenance.record(subject, activity, gateway,
                               sorted({r.device_id for r in readings}), [batch_digest.hex()],
                               location, tick, self.consortium.signer(gateway))
        return readings

    # -- virtual space ---------------------------------------------------------
    def _react(self, tick: int, readings: list[CanonicalReading]) -> None:
        for reading in readings:
            for event in self.twin.ingest(reading):
                for action in self.feedback.handle(event):
                    if isinstance(action, (SetpointCommand, HaltCommand)):
                        self.pending.append(action)
                    elif isinstance(action, ReputationReferral):
                        try:
                            self.reputation.apply_referral(action)
                        except RevokedEntity:
                            pass
            if reading.value is not None:
                key = (self.machine_of[reading.device_id], reading.metric)
                model = self.twin.model(*key)
                self.errors.setdefault(key, []).append(
                    (tick, abs(reading.value - model.predicted(tick))))

    def step(self, tick: int) -> None:
        self._apply_commands()
        self._advance_processes(tick)
        noise = {s.sensor_id: self.rng.uniform(-1.0, 1.0) * self.processes[
            (s.machine, s.metric)].noise for s in self.sensors}
        raws = self._emit(tick, noise)
        for g in sorted(self.config.gateways, key=lambda g: g.gateway_id):
            readings = self._gateway(g.gateway_id, g.location, tick, raws[g.gateway_id])
            self._react(tick, readings)
        for event in self.twin.sweep(tick):
            for action in self.feedback.handle(event):
                if isinstance(action, (SetpointCommand, HaltCommand)):
                    self.pending.append(action)

    # -- results ---------------------------------------------------------------
    def run(self) -> SimRun:
        for tick in range(self.config.duration_ticks):
            self.step(tick)
        return self.finish()

    def finish(self) -> SimRun:
        cfg = self.config
        ledger = self.consortium.ledger
        threshold = cfg.policies.confirmation_threshold
        ids = [tx.id for tx in ledger.transactions()]
        stats = {
            "transactions": len(ids),
            "tips": len(ledger.tips),
            "confirmation_threshold": threshold,
            "confirmed": sum(1 for i in ids if ledger.is_confirmed(i, threshold)),
            "ledger_digest": digest(ids).hex(),
        }
        registry = self.consortium.registry
        reputation = {
            record.entity_id: str(self.reputation.score_of(record.entity_id))
            for record in sorted(registry.registrations(), key=lambda r: r.entity_id)
            if record.role is not Role.REGULATOR
        }
        metrics = {k: m.to_fields() for k, m in evaluate(cfg, self.log.records).items()}
        report = SimReport(cfg.name, cfg.seed, [dict(r) for r in self.log.records],
                           [f.to_fields() for f in cfg.faults], metrics, stats, reputation,
                           check_invariants(self.log.records, self.provenance, ledger, registry))
        report.report_hash = report.compute_hash()
        return SimRun(report, self.consortium, self.log, self.provenance, self.twin,
                      self.reputation, self.errors)


def check_invariants(records: list[dict], provenance: ProvenanceStore, ledger: Ledger,
                     registry: Registry) -> list[str]:
    """Virtual-first ordering, intact provenance and digest traceability."""
    violations = []
    by_id = {r["id"]: r for r in records}
    for setpoint in (r for r in records if r["kind"] == "SetpointCommand"):
        cause = by_id.get(setpoint.get("cause"))
        if cause is None or cause["kind"] != "Divergence":
            continue
        anchored = any(r["kind"] == "ModelAnchor" and r.get("cause") == cause["id"]
                       and r["id"] < setpoint["id"] for r in records)
        if not anchored:
            violations.append(f"setpoint {setpoint['id']} precedes its model anchor")
    for subject in provenance.subjects():
        status = provenance.verify_chain(subject)
        if not status.is_complete:
            violations.append(f"provenance {subject}: {status}")
    outputs: dict[str, set[str]] = {}
    for subject in provenance.subjects():
        for record in provenance.trace(subject):
            for out in record.outputs:
                outputs[out] = set(record.inputs)
    for tx in ledger.transactions():
        if tx.kind is not PayloadKind.READING_BATCH:
            continue
        inputs = outputs.get(tx.payload.digest.hex())
        if inputs is None:
            violations.append(f"batch {tx.id.hex()[:16]} has no provenance")
            continue
        for device, _ in tx.payload.entries:
            record = registry.entities.get(device)
            active = (record is not None and record.registered_at < tx.logical_time
                      and (record.revoked_at is None or record.revoked_at > tx.logical_time))
            if device not in inputs or not active:
                violations.append(f"batch {tx.id.hex()[:16]} entry {device} is untraceable")
    return violations


def run(config: ScenarioConfig) -> SimReport:
    return ShopFloor(config).run().report


def run_full(config: ScenarioConfig) -> SimRun:
    return ShopFloor(config).run()
