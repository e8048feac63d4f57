"""Score detected events against injected faults with a tick-window rule.

Each fault kind has one primary event kind it is expected to surface as,
plus secondary kinds it legitimately causes on the same stream (a tamper
spike also diverges from the model, a revoked forger goes stale...).  An
event matches a fault when it is on the fault's (machine, metric) stream and
its tick lies in ``[start_tick, end_tick + grace]``.

* recall(K): fraction of faults of kind K with at least one matching event
  of the primary kind.
* precision(K): TP / (TP + FP) over events of K's primary kind, where TP are
  those matched to a fault of kind K and FP those matched to no fault at all
  (neither as primary nor as secondary).

Both are 1.0 when their denominator is empty.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .config import FaultInjection, FaultKind, ScenarioConfig

INCONSISTENCY_KINDS = ("BoundViolation", "Divergence", "Staleness", "ForgedSource",
                       "SourceRejected")

PRIMARY = {
    FaultKind.TAMPER: "BoundViolation",
    FaultKind.FORGE: "ForgedSource",
    FaultKind.DROPOUT: "Staleness",
    FaultKind.DRIFT: "Divergence",
    FaultKind.UNREGISTERED_SOURCE: "SourceRejected",
}

SECONDARY = {
    FaultKind.TAMPER: {"Divergence"},
    FaultKind.FORGE: {"SourceRejected", "Staleness"},
    FaultKind.DROPOUT: set(),
    FaultKind.DRIFT: {"BoundViolation"},
    FaultKind.UNREGISTERED_SOURCE: set(),
}


@dataclass(frozen=True)
class KindMetrics:
    faults: int
    detected: int
    true_positives: int
    false_positives: int

    @property
    def recall(self) -> float:
        return 1.0 if self.faults == 0 else self.detected / self.faults

    @property
    def precision(self) -> float:
        total = self.true_positives + self.false_positives
        return 1.0 if total == 0 else self.true_positives / total

    def to_fields(self) -> dict:
        return {"faults": self.faults, "detected": self.detected,
                "true_positives": self.true_positives, "false_positives": self.false_positives,
                "precision": self.precision, "recall": self.recall}


def fault_stream(config: ScenarioConfig, fault: FaultInjection) -> tuple[str, str]:
    sensor_id = fault.params["sensor"] if fault.kind is FaultKind.UNREGISTERED_SOURCE \
        else fault.target
    sensor = config.sensor(sensor_id)
    return sensor.machine, sensor.metric


def matches(config: ScenarioConfig, fault: FaultInjection, event: dict, grace: int) -> bool:
    if (event.get("machine"), event.get("metric")) != fault_stream(config, fault):
        return False
    if fault.kind is FaultKind.UNREGISTERED_SOURCE and event.get("device") != fault.target:
        return False
    return fault.start_tick <= event["tick"] <= fault.end_tick + grace


def evaluate(config: ScenarioConfig, events: Iterable[dict],
             grace: Optional[int] = None) -> dict[str, KindMetrics]:
    grace = config.policies.match_grace if grace is None else grace
    events = [e for e in events if e["kind"] in INCONSISTENCY_KINDS]
    out = {}
    for kind in FaultKind:
        primary = PRIMARY[kind]
        faults = [f for f in config.faults if f.kind is kind]
        detected = sum(
            1 for f in faults
            if any(e["kind"] == primary and matches(config, f, e, grace) for e in events))
        tp = fp = 0
        for event in (e for e in events if e["kind"] == primary):
            if any(matches(config, f, event, grace) for f in faults):
                tp += 1
            elif not any(matches(config, f, event, grace)
                         and (event["kind"] == PRIMARY[f.kind] or event["kind"] in SECONDARY[f.kind])
                         for f in config.faults):
                fp += 1
        out[kind.value] = KindMetrics(len(faults), detected, tp, fp)
    return out
