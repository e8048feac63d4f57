"""Digital-physical mapping: compare live readings with ledger-anchored bounds and models.

The ``check_*`` functions are pure.  :class:`TwinSynchronizer` wires them
into a per-(machine, metric) stream that verifies the source first, then
checks bounds, then divergence, and logs whatever it finds.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

from .dag_ledger import Ledger, LedgerTransaction
from .errors import MetricMismatch, NoBoundsAnchored, NoFirmwareRecord, NoModel, UnknownEntity
from .events import EventLog
from .payloads import PayloadKind, PerformanceBounds, TwinModel
from .registry import Registry
from .wrangling import CanonicalReading, Quality

__all__ = [
    "EventKind", "InconsistencyEvent", "PerformanceBounds", "TwinModel", "TwinSynchronizer",
    "check_bounds", "check_divergence", "check_staleness",
]


class EventKind(str, Enum):
    BOUND_VIOLATION = "BoundViolation"
    DIVERGENCE = "Divergence"
    STALENESS = "Staleness"
    FORGED_SOURCE = "ForgedSource"


@dataclass(frozen=True)
class InconsistencyEvent:
    kind: EventKind
    machine_id: str
    metric: str
    observed: Optional[float]
    expected: Union[float, tuple[float, float], None]
    magnitude: float
    tick: int
    device: Optional[str] = None
    event_id: Optional[int] = None


def check_bounds(reading: CanonicalReading, bounds: PerformanceBounds,
                 machine_id: Optional[str] = None) -> Optional[InconsistencyEvent]:
    """BoundViolation iff the value lies strictly outside ``[lower, upper]``."""
    if reading.metric != bounds.metric:
        raise MetricMismatch(f"reading metric {reading.metric!r} vs bounds {bounds.metric!r}")
    if reading.quality is Quality.REJECTED or reading.value is None:
        raise ValueError("rejected readings are not range-checked")
    value = reading.value
    if bounds.lower <= value <= bounds.upper:
        return None
    magnitude = bounds.lower - value if value < bounds.lower else value - bounds.upper
    return InconsistencyEvent(EventKind.BOUND_VIOLATION, machine_id or bounds.machine_id,
                              reading.metric, value, (bounds.lower, bounds.upper), magnitude,
                              reading.timestamp, reading.device_id)


def check_divergence(reading: CanonicalReading, model: TwinModel, tolerance: float,
                     machine_id: Optional[str] = None) -> Optional[InconsistencyEvent]:
    """Divergence iff ``|observed - predicted| > tolerance`` (strict)."""
    if reading.metric != model.metric:
        raise MetricMismatch(f"reading metric {reading.metric!r} vs model {model.metric!r}")
    if reading.quality is Quality.REJECTED or reading.value is None:
        raise ValueError("rejected readings are not divergence-checked")
    predicted = model.predicted(reading.timestamp)
    magnitude = abs(reading.value - predicted)
    if magnitude > tolerance:
        return InconsistencyEvent(EventKind.DIVERGENCE, machine_id or model.machine_id,
                                  reading.metric, reading.value, predicted, magnitude,
                                  reading.timestamp, reading.device_id)
    return None


def check_staleness(machine_id: str, metric: str, now: int, last_arrival: int,
                    max_age: int) -> Optional[InconsistencyEvent]:
    """Staleness iff the age of information exceeds ``max_age`` (strict)."""
    age = now - last_arrival
    if age > max_age:
        return InconsistencyEvent(EventKind.STALENESS, machine_id, metric, None, float(max_age),
                                  float(age - max_age), now)
    return None


class TwinSynchronizer:
    """Streams of readings per (machine, metric) checked against the twin.

    Bounds and models come only from the ledger.  They are cached and the
    cache is refreshed whenever a BoundsDefinition or ModelAnchor commits.
    """

    def __init__(self, ledger: Ledger, registry: Registry, reader: str,
                 bindings: dict[str, str], event_log: Optional[EventLog] = None):
        self.ledger = ledger
        self.registry = registry
        self.reader = reader
        self.bindings = dict(bindings)       # device id -> machine id
        self.log = event_log if event_log is not None else EventLog()
        self._bounds: dict[tuple[str, str], PerformanceBounds] = {}
        self._models: dict[tuple[str, str], TwinModel] = {}
        self.last_arrival: dict[tuple[str, str], int] = {}
        self.suspended: set[str] = set()
        self._lock = threading.RLock()
        for tx in ledger.transactions():
            self._refresh(tx)
        ledger.subscribe(self._refresh)

    def _refresh(self, tx: LedgerTransaction) -> None:
        payload = tx.payload
        if tx.kind is PayloadKind.BOUNDS:
            self._bounds[(payload.machine_id, payload.metric)] = payload
        elif tx.kind is PayloadKind.MODEL_ANCHOR:
            self._models[(payload.machine_id, payload.metric)] = payload

    # -- ledger-backed state -------------------------------------------------
    def load_bounds(self, machine_id: str) -> list[PerformanceBounds]:
        """Latest anchored bounds per metric, read straight from the ledger."""
        latest: dict[str, PerformanceBounds] = {}
        for tx in self.ledger.query(self.reader, kind=PayloadKind.BOUNDS, subject=machine_id):
            latest[tx.payload.metric] = tx.payload
        if not latest:
            raise NoBoundsAnchored(f"no bounds anchored for {machine_id!r}")
        return [latest[m] for m in sorted(latest)]

    def bounds(self, machine_id: str, metric: str) -> PerformanceBounds:
        try:
            return self._bounds[(machine_id, metric)]
        except KeyError:
            raise NoBoundsAnchored(f"no bounds anchored for {machine_id}/{metric}") from None

    def model(self, machine_id: str, metric: str) -> TwinModel:
        try:
            return self._models[(machine_id, metric)]
        except KeyError:
            raise NoModel(f"no twin model anchored for {machine_id}/{metric}") from None

    def machine_of(self, device: str) -> str:
        try:
            return self.bindings[device]
        except KeyError:
            raise UnknownEntity(f"device {device!r} is not bound to a machine") from None

    # -- streams -------------------------------------------------------------
    def source_trusted(self, reading: CanonicalReading) -> bool:
        if not self.registry.is_active(reading.device_id):
            return False
        try:
            return self.registry.attest_firmware(reading.device_id, reading.firmware_hash)
        except NoFirmwareRecord:
            return False

    def _log(self, event: InconsistencyEvent) -> InconsistencyEvent:
        event_id = self.log.append(
            event.kind.value, event.tick, machine=event.machine_id, metric=event.metric,
            observed=event.observed, expected=event.expected, magnitude=event.magnitude,
            device=event.device)
        return InconsistencyEvent(event.kind, event.machine_id, event.metric, event.observed,
                                  event.expected, event.magnitude, event.tick, event.device,
                                  event_id)

    def ingest(self, reading: CanonicalReading) -> list[InconsistencyEvent]:
        machine = self.machine_of(reading.device_id)
        key = (machine, reading.metric)
        with self._lock:
            bounds = self.bounds(*key)
            model = self.model(*key)
            self.last_arrival[key] = reading.timestamp
            if not self.source_trusted(reading):
                forged = InconsistencyEvent(EventKind.FORGED_SOURCE, machine, reading.metric,
                                            reading.value, None, 0.0, reading.timestamp,
                                            reading.device_id)
                return [self._log(forged)]
            if reading.quality is Quality.REJECTED:
                return []
            found = [check_bounds(reading, bounds, machine),
                     check_divergence(reading, model, bounds.divergence_tolerance, machine)]
            return [self._log(e) for e in found if e is not None]

    def sweep(self, now: int) -> list[InconsistencyEvent]:
        """Staleness check for every live stream, in (machine, metric) order."""
        events = []
        with self._lock:
            for key in sorted(self.last_arrival):
                if key[0] in self.suspended:
                    continue
                bounds = self.bounds(*key)
                event = check_staleness(key[0], key[1], now, self.last_arrival[key],
                                        bounds.max_age)
                if event is not None:
                    events.append(self._log(event))
        return events

    def suspend(self, machine_id: str) -> None:
        """Stop staleness sweeps for a halted machine."""
        self.suspended.add(machine_id)
