"""Closed loop: calibrate the twin (virtual space) before commanding the machine.

Dispatch per inconsistency kind:

* Divergence: recalibrate and anchor the new model; if the observation is
  also out of bounds, follow with a setpoint command.
* BoundViolation: setpoint to the midpoint of the bounds; halt after
  ``k`` consecutive violations on the same stream.
* Staleness: halt after ``k`` consecutive stale sweeps.
* ForgedSource: refer the device to the reputation service.

"Consecutive" means the previous event of that kind on the same
(machine, metric) stream happened on the immediately preceding tick.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from typing import Optional, Union

from .errors import StaleModelVersion
from .events import EventLog
from .payloads import TwinModel
from .twin_sync import EventKind, InconsistencyEvent, TwinSynchronizer

DEFAULT_ALPHA = 0.5
DEFAULT_K = 3


@dataclass(frozen=True)
class CalibrationAction:
    machine_id: str
    metric: str
    old_version: int
    new_version: int
    new_nominal: float
    new_drift_rate: float
    anchor_txid: bytes
    cause: Optional[int] = None


@dataclass(frozen=True)
class SetpointCommand:
    machine_id: str
    metric: str
    target: float
    issue_tick: int
    cause: Optional[int] = None


@dataclass(frozen=True)
class HaltCommand:
    machine_id: str
    metric: str
    issue_tick: int
    cause: Optional[int] = None


@dataclass(frozen=True)
class ReputationReferral:
    entity_id: str
    tick: int
    cause: Optional[int] = None
    penalize: bool = True


Action = Union[CalibrationAction, SetpointCommand, HaltCommand, ReputationReferral]


def calibrate_model(model: TwinModel, observed: float, tick: int, alpha: float = DEFAULT_ALPHA,
                    in_bounds: bool = True) -> TwinModel:
    """Exponential-smoothing update of a twin model.

    The nominal moves a fraction ``alpha`` of the way from the prediction to
    the observation.  Drift is re-estimated from the previous in-bounds
    calibration observation and smoothed with the same ``alpha``; with no such
    observation, or when this observation is out of bounds, drift is kept.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    predicted = model.predicted(tick)
    nominal = (1 - alpha) * predicted + alpha * observed
    drift = model.drift_rate
    last_observed, last_tick = model.last_observed, model.last_observed_tick
    if in_bounds:
        if last_observed is not None and tick > last_tick:
            raw = (observed - last_observed) / (tick - last_tick)
            drift = (1 - alpha) * drift + alpha * raw
        last_observed, last_tick = observed, tick
    return replace(model, version=model.version + 1, nominal=nominal, drift_rate=drift,
                   anchor_tick=tick, last_observed=last_observed, last_observed_tick=last_tick)


class FeedbackController:
    """Turns inconsistency events into calibration and scheduling actions.

    ``anchor`` commits a payload to the ledger on behalf of the twin service
    and returns the committed transaction.
    """

    def __init__(self, twin: TwinSynchronizer, anchor, event_log: Optional[EventLog] = None,
                 alpha: float = DEFAULT_ALPHA, k: int = DEFAULT_K):
        if k < 1:
            raise ValueError("k must be at least 1")
        self.twin = twin
        self.anchor = anchor
        self.log = event_log if event_log is not None else twin.log
        self.alpha = alpha
        self.k = k
        self._streak: dict[tuple[str, str, EventKind], tuple[int, int]] = {}
        self.halted: set[tuple[str, str]] = set()
        self._lock = threading.RLock()

    def _consecutive(self, event: InconsistencyEvent) -> int:
        key = (event.machine_id, event.metric, event.kind)
        last_tick, count = self._streak.get(key, (None, 0))
        count = count + 1 if last_tick == event.tick - 1 else 1
        self._streak[key] = (event.tick, count)
        return count

    def calibrate(self, model: TwinModel, observed: float, tick: int, in_bounds: bool = True,
                  cause: Optional[int] = None) -> CalibrationAction:
        """Compute the next model version and anchor it on the ledger."""
        with self._lock:
            current = self.twin.model(model.machine_id, model.metric)
            if current.version != model.version:
                raise StaleModelVersion(
                    f"model {model.machine_id}/{model.metric} is at v{current.version}, "
                    f"not v{model.version}")
            new = calibrate_model(model, observed, tick, self.alpha, in_bounds)
            tx = self.anchor(new)
            self.log.append("ModelAnchor", tick, machine=new.machine_id, metric=new.metric,
                            version=new.version, model_hash=new.model_hash, txid=tx.id,
                            cause=cause)
            action = CalibrationAction(new.machine_id, new.metric, model.version, new.version,
                                       new.nominal, new.drift_rate, tx.id, cause)
            self.log.append("CalibrationAction", tick, machine=new.machine_id, metric=new.metric,
                            old_version=model.version, new_version=new.version,
                            new_nominal=new.nominal, new_drift_rate=new.drift_rate,
                            anchor_txid=tx.id, cause=cause)
            return action

    def _setpoint(self, event: InconsistencyEvent) -> SetpointCommand:
        bounds = self.twin.bounds(event.machine_id, event.metric)
        command = SetpointCommand(event.machine_id, event.metric, bounds.midpoint, event.tick,
                                  event.event_id)
        self.log.append("SetpointCommand", event.tick, machine=event.machine_id,
                        metric=event.metric, target=command.target, cause=event.event_id)
        return command

    def _halt(self, event: InconsistencyEvent) -> list[Action]:
        key = (event.machine_id, event.metric)
        if key in self.halted:
            return []
        self.halted.add(key)
        self.twin.suspend(event.machine_id)
        self.log.append("HaltCommand", event.tick, machine=event.machine_id, metric=event.metric,
                        cause=event.event_id)
        return [HaltCommand(event.machine_id, event.metric, event.tick, event.event_id)]

    def handle(self, event: InconsistencyEvent) -> list[Action]:
        with self._lock:
            actions: list[Action] = []
            if event.kind is EventKind.DIVERGENCE:
                bounds = self.twin.bounds(event.machine_id, event.metric)
                in_bounds = bounds.contains(event.observed)
                model = self.twin.model(event.machine_id, event.metric)
                actions.append(self.calibrate(model, event.observed, event.tick, in_bounds,
                                              event.event_id))
                if not in_bounds:
                    actions.append(self._setpoint(event))
            elif event.kind is EventKind.BOUND_VIOLATION:
                actions.append(self._setpoint(event))
                if self._consecutive(event) >= self.k:
                    actions.extend(self._halt(event))
            elif event.kind is EventKind.STALENESS:
                if self._consecutive(event) >= self.k:
                    actions.extend(self._halt(event))
            elif event.kind is EventKind.FORGED_SOURCE:
                referral = ReputationReferral(event.device, event.tick, event.event_id)
                self.log.append("ReputationReferral", event.tick, machine=event.machine_id,
                                metric=event.metric, entity=event.device, cause=event.event_id)
                actions.append(referral)
            return actions
