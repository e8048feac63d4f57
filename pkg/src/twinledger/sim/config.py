"""Scenario configuration: YAML key tree -> validated dataclasses.

Top-level keys: ``seed``, ``duration_ticks``, ``entities``, ``schemas``,
``bounds``, ``models``, ``faults``, ``policies`` and optional ``expect``.
See ``docs/formats.md`` for the full tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import Enum
from pathlib import Path
from typing import Any, Optional

import yaml

from ..encoding import sha256
from ..errors import ConfigError, WranglingError
from ..reputation import ReputationParams
from ..wrangling import CleaningPolicy, SchemaDescriptor, schema_from_config


class FaultKind(str, Enum):
    TAMPER = "Tamper"
    FORGE = "Forge"
    DROPOUT = "Dropout"
    DRIFT = "Drift"
    UNREGISTERED_SOURCE = "UnregisteredSource"


@dataclass(frozen=True)
class ProcessSpec:
    base: float
    noise: float = 0.0
    drift: float = 0.0


@dataclass(frozen=True)
class MachineSpec:
    machine_id: str
    firmware: str
    metrics: dict[str, ProcessSpec]


@dataclass(frozen=True)
class SensorSpec:
    sensor_id: str
    machine: str
    metric: str
    schema: str
    gateway: str
    firmware: str


@dataclass(frozen=True)
class GatewaySpec:
    gateway_id: str
    location: str
    firmware: str


@dataclass(frozen=True)
class BoundsSpec:
    machine: str
    metric: str
    lower: float
    upper: float
    max_age: int
    divergence_tolerance: float


@dataclass(frozen=True)
class ModelSpec:
    machine: str
    metric: str
    nominal: float
    drift_rate: float = 0.0


@dataclass(frozen=True)
class FaultInjection:
    """One injected fault.

    Point faults (Tamper, Forge, UnregisteredSource) affect emissions at ticks
    ``start_tick <= t < start_tick + duration``.  Continuous faults act on the
    elapsed ticks after ``start_tick``: Drift adds ``rate`` to the process at
    each tick ``start_tick < t <= start_tick + duration`` (so its offset is
    ``rate * (t - start_tick)`` inside the window) and Dropout suppresses the
    emissions of those same ticks.
    """

    kind: FaultKind
    target: str
    start_tick: int
    duration: int
    params: dict[str, Any] = field(default_factory=dict)

    @property
    def end_tick(self) -> int:
        return self.start_tick + self.duration

    def point_active(self, tick: int) -> bool:
        return self.start_tick <= tick < self.end_tick

    def elapsed_active(self, tick: int) -> bool:
        return self.start_tick < tick <= self.end_tick

    def to_fields(self) -> dict:
        return {"kind": self.kind.value, "target": self.target, "start_tick": self.start_tick,
                "duration": self.duration, "params": {k: self.params[k] for k in self.params}}


@dataclass(frozen=True)
class Policies:
    cleaning: CleaningPolicy = CleaningPolicy.FLAG_ONLY
    alpha: float = 0.5
    k: int = 3
    reputation: ReputationParams = ReputationParams()
    tip_alpha: float = 0.01
    key_batch_size: int = 32
    match_grace: int = 10
    confirmation_threshold: int = 5


@dataclass(frozen=True)
class Expectations:
    max_events: Optional[int] = None
    min_recall: Optional[float] = None
    min_precision: Optional[float] = None


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int
    duration_ticks: int
    regulators: list[str]
    twin_service: str
    humans: list[str]
    gateways: list[GatewaySpec]
    machines: list[MachineSpec]
    sensors: list[SensorSpec]
    schemas: list[SchemaDescriptor]
    bounds: list[BoundsSpec]
    models: list[ModelSpec]
    faults: list[FaultInjection]
    policies: Policies = Policies()
    expect: Expectations = Expectations()
    name: str = "scenario"

    @property
    def seed_bytes(self) -> bytes:
        return sha256(b"scenario-seed" + self.seed.to_bytes(8, "big", signed=False))

    def sensor(self, sensor_id: str) -> SensorSpec:
        return next(s for s in self.sensors if s.sensor_id == sensor_id)


def firmware_hash(label: str) -> bytes:
    return sha256(b"firmware:" + label.encode())


# -- parsing ------------------------------------------------------------------

class _Lines:
    """Maps key paths of the composed YAML document to 1-based line numbers."""

    def __init__(self, node: Optional[yaml.Node]):
        self.lines: dict[str, int] = {}
        if node is not None:
            self._walk(node, "")

    def _walk(self, node: yaml.Node, path: str) -> None:
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                child = f"{path}.{key.value}" if path else str(key.value)
                self.lines[child] = key.start_mark.line + 1
                self._walk(value, child)
        elif isinstance(node, yaml.SequenceNode):
            for i, value in enumerate(node.value):
                self._walk(value, f"{path}[{i}]")

    def get(self, path: str) -> Optional[int]:
        while path:
            if path in self.lines:
                return self.lines[path]
            cut = max(path.rfind("."), path.rfind("["))
            path = path[:cut] if cut > 0 else ""
        return None


class _Parser:
    def __init__(self, lines: _Lines):
        self.lines = lines

    def fail(self, path: str, message: str) -> ConfigError:
        return ConfigError(path, message, self.lines.get(path))

    def get(self, data: Any, key: str, path: str, kind=None, default: Any = ...) -> Any:
        child = f"{path}.{key}" if path else key
        if not isinstance(data, dict):
            raise self.fail(path or "<root>", "expected a mapping")
        if key not in data:
            if default is ...:
                raise self.fail(child, "missing required field")
            return default
        value = data[key]
        if kind is not None:
            value = self.coerce(value, kind, child)
        return value

    def coerce(self, value: Any, kind, path: str) -> Any:
        try:
            if kind is int:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ValueError
                return value
            if kind is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ValueError
                return float(value)
            if kind is str:
                if not isinstance(value, (str, int)) or isinstance(value, bool):
                    raise ValueError
                return str(value)
            if kind is Decimal:
                return Decimal(str(value))
            if kind is list:
                if not isinstance(value, list):
                    raise ValueError
                return value
            if kind is dict:
                if not isinstance(value, dict):
                    raise ValueError
                return value
        except (ValueError, InvalidOperation):
            pass
        else:
            return value
        raise self.fail(path, f"expected {kind.__name__}, got {value!r}")


def parse_config(data: Any, lines: Optional[_Lines] = None) -> ScenarioConfig:
    p = _Parser(lines or _Lines(None))
    if not isinstance(data, dict):
        raise p.fail("<root>", "config must be a mapping")
    seed = p.get(data, "seed", "", int)
    if seed < 0 or seed >= 2 ** 64:
        raise p.fail("seed", "seed must be an unsigned 64-bit integer")
    duration = p.get(data, "duration_ticks", "", int)
    if duration <= 0:
        raise p.fail("duration_ticks", "must be positive")

    ent = p.get(data, "entities", "", dict)
    regulators = [p.coerce(r, str, f"entities.regulators[{i}]")
                  for i, r in enumerate(p.get(ent, "regulators", "entities", list))]
    if not regulators:
        raise p.fail("entities.regulators", "at least one regulator is required")
    twin_service = p.get(ent, "twin_service", "entities", str)
    humans = [p.coerce(h, str, f"entities.humans[{i}]")
              for i, h in enumerate(p.get(ent, "humans", "entities", list, []))]

    gateways = []
    for i, g in enumerate(p.get(ent, "gateways", "entities", list)):
        path = f"entities.gateways[{i}]"
        gateways.append(GatewaySpec(p.get(g, "id", path, str),
                                    p.get(g, "location", path, str, "shop-floor"),
                                    p.get(g, "firmware", path, str, "gateway-fw")))
    machines = []
    for i, m in enumerate(p.get(ent, "machines", "entities", list)):
        path = f"entities.machines[{i}]"
        metrics = {}
        for metric, spec in p.get(m, "metrics", path, dict).items():
            mpath = f"{path}.metrics.{metric}"
            noise = p.get(spec, "noise", mpath, float, 0.0)
            if noise < 0:
                raise p.fail(f"{mpath}.noise", "noise amplitude must be non-negative")
            metrics[str(metric)] = ProcessSpec(p.get(spec, "base", mpath, float), noise,
                                               p.get(spec, "drift", mpath, float, 0.0))
        machines.append(MachineSpec(p.get(m, "id", path, str),
                                    p.get(m, "firmware", path, str, "machine-fw"), metrics))
    sensors = []
    for i, s in enumerate(p.get(ent, "sensors", "entities", list)):
        path = f"entities.sensors[{i}]"
        sensors.append(SensorSpec(p.get(s, "id", path, str), p.get(s, "machine", path, str),
                                  p.get(s, "metric", path, str), p.get(s, "schema", path, str),
                                  p.get(s, "gateway", path, str),
                                  p.get(s, "firmware", path, str, "sensor-fw")))

    schemas = []
    for i, entry in enumerate(p.get(data, "schemas", "", list)):
        path = f"schemas[{i}]"
        try:
            schemas.append(schema_from_config(entry))
        except (KeyError, TypeError, AttributeError, WranglingError, ValueError) as exc:
            raise p.fail(path, f"bad schema: {exc}") from exc

    bounds = []
    for i, b in enumerate(p.get(data, "bounds", "", list)):
        path = f"bounds[{i}]"
        spec = BoundsSpec(p.get(b, "machine", path, str), p.get(b, "metric", path, str),
                          p.get(b, "lower", path, float), p.get(b, "upper", path, float),
                          p.get(b, "max_age", path, int),
                          p.get(b, "divergence_tolerance", path, float))
        if not spec.lower < spec.upper:
            raise p.fail(f"{path}.upper", "upper must exceed lower")
        if spec.max_age <= 0 or spec.divergence_tolerance <= 0:
            raise p.fail(path, "max_age and divergence_tolerance must be positive")
        bounds.append(spec)

    models = []
    for i, m in enumerate(p.get(data, "models", "", list, [])):
        path = f"models[{i}]"
        models.append(ModelSpec(p.get(m, "machine", path, str), p.get(m, "metric", path, str),
                                p.get(m, "nominal", path, float),
                                p.get(m, "drift_rate", path, float, 0.0)))

    faults = []
    for i, f in enumerate(p.get(data, "faults", "", list, [])):
        path = f"faults[{i}]"
        try:
            kind = FaultKind(p.get(f, "kind", path, str))
        except ValueError:
            raise p.fail(f"{path}.kind", f"unknown fault kind {f.get('kind')!r}") from None
        fault = FaultInjection(kind, p.get(f, "target", path, str),
                               p.get(f, "start_tick", path, int),
                               p.get(f, "duration", path, int, 1),
                               dict(p.get(f, "params", path, dict, {})))
        if not 0 <= fault.start_tick < duration:
            raise p.fail(f"{path}.start_tick", "start_tick must lie within the run")
        if fault.duration <= 0:
            raise p.fail(f"{path}.duration", "duration must be positive")
        faults.append(fault)

    pol = p.get(data, "policies", "", dict, {})
    try:
        cleaning = CleaningPolicy(p.get(pol, "cleaning", "policies", str, "FlagOnly"))
    except ValueError:
        raise p.fail("policies.cleaning", "unknown cleaning policy") from None
    rep = p.get(pol, "reputation", "policies", dict, {})
    reputation = ReputationParams(
        p.get(rep, "initial", "policies.reputation", Decimal, Decimal("0.5")),
        p.get(rep, "reward", "policies.reputation", Decimal, Decimal("0.01")),
        p.get(rep, "penalty", "policies.reputation", Decimal, Decimal("0.1")),
        p.get(rep, "threshold", "policies.reputation", Decimal, Decimal("0.2")))
    policies = Policies(
        cleaning=cleaning,
        alpha=p.get(pol, "alpha", "policies", float, 0.5),
        k=p.get(pol, "k", "policies", int, 3),
        reputation=reputation,
        tip_alpha=p.get(pol, "tip_alpha", "policies", float, 0.01),
        key_batch_size=p.get(pol, "key_batch_size", "policies", int, 32),
        match_grace=p.get(pol, "match_grace", "policies", int, 10),
        confirmation_threshold=p.get(pol, "confirmation_threshold", "policies", int, 5))
    if not 0 < policies.alpha <= 1:
        raise p.fail("policies.alpha", "alpha must lie in (0, 1]")
    if policies.k < 1:
        raise p.fail("policies.k", "k must be at least 1")
    if policies.key_batch_size < 4:
        raise p.fail("policies.key_batch_size", "key_batch_size must be at least 4")

    exp = p.get(data, "expect", "", dict, {})
    expect = Expectations(p.get(exp, "max_events", "expect", int, None),
                          p.get(exp, "min_recall", "expect", float, None),
                          p.get(exp, "min_precision", "expect", float, None))

    config = ScenarioConfig(seed, duration, regulators, twin_service, humans, gateways, machines,
                            sensors, schemas, bounds, models, faults, policies, expect,
                            str(data.get("name", "scenario")))
    _validate_references(config, p)
    return config


def _validate_references(config: ScenarioConfig, p: _Parser) -> None:
    ids = (list(config.regulators) + [config.twin_service] + list(config.humans)
           + [g.gateway_id for g in config.gateways] + [m.machine_id for m in config.machines]
           + [s.sensor_id for s in config.sensors])
    seen = set()
    for entity in ids:
        if entity in seen:
            raise p.fail("entities", f"duplicate entity id {entity!r}")
        seen.add(entity)
    schema_ids = [s.schema_id for s in config.schemas]
    if len(set(schema_ids)) != len(schema_ids):
        raise p.fail("schemas", "duplicate schema_id")
    gateways = {g.gateway_id for g in config.gateways}
    machines = {m.machine_id: m for m in config.machines}
    schemas = {s.schema_id: s for s in config.schemas}
    streams = set()
    for i, s in enumerate(config.sensors):
        path = f"entities.sensors[{i}]"
        if s.machine not in machines:
            raise p.fail(f"{path}.machine", f"unknown machine {s.machine!r}")
        if s.metric not in machines[s.machine].metrics:
            raise p.fail(f"{path}.metric", f"machine {s.machine!r} has no metric {s.metric!r}")
        if s.gateway not in gateways:
            raise p.fail(f"{path}.gateway", f"unknown gateway {s.gateway!r}")
        if s.schema not in schemas:
            raise p.fail(f"{path}.schema", f"unknown schema {s.schema!r}")
        schema_metric = next(iter(schemas[s.schema].field_map.values()))[0]
        if schema_metric != s.metric:
            raise p.fail(f"{path}.schema", f"schema {s.schema!r} does not carry {s.metric!r}")
        if (s.machine, s.metric) in streams:
            raise p.fail(path, "each (machine, metric) stream has exactly one sensor")
        streams.add((s.machine, s.metric))
    bounded = set()
    for i, b in enumerate(config.bounds):
        if (b.machine, b.metric) not in streams:
            raise p.fail(f"bounds[{i}]", "bounds must refer to a sensed (machine, metric)")
        bounded.add((b.machine, b.metric))
    missing = streams - bounded
    if missing:
        raise p.fail("bounds", f"no bounds for stream {sorted(missing)[0]}")
    for i, m in enumerate(config.models):
        if (m.machine, m.metric) not in streams:
            raise p.fail(f"models[{i}]", "model must refer to a sensed (machine, metric)")
    sensors = {s.sensor_id for s in config.sensors}
    for i, f in enumerate(config.faults):
        path = f"faults[{i}]"
        if f.kind is FaultKind.UNREGISTERED_SOURCE:
            if f.target in seen:
                raise p.fail(f"{path}.target", "an unregistered source must not be registered")
            for key in ("sensor",):
                if f.params.get(key) not in sensors:
                    raise p.fail(f"{path}.params.{key}",
                                 "name the registered sensor whose stream it imitates")
        elif f.target not in sensors:
            raise p.fail(f"{path}.target", f"unknown sensor {f.target!r}")
        if f.kind is FaultKind.TAMPER and not isinstance(f.params.get("offset"), (int, float)):
            raise p.fail(f"{path}.params.offset", "Tamper needs a numeric offset")
        if f.kind is FaultKind.DRIFT and not isinstance(f.params.get("rate"), (int, float)):
            raise p.fail(f"{path}.params.rate", "Drift needs a numeric rate")


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config: {exc.strerror}") from exc
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(str(path), f"YAML parse error: {exc.problem}", line) from exc
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"YAML parse error: {exc}") from exc
    return parse_config(data, _Lines(node))
