"""Syntactic interoperability: map heterogeneous raw readings to canonical form.

Unit conversions are affine, ``canonical = scale * raw + offset``, with
``scale`` and ``offset`` held as exact fractions so anchor points such as
212 F -> 100 C come out exact.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Any, Iterable, Mapping, Optional

from .errors import (
    DuplicateSchema,
    InactiveSource,
    MissingField,
    NoPriorValue,
    NonInvertibleConversion,
    UnknownSchema,
    WranglingError,
)
from .registry import Registry


class Quality(str, Enum):
    VALID = "Valid"
    IMPUTED = "Imputed"
    REJECTED = "Rejected"


class CleaningPolicy(str, Enum):
    DROP = "Drop"
    IMPUTE_LAST_VALUE = "ImputeLastValue"
    FLAG_ONLY = "FlagOnly"


@dataclass(frozen=True)
class UnitConversion:
    scale: Fraction
    offset: Fraction
    canonical_unit: str

    def __post_init__(self):
        object.__setattr__(self, "scale", Fraction(self.scale))
        object.__setattr__(self, "offset", Fraction(self.offset))

    def to_canonical(self, raw: Fraction) -> Fraction:
        return self.scale * raw + self.offset

    def to_raw(self, canonical: float) -> float:
        return float((Fraction(canonical) - self.offset) / self.scale)


@dataclass(frozen=True)
class SchemaDescriptor:
    """How to read one raw format.

    ``field_map`` must map exactly one raw key (the value field) to
    ``(metric, unit_tag)``; other raw keys may still be listed in
    ``required_fields``.
    """

    schema_id: str
    field_map: Mapping[str, tuple[str, str]]
    unit_conversions: Mapping[str, UnitConversion]
    required_fields: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "required_fields", frozenset(self.required_fields))

    @property
    def value_field(self) -> str:
        return next(iter(self.field_map))


@dataclass(frozen=True)
class RawReading:
    schema_id: str
    fields: Mapping[str, Any]
    source_device: str
    arrival_tick: int
    firmware_hash: Optional[bytes] = None     # attestation evidence sent with the sample


@dataclass(frozen=True)
class CanonicalReading:
    device_id: str
    metric: str
    value: Optional[float]          # None only for Rejected readings
    unit: str
    timestamp: int
    seq: int
    quality: Quality = Quality.VALID
    firmware_hash: Optional[bytes] = None

    def to_fields(self) -> dict:
        return {
            "device_id": self.device_id,
            "metric": self.metric,
            "value": self.value,
            "unit": self.unit,
            "timestamp": self.timestamp,
            "seq": self.seq,
            "quality": self.quality.value,
        }


def _numeric(value: Any) -> Optional[Fraction]:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value) if math.isfinite(value) else None
    if isinstance(value, str):
        try:
            parsed = Fraction(value.strip())
        except (ValueError, ZeroDivisionError):
            try:
                as_float = float(value)
            except ValueError:
                return None
            return Fraction(as_float) if math.isfinite(as_float) else None
        return parsed
    return None


class Wrangler:
    """Schema registry plus the gateway-side wrangle/clean pipeline."""

    def __init__(self, registry: Optional[Registry] = None):
        self.registry = registry
        self._schemas: dict[str, SchemaDescriptor] = {}
        self._metric_units: dict[str, str] = {}
        self._seq: dict[str, int] = {}
        self._last_value: dict[tuple[str, str], float] = {}
        self._lock = threading.Lock()

    # -- schemas -------------------------------------------------------------
    def register_schema(self, descriptor: SchemaDescriptor) -> None:
        with self._lock:
            if descriptor.schema_id in self._schemas:
                raise DuplicateSchema(f"schema {descriptor.schema_id!r} already registered")
            if len(descriptor.field_map) != 1:
                raise WranglingError("a schema maps exactly one raw value field")
            for conversion in descriptor.unit_conversions.values():
                if conversion.scale == 0:
                    raise NonInvertibleConversion(
                        f"schema {descriptor.schema_id!r} has a zero-scale conversion")
            for raw_key, (metric, unit) in descriptor.field_map.items():
                if unit not in descriptor.unit_conversions:
                    raise WranglingError(f"no conversion for unit {unit!r}")
                canonical = descriptor.unit_conversions[unit].canonical_unit
                known = self._metric_units.get(metric)
                if known is not None and known != canonical:
                    raise WranglingError(
                        f"metric {metric!r} is canonical in {known!r}, not {canonical!r}")
            for metric, unit in descriptor.field_map.values():
                self._metric_units[metric] = descriptor.unit_conversions[unit].canonical_unit
            self._schemas[descriptor.schema_id] = descriptor

    def schema(self, schema_id: str) -> SchemaDescriptor:
        try:
            return self._schemas[schema_id]
        except KeyError:
            raise UnknownSchema(f"unknown schema {schema_id!r}") from None

    # -- pipeline ------------------------------------------------------------
    def _next_seq(self, device: str) -> int:
        with self._lock:
            seq = self._seq.get(device, 0)
            self._seq[device] = seq + 1
            return seq

    def _target(self, raw: RawReading) -> tuple[SchemaDescriptor, str, str, UnitConversion]:
        schema = self.schema(raw.schema_id)
        if self.registry is not None and not self.registry.is_active(raw.source_device):
            raise InactiveSource(f"{raw.source_device!r} is not an active registered device")
        raw_key = schema.value_field
        metric, unit = schema.field_map[raw_key]
        return schema, raw_key, metric, schema.unit_conversions[unit]

    def wrangle(self, raw: RawReading) -> CanonicalReading:
        schema, raw_key, metric, conversion = self._target(raw)
        missing = [k for k in sorted(schema.required_fields | {raw_key}) if k not in raw.fields]
        if missing:
            raise MissingField(f"reading from {raw.source_device!r} lacks {missing}")
        number = _numeric(raw.fields[raw_key])
        if number is None:
            raise MissingField(f"reading from {raw.source_device!r} has invalid {raw_key!r}")
        value = float(conversion.to_canonical(number))
        reading = CanonicalReading(raw.source_device, metric, value, conversion.canonical_unit,
                                   raw.arrival_tick, self._next_seq(raw.source_device),
                                   Quality.VALID, raw.firmware_hash)
        self._last_value[(raw.source_device, metric)] = value
        return reading

    def clean(self, batch: Iterable[RawReading],
              policy: CleaningPolicy = CleaningPolicy.FLAG_ONLY) -> list[CanonicalReading]:
        """Wrangle a batch in order, handling missing/invalid values per ``policy``."""
        policy = CleaningPolicy(policy)
        out = []
        for raw in batch:
            try:
                out.append(self.wrangle(raw))
                continue
            except MissingField:
                pass
            _, _, metric, conversion = self._target(raw)
            if policy is CleaningPolicy.DROP:
                continue
            if policy is CleaningPolicy.IMPUTE_LAST_VALUE:
                last = self._last_value.get((raw.source_device, metric))
                if last is None:
                    raise NoPriorValue(f"no earlier {metric!r} value from {raw.source_device!r}")
                out.append(CanonicalReading(raw.source_device, metric, last,
                                            conversion.canonical_unit, raw.arrival_tick,
                                            self._next_seq(raw.source_device), Quality.IMPUTED,
                                            raw.firmware_hash))
            else:
                out.append(CanonicalReading(raw.source_device, metric, None,
                                            conversion.canonical_unit, raw.arrival_tick,
                                            self._next_seq(raw.source_device), Quality.REJECTED,
                                            raw.firmware_hash))
        return out

    def seed_history(self, device: str, metric: str, value: float) -> None:
        self._last_value[(device, metric)] = float(value)


def schema_from_config(entry: Mapping[str, Any]) -> SchemaDescriptor:
    """Build a descriptor from a config mapping.

    Expected keys: ``schema_id``, ``field_map`` (raw key -> {metric, unit}),
    ``conversions`` (unit -> {scale, offset, canonical_unit}; scale/offset may
    be fractions written as strings such as ``"5/9"``) and optional
    ``required_fields``.
    """
    field_map = {
        str(raw): (str(spec["metric"]), str(spec["unit"]))
        for raw, spec in dict(entry["field_map"]).items()
    }
    conversions = {}
    for unit, spec in dict(entry["conversions"]).items():
        try:
            scale = Fraction(str(spec.get("scale", 1)))
            offset = Fraction(str(spec.get("offset", 0)))
        except (ValueError, ZeroDivisionError) as exc:
            raise WranglingError(f"bad conversion for {unit!r}: {exc}") from exc
        conversions[str(unit)] = UnitConversion(scale, offset, str(spec["canonical_unit"]))
    return SchemaDescriptor(str(entry["schema_id"]), field_map, conversions,
                            frozenset(entry.get("required_fields", ())))


FAHRENHEIT_TO_CELSIUS = UnitConversion(Fraction(5, 9), Fraction(-160, 9), "celsius")
CELSIUS_IDENTITY = UnitConversion(Fraction(1), Fraction(0), "celsius")
