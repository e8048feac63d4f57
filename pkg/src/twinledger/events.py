"""Append-only, tick-ordered event log shared by twin_sync, feedback and the simulator."""

from __future__ import annotations

import json
import threading
from decimal import Decimal
from enum import Enum
from typing import Any, Iterable, Optional

# leading keys of every exported line, in this order
CORE_KEYS = ("tick", "kind", "machine", "metric", "observed", "expected", "magnitude")


def _plain(value: Any) -> Any:
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if isinstance(value, list):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Decimal):
        return str(value)
    return value


class EventLog:
    """Records are plain dicts with a log-wide ``id``; ``cause`` fields refer to ids."""

    def __init__(self):
        self.records: list[dict] = []
        self._lock = threading.Lock()

    def append(self, kind: str, tick: int, **fields: Any) -> int:
        with self._lock:
            record = {"id": len(self.records), "tick": tick, "kind": kind}
            for key, value in fields.items():
                record[key] = _plain(value)
            self.records.append(record)
            return record["id"]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(list(self.records))

    def of_kind(self, *kinds: str) -> list[dict]:
        return [r for r in self.records if r["kind"] in kinds]

    def get(self, record_id: int) -> dict:
        return self.records[record_id]

    def lines(self) -> list[str]:
        out = []
        for record in self.records:
            ordered = {k: record.get(k) for k in CORE_KEYS}
            ordered["id"] = record["id"]
            for key, value in record.items():
                if key not in ordered:
                    ordered[key] = value
            out.append(json.dumps(ordered, separators=(",", ":")))
        return out

    def export(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(line + "\n")


def load_event_lines(lines: Iterable[str]) -> list[dict]:
    return [json.loads(line) for line in lines if line.strip()]


def first_record(records: Iterable[dict], kind: str, **match: Any) -> Optional[dict]:
    for record in records:
        if record["kind"] == kind and all(record.get(k) == v for k, v in match.items()):
            return record
    return None
