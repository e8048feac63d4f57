"""Deterministic shop-floor simulation with fault injection."""

from __future__ import annotations

from .config import FaultInjection, FaultKind, ScenarioConfig, load_config, parse_config
from .engine import ShopFloor, SimReport, SimRun, check_invariants, run, run_full
from .evaluate import INCONSISTENCY_KINDS, KindMetrics, evaluate

__all__ = [
    "FaultInjection", "FaultKind", "INCONSISTENCY_KINDS", "KindMetrics", "ScenarioConfig",
    "ShopFloor", "SimReport", "SimRun", "check_invariants", "evaluate", "load_config",
    "parse_config", "run", "run_full",
]
