"""Ledger-anchored digital twins for a simulated shop floor."""

from __future__ import annotations

__version__ = "0.1.0"
