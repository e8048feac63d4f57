"""Exception hierarchy shared by every twinledger module."""

from __future__ import annotations


class TwinLedgerError(Exception):
    """Base class for all library errors."""


# -- signatures -------------------------------------------------------------

class KeyReuse(TwinLedgerError):
    """A one-time key was asked to sign (or admit) a second message."""


# -- ledger -----------------------------------------------------------------

class LedgerError(TwinLedgerError):
    pass


class UnknownParent(LedgerError):
    pass


class InvalidSignature(LedgerError):
    pass


class UnauthorizedIssuer(LedgerError):
    pass


class UnauthorizedReader(LedgerError):
    pass


class InvalidTransaction(LedgerError):
    """Malformed encoding, id mismatch, bad parents or non-monotone logical time."""


class EmptyLedger(LedgerError):
    pass


class UnknownTransaction(LedgerError):
    pass


# -- registry ---------------------------------------------------------------

class RegistryError(TwinLedgerError):
    pass


class DuplicateEntity(RegistryError):
    pass


class BadCertificate(RegistryError):
    pass


class NotARegulator(RegistryError):
    pass


class UnknownEntity(RegistryError):
    pass


class NoFirmwareRecord(RegistryError):
    pass


class AlreadyRevoked(RegistryError):
    pass


class KeysExhausted(RegistryError):
    """An entity has no unused registered one-time key left."""


# -- provenance -------------------------------------------------------------

class ProvenanceError(TwinLedgerError):
    pass


class StalePrev(ProvenanceError):
    pass


class UnknownSubject(ProvenanceError):
    pass


class ChainIsComplete(ProvenanceError):
    pass


# -- wrangling --------------------------------------------------------------

class WranglingError(TwinLedgerError):
    pass


class DuplicateSchema(WranglingError):
    pass


class NonInvertibleConversion(WranglingError):
    pass


class UnknownSchema(WranglingError):
    pass


class InactiveSource(WranglingError):
    pass


class MissingField(WranglingError):
    pass


class NoPriorValue(WranglingError):
    pass


# -- twin synchronisation / feedback / reputation --------------------------

class NoBoundsAnchored(TwinLedgerError):
    pass


class NoModel(TwinLedgerError):
    pass


class MetricMismatch(TwinLedgerError):
    pass


class StaleModelVersion(TwinLedgerError):
    pass


class RevokedEntity(TwinLedgerError):
    pass


# -- simulator --------------------------------------------------------------

class ConfigError(TwinLedgerError):
    """Scenario configuration problem; ``field`` names the offending key path."""

    def __init__(self, field: str, message: str, line: int | None = None):
        self.field = field
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{field}{where}: {message}")
