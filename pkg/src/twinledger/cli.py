"""Command-line entry point: ``twinledger run | trace | verify``.

Exit codes: 0 success, 1 a checked property failed (scenario invariant or
expectation, broken provenance chain, invalid ledger), 2 config or usage
error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .dag_ledger import Ledger, LedgerTransaction
from .errors import ConfigError, TwinLedgerError
from .provenance import identify_faulty_entity, records_from_export, report_lines, verify_chain
from .registry import Registry
from .sim import load_config, run_full

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3

REPORT_FILE = "report.json"
EVENTS_FILE = "events.jsonl"
LEDGER_FILE = "ledger.hex"

_HEX_LINE = re.compile(rb"[0-9a-f]+")


class ExportFormatError(TwinLedgerError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


def read_export(path) -> list[str]:
    """Strictly parse a ledger export: lowercase hex lines, each ending in ``\\n``.

    Raises :class:`OSError` if the file cannot be read and
    :class:`ExportFormatError` if it is not a well-formed export.
    """
    data = Path(path).read_bytes()
    if not data:
        raise ExportFormatError(1, "export is empty")
    if not data.endswith(b"\n"):
        raise ExportFormatError(data.count(b"\n") + 1, "export must end with a newline")
    lines = data[:-1].split(b"\n")
    for lineno, line in enumerate(lines, 1):
        if not _HEX_LINE.fullmatch(line):
            raise ExportFormatError(lineno, "not a lowercase hex transaction line")
        if len(line) % 2:
            raise ExportFormatError(lineno, "odd number of hex digits")
    return [line.decode("ascii") for line in lines]


def _tx_label(line: str) -> str:
    try:
        tx = LedgerTransaction.decode(bytes.fromhex(line), check_id=False)
    except (TwinLedgerError, ValueError):
        return "undecodable transaction"
    return f"transaction {tx.id.hex()}"


def cmd_run(config_path, out_dir, seed: Optional[int] = None) -> int:
    try:
        config = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if seed is not None:
        if not 0 <= seed < 2 ** 64:
            print("config error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
            return EXIT_USAGE
        config = replace(config, seed=seed)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_USAGE

    result = run_full(config)
    report = result.report
    (out / REPORT_FILE).write_text(json.dumps(report.to_fields(), indent=2) + "\n",
                                   encoding="utf-8")
    result.event_log.export(out / EVENTS_FILE)
    result.ledger.export(out / LEDGER_FILE)
    print(report.report_hash)

    failures = list(report.violations)
    expect = config.expect
    events = len(report.inconsistency_events)
    if expect.max_events is not None and events > expect.max_events:
        failures.append(f"{events} inconsistency events, expected at most {expect.max_events}")
    for kind, metrics in report.metrics.items():
        if expect.min_recall is not None and metrics["recall"] < expect.min_recall:
            failures.append(f"{kind} recall {metrics['recall']} < {expect.min_recall}")
        if expect.min_precision is not None and metrics["precision"] < expect.min_precision:
            failures.append(f"{kind} precision {metrics['precision']} < {expect.min_precision}")
    for failure in failures:
        print(f"FAILED: {failure}", file=sys.stderr)
    return EXIT_FAILED if failures else EXIT_OK


def cmd_trace(ledger_path, subject: str) -> int:
    try:
        lines = Path(ledger_path).read_text(encoding="ascii", errors="replace").splitlines()
    except OSError as exc:
        print(f"cannot read {ledger_path}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    records = records_from_export(lines, subject)
    if not records:
        print(f"unknown subject {subject!r}", file=sys.stderr)
        return EXIT_USAGE
    for line in report_lines(records):
        print(line)
    status = verify_chain(records)
    if status.is_complete:
        print(f"status\t{status}")
        return EXIT_OK
    culprit = identify_faulty_entity(records, status)
    print(f"status\t{status.state.value}\tindex {status.index}\tentity {culprit}")
    return EXIT_FAILED


def cmd_verify(ledger_path) -> int:
    try:
        lines = read_export(ledger_path)
    except OSError as exc:
        print(f"cannot read {ledger_path}: {exc.strerror}", file=sys.stderr)
        return EXIT_USAGE
    except ExportFormatError as exc:
        print(f"invalid: {exc}")
        return EXIT_FAILED
    try:
        ledger = Ledger.replay(lines, Registry())
    except TwinLedgerError as exc:
        lineno = getattr(exc, "line", None)
        label = _tx_label(lines[lineno - 1]) if lineno else "export"
        print(f"invalid: line {lineno}: {label}: {type(exc).__name__}: {exc}")
        return EXIT_FAILED
    print(f"valid: {len(ledger)} transactions, {len(ledger.tips)} tips")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twinledger", description=__doc__.splitlines()[0])
    commands = parser.add_subparsers(dest="command", required=True)
    run = commands.add_parser("run", help="run a scenario and write report, events, ledger")
    run.add_argument("--config", required=True, help="scenario YAML file")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--out", required=True, help="output directory")
    trace = commands.add_parser("trace", help="print and verify a subject's provenance chain")
    trace.add_argument("--ledger", required=True, help="ledger export (hex lines)")
    trace.add_argument("--subject", required=True)
    verify = commands.add_parser("verify", help="replay and re-validate a ledger export")
    verify.add_argument("--ledger", required=True, help="ledger export (hex lines)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, args.seed)
        if args.command == "trace":
            return cmd_trace(args.ledger, args.subject)
        return cmd_verify(args.ledger)
    except Exception as exc:      # noqa: BLE001 - last-resort mapping to exit 3
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
