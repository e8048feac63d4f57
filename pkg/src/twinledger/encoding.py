"""Canonical, length-prefixed binary encoding used for every hashed structure.

Each value is a one-byte tag followed by its body:

====  ==========  ==================================================
tag   type        body
====  ==========  ==================================================
N     None        (empty)
T/F   bool        (empty)
I     int         u32 length + ASCII decimal
R     float       8 bytes IEEE-754 binary64, big-endian
D     Decimal     u32 length + ASCII (``str(Decimal)``)
S     str         u32 length + UTF-8
B     bytes       u32 length + raw bytes
L     list        u32 count + items
M     dict        u32 count + (S-encoded key, value) pairs, keys sorted
====  ==========  ==================================================

All integers in prefixes are unsigned 32-bit big-endian. Decoding is strict:
trailing bytes, unknown tags or unsorted map keys are rejected, so
``encode(decode(b)) == b`` for every accepted ``b``.
"""

from __future__ import annotations

import hashlib
import struct
from decimal import Decimal, InvalidOperation
from typing import Any, Callable

HashFn = Callable[[bytes], bytes]

ZERO_DIGEST = bytes(32)


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class EncodingError(ValueError):
    pass


def _prefix(n: int) -> bytes:
    return struct.pack(">I", n)


def _encode_into(value: Any, out: bytearray) -> None:
    if value is None:
        out += b"N"
    elif value is True:
        out += b"T"
    elif value is False:
        out += b"F"
    elif isinstance(value, int):
        body = str(value).encode("ascii")
        out += b"I" + _prefix(len(body)) + body
    elif isinstance(value, float):
        out += b"R" + struct.pack(">d", value)
    elif isinstance(value, Decimal):
        body = str(value).encode("ascii")
        out += b"D" + _prefix(len(body)) + body
    elif isinstance(value, str):
        body = value.encode("utf-8")
        out += b"S" + _prefix(len(body)) + body
    elif isinstance(value, (bytes, bytearray)):
        out += b"B" + _prefix(len(value)) + bytes(value)
    elif isinstance(value, (list, tuple)):
        out += b"L" + _prefix(len(value))
        for item in value:
            _encode_into(item, out)
    elif isinstance(value, dict):
        keys = sorted(value)
        if not all(isinstance(k, str) for k in keys):
            raise EncodingError("map keys must be strings")
        out += b"M" + _prefix(len(keys))
        for key in keys:
            _encode_into(key, out)
            _encode_into(value[key], out)
    else:
        raise EncodingError(f"cannot encode {type(value).__name__}")


def encode(value: Any) -> bytes:
    out = bytearray()
    _encode_into(value, out)
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.data):
            raise EncodingError("truncated input")
        chunk = self.data[self.pos:end]
        self.pos = end
        return chunk

    def length(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def value(self) -> Any:
        tag = self.take(1)
        if tag == b"N":
            return None
        if tag == b"T":
            return True
        if tag == b"F":
            return False
        if tag == b"I":
            text = self.take(self.length()).decode("ascii", "strict")
            value = int(text)
            if str(value) != text:
                raise EncodingError("non-canonical integer")
            return value
        if tag == b"R":
            return struct.unpack(">d", self.take(8))[0]
        if tag == b"D":
            text = self.take(self.length()).decode("ascii", "strict")
            try:
                value = Decimal(text)
            except InvalidOperation as exc:
                raise EncodingError("bad decimal") from exc
            if str(value) != text:
                raise EncodingError("non-canonical decimal")
            return value
        if tag == b"S":
            try:
                return self.take(self.length()).decode("utf-8", "strict")
            except UnicodeDecodeError as exc:
                raise EncodingError("bad utf-8") from exc
        if tag == b"B":
            return self.take(self.length())
        if tag == b"L":
            return [self.value() for _ in range(self.length())]
        if tag == b"M":
            result: dict[str, Any] = {}
            last = None
            for _ in range(self.length()):
                key = self.value()
                if not isinstance(key, str) or (last is not None and key <= last):
                    raise EncodingError("map keys must be sorted unique strings")
                result[key] = self.value()
                last = key
            return result
        raise EncodingError(f"unknown tag {tag!r}")


def decode(data: bytes) -> Any:
    reader = _Reader(bytes(data))
    try:
        value = reader.value()
    except (struct.error, ValueError) as exc:
        if isinstance(exc, EncodingError):
            raise
        raise EncodingError(str(exc)) from exc
    if reader.pos != len(reader.data):
        raise EncodingError("trailing bytes")
    return value


def digest(value: Any, hash_fn: HashFn = sha256) -> bytes:
    """Hash of the canonical encoding of ``value``."""
    return hash_fn(encode(value))
