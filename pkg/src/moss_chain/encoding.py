"""Canonical, length-prefixed binary encoding.

Every signed or hashed object in the package goes through this module so that
signatures, merkle roots and block digests are byte-exact across replicas and
across a save/load round trip.

Byte layout of a tagged value::

    0x00                          None
    0x01 | 0x02                   False | True
    0x03 len:u8 magnitude         non-negative integer, big-endian, minimal
    0x04 len:u8 magnitude         negative integer (magnitude of -n)
    0x05 len:u32 data             bytes
    0x06 len:u32 utf8             str
    0x07 count:u32 value*         list / tuple
    0x08 count:u32 (str value)*   dict with str keys, sorted by key

Integers are limited to 255 bytes of magnitude, which is far beyond any wei
amount the ledger handles.
"""

from __future__ import annotations

import struct
from typing import Any

_NONE = 0x00
_FALSE = 0x01
_TRUE = 0x02
_UINT = 0x03
_NINT = 0x04
_BYTES = 0x05
_STR = 0x06
_LIST = 0x07
_DICT = 0x08


class DecodeError(ValueError):
    """Raised on malformed or truncated canonical bytes."""


def _uint_bytes(n: int) -> bytes:
    raw = n.to_bytes((n.bit_length() + 7) // 8, "big")
    if len(raw) > 255:
        raise ValueError("integer too large for canonical encoding")
    return bytes([len(raw)]) + raw


def encode(value: Any) -> bytes:
    out = bytearray()
    _encode_into(value, out)
    return bytes(out)


def _encode_into(value: Any, out: bytearray) -> None:
    if value is None:
        out.append(_NONE)
    elif value is True:
        out.append(_TRUE)
    elif value is False:
        out.append(_FALSE)
    elif isinstance(value, int):
        if value >= 0:
            out.append(_UINT)
            out += _uint_bytes(value)
        else:
            out.append(_NINT)
            out += _uint_bytes(-value)
    elif isinstance(value, (bytes, bytearray)):
        out.append(_BYTES)
        out += struct.pack(">I", len(value))
        out += value
    elif isinstance(value, str):
        data = value.encode("utf-8")
        out.append(_STR)
        out += struct.pack(">I", len(data))
        out += data
    elif isinstance(value, (list, tuple)):
        out.append(_LIST)
        out += struct.pack(">I", len(value))
        for item in value:
            _encode_into(item, out)
    elif isinstance(value, dict):
        keys = sorted(value)
        if not all(isinstance(k, str) for k in keys):
            raise TypeError("dict keys must be str")
        out.append(_DICT)
        out += struct.pack(">I", len(keys))
        for key in keys:
            _encode_into(key, out)
            _encode_into(value[key], out)
    else:
        raise TypeError(f"cannot canonically encode {type(value).__name__}")


def decode(data: bytes) -> Any:
    value, pos = _decode_at(data, 0)
    if pos != len(data):
        raise DecodeError(f"{len(data) - pos} trailing bytes")
    return value


def _take(data: bytes, pos: int, n: int) -> tuple[bytes, int]:
    end = pos + n
    if end > len(data):
        raise DecodeError("truncated input")
    return data[pos:end], end


def _decode_at(data: bytes, pos: int) -> tuple[Any, int]:
    tag, pos = _take(data, pos, 1)
    t = tag[0]
    if t == _NONE:
        return None, pos
    if t == _FALSE:
        return False, pos
    if t == _TRUE:
        return True, pos
    if t in (_UINT, _NINT):
        ln, pos = _take(data, pos, 1)
        raw, pos = _take(data, pos, ln[0])
        if raw[:1] == b"\x00":
            raise DecodeError("non-minimal integer")
        n = int.from_bytes(raw, "big")
        if t == _NINT:
            if n == 0:
                raise DecodeError("negative zero")
            n = -n
        return n, pos
    if t in (_BYTES, _STR):
        ln, pos = _take(data, pos, 4)
        raw, pos = _take(data, pos, struct.unpack(">I", ln)[0])
        if t == _BYTES:
            return bytes(raw), pos
        try:
            return raw.decode("utf-8"), pos
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid utf-8") from exc
    if t == _LIST:
        ln, pos = _take(data, pos, 4)
        items = []
        for _ in range(struct.unpack(">I", ln)[0]):
            item, pos = _decode_at(data, pos)
            items.append(item)
        return items, pos
    if t == _DICT:
        ln, pos = _take(data, pos, 4)
        result: dict[str, Any] = {}
        prev = None
        for _ in range(struct.unpack(">I", ln)[0]):
            key, pos = _decode_at(data, pos)
            if not isinstance(key, str):
                raise DecodeError("dict key is not str")
            if prev is not None and key <= prev:
                raise DecodeError("dict keys not strictly sorted")
            prev = key
            result[key], pos = _decode_at(data, pos)
        return result, pos
    raise DecodeError(f"unknown tag 0x{t:02x}")
