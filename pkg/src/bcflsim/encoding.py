"""Canonical binary encoding for contract calls, return values and storage.

Every value is one field: a 1-byte type tag, a 4-byte little-endian payload
length, then the payload.  Integers are signed little-endian in the minimal
number of bytes; lists are the concatenation of their encoded items.  The
format is fixed so that calldata sizes (and therefore gas) are reproducible.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Any

TAG_NONE = 0x00
TAG_INT = 0x01
TAG_BYTES = 0x02
TAG_STR = 0x03
TAG_ADDRESS = 0x04
TAG_LIST = 0x05
TAG_BOOL = 0x06

_LEN = struct.Struct("<I")


class EncodingError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Address:
    """20-byte account or contract identifier."""

    raw: bytes

    def __post_init__(self) -> None:
        if not isinstance(self.raw, bytes) or len(self.raw) != 20:
            raise ValueError("address must be exactly 20 bytes")

    @classmethod
    def from_hex(cls, text: str) -> Address:
        if text.startswith("0x"):
            text = text[2:]
        return cls(bytes.fromhex(text))

    @property
    def hex(self) -> str:
        return "0x" + self.raw.hex()

    def __str__(self) -> str:
        return self.hex

    def __repr__(self) -> str:
        return f"Address({self.hex})"


def _field(tag: int, payload: bytes) -> bytes:
    return bytes([tag]) + _LEN.pack(len(payload)) + payload


def encode(value: Any) -> bytes:
    if value is None:
        return _field(TAG_NONE, b"")
    # bool before int: bool is an int subclass
    if isinstance(value, bool):
        return _field(TAG_BOOL, b"\x01" if value else b"\x00")
    if isinstance(value, enum.Enum):
        return encode(value.value)
    if isinstance(value, int):
        size = (value.bit_length() + 8) // 8
        return _field(TAG_INT, value.to_bytes(size, "little", signed=True))
    if isinstance(value, (bytes, bytearray)):
        return _field(TAG_BYTES, bytes(value))
    if isinstance(value, str):
        return _field(TAG_STR, value.encode("utf-8"))
    if isinstance(value, Address):
        return _field(TAG_ADDRESS, value.raw)
    if isinstance(value, (list, tuple)):
        return _field(TAG_LIST, b"".join(encode(v) for v in value))
    raise EncodingError(f"cannot encode value of type {type(value).__name__}")


def _decode_at(buf: bytes, pos: int) -> tuple[Any, int]:
    if pos + 5 > len(buf):
        raise EncodingError("truncated field header")
    tag = buf[pos]
    (length,) = _LEN.unpack_from(buf, pos + 1)
    start = pos + 5
    end = start + length
    if end > len(buf):
        raise EncodingError("truncated field payload")
    payload = buf[start:end]
    if tag == TAG_NONE:
        return None, end
    if tag == TAG_BOOL:
        return payload == b"\x01", end
    if tag == TAG_INT:
        return int.from_bytes(payload, "little", signed=True), end
    if tag == TAG_BYTES:
        return payload, end
    if tag == TAG_STR:
        return payload.decode("utf-8"), end
    if tag == TAG_ADDRESS:
        return Address(payload), end
    if tag == TAG_LIST:
        items = []
        p = start
        while p < end:
            item, p = _decode_at(buf, p)
            items.append(item)
        if p != end:
            raise EncodingError("list payload overrun")
        return items, end
    raise EncodingError(f"unknown tag 0x{tag:02x}")


def decode(buf: bytes) -> Any:
    value, end = _decode_at(buf, 0)
    if end != len(buf):
        raise EncodingError("trailing bytes after value")
    return value


def encode_call(op: str, args: tuple | list) -> bytes:
    """Calldata for ``op(*args)``: the encoded name followed by the encoded argument list."""
    return encode(op) + encode(list(args))


def decode_call(calldata: bytes) -> tuple[str, list]:
    op, pos = _decode_at(calldata, 0)
    args, end = _decode_at(calldata, pos)
    if end != len(calldata) or not isinstance(op, str) or not isinstance(args, list):
        raise EncodingError("malformed calldata")
    return op, args
