"""Column types, order-preserving key encoding and the row codec.

Key encoding: every column value is a tag byte (0x00 NULL, 0x01 present)
followed by

* int64: 8 bytes big-endian with the sign bit flipped
* float64: 8 bytes, IEEE-754 bits transformed into an unsigned total order
* string/blob: the bytes with 0x00 escaped as 0x00 0xFF, terminated by 0x00 0x00

The encoding is self-delimiting, so a composite key is just the
concatenation of its column encodings and bytewise comparison equals tuple
comparison (with NULL first).
"""
from __future__ import annotations

import enum
import math
import struct
from typing import Any, Sequence

from .errors import SchemaMismatch, TypeMismatch

INT64_MIN = -(1 << 63)
INT64_MAX = (1 << 63) - 1


class ColumnType(str, enum.Enum):
    INT64 = "int64"
    FLOAT64 = "float64"
    STRING = "string"
    BLOB = "blob"

    @property
    def fixed_width(self) -> int | None:
        return 8 if self in (ColumnType.INT64, ColumnType.FLOAT64) else None

    @property
    def is_numeric(self) -> bool:
        return self in (ColumnType.INT64, ColumnType.FLOAT64)

    @property
    def is_large_object(self) -> bool:
        return self is ColumnType.BLOB


def coerce(value: Any, ctype: ColumnType, column: str = "?") -> Any:
    """Validate ``value`` for a column of ``ctype``, returning the canonical form."""
    if value is None:
        return None
    if ctype is ColumnType.INT64:
        if isinstance(value, bool):
            raise TypeMismatch(f"{column}: bool is not int64")
        if isinstance(value, float):
            if not value.is_integer():
                raise TypeMismatch(f"{column}: {value!r} is not an integer")
            value = int(value)
        if not isinstance(value, int):
            raise TypeMismatch(f"{column}: expected int64, got {type(value).__name__}")
        if not INT64_MIN <= value <= INT64_MAX:
            raise TypeMismatch(f"{column}: {value} out of int64 range")
        return value
    if ctype is ColumnType.FLOAT64:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeMismatch(f"{column}: expected float64, got {type(value).__name__}")
        value = float(value)
        if math.isnan(value):
            raise TypeMismatch(f"{column}: NaN is not storable")
        return value + 0.0 if value == 0 else value  # -0.0 -> 0.0
    if ctype is ColumnType.STRING:
        if not isinstance(value, str):
            raise TypeMismatch(f"{column}: expected string, got {type(value).__name__}")
        return value
    if not isinstance(value, (bytes, bytearray)):
        raise TypeMismatch(f"{column}: expected blob, got {type(value).__name__}")
    return bytes(value)


# key encoding

_BE_Q = struct.Struct(">Q")
_BE_D = struct.Struct(">d")
_SIGN = 1 << 63
_MASK = (1 << 64) - 1
NULL_KEY = b"\x00"


def _escape(raw: bytes) -> bytes:
    return raw.replace(b"\x00", b"\x00\xff") + b"\x00\x00"


def encode_value(value: Any, ctype: ColumnType) -> bytes:
    if value is None:
        return NULL_KEY
    if ctype is ColumnType.INT64:
        return b"\x01" + _BE_Q.pack((value + _SIGN) & _MASK)
    if ctype is ColumnType.FLOAT64:
        bits = _BE_Q.unpack(_BE_D.pack(value + 0.0 if value == 0 else value))[0]
        bits = bits ^ _MASK if bits & _SIGN else bits | _SIGN
        return b"\x01" + _BE_Q.pack(bits)
    if ctype is ColumnType.STRING:
        return b"\x01" + _escape(value.encode("utf-8"))
    return b"\x01" + _escape(bytes(value))


def encode_key(values: Sequence[Any], types: Sequence[ColumnType]) -> bytes:
    return b"".join(encode_value(v, t) for v, t in zip(values, types))


def _decode_one(buf: bytes, pos: int, ctype: ColumnType) -> tuple[Any, int]:
    tag = buf[pos]
    pos += 1
    if tag == 0:
        return None, pos
    if ctype is ColumnType.INT64:
        return _BE_Q.unpack_from(buf, pos)[0] - _SIGN, pos + 8
    if ctype is ColumnType.FLOAT64:
        bits = _BE_Q.unpack_from(buf, pos)[0]
        bits = bits ^ _SIGN if bits & _SIGN else bits ^ _MASK
        return _BE_D.unpack(_BE_Q.pack(bits))[0], pos + 8
    out = bytearray()
    while True:
        i = buf.index(b"\x00", pos)
        out += buf[pos:i]
        if buf[i + 1] == 0xFF:
            out.append(0)
            pos = i + 2
        else:
            pos = i + 2
            break
    raw = bytes(out)
    return (raw.decode("utf-8") if ctype is ColumnType.STRING else raw), pos


def decode_key(buf: bytes, types: Sequence[ColumnType]) -> tuple:
    """Decode the leading ``len(types)`` columns of an encoded key."""
    return decode_key_prefix(buf, types)[0]


def decode_key_prefix(buf: bytes, types: Sequence[ColumnType]) -> tuple[tuple, int]:
    values = []
    pos = 0
    for t in types:
        v, pos = _decode_one(buf, pos, t)
        values.append(v)
    return tuple(values), pos


def prefix_successor(b: bytes) -> bytes | None:
    """Smallest byte string greater than every string starting with ``b``.

    None means there is no such bound (``b`` empty or all 0xFF).
    """
    b = b.rstrip(b"\xff")
    if not b:
        return None
    return b[:-1] + bytes([b[-1] + 1])


# row codec

class RowCodec:
    """Binary row format for a fixed schema.

    Layout: u16 column count, null bitmap (one bit per column), the fixed
    int64/float64 columns in schema order (zeros when NULL), then for each
    string/blob column a u16 length and its bytes.
    """

    def __init__(self, types: Sequence[ColumnType]):
        self.types = tuple(ColumnType(t) for t in types)
        n = len(self.types)
        self.nbytes = (n + 7) // 8
        self.fixed_idx = [i for i, t in enumerate(self.types) if t.fixed_width]
        self.var_idx = [i for i, t in enumerate(self.types) if not t.fixed_width]
        codes = "".join("q" if self.types[i] is ColumnType.INT64 else "d" for i in self.fixed_idx)
        self._head = struct.Struct(f"<H{self.nbytes}s{codes}")
        self._is_str = [self.types[i] is ColumnType.STRING for i in self.var_idx]

    def encode(self, row: Sequence[Any]) -> bytes:
        if len(row) != len(self.types):
            raise SchemaMismatch(f"row has {len(row)} values, schema has {len(self.types)}")
        bits = 0
        for i, v in enumerate(row):
            if v is None:
                bits |= 1 << i
        fixed = [0 if row[i] is None else row[i] for i in self.fixed_idx]
        parts = [self._head.pack(len(self.types), bits.to_bytes(self.nbytes, "little"), *fixed)]
        for i, is_str in zip(self.var_idx, self._is_str):
            v = row[i]
            raw = b"" if v is None else (v.encode("utf-8") if is_str else bytes(v))
            if len(raw) > 0xFFFF:
                raise SchemaMismatch(f"value of {len(raw)} bytes is too long")
            parts.append(struct.pack("<H", len(raw)))
            parts.append(raw)
        return b"".join(parts)

    def decode(self, buf: bytes) -> tuple:
        head = self._head.unpack_from(buf, 0)
        if head[0] != len(self.types):
            raise SchemaMismatch(f"stored row has {head[0]} columns, schema has {len(self.types)}")
        bits = int.from_bytes(head[1], "little")
        out: list[Any] = [None] * len(self.types)
        for i, v in zip(self.fixed_idx, head[2:]):
            out[i] = v
        pos = self._head.size
        for i, is_str in zip(self.var_idx, self._is_str):
            (ln,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            raw = buf[pos:pos + ln]
            pos += ln
            out[i] = raw.decode("utf-8") if is_str else bytes(raw)
        if bits:
            for i in range(len(out)):
                if bits >> i & 1:
                    out[i] = None
        return tuple(out)
