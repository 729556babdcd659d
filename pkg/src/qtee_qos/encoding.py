"""Byte-level encodings shared by every layer.

Two flavours live here:

* ``Writer``/``Reader``: positional, fixed-width, big-endian primitives used
  for the canonical encodings of circuits, schedules and metadata.  Output is a
  pure function of the value, so it is safe to hash and to use as AEAD
  associated data.
* ``encode_fields``/``decode_fields``: a self-describing tagged-field format
  (tag byte, type byte, value) used for wire messages, bundle/results files and
  journal records.  Unknown tags are skipped on decode.
"""

from __future__ import annotations

import struct
from typing import Any, Iterable, Mapping


class EncodingError(ValueError):
    """Raised when bytes cannot be decoded into the expected structure."""


class Writer:
    def __init__(self) -> None:
        self._parts: list[bytes] = []

    def u8(self, value: int) -> Writer:
        self._parts.append(struct.pack(">B", value))
        return self

    def u16(self, value: int) -> Writer:
        self._parts.append(struct.pack(">H", value))
        return self

    def u32(self, value: int) -> Writer:
        self._parts.append(struct.pack(">I", value))
        return self

    def u64(self, value: int) -> Writer:
        self._parts.append(struct.pack(">Q", value))
        return self

    def f64(self, value: float) -> Writer:
        # bit pattern, so -0.0 and 0.0 encode differently
        self._parts.append(struct.pack(">d", value))
        return self

    def raw(self, data: bytes) -> Writer:
        self._parts.append(bytes(data))
        return self

    def blob(self, data: bytes) -> Writer:
        self.u32(len(data))
        self._parts.append(bytes(data))
        return self

    def text(self, value: str) -> Writer:
        return self.blob(value.encode("utf-8"))

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class Reader:
    def __init__(self, data: bytes) -> None:
        self._data = memoryview(bytes(data))
        self._pos = 0

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    def _take(self, n: int) -> bytes:
        if n < 0 or self._pos + n > len(self._data):
            raise EncodingError(
                f"truncated input: need {n} bytes at offset {self._pos}, have {self.remaining}"
            )
        chunk = self._data[self._pos : self._pos + n].tobytes()
        self._pos += n
        return chunk

    def u8(self) -> int:
        return struct.unpack(">B", self._take(1))[0]

    def u16(self) -> int:
        return struct.unpack(">H", self._take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack(">d", self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def blob(self) -> bytes:
        return self._take(self.u32())

    def text(self) -> str:
        try:
            return self.blob().decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EncodingError(f"invalid utf-8 text: {exc}") from None

    def expect_end(self) -> None:
        if self.remaining:
            raise EncodingError(f"{self.remaining} trailing bytes after structure")


# --- tagged fields ---------------------------------------------------------

T_UINT = 0x01
T_BYTES = 0x02
T_STR = 0x03
T_STR_LIST = 0x04
T_BYTES_LIST = 0x05

# One global tag space keeps the format self-describing across message kinds.
FIELD_TAGS: dict[str, int] = {
    "idempotency_token": 0x01,
    "client_id": 0x02,
    "backend_id": 0x03,
    "schedule": 0x04,
    "sealed_metadata": 0x05,
    "client_ephemeral_public": 0x06,
    "shots": 0x07,
    "job_id": 0x08,
    "state": 0x09,
    "code": 0x0A,
    "message": 0x0B,
    "bitstrings": 0x0C,
    "sealed_output_metadata": 0x0D,
    "reason": 0x0E,
    "submitted_at": 0x0F,
    "lsn": 0x10,
}
_TAG_NAMES = {tag: name for name, tag in FIELD_TAGS.items()}


def _type_of(value: Any) -> int:
    if isinstance(value, bool):
        raise EncodingError("booleans are not a wire type; use 0/1")
    if isinstance(value, int):
        return T_UINT
    if isinstance(value, (bytes, bytearray, memoryview)):
        return T_BYTES
    if isinstance(value, str):
        return T_STR
    if isinstance(value, (list, tuple)):
        if all(isinstance(v, str) for v in value):
            return T_STR_LIST
        if all(isinstance(v, (bytes, bytearray)) for v in value):
            return T_BYTES_LIST
    raise EncodingError(f"unsupported field value type {type(value).__name__}")


def encode_fields(fields: Mapping[str, Any]) -> bytes:
    """Encode a mapping of known field names in ascending tag order."""
    w = Writer()
    items = []
    for name, value in fields.items():
        if value is None:
            continue
        if name not in FIELD_TAGS:
            raise EncodingError(f"unknown field name {name!r}")
        items.append((FIELD_TAGS[name], value))
    items.sort()
    w.u16(len(items))
    for tag, value in items:
        kind = _type_of(value)
        w.u8(tag).u8(kind)
        if kind == T_UINT:
            if value < 0:
                raise EncodingError("negative integers are not encodable")
            w.u64(value)
        elif kind == T_BYTES:
            w.blob(bytes(value))
        elif kind == T_STR:
            w.text(value)
        elif kind == T_STR_LIST:
            w.u32(len(value))
            for v in value:
                w.text(v)
        else:
            w.u32(len(value))
            for v in value:
                w.blob(bytes(v))
    return w.getvalue()


def decode_fields(data: bytes | Reader) -> dict[str, Any]:
    r = data if isinstance(data, Reader) else Reader(data)
    count = r.u16()
    out: dict[str, Any] = {}
    for _ in range(count):
        tag = r.u8()
        kind = r.u8()
        if kind == T_UINT:
            value: Any = r.u64()
        elif kind == T_BYTES:
            value = r.blob()
        elif kind == T_STR:
            value = r.text()
        elif kind == T_STR_LIST:
            value = [r.text() for _ in range(r.u32())]
        elif kind == T_BYTES_LIST:
            value = [r.blob() for _ in range(r.u32())]
        else:
            raise EncodingError(f"unknown field type 0x{kind:02x} for tag 0x{tag:02x}")
        name = _TAG_NAMES.get(tag)
        if name is not None:
            out[name] = value
    if not isinstance(data, Reader):
        r.expect_end()
    return out


def require(fields: Mapping[str, Any], names: Iterable[str]) -> None:
    missing = [n for n in names if n not in fields]
    if missing:
        raise EncodingError(f"missing fields: {', '.join(missing)}")
