"""Bit-exact sensor frame codec: 15-byte header plus up to 30 bytes of payload.

Wire layout, all multi-byte fields big-endian:

    header (15 B):  magic 0xA6 0x47 | version 0x01 | msg_type 0x01
                    | node_id u32 | seq u16 | payload_len u8
                    | reserved 0x00 00 00 | CRC-8 (poly 0x07) over bytes 0..13
    payload (<=30 B): timestamp u32 | battery_mv u16 | reading_count u8
                    | count * (kind u8, value float32)
                    | CRC-16/CCITT-FALSE over all prior payload bytes

Four readings is the densest frame that fits the 30-byte payload budget.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import IntEnum

MAGIC = b"\xa6\x47"
VERSION = 0x01
MSG_TYPE_TELEMETRY = 0x01
HEADER_LEN = 15
MAX_PAYLOAD_LEN = 30
# timestamp(4) + battery(2) + count(1) + crc16(2)
_PAYLOAD_OVERHEAD = 9
_READING_LEN = 5
MIN_PAYLOAD_LEN = _PAYLOAD_OVERHEAD + _READING_LEN
MAX_READINGS = (MAX_PAYLOAD_LEN - _PAYLOAD_OVERHEAD) // _READING_LEN


def wire_length(reading_count: int) -> int:
    """Total frame size on the wire for a given number of readings."""
    if not 1 <= reading_count <= MAX_READINGS:
        raise FrameEncodeError(f"reading count must be in [1, {MAX_READINGS}]")
    return HEADER_LEN + _PAYLOAD_OVERHEAD + _READING_LEN * reading_count


class SensorKind(IntEnum):
    """Wire identifiers for the supported series; names double as series names."""

    water_temperature_c = 1
    dissolved_oxygen_mgl = 2
    ph = 3
    turbidity_ntu = 4
    ammonia_mgl = 5


@dataclass(frozen=True)
class Reading:
    kind: SensorKind
    value: float


@dataclass(frozen=True)
class SensorFrame:
    node_id: int
    seq: int
    timestamp_s: int
    readings: tuple[Reading, ...]
    battery_mv: int


class FrameEncodeError(ValueError):
    """Frame violates the wire contract (too many readings, field overflow...)."""


class FrameDecodeError(ValueError):
    """Undecodable bytes; `kind` is one of the countable decode-failure kinds."""

    KINDS = (
        "bad_magic",
        "bad_version",
        "truncated",
        "header_crc_mismatch",
        "payload_crc_mismatch",
        "unknown_sensor_kind",
    )

    def __init__(self, kind: str, detail: str = ""):
        assert kind in self.KINDS
        self.kind = kind
        super().__init__(f"{kind}{': ' + detail if detail else ''}")


def crc8(data: bytes, poly: int = 0x07) -> int:
    """Bitwise CRC-8, init 0, no reflection ("123456789" -> 0xF4)."""
    crc = 0
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = ((crc << 1) ^ poly) & 0xFF if crc & 0x80 else (crc << 1) & 0xFF
    return crc


def crc16_ccitt(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF ("123456789" -> 0x29B1)."""
    crc = 0xFFFF
    for byte in data:
        crc ^= byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
    return crc


def encode(frame: SensorFrame) -> bytes:
    """Serialize a frame; raises FrameEncodeError when it cannot fit the wire."""
    if not frame.readings:
        raise FrameEncodeError("frame must carry at least one reading")
    if len(frame.readings) > MAX_READINGS:
        raise FrameEncodeError(
            f"{len(frame.readings)} readings exceed the {MAX_PAYLOAD_LEN}-byte payload"
        )
    if not 0 <= frame.node_id <= 0xFFFFFFFF:
        raise FrameEncodeError("node_id out of u32 range")
    if not 0 <= frame.seq <= 0xFFFF:
        raise FrameEncodeError("seq out of u16 range")
    if not 0 <= frame.timestamp_s <= 0xFFFFFFFF:
        raise FrameEncodeError("timestamp_s out of u32 range")
    if not 0 <= frame.battery_mv <= 6000:
        raise FrameEncodeError("battery_mv out of [0, 6000]")

    payload = bytearray()
    payload += struct.pack(">IHB", frame.timestamp_s, frame.battery_mv, len(frame.readings))
    for reading in frame.readings:
        payload += struct.pack(">Bf", SensorKind(reading.kind), reading.value)
    payload += struct.pack(">H", crc16_ccitt(bytes(payload)))

    header = bytearray()
    header += MAGIC
    header += bytes((VERSION, MSG_TYPE_TELEMETRY))
    header += struct.pack(">IH", frame.node_id, frame.seq)
    header += struct.pack(">B", len(payload))
    header += b"\x00\x00\x00"
    header += struct.pack(">B", crc8(bytes(header)))
    return bytes(header + payload)


def decode(data: bytes) -> SensorFrame:
    """Parse wire bytes back into a SensorFrame, validating CRCs before fields."""
    if len(data) < HEADER_LEN:
        raise FrameDecodeError("truncated", f"{len(data)} bytes < {HEADER_LEN}-byte header")
    if data[:2] != MAGIC:
        raise FrameDecodeError("bad_magic", data[:2].hex())
    if data[2] != VERSION:
        raise FrameDecodeError("bad_version", f"0x{data[2]:02x}")
    if crc8(data[: HEADER_LEN - 1]) != data[HEADER_LEN - 1]:
        raise FrameDecodeError("header_crc_mismatch")

    node_id, seq = struct.unpack(">IH", data[4:10])
    payload_len = data[10]
    if payload_len < MIN_PAYLOAD_LEN or payload_len > MAX_PAYLOAD_LEN:
        raise FrameDecodeError("truncated", f"declared payload {payload_len} B out of range")
    if len(data) != HEADER_LEN + payload_len:
        raise FrameDecodeError(
            "truncated", f"{len(data)} bytes != {HEADER_LEN + payload_len} declared"
        )

    payload = data[HEADER_LEN:]
    (crc_stated,) = struct.unpack(">H", payload[-2:])
    if crc16_ccitt(payload[:-2]) != crc_stated:
        raise FrameDecodeError("payload_crc_mismatch")

    timestamp_s, battery_mv, count = struct.unpack(">IHB", payload[:7])
    if payload_len != _PAYLOAD_OVERHEAD + count * _READING_LEN or count == 0:
        raise FrameDecodeError("truncated", f"reading count {count} inconsistent with length")

    readings = []
    offset = 7
    for _ in range(count):
        kind_byte, value = struct.unpack(">Bf", payload[offset : offset + _READING_LEN])
        try:
            kind = SensorKind(kind_byte)
        except ValueError:
            raise FrameDecodeError("unknown_sensor_kind", f"0x{kind_byte:02x}") from None
        readings.append(Reading(kind=kind, value=value))
        offset += _READING_LEN

    return SensorFrame(
        node_id=node_id,
        seq=seq,
        timestamp_s=timestamp_s,
        readings=tuple(readings),
        battery_mv=battery_mv,
    )


def dump_frame(data: bytes) -> str:
    """Hex dump plus decoded JSON (or the decode error), for the CLI."""
    lines = [data.hex()]
    try:
        frame = decode(data)
    except FrameDecodeError as exc:
        lines.append(f"decode error: {exc}")
    else:
        lines.append(
            json.dumps(
                {
                    "node_id": frame.node_id,
                    "seq": frame.seq,
                    "timestamp_s": frame.timestamp_s,
                    "battery_mv": frame.battery_mv,
                    "readings": {r.kind.name: r.value for r in frame.readings},
                }
            )
        )
    return "\n".join(lines)
