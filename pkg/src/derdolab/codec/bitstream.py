"""Bit-level I/O, order-0 exp-Golomb codes and the container header."""

from __future__ import annotations

import struct
from dataclasses import dataclass

MAGIC = b"DERD"
VERSION = 1
_HEADER = struct.Struct(">4sBHHHBBBB")
HEADER_SIZE = _HEADER.size


class DecodeError(ValueError):
    """Malformed or truncated bitstream."""


def signed_to_unsigned(v: int) -> int:
    return 2 * v - 1 if v > 0 else -2 * v


def unsigned_to_signed(u: int) -> int:
    return (u + 1) // 2 if u & 1 else -(u // 2)


def ue_length(u: int) -> int:
    """Length in bits of the order-0 exp-Golomb code of ``u``."""
    return 2 * (u + 1).bit_length() - 1


def se_length(v: int) -> int:
    return ue_length(signed_to_unsigned(v))


def encode_ue(u: int) -> str:
    if u < 0:
        raise ValueError(f"unsigned exp-Golomb needs u >= 0, got {u}")
    b = format(u + 1, "b")
    return "0" * (len(b) - 1) + b


def encode_se(v: int) -> str:
    return encode_ue(signed_to_unsigned(v))


def decode_ue(bits: str, pos: int = 0) -> tuple[int, int]:
    """Decode one unsigned code from a '0'/'1' string; returns (value, new_pos)."""
    one = bits.find("1", pos)
    if one < 0:
        raise DecodeError("exp-Golomb prefix ran out of bits")
    zeros = one - pos
    end = one + zeros + 1
    if end > len(bits):
        raise DecodeError("exp-Golomb suffix ran out of bits")
    return int(bits[one:end], 2) - 1, end


def decode_se(bits: str, pos: int = 0) -> tuple[int, int]:
    u, pos = decode_ue(bits, pos)
    return unsigned_to_signed(u), pos


class BitWriter:
    """MSB-first bit accumulator."""

    def __init__(self):
        self._parts: list[str] = []
        self.bit_count = 0

    def write_bit(self, bit: int):
        self._parts.append("1" if bit else "0")
        self.bit_count += 1

    def write_ue(self, u: int):
        code = encode_ue(u)
        self._parts.append(code)
        self.bit_count += len(code)

    def write_se(self, v: int):
        self.write_ue(signed_to_unsigned(v))

    def align(self):
        pad = -self.bit_count % 8
        if pad:
            self._parts.append("0" * pad)
            self.bit_count += pad

    def getvalue(self) -> bytes:
        if self.bit_count % 8:
            raise ValueError("writer is not byte aligned")
        if not self.bit_count:
            return b""
        return int("".join(self._parts), 2).to_bytes(self.bit_count // 8, "big")


class BitReader:
    def __init__(self, data: bytes):
        self._bits = "".join(format(b, "08b") for b in data) if data else ""
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self._bits) - self.pos

    def read_bit(self) -> int:
        if self.pos >= len(self._bits):
            raise DecodeError("unexpected end of payload")
        bit = self._bits[self.pos] == "1"
        self.pos += 1
        return int(bit)

    def read_ue(self) -> int:
        value, self.pos = decode_ue(self._bits, self.pos)
        return value

    def read_se(self) -> int:
        return unsigned_to_signed(self.read_ue())

    def align(self):
        self.pos = min(len(self._bits), (self.pos + 7) // 8 * 8)


@dataclass(frozen=True)
class StreamHeader:
    width: int
    height: int
    frame_count: int
    ctu_size: int
    qp_base: int
    intra_period: int
    delta_qp_enabled: bool

    def pack(self) -> bytes:
        return _HEADER.pack(MAGIC, VERSION, self.width, self.height, self.frame_count,
                            self.ctu_size, self.qp_base, self.intra_period,
                            int(self.delta_qp_enabled))

    @classmethod
    def unpack(cls, data: bytes) -> "StreamHeader":
        if len(data) < HEADER_SIZE:
            raise DecodeError("truncated header")
        magic, version, w, h, n, ctu, qp, period, dqp = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise DecodeError(f"bad magic {magic!r}")
        if version != VERSION:
            raise DecodeError(f"unsupported version {version}")
        if ctu != 16 or w == 0 or h == 0 or qp > 51 or period == 0 or dqp > 1:
            raise DecodeError("header field out of range")
        return cls(w, h, n, ctu, qp, period, bool(dqp))


@dataclass(frozen=True)
class Bitstream:
    header: StreamHeader
    payload: bytes

    def to_bytes(self) -> bytes:
        return self.header.pack() + self.payload

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bitstream":
        return cls(StreamHeader.unpack(data), bytes(data[HEADER_SIZE:]))

    @property
    def size_bytes(self) -> int:
        return HEADER_SIZE + len(self.payload)
