"""Byte-oriented range coder with a 64-bit state and 16-bit probabilities.

The interval width is kept in ``[2^56, 2^64)`` by emitting the top byte of
``low`` whenever it drops below ``2^56``. A carry out of ``low`` is pushed
into the bytes already written. Because the width never drops below ``2^56``,
termination needs a single byte: the smallest multiple of ``2^56`` inside the
final interval, with the decoder reading zeros past the end of the payload.
"""

from __future__ import annotations

from bisect import bisect_right
from typing import Sequence

from .cdf import PRECISION, CdfTable

_BITS = 64
_MASK = (1 << _BITS) - 1
_TOP_SHIFT = _BITS - 8
_RENORM = 1 << _TOP_SHIFT
# the decoder legitimately reads this many bytes past the end of the payload
_SLACK = _BITS // 8 - 1


class TruncatedPayload(ValueError):
    pass


class RangeEncoder:
    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.out = bytearray()

    def _carry(self):
        i = len(self.out) - 1
        while i >= 0 and self.out[i] == 0xFF:
            self.out[i] = 0
            i -= 1
        if i < 0:
            raise RuntimeError("carry out of an empty payload")
        self.out[i] += 1

    def encode_interval(self, start: int, freq: int, total_bits: int = PRECISION, last: bool = False):
        r = self.range >> total_bits
        self.low += r * start
        # the final bin absorbs the truncation remainder of the range
        self.range = self.range - r * start if last else r * freq
        if self.low > _MASK:
            self.low &= _MASK
            self._carry()
        while self.range < _RENORM:
            self.out.append(self.low >> _TOP_SHIFT)
            self.low = (self.low << 8) & _MASK
            self.range <<= 8

    def encode_raw(self, value: int, nbits: int = 32):
        for shift in range(nbits - 16, -1, -16):
            self.encode_interval((value >> shift) & 0xFFFF, 1)

    def encode(self, symbol: int, table: CdfTable):
        idx = table.index_of(symbol)
        cdf = table.cdf
        self.encode_interval(cdf[idx], cdf[idx + 1] - cdf[idx], last=idx == table.bins - 1)
        if idx == 0:
            self.encode_raw(table.offset - 1 - symbol)
        elif idx == table.bins - 1:
            self.encode_raw(symbol - table.offset - table.symbols)

    def finish(self) -> bytes:
        # smallest value >= low that is a multiple of 2^56 lies inside [low, low + range)
        step = _RENORM
        value = -(-self.low // step) * step
        if value > _MASK:
            self._carry()
            value &= _MASK
        self.out.append(value >> _TOP_SHIFT)
        return bytes(self.out)


class RangeDecoder:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.range = _MASK
        self.code = 0
        for _ in range(_BITS // 8):
            self.code = (self.code << 8) | self._next()

    def _next(self) -> int:
        pos = self.pos
        self.pos += 1
        if pos < len(self.data):
            return self.data[pos]
        if pos - len(self.data) >= _SLACK:
            raise TruncatedPayload("range decoder ran past the end of the payload")
        return 0

    def _renorm(self):
        while self.range < _RENORM:
            self.code = ((self.code << 8) | self._next())
            self.range <<= 8

    def decode_target(self, total_bits: int = PRECISION) -> tuple[int, int]:
        r = self.range >> total_bits
        return min(self.code // r, (1 << total_bits) - 1), r

    def consume(self, r: int, start: int, freq: int, last: bool = False):
        self.code -= r * start
        self.range = self.range - r * start if last else r * freq
        self._renorm()

    def decode_raw(self, nbits: int = 32) -> int:
        value = 0
        for _ in range(nbits // 16):
            chunk, r = self.decode_target()
            self.consume(r, chunk, 1)
            value = (value << 16) | chunk
        return value

    def decode(self, table: CdfTable) -> int:
        cdf = table.cdf
        target, r = self.decode_target()
        idx = bisect_right(cdf, target) - 1
        last = idx == table.bins - 1
        self.consume(r, cdf[idx], cdf[idx + 1] - cdf[idx], last=last)
        if idx == 0:
            return table.offset - 1 - self.decode_raw()
        if last:
            return table.offset + table.symbols + self.decode_raw()
        return table.offset + idx - 1

    def check_end(self):
        """Raise if the decoder consumed more than the terminating slack allows."""
        if self.pos - len(self.data) > _SLACK:
            raise TruncatedPayload(
                f"payload of {len(self.data)} bytes is shorter than the coded stream"
            )


def rc_encode(symbols: Sequence[int], tables: Sequence[CdfTable]) -> bytes:
    if len(symbols) != len(tables):
        raise ValueError("one table per symbol is required")
    enc = RangeEncoder()
    for s, t in zip(symbols, tables):
        enc.encode(int(s), t)
    return enc.finish()


def rc_decode(data: bytes, tables: Sequence[CdfTable]) -> list[int]:
    dec = RangeDecoder(data)
    out = [dec.decode(t) for t in tables]
    dec.check_end()
    return out
