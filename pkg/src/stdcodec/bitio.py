"""Bit-level writer/reader (LSB-first within bytes) and Elias-gamma codes."""
from __future__ import annotations

import numpy as np


class BitstreamTruncated(EOFError):
    pass


class BitWriter:
    """Append-only bit buffer.

    Unsigned integers are written least-significant bit first. Elias-gamma
    codes are written in their natural (MSB-first) order, one bit at a time.
    """

    def __init__(self):
        self._chunks: list[np.ndarray] = []
        self._n = 0

    def __len__(self):
        return self._n

    def write_bits(self, bits):
        b = np.asarray(bits, dtype=np.uint8).ravel()
        if b.size:
            self._chunks.append(b & 1)
            self._n += b.size

    def write_uint(self, value: int, nbits: int):
        if value < 0 or (nbits < 64 and value >> nbits):
            raise ValueError(f"{value} does not fit in {nbits} bits")
        self.write_uint_array(np.array([value], dtype=np.uint64), nbits)

    def write_uint_array(self, values, nbits: int):
        v = np.asarray(values, dtype=np.uint64).ravel()
        if nbits == 0 or v.size == 0:
            return
        shifts = np.arange(nbits, dtype=np.uint64)
        bits = ((v[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)
        self.write_bits(bits.ravel())

    def write_gamma(self, x: int):
        self.write_gamma_array([x])

    def write_gamma_array(self, xs):
        xs = np.asarray(xs, dtype=np.int64).ravel()
        if xs.size == 0:
            return
        if np.any(xs < 1):
            raise ValueError("Elias-gamma codes need positive integers")
        out = []
        for x in xs.tolist():
            nb = x.bit_length()
            code = np.zeros(2 * nb - 1, dtype=np.uint8)
            code[nb - 1:] = [(x >> (nb - 1 - t)) & 1 for t in range(nb)]
            out.append(code)
        self.write_bits(np.concatenate(out))

    def bits(self) -> np.ndarray:
        if not self._chunks:
            return np.zeros(0, dtype=np.uint8)
        return np.concatenate(self._chunks)

    def to_bytes(self) -> bytes:
        return np.packbits(self.bits(), bitorder="little").tobytes()


def gamma_length(x) -> np.ndarray:
    """Code length in bits of Elias-gamma(x), vectorised."""
    x = np.asarray(x, dtype=np.int64)
    nb = np.floor(np.log2(np.maximum(x, 1))).astype(np.int64) + 1
    return 2 * nb - 1


class BitReader:
    def __init__(self, data: bytes, nbits: int | None = None):
        self._bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")
        if nbits is not None:
            if nbits > self._bits.size:
                raise BitstreamTruncated(f"need {nbits} bits, have {self._bits.size}")
            self._bits = self._bits[:nbits]
        self.pos = 0

    @property
    def remaining(self) -> int:
        return self._bits.size - self.pos

    def _take(self, n: int) -> np.ndarray:
        if n > self.remaining:
            raise BitstreamTruncated(f"read of {n} bits past end ({self.remaining} left)")
        out = self._bits[self.pos:self.pos + n]
        self.pos += n
        return out

    def read_bits(self, n: int) -> np.ndarray:
        return self._take(n).copy()

    def read_uint(self, nbits: int) -> int:
        return int(self.read_uint_array(1, nbits)[0])

    def read_uint_array(self, count: int, nbits: int) -> np.ndarray:
        if count == 0 or nbits == 0:
            return np.zeros(count, dtype=np.uint64)
        b = self._take(count * nbits).reshape(count, nbits).astype(np.uint64)
        shifts = np.arange(nbits, dtype=np.uint64)
        return (b << shifts[None, :]).sum(axis=1, dtype=np.uint64)

    def read_gamma(self) -> int:
        rest = self._bits[self.pos:]
        ones = np.flatnonzero(rest)
        if ones.size == 0:
            raise BitstreamTruncated("unterminated Elias-gamma prefix")
        nz = int(ones[0])
        self.pos += nz
        payload = self._take(nz + 1)
        x = 0
        for bit in payload.tolist():
            x = (x << 1) | bit
        return x
