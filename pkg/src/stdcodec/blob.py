"""The ``.stz`` container.

Layout (all little-endian)::

    magic      4s   b"STZ1"
    version    u16
    header     fixed struct (see ``_HEADER``)
    n_sections u32
    crc32      u32  over everything above
    table      n_sections x (tag 4s, offset u32, bit_length u32, crc32 u32)
    crc32      u32  over the table
    payload    sections, each padded to a whole byte

Offsets are measured from the start of the payload area. The CRC covers the
padded section bytes.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

MAGIC = b"STZ1"
VERSION = 1

METHODS = {"STD+FC": 0, "STD": 1, "TD": 2, "RAW": 3}
METHOD_NAMES = {v: k for k, v in METHODS.items()}

FLAG_DFT = 1

# method, flags, dims[3], ranks[3], s1, s2, value bits, angle bits, rle target
_HEADER = struct.Struct("<BB3I3IddBBd")
_PREFIX = struct.Struct("<4sH")
_COUNT = struct.Struct("<I")
_ENTRY = struct.Struct("<4sIII")


class BlobError(ValueError):
    code = "blob"


class BadMagicError(BlobError):
    code = "bad-magic"


class UnsupportedVersionError(BlobError):
    code = "unsupported-version"


class ChecksumError(BlobError):
    code = "checksum"


class TruncatedBlobError(BlobError):
    code = "truncated"


@dataclass
class BlobHeader:
    method: str = "STD+FC"
    dft: bool = False
    dims: tuple = (0, 0, 0)
    ranks: tuple = (0, 0, 0)
    s1: float = 0.0
    s2: float = 0.0
    bits: int = 16
    angle_bits: int = 16
    rle_target: float = 0.01

    def pack(self) -> bytes:
        return _HEADER.pack(
            METHODS[self.method], FLAG_DFT if self.dft else 0,
            *self.dims, *self.ranks, self.s1, self.s2,
            self.bits, self.angle_bits, self.rle_target,
        )

    @classmethod
    def unpack(cls, raw: bytes) -> "BlobHeader":
        f = _HEADER.unpack(raw)
        if f[0] not in METHOD_NAMES:
            raise BlobError(f"unknown method code {f[0]}")
        return cls(METHOD_NAMES[f[0]], bool(f[1] & FLAG_DFT), tuple(f[2:5]),
                   tuple(f[5:8]), f[8], f[9], f[10], f[11], f[12])


@dataclass
class Section:
    tag: str
    data: bytes
    bit_length: int

    def __post_init__(self):
        if len(self.tag.encode()) != 4:
            raise ValueError(f"section tag must be 4 ASCII chars, got {self.tag!r}")
        if not 0 <= self.bit_length <= 8 * len(self.data) or (len(self.data) * 8 - self.bit_length) >= 8:
            raise ValueError(f"bit length {self.bit_length} inconsistent with {len(self.data)} bytes")


@dataclass
class Blob:
    header: BlobHeader
    sections: list = field(default_factory=list)

    def section(self, tag: str) -> Section | None:
        for s in self.sections:
            if s.tag == tag:
                return s
        return None

    def header_bits(self) -> int:
        return 8 * (_PREFIX.size + _HEADER.size + 2 * _COUNT.size
                    + _ENTRY.size * len(self.sections) + _COUNT.size)

    def bit_size(self) -> int:
        return self.header_bits() + sum(8 * len(s.data) for s in self.sections)

    def to_bytes(self) -> bytes:
        head = _PREFIX.pack(MAGIC, VERSION) + self.header.pack() + _COUNT.pack(len(self.sections))
        table = []
        offset = 0
        for s in self.sections:
            table.append(_ENTRY.pack(s.tag.encode(), offset, s.bit_length, zlib.crc32(s.data)))
            offset += len(s.data)
        table = b"".join(table)
        out = [head, _COUNT.pack(zlib.crc32(head)), table, _COUNT.pack(zlib.crc32(table))]
        out.extend(s.data for s in self.sections)
        return b"".join(out)


def pack(blob: Blob) -> bytes:
    return blob.to_bytes()


def unpack(data: bytes) -> Blob:
    data = bytes(data)
    need = _PREFIX.size
    if len(data) < need:
        raise TruncatedBlobError("stream shorter than the magic/version prefix")
    magic, version = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"blob version {version} (supported: {VERSION})")
    pos = _PREFIX.size
    if len(data) < pos + _HEADER.size + 2 * _COUNT.size:
        raise TruncatedBlobError("stream ends inside the header")
    end = pos + _HEADER.size + _COUNT.size
    if zlib.crc32(data[:end]) != _COUNT.unpack_from(data, end)[0]:
        raise ChecksumError("header checksum mismatch")
    header = BlobHeader.unpack(data[pos:pos + _HEADER.size])
    (count,) = _COUNT.unpack_from(data, end - _COUNT.size)
    pos = end + _COUNT.size
    table_end = pos + count * _ENTRY.size
    if len(data) < table_end + _COUNT.size:
        raise TruncatedBlobError("stream ends inside the section table")
    if zlib.crc32(data[pos:table_end]) != _COUNT.unpack_from(data, table_end)[0]:
        raise ChecksumError("section table checksum mismatch")
    entries = [_ENTRY.unpack_from(data, pos + i * _ENTRY.size) for i in range(count)]
    base = table_end + _COUNT.size
    sections = []
    for k, (tag, offset, bit_length, crc) in enumerate(entries):
        nbytes = (bit_length + 7) // 8
        start = base + offset
        if start + nbytes > len(data):
            raise TruncatedBlobError(f"section {tag!r} runs past the end of the stream")
        chunk = data[start:start + nbytes]
        if zlib.crc32(chunk) != crc:
            raise ChecksumError(f"checksum mismatch in section {tag!r}")
        sections.append(Section(tag.decode("ascii", errors="replace"), chunk, bit_length))
    expected = base + sum((e[2] + 7) // 8 for e in entries)
    if len(data) != expected:
        raise BlobError(f"{len(data) - expected} unexpected trailing bytes")
    return Blob(header, sections)
