"""Quantization and bitstream coding of the decomposition parts.

* Sparse tensors are stored as a position mask plus quantized nonzero values.
* Dense tensors (used by the raw-factor and Tucker-truncation baselines) are
  stored as quantized values only.
* Givens angle streams use a two-pass code: a significance pass that
  run-length codes the small rotation angles as zero runs (Elias-gamma gap
  lengths) and a refinement pass that stores the surviving angle pairs at a
  fixed bit width.

All real values are quantized by a midrise uniform quantizer with ``2**bits``
cells over ``[-scale, scale]`` where ``scale`` is the largest component
magnitude, so each decoded component is within ``scale / 2**bits``.
"""
from __future__ import annotations

import struct
from dataclasses import asdict, dataclass

import numpy as np

from .bitio import BitReader, BitWriter, gamma_length
from .givens import GivensParams, n_rotations, rebuild_from_angles
from .tensor import ContractError

HALF_PI = 0.5 * np.pi
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class QuantizerSpec:
    """Bit budget for stage-two coding.

    ``angle_bits`` is the largest width the angle coder may use; it picks the
    cheapest width and threshold that keep every factor within
    ``rle_rel_err_target`` relative Frobenius error.
    """

    bits_per_component: int = 16
    angle_bits: int = 16
    rle_rel_err_target: float = 0.01

    def __post_init__(self):
        for name in ("bits_per_component", "angle_bits"):
            b = getattr(self, name)
            if not isinstance(b, (int, np.integer)) or not 1 <= b <= 32:
                raise ContractError(f"{name} must be an integer in [1, 32], got {b!r}")
        if not self.rle_rel_err_target > 0:
            raise ContractError("rle_rel_err_target must be positive")

    def to_dict(self):
        return asdict(self)


# -- scalar quantizers -------------------------------------------------------

def quantize_uniform(x, scale: float, bits: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    levels = 1 << bits
    if scale <= 0:
        return np.zeros(x.shape, dtype=np.uint64)
    idx = np.floor((x + scale) / (2.0 * scale) * levels)
    return np.clip(idx, 0, levels - 1).astype(np.uint64)


def dequantize_uniform(idx, scale: float, bits: int) -> np.ndarray:
    idx = np.asarray(idx, dtype=np.float64)
    if scale <= 0:
        return np.zeros(idx.shape)
    step = 2.0 * scale / (1 << bits)
    return -scale + (idx + 0.5) * step


def _split(z: np.ndarray) -> np.ndarray:
    """Complex vector -> interleaved (re, im) reals."""
    out = np.empty(2 * z.size)
    out[0::2] = z.real
    out[1::2] = z.imag
    return out


def _join(x: np.ndarray) -> np.ndarray:
    return x[0::2] + 1j * x[1::2]


def _max_component(z: np.ndarray) -> float:
    if z.size == 0:
        return 0.0
    return float(max(np.abs(z.real).max(), np.abs(z.imag).max()))


# -- value payloads ----------------------------------------------------------

@dataclass
class SparsePayload:
    """Quantized sparse tensor: Fortran-order mask plus value indices.

    ``values`` holds quantizer indices, interleaved (re, im) in mask order.
    """

    dims: tuple
    mask: np.ndarray
    values: np.ndarray
    scale: float
    bits: int

    @property
    def nnz(self) -> int:
        return int(self.mask.sum())

    def bit_cost(self) -> int:
        """Mask bits plus value bits (the scale/width prefix is counted separately)."""
        return int(np.prod(self.dims)) + self.values.size * self.bits

    def write(self, w: BitWriter):
        w.write_uint(struct.unpack("<Q", struct.pack("<d", self.scale))[0], 64)
        w.write_uint(self.bits, 6)
        w.write_bits(self.mask.astype(np.uint8))
        w.write_uint_array(self.values, self.bits)

    @classmethod
    def read(cls, r: BitReader, dims) -> "SparsePayload":
        scale = struct.unpack("<d", struct.pack("<Q", r.read_uint(64)))[0]
        bits = r.read_uint(6)
        mask = r.read_bits(int(np.prod(dims))).astype(bool)
        values = r.read_uint_array(2 * int(mask.sum()), bits)
        return cls(tuple(dims), mask, values, scale, bits)


def encode_sparse(t: np.ndarray, q: QuantizerSpec) -> SparsePayload:
    t = np.asarray(t, dtype=np.complex128)
    flat = t.ravel(order="F")
    mask = flat != 0
    nz = flat[mask]
    scale = _max_component(nz)
    idx = quantize_uniform(_split(nz), scale, q.bits_per_component)
    return SparsePayload(t.shape, mask, idx, scale, q.bits_per_component)


def decode_sparse(p: SparsePayload) -> np.ndarray:
    flat = np.zeros(int(np.prod(p.dims)), dtype=np.complex128)
    flat[p.mask] = _join(dequantize_uniform(p.values, p.scale, p.bits))
    return flat.reshape(p.dims, order="F")


@dataclass
class DensePayload:
    dims: tuple
    values: np.ndarray
    scale: float
    bits: int

    def bit_cost(self) -> int:
        return self.values.size * self.bits

    def write(self, w: BitWriter):
        w.write_uint(struct.unpack("<Q", struct.pack("<d", self.scale))[0], 64)
        w.write_uint(self.bits, 6)
        w.write_uint_array(self.values, self.bits)

    @classmethod
    def read(cls, r: BitReader, dims) -> "DensePayload":
        scale = struct.unpack("<d", struct.pack("<Q", r.read_uint(64)))[0]
        bits = r.read_uint(6)
        values = r.read_uint_array(2 * int(np.prod(dims)), bits)
        return cls(tuple(dims), values, scale, bits)


def encode_dense(t: np.ndarray, q: QuantizerSpec) -> DensePayload:
    t = np.asarray(t, dtype=np.complex128)
    flat = t.ravel(order="F")
    scale = _max_component(flat)
    idx = quantize_uniform(_split(flat), scale, q.bits_per_component)
    return DensePayload(t.shape, idx, scale, q.bits_per_component)


def decode_dense(p: DensePayload) -> np.ndarray:
    flat = _join(dequantize_uniform(p.values, p.scale, p.bits))
    return flat.reshape(p.dims, order="F")


# -- angle streams -----------------------------------------------------------

def quantize_eta(eta, bits):
    levels = 1 << bits
    idx = np.floor(np.asarray(eta) / HALF_PI * levels)
    return np.clip(idx, 0, levels - 1).astype(np.uint64)


def dequantize_eta(idx, bits):
    return (np.asarray(idx, dtype=np.float64) + 0.5) * (HALF_PI / (1 << bits))


def quantize_theta(theta, bits):
    levels = 1 << bits
    idx = np.round(np.mod(theta, TWO_PI) / TWO_PI * levels)
    return (idx.astype(np.int64) % levels).astype(np.uint64)


def dequantize_theta(idx, bits):
    return np.asarray(idx, dtype=np.float64) * (TWO_PI / (1 << bits))


@dataclass
class AngleCode:
    """Coded angle stream for one factor.

    ``exponent`` is ``None`` for the raw layout (every pair stored), otherwise
    the threshold is ``2.0 ** exponent`` and only pairs with ``eta >= tau``
    are stored, preceded by their run-length coded positions.
    """

    n: int
    r: int
    bits: int
    exponent: int | None
    positions: np.ndarray
    eta_idx: np.ndarray
    theta_idx: np.ndarray

    @property
    def count(self) -> int:
        return n_rotations(self.n, self.r)

    def bit_cost(self) -> int:
        return _stream_bits(self.count, self.positions, self.bits, self.exponent is not None)

    def write(self, w: BitWriter):
        w.write_uint(self.bits, 6)
        if self.exponent is None:
            w.write_uint(0, 1)
        else:
            w.write_uint(1, 1)
            w.write_uint(self.exponent + 128, 8)
            w.write_gamma_array(_gaps(self.positions, self.count) + 1)
        w.write_uint_array(self.eta_idx, self.bits)
        w.write_uint_array(self.theta_idx, self.bits)

    @classmethod
    def read(cls, r: BitReader, n: int, rr: int) -> "AngleCode":
        count = n_rotations(n, rr)
        bits = r.read_uint(6)
        if r.read_uint(1) == 0:
            exponent = None
            positions = np.arange(count)
        else:
            exponent = r.read_uint(8) - 128
            pos = []
            cursor = 0
            while True:
                cursor += r.read_gamma() - 1
                if cursor >= count:
                    break
                pos.append(cursor)
                cursor += 1
            if cursor != count:
                raise ContractError("angle stream run lengths overrun the rotation count")
            positions = np.asarray(pos, dtype=np.int64)
        eta_idx = r.read_uint_array(positions.size, bits)
        theta_idx = r.read_uint_array(positions.size, bits)
        return cls(n, rr, bits, exponent, positions, eta_idx, theta_idx)


def _gaps(positions: np.ndarray, count: int) -> np.ndarray:
    """Zero-run lengths before each survivor, plus the trailing run."""
    p = np.asarray(positions, dtype=np.int64)
    prev = np.concatenate([[-1], p])
    gaps = np.diff(prev) - 1
    trailing = count - 1 - (p[-1] if p.size else -1)
    return np.concatenate([gaps, [trailing]]).astype(np.int64)


def _stream_bits(count, positions, bits, thresholded) -> int:
    n = 7 + 2 * bits * len(positions)
    if thresholded:
        n += 8 + int(gamma_length(_gaps(positions, count) + 1).sum())
    return n


def decode_angles(code: AngleCode) -> GivensParams:
    etas = np.zeros(code.count)
    thetas = np.zeros(code.count)
    etas[code.positions] = dequantize_eta(code.eta_idx, code.bits)
    thetas[code.positions] = dequantize_theta(code.theta_idx, code.bits)
    return GivensParams(code.n, code.r, etas, thetas, True)


def _trial(p: GivensParams, positions, bits):
    ei = quantize_eta(p.etas[positions], bits)
    ti = quantize_theta(p.thetas[positions], bits)
    etas = np.zeros_like(p.etas)
    thetas = np.zeros_like(p.thetas)
    etas[positions] = dequantize_eta(ei, bits)
    thetas[positions] = dequantize_theta(ti, bits)
    return ei, ti, rebuild_from_angles(p.n, p.r, etas, thetas)


def encode_angles(p: GivensParams, q: QuantizerSpec, reference: np.ndarray | None = None) -> AngleCode:
    """Choose the cheapest (threshold, width) pair meeting the error target.

    Candidates are every power-of-two threshold that changes the survivor set
    plus the unthresholded layout; for each, the smallest width up to
    ``q.angle_bits`` that passes a trial reconstruction is found by bisection.
    If nothing passes, the raw layout at ``q.angle_bits`` is used.
    """
    n, r, count = p.n, p.r, p.etas.size
    if reference is None:
        reference = rebuild_from_angles(n, r, p.etas, p.thetas)
    ref_norm = np.linalg.norm(reference)
    target = q.rle_rel_err_target

    def rel_err(u):
        return np.linalg.norm(u - reference) / ref_norm

    all_pos = np.arange(count)
    candidates = [(None, all_pos)]
    nz = p.etas[p.etas > 0]
    if nz.size:
        e_hi = int(np.floor(np.log2(nz.max())))
        e_lo = max(int(np.floor(np.log2(nz.min()))), -120)
        seen = set()
        for e in range(e_hi, e_lo - 1, -1):
            pos = np.flatnonzero(p.etas >= 2.0 ** e)
            key = pos.size
            if key in seen:
                continue
            seen.add(key)
            candidates.append((e, pos))
    else:
        candidates.append((0, np.zeros(0, dtype=np.int64)))

    best = None
    for exponent, pos in candidates:
        thresholded = exponent is not None
        # the cheapest conceivable stream for this candidate, at width 1
        if best is not None and _stream_bits(count, pos, 1, thresholded) >= best[0]:
            continue
        lo, hi = 1, q.angle_bits
        ei, ti, u = _trial(p, pos, hi)
        if rel_err(u) > target:
            continue
        good = (hi, ei, ti)
        while lo < hi:
            mid = (lo + hi) // 2
            ei, ti, u = _trial(p, pos, mid)
            if rel_err(u) <= target:
                hi = mid
                good = (mid, ei, ti)
            else:
                lo = mid + 1
        cost = _stream_bits(count, pos, good[0], thresholded)
        if best is None or cost < best[0]:
            best = (cost, exponent, pos, good)
    if best is None:
        ei, ti, _ = _trial(p, all_pos, q.angle_bits)
        return AngleCode(n, r, q.angle_bits, None, all_pos, ei, ti)
    _, exponent, pos, (bits, ei, ti) = best
    return AngleCode(n, r, bits, exponent, np.asarray(pos, dtype=np.int64), ei, ti)
