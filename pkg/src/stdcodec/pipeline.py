"""End-to-end codec: decomposition, stage-two coding and the ``.stz`` blob.

Three methods share one container:

``STD+FC``
    sparse Tucker decomposition, factors coded as run-length coded Givens
    angles, sparse core and residual stored with position masks.
``STD``
    the same decomposition with the factors stored as raw quantized entries.
``TD``
    plain HOSVD truncation: dense core, raw factors, no residual.

For the sparse methods the core and residual are refit on their supports
after the factors have been quantized, so the quantization error of the
factors is partly compensated before the core is stored.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import blob as stz
from .bitio import BitReader, BitWriter
from .entropy import (AngleCode, DensePayload, QuantizerSpec, SparsePayload, decode_angles,
                      decode_dense, decode_sparse, encode_angles, encode_dense, encode_sparse)
from .givens import givens_decompose, givens_reconstruct, normalize_column_phases
from .solver import StdConfig, apbcd_solve, prox_l0_topk
from .tensor import (ContractError, as_tensor, frobenius, hosvd, project_all, relative_error,
                     tucker_reconstruct)

METHODS = ("STD+FC", "STD", "TD")
# solver defaults for compression: large explicit steps make each block
# update close to an exact block minimisation
PRACTICAL_ETA = {"G": 1e3, "S": 1e3, "U": [1e3, 1e3, 1e3]}


@dataclass
class CodecConfig:
    method: str = "STD+FC"
    std: StdConfig = field(default_factory=lambda: StdConfig(eta=dict(PRACTICAL_ETA), beta=0.0))
    quant: QuantizerSpec = field(default_factory=QuantizerSpec)
    dft: bool = True
    refit_rounds: int = 2

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.refit_rounds < 0:
            raise ContractError("refit_rounds must be >= 0")

    def to_dict(self) -> dict:
        return {"method": self.method, "std": self.std.to_dict(),
                "quant": self.quant.to_dict(), "dft": self.dft,
                "refit_rounds": self.refit_rounds}

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        d = dict(d)
        unknown = set(d) - {"method", "std", "quant", "dft", "refit_rounds"}
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        std = d.get("std", {})
        if "eta" not in std:
            std = {**std, "eta": {"values": dict(PRACTICAL_ETA)}}
            std.setdefault("beta", 0.0)
        return cls(method=d.get("method", "STD+FC"),
                   std=StdConfig.from_dict(std),
                   quant=QuantizerSpec(**d.get("quant", {})),
                   dft=bool(d.get("dft", True)),
                   refit_rounds=int(d.get("refit_rounds", 2)))

    @classmethod
    def from_json(cls, text: str) -> "CodecConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class CompressionResult:
    blob: bytes
    cr: float
    rel_err: float
    iterations: int
    factor_errors: list
    param_cr: float
    param_bound: float
    trace: object = None
    seconds: float = 0.0
    decoded: np.ndarray | None = None
    parts: dict | None = None  # pre-quantization core, residual and factors

    def summary(self) -> dict:
        return {"CR": self.cr, "RE": self.rel_err, "iters": self.iterations,
                "factor_errors": self.factor_errors, "bits": 8 * len(self.blob),
                "param_CR": self.param_cr, "param_bound": self.param_bound,
                "seconds": self.seconds}


# -- helpers -----------------------------------------------------------------

def raw_bits(dims, bits_per_component: int = 16) -> int:
    """Reference size of the uncompressed tensor: two components per entry."""
    return 2 * bits_per_component * int(np.prod(dims))


def compression_ratio(blob_bytes: bytes, dims, bits_per_component: int = 16) -> float:
    return 8 * len(blob_bytes) / raw_bits(dims, bits_per_component)


def parameter_bound(dims, ranks, s1: float, s2: float) -> float:
    """Upper bound on the parameter-count ratio of a sparse Tucker model."""
    n = float(np.prod(dims))
    r = float(np.prod(ranks))
    return (s1 * r + s2 * n + sum(a * b for a, b in zip(ranks, dims))) / n


def _to_domain(v, dft):
    if not dft:
        return v
    return np.fft.fft(np.fft.fft(v, axis=1, norm="ortho"), axis=2, norm="ortho")


def _from_domain(v, dft):
    if not dft:
        return v
    return np.fft.ifft(np.fft.ifft(v, axis=1, norm="ortho"), axis=2, norm="ortho")


def _section(tag, writer: BitWriter | None) -> stz.Section:
    if writer is None:
        return stz.Section(tag, b"", 0)
    return stz.Section(tag, writer.to_bytes(), len(writer))


def _write(payload) -> BitWriter:
    w = BitWriter()
    payload.write(w)
    return w


def refit(v, factors, core_mask, alpha2, rounds, sparse=None):
    """Least-squares core on a fixed support and top-``alpha2`` residual.

    Alternates the two blocks starting from ``sparse`` (the solver's
    residual). With orthonormal factors the core subproblem is a masked
    projection; raw 16-bit factors are orthonormal to well below the
    quantizer floor.
    """
    sparse = np.zeros_like(v) if sparse is None or not alpha2 else sparse
    core = np.where(core_mask, project_all(v - sparse, factors), 0)
    for _ in range(rounds):
        sparse = prox_l0_topk(v - tucker_reconstruct(core, factors), alpha2) if alpha2 else sparse
        core = np.where(core_mask, project_all(v - sparse, factors), 0)
    return core, sparse


# -- compression ---------------------------------------------------------------

def solve(v, cfg: CodecConfig):
    """The decomposition stage alone: ``(state, trace)`` in the coding domain."""
    return apbcd_solve(_to_domain(as_tensor(v), cfg.dft), cfg.std)


def compress(v, cfg: CodecConfig | None = None, keep_decoded: bool = True,
             solved=None) -> CompressionResult:
    """Run the full codec on one tensor.

    ``solved`` may carry a ``(state, trace)`` pair from :func:`solve` with the
    same tensor and decomposition settings, so that methods sharing a
    decomposition do not repeat it.
    """
    cfg = cfg or CodecConfig()
    t0 = time.perf_counter()
    v = as_tensor(v)
    dims = v.shape
    q = cfg.quant
    std = cfg.std
    if any(r > n for r, n in zip(std.ranks, dims)):
        raise ContractError(f"ranks {std.ranks} exceed dims {dims}")
    vd = _to_domain(v, cfg.dft)
    header = stz.BlobHeader(cfg.method, cfg.dft, tuple(dims), tuple(std.ranks),
                            std.s1 if cfg.method != "TD" else 1.0,
                            std.s2 if cfg.method != "TD" else 0.0,
                            q.bits_per_component, q.angle_bits, q.rle_rel_err_target)
    trace = None
    iterations = 0
    factor_errors = []

    if cfg.method == "TD":
        core, factors = hosvd(vd, std.ranks)
        sections = [_section("GCOR", _write(encode_dense(core, q))),
                    _section("SRES", None)]
        parts = {"core": core, "sparse": None, "factors": list(factors)}
        for i, u in enumerate(factors):
            p = encode_dense(u, q)
            factor_errors.append(relative_error(decode_dense(p), u))
            sections.append(_section(f"FAC{i + 1}", _write(p)))
        sections.append(_section("PHAS", None))
        n_params = int(np.prod(std.ranks)) + sum(a * b for a, b in zip(std.ranks, dims))
    else:
        state, trace = solved if solved is not None else apbcd_solve(vd, std)
        iterations = state.iteration
        core = state.core
        factors = list(state.factors)
        coded, decoded, reference = [], [], []
        for i in range(3):
            if cfg.method == "STD+FC":
                u, core = normalize_column_phases(factors[i], core, i)
                params = givens_decompose(u)
                code = encode_angles(params, q, reference=u)
                uq = givens_reconstruct(decode_angles(code))
            else:
                u = factors[i]
                code = encode_dense(u, q)
                uq = decode_dense(code)
            factor_errors.append(relative_error(uq, u))
            reference.append(u)
            coded.append(code)
            decoded.append(uq)
        mask = core != 0
        alpha2 = std.alpha2(dims)
        if cfg.refit_rounds:
            core, sparse = refit(vd, decoded, mask, alpha2, cfg.refit_rounds, state.sparse)
        else:
            sparse = state.sparse
        parts = {"core": core, "sparse": sparse if alpha2 else None, "factors": reference}
        sections = [_section("GCOR", _write(encode_sparse(core, q))),
                    _section("SRES", _write(encode_sparse(sparse, q)) if alpha2 else None)]
        for i, code in enumerate(coded):
            sections.append(_section(f"FAC{i + 1}", _write(code)))
        sections.append(_section("PHAS", None))
        n_params = (int(np.count_nonzero(core)) + int(np.count_nonzero(sparse))
                    + sum(a * b for a, b in zip(std.ranks, dims)))

    data = stz.Blob(header, sections).to_bytes()
    out = decompress(data)
    res = CompressionResult(
        blob=data,
        cr=compression_ratio(data, dims, q.bits_per_component),
        rel_err=relative_error(out, v) if frobenius(v) > 0 else frobenius(out),
        iterations=iterations,
        factor_errors=[float(e) for e in factor_errors],
        param_cr=n_params / float(np.prod(dims)),
        param_bound=parameter_bound(dims, std.ranks, header.s1, header.s2),
        trace=trace,
        seconds=time.perf_counter() - t0,
        decoded=out if keep_decoded else None,
        parts=parts if keep_decoded else None,
    )
    return res


# -- decompression -------------------------------------------------------------

def decompress(data: bytes) -> np.ndarray:
    b = stz.unpack(data)
    h = b.header
    dims, ranks = tuple(h.dims), tuple(h.ranks)
    if h.method == "RAW":
        sec = b.section("RAWV")
        return decode_dense(DensePayload.read(BitReader(sec.data, sec.bit_length), dims))

    def reader(tag):
        sec = b.section(tag)
        if sec is None:
            raise stz.BlobError(f"missing section {tag}")
        return sec, BitReader(sec.data, sec.bit_length)

    sec, r = reader("GCOR")
    if h.method == "TD":
        core = decode_dense(DensePayload.read(r, ranks))
    else:
        core = decode_sparse(SparsePayload.read(r, ranks))
    sec, r = reader("SRES")
    sparse = decode_sparse(SparsePayload.read(r, dims)) if sec.bit_length else None
    factors = []
    for i in range(3):
        sec, r = reader(f"FAC{i + 1}")
        if h.method == "STD+FC":
            factors.append(givens_reconstruct(decode_angles(AngleCode.read(r, dims[i], ranks[i]))))
        else:
            factors.append(decode_dense(DensePayload.read(r, (dims[i], ranks[i]))))
    out = tucker_reconstruct(core, factors)
    if sparse is not None:
        out = out + sparse
    return _from_domain(out, h.dft)


def raw_blob(v, q: QuantizerSpec | None = None) -> bytes:
    """Store the tensor verbatim (quantized) in a blob: the CR reference point."""
    q = q or QuantizerSpec()
    v = as_tensor(v)
    header = stz.BlobHeader("RAW", False, tuple(v.shape), (0, 0, 0), 1.0, 0.0,
                            q.bits_per_component, q.angle_bits, q.rle_rel_err_target)
    return stz.Blob(header, [_section("RAWV", _write(encode_dense(v, q)))]).to_bytes()


def td_baseline(v, ranks, q: QuantizerSpec | None = None):
    """HOSVD truncation baseline. Returns ``(blob bytes, decoded tensor)``."""
    cfg = CodecConfig("TD", StdConfig(ranks=ranks, s1=1.0, s2=0.0), q or QuantizerSpec(), dft=False)
    res = compress(v, cfg)
    return res.blob, res.decoded


def _payload_prefix_bits() -> int:
    return 64 + 6  # scale + width


def cr_bounds(method: str, dims, ranks, s1: float, s2: float, q: QuantizerSpec | None = None):
    """``(low, high)`` CR range a configuration can produce, without running it.

    Exact up to section padding for ``STD`` and ``TD`` when the core and the
    residual fill their sparsity budgets; for ``STD+FC`` the factor streams
    range from empty to raw angles at ``q.angle_bits``.
    """
    q = q or QuantizerSpec()
    b = q.bits_per_component
    n = int(np.prod(dims))
    rr = int(np.prod(ranks))
    n_sections = 6
    header = stz.Blob(stz.BlobHeader(), [None] * n_sections).header_bits()
    pre = _payload_prefix_bits()
    if method == "TD":
        fixed = pre + 2 * b * rr
        sparse_bits = 0
    else:
        cfg = StdConfig(ranks=ranks, s1=s1, s2=s2)
        fixed = pre + rr + 2 * b * cfg.alpha1
        a2 = cfg.alpha2(dims)
        sparse_bits = pre + n + 2 * b * a2 if a2 else 0
    if method == "STD+FC":
        from .givens import n_rotations
        lo_f = sum(7 for _ in dims)
        hi_f = sum(7 + 2 * q.angle_bits * n_rotations(d, r) for d, r in zip(dims, ranks))
    else:
        lo_f = hi_f = sum(pre + 2 * b * d * r for d, r in zip(dims, ranks))
    base = header + fixed + sparse_bits
    ref = raw_bits(dims, b)
    return (base + lo_f) / ref, (base + hi_f + 8 * n_sections) / ref
