"""Dense complex third-order tensors.

Tensors are plain ``numpy`` arrays of dtype ``complex128`` and shape
``(n1, n2, n3)``. The canonical linearization is mode-1 fastest (Fortran
order); it fixes the unfolding layout, the ``.ct3`` file layout and the
bit order of sparsity masks in the codec.

Unfolding convention: the mode-``i`` unfolding has rows indexed by mode ``i``
and columns indexed by the remaining two modes taken cyclically after ``i``
(``i+1`` then ``i+2``, modulo 3), the first of them varying fastest.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

CT3_MAGIC = b"CT3\x00"
CT3_VERSION = 1

# Cyclic ordering of the remaining modes for each unfolding.
_CYCLIC = {0: (0, 1, 2), 1: (1, 2, 0), 2: (2, 0, 1)}


class ContractError(ValueError):
    """Raised when operand shapes or modes violate an operation's contract."""


class NumericError(ArithmeticError):
    """Raised when a numerical routine fails or produces non-finite values."""


class FormatError(ValueError):
    """Raised for malformed tensor files."""


def as_tensor(data) -> np.ndarray:
    t = np.asarray(data, dtype=np.complex128)
    if t.ndim != 3:
        raise ContractError(f"expected a third-order tensor, got ndim={t.ndim}")
    return t


def _check_mode(mode: int) -> int:
    if mode not in (0, 1, 2):
        raise ContractError(f"mode must be 0, 1 or 2, got {mode!r}")
    return mode


def _check_finite(t: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(t)):
        raise NumericError(f"non-finite entries in {what}")
    return t


def unfold(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding, shape ``(dims[mode], prod(other dims))``."""
    mode = _check_mode(mode)
    t = as_tensor(t)
    perm = _CYCLIC[mode]
    return np.reshape(np.transpose(t, perm), (t.shape[mode], -1), order="F")


def fold(m: np.ndarray, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    mode = _check_mode(mode)
    dims = tuple(int(d) for d in dims)
    perm = _CYCLIC[mode]
    pdims = tuple(dims[p] for p in perm)
    m = np.asarray(m)
    if m.shape != (dims[mode], int(np.prod(pdims[1:]))):
        raise ContractError(f"cannot fold matrix of shape {m.shape} into {dims}")
    return np.transpose(np.reshape(m, pdims, order="F"), np.argsort(perm))


def mode_product(t: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Contract mode ``mode`` of ``t`` with the rows of ``m``.

    ``result[.., k, ..] = sum_j t[.., j, ..] * m[j, k]``, so ``m`` has
    ``t.shape[mode]`` rows and the result has ``m.shape[1]`` entries along
    ``mode``. Applying a factor ``U`` (n x r) to an r-sized core is
    ``mode_product(g, U.T, mode)``; projecting onto it is
    ``mode_product(t, U.conj(), mode)``. See :func:`apply_factor` and
    :func:`project`.
    """
    mode = _check_mode(mode)
    t = as_tensor(t)
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != t.shape[mode]:
        raise ContractError(
            f"matrix with {m.shape[0] if m.ndim == 2 else '?'} rows cannot "
            f"contract mode {mode} of size {t.shape[mode]}"
        )
    out = np.tensordot(t, m, axes=([mode], [0]))
    return np.moveaxis(out, -1, mode)


def apply_factor(t: np.ndarray, u: np.ndarray, mode: int) -> np.ndarray:
    """``t x_mode U`` in the usual Tucker sense (U is n x r, t has r along mode)."""
    return mode_product(t, np.asarray(u).T, mode)


def project(t: np.ndarray, u: np.ndarray, mode: int) -> np.ndarray:
    """``t x_mode U^H`` (U is n x r, t has n along mode)."""
    return mode_product(t, np.asarray(u).conj(), mode)


def tucker_reconstruct(g: np.ndarray, factors) -> np.ndarray:
    """``[[g; U1, U2, U3]]``."""
    g = as_tensor(g)
    if len(factors) != 3:
        raise ContractError("need exactly three factor matrices")
    out = g
    for i, u in enumerate(factors):
        u = np.asarray(u)
        if u.ndim != 2 or u.shape[1] != g.shape[i]:
            raise ContractError(
                f"factor {i} has shape {u.shape}, core mode size is {g.shape[i]}"
            )
        out = apply_factor(out, u, i)
    return out


def project_all(t: np.ndarray, factors) -> np.ndarray:
    """``[[t; U1^H, U2^H, U3^H]]``."""
    out = as_tensor(t)
    for i, u in enumerate(factors):
        out = project(out, u, i)
    return out


def fix_phase(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-magnitude entry is real nonnegative.

    Ties go to the lowest row index.
    """
    v = np.array(vectors, dtype=np.complex128, copy=True)
    if v.size == 0:
        return v
    idx = np.argmax(np.abs(v), axis=0)
    piv = v[idx, np.arange(v.shape[1])]
    mag = np.abs(piv)
    ph = np.where(mag > 0, piv / np.where(mag > 0, mag, 1.0), 1.0)
    return v * ph.conj()[None, :]


def leading_left_singular_vectors(a: np.ndarray, r: int, mode=None) -> np.ndarray:
    try:
        u, _, _ = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        where = "" if mode is None else f" (mode {mode})"
        raise NumericError(f"SVD did not converge{where}") from exc
    if r > u.shape[1]:
        # wide-short unfoldings give fewer singular vectors than rows
        full, _, _ = np.linalg.svd(a, full_matrices=True)
        u = full
    return fix_phase(u[:, :r])


def hosvd(t: np.ndarray, ranks):
    """Truncated HOSVD. Returns ``(core, [U1, U2, U3])``."""
    t = _check_finite(as_tensor(t), "hosvd input")
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != 3 or any(r < 1 or r > n for r, n in zip(ranks, t.shape)):
        raise ContractError(f"ranks {ranks} invalid for dims {t.shape}")
    factors = [leading_left_singular_vectors(unfold(t, i), ranks[i], i) for i in range(3)]
    core = project_all(t, factors)
    return core, factors


def frobenius(t) -> float:
    return float(np.linalg.norm(np.ravel(t)))


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b||_F / ||b||_F``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    nb = frobenius(b)
    if nb == 0.0:
        raise ContractError("reference tensor has zero norm")
    return frobenius(a - b) / nb


def semi_orthogonality_error(u: np.ndarray) -> float:
    u = np.asarray(u)
    return float(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[1])))


# -- .ct3 files ------------------------------------------------------------

def dumps_ct3(t: np.ndarray) -> bytes:
    t = _check_finite(as_tensor(t), "tensor")
    head = CT3_MAGIC + struct.pack("<IIII", CT3_VERSION, *t.shape)
    body = np.ravel(t, order="F").astype("<c16").tobytes()
    return head + body


def loads_ct3(buf: bytes) -> np.ndarray:
    if len(buf) < 20 or buf[:4] != CT3_MAGIC:
        raise FormatError("not a CT3 file (bad magic)")
    version, n1, n2, n3 = struct.unpack_from("<IIII", buf, 4)
    if version != CT3_VERSION:
        raise FormatError(f"unsupported CT3 version {version}")
    count = n1 * n2 * n3
    if len(buf) != 20 + 16 * count:
        raise FormatError(
            f"CT3 payload is {len(buf) - 20} bytes, expected {16 * count}"
        )
    data = np.frombuffer(buf, dtype="<c16", count=count, offset=20)
    return np.reshape(data.astype(np.complex128), (n1, n2, n3), order="F")


def write_ct3(path, t: np.ndarray) -> None:
    Path(path).write_bytes(dumps_ct3(t))


def read_ct3(path) -> np.ndarray:
    return loads_ct3(Path(path).read_bytes())
