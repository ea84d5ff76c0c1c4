"""Complex Givens parameterization of semi-orthogonal factor matrices.

An ``n x r`` factor with orthonormal columns is written as

    U = (prod_{i=1..r} prod_{j=i+1..n} G_ij) I_bar

where ``G_ij`` acts on rows ``i, j`` with the block
``[[cos eta, e^{1j theta} sin eta], [-e^{-1j theta} sin eta, cos eta]]`` and
``I_bar`` is the top ``r x r`` identity. Angle ``k`` (0-based) belongs to the
pair ``(i, j)`` in column-major order: ``i`` ascending, ``j`` ascending.

The decomposition eliminates column ``i`` below the diagonal with
``G_ij^H``. Each elimination keeps the pivot's phase, so a factor is
exactly representable only when every pivot is real nonnegative at the
moment its column is eliminated. :func:`normalize_column_phases` finds the
column phases that achieve this (by running the elimination once and
reading the phases left on the diagonal) and folds their inverses into the
core.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .tensor import ContractError, semi_orthogonality_error

TWO_PI = 2.0 * np.pi


class PhaseNormalizationError(ContractError):
    """Elimination left a residual: the factor was not phase-normalized."""


class DegenerateFactorError(ContractError):
    """A factor column has zero norm."""


def n_rotations(n: int, r: int) -> int:
    return (2 * n - r - 1) * r // 2


def rotation_index(n: int, i: int, j: int) -> int:
    """1-based index ``k`` of the pair ``(i, j)`` (1-based, ``i < j``)."""
    return (2 * n - i) * (i - 1) // 2 + j - i


@dataclass
class GivensParams:
    n: int
    r: int
    etas: np.ndarray
    thetas: np.ndarray
    phase_absorbed: bool = True

    def __post_init__(self):
        self.etas = np.asarray(self.etas, dtype=np.float64)
        self.thetas = np.asarray(self.thetas, dtype=np.float64)
        m = n_rotations(self.n, self.r)
        if self.etas.shape != (m,) or self.thetas.shape != (m,):
            raise ContractError(
                f"expected {m} angle pairs for a {self.n}x{self.r} factor, "
                f"got {self.etas.shape} / {self.thetas.shape}"
            )

    @property
    def n_real_params(self) -> int:
        return self.etas.size + self.thetas.size


@njit(cache=True)
def _eliminate(x, etas, thetas, follow_phase):
    # follow_phase=False assumes every pivot is real nonnegative (true for a
    # phase-normalized factor) and ignores the round-off phase of the pivot,
    # which is ill-conditioned when the pivot is tiny.
    n, r = x.shape
    k = 0
    for i in range(r):
        for j in range(i + 1, n):
            a = x[i, i]
            b = x[j, i]
            ab = abs(b)
            if ab == 0.0:
                etas[k] = 0.0
                thetas[k] = 0.0
                k += 1
                continue
            aa = abs(a)
            eta = np.arctan2(ab, aa)
            pa = a / aa if (follow_phase and aa > 0.0) else 1.0 + 0.0j
            # e^{j theta} = -(|b| / b) * (a / |a|)
            eth = -(ab / b) * pa
            th = np.angle(eth)
            if th < 0.0:
                th += 2.0 * np.pi
            etas[k] = eta
            thetas[k] = th
            c = np.cos(eta)
            s = np.sin(eta)
            eth = np.exp(1j * th)
            for col in range(i, r):
                xi = x[i, col]
                xj = x[j, col]
                x[i, col] = c * xi - eth * s * xj
                x[j, col] = np.conj(eth) * s * xi + c * xj
            k += 1
    return x


@njit(cache=True)
def _rebuild(n, r, etas, thetas):
    x = np.zeros((n, r), dtype=np.complex128)
    for d in range(r):
        x[d, d] = 1.0
    k = etas.shape[0] - 1
    for i in range(r - 1, -1, -1):
        for j in range(n - 1, i, -1):
            eta = etas[k]
            if eta != 0.0:
                c = np.cos(eta)
                s = np.sin(eta)
                eth = np.exp(1j * thetas[k])
                for col in range(i, r):
                    xi = x[i, col]
                    xj = x[j, col]
                    x[i, col] = c * xi + eth * s * xj
                    x[j, col] = -np.conj(eth) * s * xi + c * xj
            k -= 1
    return x


def _eliminate_copy(u: np.ndarray, follow_phase: bool = True):
    u = np.ascontiguousarray(u, dtype=np.complex128)
    n, r = u.shape
    m = n_rotations(n, r)
    etas = np.zeros(m)
    thetas = np.zeros(m)
    x = _eliminate(u.copy(), etas, thetas, follow_phase)
    return x, etas, thetas


def _check_factor(u: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    u = np.asarray(u, dtype=np.complex128)
    if u.ndim != 2 or u.shape[1] > u.shape[0] or u.shape[1] < 1:
        raise ContractError(f"factor must be n x r with 1 <= r <= n, got {u.shape}")
    err = semi_orthogonality_error(u)
    if err > tol:
        raise ContractError(f"factor is not semi-orthogonal (||U^H U - I||_F = {err:.2e})")
    return u


def residual_phases(u: np.ndarray) -> np.ndarray:
    """Unit phases left on the diagonal after eliminating ``u``."""
    x, _, _ = _eliminate_copy(u)
    d = np.diag(x).copy()
    mag = np.abs(d)
    if np.any(mag < 0.5):
        raise DegenerateFactorError("factor column collapsed during elimination")
    return d / mag


def normalize_column_phases(u: np.ndarray, core: np.ndarray, mode: int):
    """Make ``u`` exactly Givens-representable; absorb the phases into ``core``.

    Returns ``(u', core')`` with ``[[core'; .., u', ..]] == [[core; .., u, ..]]``.
    """
    u = np.asarray(u, dtype=np.complex128)
    if np.any(np.linalg.norm(u, axis=0) == 0):
        raise DegenerateFactorError("zero column in factor")
    ph = residual_phases(_check_factor(u))
    u_new = u * ph.conj()[None, :]
    shape = [1, 1, 1]
    shape[mode] = ph.size
    core_new = np.asarray(core) * ph.reshape(shape)
    return u_new, core_new


def givens_decompose(u: np.ndarray) -> GivensParams:
    """Angles of a phase-normalized semi-orthogonal factor."""
    u = _check_factor(u)
    n, r = u.shape
    x, etas, thetas = _eliminate_copy(u, follow_phase=False)
    resid = np.linalg.norm(x - np.eye(n, r))
    if resid > 1e-8:
        raise PhaseNormalizationError(
            f"elimination residual {resid:.2e}; normalize column phases first"
        )
    return GivensParams(n, r, etas, thetas, True)


def givens_reconstruct(p: GivensParams) -> np.ndarray:
    """Apply the stored rotations to ``I_bar``. Any angle values are accepted."""
    return _rebuild(p.n, p.r, np.ascontiguousarray(p.etas, dtype=np.float64),
                    np.ascontiguousarray(p.thetas, dtype=np.float64))


def rebuild_from_angles(n: int, r: int, etas, thetas) -> np.ndarray:
    return _rebuild(n, r, np.ascontiguousarray(etas, dtype=np.float64),
                    np.ascontiguousarray(thetas, dtype=np.float64))
