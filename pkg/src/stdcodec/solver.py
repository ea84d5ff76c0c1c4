"""Sparse Tucker decomposition solved by accelerated proximal BCD.

Model::

    min  1/2 ||V - S - [[G; U1, U2, U3]]||_F^2
    s.t. Ui^H Ui = I,  nnz(G) <= alpha1,  nnz(S) <= alpha2

Each sweep updates the core, the three factors (each followed by an inertial
extrapolation with weight ``beta``) and the sparse residual, in that order.
The solver works on ``V / ||V||_F`` so that the automatic step sizes do not
depend on the data scale; results are scaled back on return.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .tensor import (
    ContractError,
    NumericError,
    as_tensor,
    frobenius,
    hosvd,
    project_all,
    tucker_reconstruct,
    unfold,
)

EPS_FLOOR = 1e-6


class DivergenceError(NumericError):
    """The objective grew past the divergence threshold (bad step sizes)."""


def _floor_count(s: float, n: int) -> int:
    # guard against 0.3 * 10 == 2.9999999999999996
    return int(math.floor(s * n + 1e-9))


@dataclass
class StdConfig:
    ranks: tuple = (2, 6, 8)
    s1: float = 0.5
    s2: float = 0.0
    beta: float = 0.3
    eta: object = "auto"  # "auto" or {"G": .., "S": .., "U": [.., .., ..]}
    max_iters: int = 50
    tol: float = 1e-4
    seed: int = 0
    eta_refresh: int = 10
    window: int = 3

    def __post_init__(self):
        self.ranks = tuple(int(r) for r in self.ranks)
        if len(self.ranks) != 3 or min(self.ranks) < 1:
            raise ContractError(f"ranks must be three positive integers: {self.ranks}")
        if not 0.0 < self.s1 <= 1.0:
            raise ContractError(f"s1 must lie in (0, 1], got {self.s1}")
        if not 0.0 <= self.s2 <= 1.0:
            raise ContractError(f"s2 must lie in [0, 1], got {self.s2}")
        if not 0.0 <= self.beta < 1.0:
            raise ContractError(f"beta must lie in [0, 1), got {self.beta}")
        if self.eta != "auto":
            eta = dict(self.eta)
            vals = [eta["G"], eta["S"], *eta["U"]]
            if len(eta["U"]) != 3 or min(vals) <= 0:
                raise ContractError("explicit step sizes must be positive (G, S, U x3)")
            self.eta = {"G": float(eta["G"]), "S": float(eta["S"]),
                        "U": [float(x) for x in eta["U"]]}
        if self.max_iters < 1 or self.window < 1 or self.eta_refresh < 1:
            raise ContractError("max_iters, window and eta_refresh must be >= 1")
        if self.alpha1 < 1:
            raise ContractError(f"s1={self.s1} leaves no core entries at ranks {self.ranks}")

    @property
    def alpha1(self) -> int:
        r1, r2, r3 = self.ranks
        return _floor_count(self.s1, r1 * r2 * r3)

    def alpha2(self, dims) -> int:
        return _floor_count(self.s2, int(np.prod(dims)))

    def to_dict(self) -> dict:
        eta = {"auto": True} if self.eta == "auto" else {"values": self.eta}
        return {"ranks": list(self.ranks), "s1": self.s1, "s2": self.s2,
                "beta": self.beta, "eta": eta, "max_iters": self.max_iters,
                "tol": self.tol, "seed": self.seed}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "StdConfig":
        d = dict(d)
        eta = d.pop("eta", "auto")
        if isinstance(eta, dict):
            eta = "auto" if eta.get("auto") else eta["values"]
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown StdConfig keys: {sorted(unknown)}")
        return cls(eta=eta, **d)

    @classmethod
    def from_json(cls, text: str) -> "StdConfig":
        return cls.from_dict(json.loads(text))


@dataclass
class SparseTucker:
    core: np.ndarray
    factors: list
    sparse: np.ndarray
    factors_bar: list
    iteration: int = 0
    rank_deficient: bool = False

    @property
    def dims(self):
        return self.sparse.shape

    @property
    def ranks(self):
        return self.core.shape

    def low_rank(self) -> np.ndarray:
        return tucker_reconstruct(self.core, self.factors)

    def reconstruct(self) -> np.ndarray:
        return self.sparse + self.low_rank()

    def copy(self) -> "SparseTucker":
        return SparseTucker(self.core.copy(), [u.copy() for u in self.factors],
                            self.sparse.copy(), [u.copy() for u in self.factors_bar],
                            self.iteration, self.rank_deficient)

    def scaled(self, c: float) -> "SparseTucker":
        out = self.copy()
        out.core *= c
        out.sparse *= c
        return out


@dataclass
class DescentTrace:
    objective: list = field(default_factory=list)
    aux: list = field(default_factory=list)
    step_sq: list = field(default_factory=list)
    rel_err: list = field(default_factory=list)
    ubar_gap: list = field(default_factory=list)
    eta_G: list = field(default_factory=list)

    def append(self, objective, aux, step_sq, rel_err, ubar_gap, eta_g):
        vals = (objective, aux, step_sq, rel_err, ubar_gap)
        if not all(math.isfinite(x) for x in vals):
            raise NumericError(f"non-finite trace record {vals}")
        self.objective.append(float(objective))
        self.aux.append(float(aux))
        self.step_sq.append(float(step_sq))
        self.rel_err.append(float(rel_err))
        self.ubar_gap.append(float(ubar_gap))
        self.eta_G.append(float(eta_g))

    def __len__(self):
        return len(self.objective)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "objective", "H", "step_sq", "rel_err"])
        for k in range(len(self)):
            w.writerow([k, repr(self.objective[k]), repr(self.aux[k]),
                        repr(self.step_sq[k]), repr(self.rel_err[k])])
        return buf.getvalue()


@dataclass
class StepSizes:
    eta_G: float
    eta_S: float
    eta_U: list
    gamma: list
    L_G: float = 1.0
    L_S: float = 1.0
    L_U: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    M: float = EPS_FLOOR


# -- proximal operators and block updates ----------------------------------

def prox_l0_topk(t: np.ndarray, k: int) -> np.ndarray:
    """Keep the ``k`` largest-modulus entries of ``t``, zero the rest.

    Ties are broken by the canonical (mode-1 fastest) linear index, lower
    index first.
    """
    t = np.asarray(t)
    n = t.size
    k = int(k)
    if not 0 <= k <= n:
        raise ContractError(f"k={k} outside [0, {n}]")
    flat = np.ravel(t, order="F")
    if k == n:
        return t.copy()
    out = np.zeros_like(flat)
    if k:
        mags = np.abs(flat)
        thr = np.partition(mags, n - k)[n - k]
        keep = mags > thr
        ties = np.flatnonzero(mags == thr)[: k - int(keep.sum())]
        keep[ties] = True
        out[keep] = flat[keep]
    return np.reshape(out, t.shape, order="F")


def extrapolate_factor(u_new: np.ndarray, u_bar_old: np.ndarray, beta: float) -> np.ndarray:
    """Inertial step ``U + beta * (U - U_bar_old)``."""
    if np.shape(u_new) != np.shape(u_bar_old):
        raise ContractError("extrapolation operands differ in shape")
    return u_new + beta * (u_new - u_bar_old)


def polar_factor(m: np.ndarray):
    """Closest semi-orthogonal matrix ``W Q^H`` and a rank-deficiency flag."""
    try:
        w, s, qh = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError("SVD failed in factor update") from exc
    deficient = bool(s.size and s[-1] <= 1e-12 * max(s[0], 1e-300))
    return w @ qh, deficient


def _companions(state: SparseTucker, mode: int, new_bar):
    # Gauss-Seidel: modes before `mode` already carry this sweep's factors.
    return [new_bar[j] if j < mode else state.factors_bar[j] for j in range(3)]


def _partial_core(core, factors, mode):
    out = core
    for j in range(3):
        if j != mode:
            out = np.moveaxis(np.tensordot(out, factors[j].T, axes=([j], [0])), -1, j)
    return out


def update_core(state: SparseTucker, v: np.ndarray, alpha1: int, eta_G: float) -> np.ndarray:
    """Proximal core step on the extrapolated factors, then top-``alpha1``."""
    if eta_G <= 0:
        raise ContractError("eta_G must be positive")
    back = project_all(v - state.sparse, state.factors_bar)
    a = (eta_G * back + state.core) / (eta_G + 1.0)
    if not np.all(np.isfinite(a)):
        raise NumericError("non-finite core intermediate")
    return prox_l0_topk(a, alpha1)


def factor_target(state: SparseTucker, v: np.ndarray, mode: int, eta_i: float,
                  companions=None) -> np.ndarray:
    """Matrix whose polar factor solves the mode-``mode`` subproblem."""
    if companions is None:
        companions = state.factors_bar
    x = _partial_core(state.core, companions, mode)
    return unfold(v - state.sparse, mode) @ unfold(x, mode).conj().T + state.factors_bar[mode] / eta_i


def update_factor(state: SparseTucker, v: np.ndarray, mode: int, eta_i: float,
                  companions=None):
    """Closed-form factor update. Returns ``(U_new, rank_deficient)``."""
    if eta_i <= 0:
        raise ContractError("factor step size must be positive")
    return polar_factor(factor_target(state, v, mode, eta_i, companions))


def update_sparse(state: SparseTucker, v: np.ndarray, alpha2: int, eta_S: float) -> np.ndarray:
    """Proximal step on the sparse residual using the extrapolated factors."""
    if alpha2 == 0:
        return np.zeros_like(state.sparse)
    if eta_S <= 0:
        raise ContractError("eta_S must be positive")
    low = tucker_reconstruct(state.core, state.factors_bar)
    b = (eta_S * (v - low) + state.sparse) / (eta_S + 1.0)
    return prox_l0_topk(b, alpha2)


# -- step sizes ------------------------------------------------------------

def _spec_norm(a) -> float:
    return float(np.linalg.norm(a, 2)) if a.size else 0.0


def auto_step_sizes(state: SparseTucker, v: np.ndarray, beta: float = 0.0,
                    safety: float = 1.0) -> StepSizes:
    """Blockwise step sizes ``safety / (L + M)`` from local Lipschitz estimates.

    ``M`` is twice the sum of the largest residual and core unfolding norms,
    floored at 1e-6. With ``beta > 0`` the factor steps are further capped by
    the inertial-descent rule and the auxiliary weights ``gamma`` are filled.
    """
    ubar = state.factors_bar
    unorm2 = [_spec_norm(u) ** 2 for u in ubar]
    L_G = float(np.prod(unorm2))
    L_S = 1.0
    resid = v - state.sparse - tucker_reconstruct(state.core, state.factors)
    r_norm = max(_spec_norm(unfold(resid, i)) for i in range(3))
    g_norm = [_spec_norm(unfold(state.core, i)) for i in range(3)]
    M = max(2.0 * (r_norm + max(g_norm)), EPS_FLOOR)
    L_U = [g_norm[i] ** 2 * np.prod([unorm2[j] for j in range(3) if j != i])
           for i in range(3)]
    eta_G = safety / (L_G + M)
    eta_S = safety / (L_S + M)
    eta_U = [safety / (L + M) for L in L_U]
    gamma = [0.0, 0.0, 0.0]
    if beta > 0:
        b2 = beta * beta
        eps = (1.0 - b2) / (2.0 * (1.0 + b2))
        for i in range(3):
            idx = i + 1
            t_i = (1 + eps + beta * (1 - eps)) * (L_U[i] + M) * (1 + beta)
            den = 5 * b2 * M * (1 + eps) - 2 * M * idx * eps * b2 + 2 * t_i
            eta_U[i] = min(eta_U[i], (1 + eps - b2 * (1 - eps)) / den)
            gamma[i] = ((1 + b2) / (4 * eta_U[i] * b2) + (2 * M * idx - 5) / 4
                        + (L_U[i] + M) * (1 + beta) * (beta - 1) / (2 * b2))
            gamma[i] = max(gamma[i], 0.0)
    return StepSizes(eta_G, eta_S, eta_U, gamma, L_G, L_S, list(map(float, L_U)), M)


def _fixed_steps(eta: dict, beta: float) -> StepSizes:
    return StepSizes(eta["G"], eta["S"], list(eta["U"]), [0.0] * 3)


# -- driver ----------------------------------------------------------------

def objective(v, state: SparseTucker) -> float:
    return 0.5 * frobenius(v - state.reconstruct()) ** 2


def init_state(v: np.ndarray, ranks) -> SparseTucker:
    core, factors = hosvd(v, ranks)
    return SparseTucker(core, factors, np.zeros_like(v), [u.copy() for u in factors])


def _zero_state(dims, ranks) -> SparseTucker:
    factors = [np.eye(n, r, dtype=np.complex128) for n, r in zip(dims, ranks)]
    return SparseTucker(np.zeros(ranks, np.complex128), factors,
                        np.zeros(dims, np.complex128), [u.copy() for u in factors])


def _gap(state) -> float:
    return sum(frobenius(u - ub) ** 2 for u, ub in zip(state.factors, state.factors_bar))


def apbcd_solve(v: np.ndarray, cfg: StdConfig, init: SparseTucker | None = None):
    """Run the accelerated proximal BCD solver. Returns ``(state, trace)``."""
    v = as_tensor(v)
    dims = v.shape
    if any(r > n for r, n in zip(cfg.ranks, dims)):
        raise ContractError(f"ranks {cfg.ranks} exceed dims {dims}")
    alpha1 = cfg.alpha1
    alpha2 = cfg.alpha2(dims)
    trace = DescentTrace()
    scale = frobenius(v)
    if scale == 0.0:
        trace.append(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        return _zero_state(dims, cfg.ranks), trace

    vn = v / scale
    if init is None:
        state = init_state(vn, cfg.ranks)
        state.core = prox_l0_topk(state.core, alpha1)
    else:
        state = init.scaled(1.0 / scale)
    steps = (auto_step_sizes(state, vn, cfg.beta) if cfg.eta == "auto"
             else _fixed_steps(cfg.eta, cfg.beta))

    f0 = objective(vn, state)
    trace.append(f0, f0, 0.0,
                 math.sqrt(2.0 * f0), _gap(state), steps.eta_G)
    limit = 10.0 * max(f0, 1e-20)
    quiet = 0
    for it in range(1, cfg.max_iters + 1):
        if cfg.eta == "auto" and cfg.beta == 0.0 and it > 1 and (it - 1) % cfg.eta_refresh == 0:
            steps = auto_step_sizes(state, vn, 0.0)
        prev = state.copy()

        state.core = update_core(state, vn, alpha1, steps.eta_G)
        new_bar = [None, None, None]
        for i in range(3):
            comp = _companions(state, i, new_bar)
            u, deficient = update_factor(state, vn, i, steps.eta_U[i], comp)
            state.rank_deficient |= deficient
            new_bar[i] = extrapolate_factor(u, prev.factors_bar[i], cfg.beta)
            state.factors[i] = u
        state.factors_bar = new_bar
        state.sparse = update_sparse(state, vn, alpha2, steps.eta_S)
        state.iteration = it

        f = objective(vn, state)
        gap_terms = [frobenius(u - ub) ** 2 for u, ub in zip(state.factors, state.factors_bar)]
        aux = f + sum(g * d for g, d in zip(steps.gamma, gap_terms))
        step = (frobenius(state.core - prev.core) ** 2
                + sum(frobenius(a - b) ** 2 for a, b in zip(state.factors, prev.factors))
                + frobenius(state.sparse - prev.sparse) ** 2)
        re = math.sqrt(2.0 * f)
        trace.append(f, aux, step, re, sum(gap_terms), steps.eta_G)
        if f > limit:
            raise DivergenceError(
                f"objective {f:.3e} exceeded 10x its initial value at iteration {it}"
            )
        if abs(trace.rel_err[-1] - trace.rel_err[-2]) < cfg.tol:
            quiet += 1
            if quiet >= cfg.window:
                break
        else:
            quiet = 0
    return state.scaled(scale), trace
