"""MU-MIMO evaluation: synthetic channels, eigen-based ZF weights, rates.

Array conventions
-----------------
* ``ChannelSet.H``: ``(K, J * rb_size, N_u, N_t)``, one matrix per user and RE.
* ``WeightSet.V``: ``(K, r, N_t, J)``; ``V[k]`` is the per-user weight tensor.
  Row ``l`` of ``V[k][:, :, j]`` is the conjugate transpose of the ``l``-th
  dominant eigenvector of the RB Gram matrix, so that the precoder
  ``W = V^H (V V^H)^-1`` steers along the eigenvectors.
* ``WeightSet.W``: ``(K, J, N_t, r)``.

Precoder columns are normalized to unit norm before any rate evaluation,
for reference and compressed weights alike.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import stream
from .tensor import ContractError, NumericError, fix_phase, read_ct3, write_ct3


@dataclass
class ChannelSet:
    H: np.ndarray
    noise: np.ndarray  # (K, J * rb_size)
    r: int
    snr_db: float = 20.0
    rb_size: int = 1

    def __post_init__(self):
        if self.H.ndim != 4:
            raise ContractError("H must have shape (K, REs, N_u, N_t)")
        if not np.all(np.isfinite(self.H)):
            raise NumericError("non-finite channel entries")
        if self.r > min(self.N_u, self.N_t):
            raise ContractError(f"r={self.r} exceeds min(N_u, N_t)")
        if self.H.shape[1] % self.rb_size:
            raise ContractError("RE count is not a multiple of rb_size")
        if np.any(self.noise <= 0):
            raise ContractError("noise powers must be positive")

    @property
    def K(self):
        return self.H.shape[0]

    @property
    def n_re(self):
        return self.H.shape[1]

    @property
    def J(self):
        return self.H.shape[1] // self.rb_size

    @property
    def N_u(self):
        return self.H.shape[2]

    @property
    def N_t(self):
        return self.H.shape[3]


@dataclass
class WeightSet:
    V: np.ndarray  # (K, r, N_t, J)
    W: np.ndarray  # (K, J, N_t, r)

    def tensor(self, k: int) -> np.ndarray:
        return self.V[k]


def _steering(n: int, angles) -> np.ndarray:
    # half-wavelength ULA; shape (len(angles), n)
    return np.exp(1j * np.pi * np.outer(np.sin(angles), np.arange(n)))


def synth_channels(K=4, J=32, N_t=32, N_u=4, r=2, snr_db=20.0, seed=0,
                   model="geometric", paths=20, subpaths=10, cluster_spread_deg=12.0,
                   subpath_spread_deg=2.0, max_delay=None, rb_size=1) -> ChannelSet:
    """Generate a reproducible channel set.

    ``iid``: unit-variance circular Gaussian entries.

    ``geometric``: per user, ``paths`` clusters of ``subpaths`` plane waves on
    half-wavelength ULAs at both ends. Cluster departure angles scatter by
    ``cluster_spread_deg`` around a user-specific mean direction; each cluster
    has a delay in ``[0, max_delay)`` (in units of the inverse band, default
    ``0.3 * J``) and an
    exponentially decaying power. The frequency response over the REs is the
    sum of the delayed components, hence smooth across RBs. Entries have unit
    average power.

    Noise powers are ``10^(-snr/10)`` times the user's mean dominant
    eigen-gain, so ``snr_db`` is the SNR of the strongest effective channel.
    """
    n_re = J * rb_size
    if r > min(N_u, N_t):
        raise ContractError(f"r={r} exceeds min(N_u, N_t)={min(N_u, N_t)}")
    if max_delay is None:
        max_delay = 0.3 * J
    if model == "iid":
        g = stream(seed, "channel", "iid")
        H = (g.standard_normal((K, n_re, N_u, N_t))
             + 1j * g.standard_normal((K, n_re, N_u, N_t))) / np.sqrt(2.0)
    elif model == "geometric":
        H = np.empty((K, n_re, N_u, N_t), np.complex128)
        freqs = np.arange(n_re) / n_re
        for k in range(K):
            g = stream(seed, "channel", "geometric", k)
            mean_aod = g.uniform(-np.pi / 3, np.pi / 3)
            aods = mean_aod + np.deg2rad(cluster_spread_deg) * g.standard_normal(paths)
            aoas = g.uniform(-np.pi / 2, np.pi / 2, paths)
            delays = np.sort(g.uniform(0.0, max_delay, paths))
            power = np.exp(-delays / max(max_delay, 1e-9))
            power /= power.sum()
            hk = np.zeros((n_re, N_u, N_t), np.complex128)
            for p in range(paths):
                sub_d = aods[p] + np.deg2rad(subpath_spread_deg) * g.standard_normal(subpaths)
                sub_a = aoas[p] + np.deg2rad(subpath_spread_deg) * g.standard_normal(subpaths)
                gains = (g.standard_normal(subpaths) + 1j * g.standard_normal(subpaths))
                gains *= np.sqrt(power[p] / (2.0 * subpaths))
                at = _steering(N_t, sub_d)  # (S, N_t)
                au = _steering(N_u, sub_a)  # (S, N_u)
                spatial = np.einsum("s,su,st->ut", gains, au, at.conj())
                phase = np.exp(-2j * np.pi * freqs * delays[p])
                hk += phase[:, None, None] * spatial[None]
            H[k] = hk
    else:
        raise ContractError(f"unknown channel model {model!r}")

    lam = np.linalg.norm(H, ord=2, axis=(2, 3)) ** 2  # (K, n_re)
    noise = 10.0 ** (-snr_db / 10.0) * np.repeat(lam.mean(axis=1, keepdims=True), n_re, axis=1)
    return ChannelSet(H, noise, r, snr_db, rb_size)


def weights_from_v(V: np.ndarray) -> np.ndarray:
    """``W = V^H (V V^H)^-1`` per user and RB; returns ``(K, J, N_t, r)``."""
    V = np.asarray(V)
    vj = np.moveaxis(V, 3, 1)  # (K, J, r, N_t)
    return np.linalg.pinv(vj)


def zf_weights(ch: ChannelSet) -> WeightSet:
    """Eigen-based ZF weights for every user and RB.

    Dominant eigenvectors of the RB-aggregated Gram matrix ``sum H^H H``.
    Row phases: the first RB uses the largest-magnitude-entry-real rule; each
    later RB is phase-aligned to the previous one so the tensor varies
    smoothly across frequency.
    """
    K, J, r = ch.K, ch.J, ch.r
    V = np.empty((K, r, ch.N_t, J), np.complex128)
    for k in range(K):
        hk = ch.H[k].reshape(J, ch.rb_size, ch.N_u, ch.N_t)
        prev = None
        for j in range(J):
            if ch.rb_size == 1:
                try:
                    _, _, vh = np.linalg.svd(hk[j, 0], full_matrices=False)
                except np.linalg.LinAlgError as exc:
                    raise NumericError(f"eigensolver failed for user {k}, RB {j}") from exc
                vecs = vh[:r].conj().T
            else:
                gram = np.einsum("eun,eum->nm", hk[j].conj(), hk[j])
                try:
                    w, e = np.linalg.eigh(gram)
                except np.linalg.LinAlgError as exc:
                    raise NumericError(f"eigensolver failed for user {k}, RB {j}") from exc
                vecs = e[:, ::-1][:, :r]
            if prev is None:
                vecs = fix_phase(vecs)
            else:
                ip = np.sum(prev.conj() * vecs, axis=0)
                mag = np.abs(ip)
                vecs = vecs * np.where(mag > 0, ip.conj() / np.where(mag > 0, mag, 1), 1)[None]
            prev = vecs
            V[k, :, :, j] = vecs.conj().T
    return WeightSet(V, weights_from_v(V))


def _unit_columns(W: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(W, axis=-2, keepdims=True)
    return np.where(norms > 0, W / np.where(norms > 0, norms, 1.0), 0.0)


def _stream_precoders(ch: ChannelSet, W: np.ndarray) -> np.ndarray:
    """All streams' unit-norm precoders per RE: ``(n_re, N_t, K*r)``."""
    W = _unit_columns(np.asarray(W))
    if W.shape[:2] != (ch.K, ch.J) or W.shape[2] != ch.N_t:
        raise ContractError(f"weights of shape {W.shape} do not match channels")
    per_rb = np.concatenate([W[k] for k in range(ch.K)], axis=-1)  # (J, N_t, K r)
    return np.repeat(per_rb, ch.rb_size, axis=0)


def per_stream_snr(ch: ChannelSet, W: np.ndarray) -> np.ndarray:
    """Post-precoding SINR, shape ``(K * r, REs)``; stream ``l`` belongs to user ``l // r``."""
    W = np.asarray(W)
    P = _stream_precoders(ch, W)
    r = W.shape[-1]
    n_streams = P.shape[-1]
    out = np.empty((n_streams, ch.n_re))
    eye = np.eye(ch.N_u)
    for k in range(ch.K):
        E = ch.H[k] @ P  # (n_re, N_u, S)
        total = ch.noise[k][:, None, None] * eye + E @ np.conj(np.swapaxes(E, -1, -2))
        for l in range(k * r, (k + 1) * r):
            e = E[:, :, l]
            C = total - e[:, :, None] * e.conj()[:, None, :]
            x = np.linalg.solve(C, e[:, :, None])[:, :, 0]
            out[l] = np.real(np.sum(e.conj() * x, axis=1))
    return out


def sum_rate(ch: ChannelSet, W: np.ndarray) -> float:
    """Sum over streams and REs of ``log2(1 + SINR)`` in bit/s/Hz."""
    return float(np.sum(np.log2(1.0 + per_stream_snr(ch, W))))


def rate_loss(ch: ChannelSet, W_ref: np.ndarray, W_cmp: np.ndarray) -> float:
    """``1 - sum_rate(W_cmp) / sum_rate(W_ref)``."""
    ref = sum_rate(ch, W_ref)
    if ref == 0.0:
        raise ContractError("reference sum rate is zero")
    return 1.0 - sum_rate(ch, W_cmp) / ref


def save_channels(ch: ChannelSet, directory) -> list:
    """Write one ``.ct3`` per user (REs x N_u x N_t) plus ``channels.json``.

    Returns the list of written paths.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k in range(ch.K):
        path = directory / f"user{k}.ct3"
        write_ct3(path, ch.H[k])
        files.append(path)
    meta = {"K": ch.K, "r": ch.r, "snr_db": ch.snr_db, "rb_size": ch.rb_size,
            "noise": ch.noise.tolist(), "users": [p.name for p in files]}
    mpath = directory / "channels.json"
    mpath.write_text(json.dumps(meta, indent=1))
    return files + [mpath]


def load_channels(directory) -> ChannelSet:
    directory = Path(directory)
    meta = json.loads((directory / "channels.json").read_text())
    H = np.stack([read_ct3(directory / name) for name in meta["users"]])
    return ChannelSet(H, np.asarray(meta["noise"], dtype=np.float64), meta["r"],
                      meta["snr_db"], meta["rb_size"])
