"""Scenario runner: channels, reference weights, method sweeps and reports.

A scenario is a JSON document::

    {
      "channel": {"K": 4, "J": 68, "N_t": 64, "model": "geometric", ...},
      "seeds": [0, 1, 2],
      "methods": ["STD+FC", "STD", "TD"],
      "grid": {"ranks": [[2, 6, 8]], "s1": [0.5], "s2": [0.0, 0.01]},
      "solver": {"max_iters": 50},
      "quant": {"bits_per_component": 16},
      "dft": true,
      "cr_band": [0.09, 0.11]
    }

``grid.ranks`` may instead be ``{"r1": [...], "r2": [...], "r3": [...]}`` for
a Cartesian product. When ``cr_band`` is given, grid points that cannot land
in the band are skipped before any compression is attempted; with
``"search": "band"`` the rank list is searched for in-band points instead of
being swept exhaustively.
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from . import __version__
from .entropy import QuantizerSpec
from .mimo import rate_loss, synth_channels, weights_from_v, zf_weights
from .pipeline import METHODS, PRACTICAL_ETA, CodecConfig, compress, cr_bounds, solve
from .solver import StdConfig
from .tensor import ContractError

REPORT_FIELDS = ["seed", "method", "r1", "r2", "r3", "s1", "s2", "CR", "RE", "RL",
                 "iters", "seconds", "zf_err", "status", "error"]


@dataclass
class Scenario:
    channel: dict = field(default_factory=lambda: {"K": 4, "J": 68, "N_t": 64})
    seeds: list = field(default_factory=lambda: [0])
    methods: list = field(default_factory=lambda: list(METHODS))
    grid: dict = field(default_factory=lambda: {"ranks": [[2, 6, 8]], "s1": [0.5], "s2": [0.0]})
    solver: dict = field(default_factory=dict)
    quant: dict = field(default_factory=dict)
    dft: bool = True
    cr_band: list | None = None
    search: str = "grid"
    name: str = "scenario"

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ContractError(f"unknown methods {bad}")
        if not self.seeds:
            raise ContractError("scenario needs at least one seed")
        if self.cr_band is not None and (len(self.cr_band) != 2 or self.cr_band[0] > self.cr_band[1]):
            raise ContractError("cr_band must be [low, high]")
        if self.search not in ("grid", "band"):
            raise ContractError("search must be 'grid' or 'band'")
        if self.search == "band" and self.cr_band is None:
            raise ContractError("band search needs a cr_band")
        QuantizerSpec(**self.quant)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def rank_list(self) -> list:
        ranks = self.grid.get("ranks", [[2, 6, 8]])
        if isinstance(ranks, dict):
            return [tuple(x) for x in itertools.product(ranks["r1"], ranks["r2"], ranks["r3"])]
        return [tuple(r) for r in ranks]

    def combos(self) -> list:
        """All (method, ranks, s1, s2) points; TD ignores the sparsity grid."""
        out = []
        s1s = self.grid.get("s1", [0.5])
        s2s = self.grid.get("s2", [0.0])
        for method in self.methods:
            for ranks in self.rank_list():
                pairs = [(1.0, 0.0)] if method == "TD" else itertools.product(s1s, s2s)
                for s1, s2 in pairs:
                    out.append((method, ranks, float(s1), float(s2)))
        return out


def codec_config(sc: Scenario, method, ranks, s1, s2) -> CodecConfig:
    solver = dict(sc.solver)
    eta = solver.pop("eta", dict(PRACTICAL_ETA))
    solver.setdefault("beta", 0.0)
    std = StdConfig(ranks=ranks, s1=s1, s2=s2, eta=eta, **solver)
    return CodecConfig(method, std, QuantizerSpec(**sc.quant), dft=sc.dft)


def make_channels(sc: Scenario, seed: int):
    return synth_channels(seed=seed, **sc.channel)


def zf_identity_error(V: np.ndarray, W: np.ndarray) -> float:
    """Largest ``||V W - I||_F`` over users and RBs."""
    vj = np.moveaxis(V, 3, 1)  # (K, J, r, N_t)
    prod = vj @ W
    eye = np.eye(V.shape[1])
    return float(np.max(np.linalg.norm(prod - eye, axis=(-2, -1))))


def _in_reach(sc, method, dims, ranks, s1, s2, margin=0.0) -> bool:
    if sc.cr_band is None:
        return True
    try:
        lo, hi = cr_bounds(method, dims, ranks, s1, s2, QuantizerSpec(**sc.quant))
    except ContractError:
        return True  # let the run itself report the problem
    return hi >= sc.cr_band[0] - margin and lo <= sc.cr_band[1] + margin


class SeedRun:
    """Channels, reference weights and cached decompositions for one seed."""

    def __init__(self, sc: Scenario, seed: int, trace_dir=None):
        self.sc = sc
        self.seed = seed
        self.trace_dir = trace_dir
        self.ch = make_channels(sc, seed)
        self.ref = zf_weights(self.ch)
        self.dims = self.ref.V.shape[1:]
        self._solves = {}
        self._probes = {}

    def _solved(self, k, cfg):
        if cfg.method == "TD":
            return None
        key = (k, cfg.std.ranks, cfg.std.s1, cfg.std.s2)
        if key not in self._solves:
            self._solves[key] = solve(self.ref.V[k], cfg)
        return self._solves[key]

    def probe(self, method, ranks, s1, s2) -> float:
        """CR of user 0 alone: a cheap stand-in for the mean CR."""
        key = (method, ranks, s1, s2)
        if key not in self._probes:
            try:
                cfg = codec_config(self.sc, method, ranks, s1, s2)
                self._probes[key] = compress(self.ref.V[0], cfg, keep_decoded=False,
                                             solved=self._solved(0, cfg)).cr
            except Exception:
                self._probes[key] = float("nan")
        return self._probes[key]

    def run(self, method, ranks, s1, s2) -> dict:
        """Compress every user's weights with one configuration and score it."""
        ch, ref = self.ch, self.ref
        row = {"seed": self.seed, "method": method, "r1": ranks[0], "r2": ranks[1],
               "r3": ranks[2], "s1": s1, "s2": s2, "status": "ok", "error": ""}
        t0 = time.perf_counter()
        try:
            cfg = codec_config(self.sc, method, ranks, s1, s2)
            decoded, crs, res, iters = [], [], [], []
            for k in range(ch.K):
                res_k = compress(ref.V[k], cfg, solved=self._solved(k, cfg))
                decoded.append(res_k.decoded)
                crs.append(res_k.cr)
                res.append(res_k.rel_err)
                iters.append(res_k.iterations)
                if self.trace_dir is not None and res_k.trace is not None:
                    tag = "x".join(map(str, ranks))
                    name = f"trace_s{self.seed}_{method.replace('+', 'FC')}_{tag}_{s1}_{s2}_u{k}.csv"
                    (Path(self.trace_dir) / name).write_text(res_k.trace.to_csv())
            V_hat = np.stack(decoded)
            W_hat = weights_from_v(V_hat)
            row.update(CR=float(np.mean(crs)), RE=float(np.mean(res)),
                       RL=float(rate_loss(ch, ref.W, W_hat)), iters=int(max(iters)),
                       zf_err=max(zf_identity_error(ref.V, ref.W), zf_identity_error(V_hat, W_hat)))
        except Exception as exc:  # recorded in the report; the sweep continues
            row.update(CR=float("nan"), RE=float("nan"), RL=float("nan"), iters=0,
                       zf_err=float("nan"), status="failed", error=f"{type(exc).__name__}: {exc}")
        row["seconds"] = time.perf_counter() - t0
        return row

    def band_candidates(self, method, s1, s2, margin=0.005) -> list:
        """Ranks from the grid whose CR should fall in the band.

        CR grows with the ranks, so the STD+FC search bisects the rank list
        (ordered by the CR bounds) using single-user probes; the other
        methods have exact CR bounds and are filtered directly.
        """
        sc = self.sc
        lo, hi = sc.cr_band
        q = QuantizerSpec(**sc.quant)
        ladder = sorted(sc.rank_list(), key=lambda r: sum(cr_bounds(method, self.dims, r, s1, s2, q)))
        ladder = [r for r in ladder if _in_reach(sc, method, self.dims, r, s1, s2, margin)]
        if method != "STD+FC":
            return ladder
        left, right = 0, len(ladder)
        while left < right:
            mid = (left + right) // 2
            cr = self.probe(method, ladder[mid], s1, s2)
            if cr == cr and cr < lo - margin:
                left = mid + 1
            else:
                right = mid
        out = []
        for r in ladder[left:]:
            cr = self.probe(method, r, s1, s2)
            if cr == cr and cr > hi + margin:
                break
            out.append(r)
        return out


def run_combo(sc: Scenario, seed: int, method, ranks, s1, s2, trace_dir=None) -> dict:
    return SeedRun(sc, seed, trace_dir).run(method, tuple(ranks), float(s1), float(s2))


def _run_seed(args):
    sc, seed, trace_dir = args
    runner = SeedRun(sc, seed, trace_dir)
    rows = []
    if sc.search == "band":
        for method in sc.methods:
            pairs = [(1.0, 0.0)] if method == "TD" else list(
                itertools.product(sc.grid.get("s1", [0.5]), sc.grid.get("s2", [0.0])))
            for s1, s2 in pairs:
                for ranks in runner.band_candidates(method, float(s1), float(s2)):
                    rows.append(runner.run(method, ranks, float(s1), float(s2)))
        return rows
    for method, ranks, s1, s2 in sc.combos():
        if _in_reach(sc, method, runner.dims, ranks, s1, s2):
            rows.append(runner.run(method, ranks, s1, s2))
    return rows


def run_scenario(sc: Scenario, jobs: int = 1, trace_dir=None) -> list:
    """Run every seed; rows come back ordered by seed then grid position."""
    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    tasks = [(sc, seed, trace_dir) for seed in sc.seeds]
    if jobs <= 1 or len(tasks) == 1:
        results = [_run_seed(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed, tasks))
    return [row for rows in results for row in rows]


# -- analysis ----------------------------------------------------------------

def best_in_band(rows, low: float, high: float) -> dict:
    """Lowest-RL successful row per (seed, method) with CR inside ``[low, high]``."""
    best = {}
    for row in rows:
        if row["status"] != "ok" or not low <= row["CR"] <= high:
            continue
        key = (row["seed"], row["method"])
        if key not in best or row["RL"] < best[key]["RL"]:
            best[key] = row
    return best


def paired_sign_test(a, b) -> dict:
    """One-sided sign test that ``a < b`` pairwise; ties are dropped."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    wins = int(np.sum(a < b))
    losses = int(np.sum(a > b))
    n = wins + losses
    p = binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0
    return {"wins": wins, "losses": losses, "n": n, "p_value": float(p)}


def ablation_summary(rows, low: float, high: float, order=METHODS) -> dict:
    """Mean in-band RL per method and pairwise sign tests along ``order``."""
    best = best_in_band(rows, low, high)
    seeds = sorted({s for s, _ in best})
    complete = [s for s in seeds if all((s, m) in best for m in order)]
    means = {m: float(np.mean([best[(s, m)]["RL"] for s in complete])) if complete else float("nan")
             for m in order}
    tests = {}
    for lo_m, hi_m in zip(order, order[1:]):
        tests[f"{lo_m} < {hi_m}"] = paired_sign_test(
            [best[(s, lo_m)]["RL"] for s in complete],
            [best[(s, hi_m)]["RL"] for s in complete])
    missing = sorted({(s, m) for s in seeds for m in order} - set(best))
    return {"seeds": complete, "mean_RL": means, "sign_tests": tests,
            "missing": [list(x) for x in missing],
            "chosen": {f"{s}/{m}": best[(s, m)] for s in complete for m in order}}


# -- reports -------------------------------------------------------------------

def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{row[k]:.6g}" if isinstance(row.get(k), float) and k != "seconds"
                        else row.get(k)) for k in REPORT_FIELDS})
    return buf.getvalue()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def build_manifest(config: dict, seed, inputs, outputs, timings: dict, metrics: dict) -> dict:
    """Run manifest: config hash, seed, version, timings, files with checksums."""
    text = json.dumps(config, sort_keys=True)
    return {
        "config_hash": hashlib.sha256(text.encode()).hexdigest(),
        "config": config,
        "seed": seed,
        "tool_version": __version__,
        "timings": timings,
        "inputs": [{"path": str(p), "sha256": sha256_file(p)} for p in inputs],
        "outputs": [{"path": str(p), "sha256": sha256_file(p)} for p in outputs],
        "metrics": metrics,
    }


def write_reports(rows, out_dir, sc: Scenario, seconds: float) -> list:
    """Write ``report.csv``, ``report.json`` and ``manifest.json``; return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "report.csv"
    csv_path.write_text(rows_to_csv(rows))
    summary = None
    if sc.cr_band is not None:
        summary = ablation_summary(rows, *sc.cr_band, order=[m for m in METHODS if m in sc.methods])
    json_path = out / "report.json"
    json_path.write_text(json.dumps({"scenario": sc.to_dict(), "rows": rows, "summary": summary},
                                    indent=1, default=float))
    ok = [r for r in rows if r["status"] == "ok"]
    metrics = {"rows": len(rows), "failed": len(rows) - len(ok)}
    traces = sorted(out.glob("traces/*.csv"))
    manifest = build_manifest(sc.to_dict(), sc.seeds, [], [csv_path, json_path, *traces],
                              {"total_seconds": seconds}, metrics)
    man_path = out / "manifest.json"
    man_path.write_text(json.dumps(manifest, indent=1))
    return [csv_path, json_path, man_path]
