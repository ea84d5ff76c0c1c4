import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import crandn, random_semi_orthogonal, topk_sorted
from stdcodec.rng import stream
from stdcodec.solver import (
    DescentTrace, StdConfig, apbcd_solve, auto_step_sizes, extrapolate_factor, init_state,
    objective, polar_factor, prox_l0_topk, update_core, update_factor, update_sparse,
)
from stdcodec.tensor import ContractError, NumericError, relative_error, semi_orthogonality_error, tucker_reconstruct

FIXED_ETA = {"G": 1e3, "S": 1e3, "U": [1e3] * 3}


def planted(seed, dims=(2, 8, 10), ranks=(2, 3, 4), n_out=3):
    g = stream(seed, "planted")
    core = g.standard_normal(ranks) + 1j * g.standard_normal(ranks)
    us = [random_semi_orthogonal(g, n, r) for n, r in zip(dims, ranks)]
    low = tucker_reconstruct(core, us)
    s = np.zeros(int(np.prod(dims)), complex)
    s[g.choice(s.size, n_out, replace=False)] = np.abs(low).max() * np.exp(2j * np.pi * g.random(n_out))
    return low + s.reshape(dims, order="F")


# -- prox ------------------------------------------------------------------

def test_prox_keeps_largest():
    t = np.array([3, -1, 0.5, 2j, 0]).reshape(5, 1, 1)
    out = prox_l0_topk(t, 2).ravel()
    np.testing.assert_array_equal(out, [3, 0, 0, 2j, 0])


def test_prox_edge_counts(rng):
    t = crandn(rng, 2, 3, 4)
    assert not prox_l0_topk(t, 0).any()
    np.testing.assert_array_equal(prox_l0_topk(t, t.size), t)
    with pytest.raises(ContractError):
        prox_l0_topk(t, t.size + 1)
    with pytest.raises(ContractError):
        prox_l0_topk(t, -1)


def test_prox_tie_goes_to_lower_linear_index():
    t = np.ones((2, 2, 1), complex)
    out = prox_l0_topk(t, 1)
    assert out[0, 0, 0] == 1 and np.count_nonzero(out) == 1
    out = prox_l0_topk(t, 3)
    assert out[1, 1, 0] == 0  # last in mode-1-fastest order


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), dims=st.tuples(*[st.integers(1, 4)] * 3), data=st.data())
def test_prox_matches_sorted_oracle(seed, dims, data):
    rng = np.random.default_rng(seed)
    # small integer parts force plenty of ties
    t = rng.integers(-2, 3, dims) + 1j * rng.integers(-2, 3, dims)
    k = data.draw(st.integers(0, t.size))
    out = prox_l0_topk(t, k)
    np.testing.assert_array_equal(out, topk_sorted(t, k))
    assert np.count_nonzero(out) <= k


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), k=st.integers(0, 24))
def test_prox_is_idempotent_and_minimal(seed, k):
    t = crandn(np.random.default_rng(seed), 2, 3, 4)
    out = prox_l0_topk(t, k)
    np.testing.assert_array_equal(prox_l0_topk(out, k), out)
    # no other k-sparse support gets closer: the error equals the dropped energy
    dropped = np.sort(np.abs(t).ravel() ** 2)[: t.size - k].sum()
    assert np.linalg.norm(t - out) ** 2 == pytest.approx(dropped, rel=1e-12, abs=1e-15)


# -- polar factor and block updates ----------------------------------------

def test_polar_factor_is_closest_semi_orthogonal(rng):
    m = crandn(rng, 8, 3)
    q, deficient = polar_factor(m)
    assert not deficient
    assert semi_orthogonality_error(q) <= 1e-12
    # maximizes Re tr(Q^H M) against random competitors
    best = np.trace(q.conj().T @ m).real
    for _ in range(50):
        other = random_semi_orthogonal(rng, 8, 3)
        assert np.trace(other.conj().T @ m).real <= best + 1e-10


def test_polar_factor_flags_rank_deficiency(rng):
    m = crandn(rng, 6, 3)
    m[:, 2] = 0
    q, deficient = polar_factor(m)
    assert deficient
    assert q.shape == (6, 3)


def test_extrapolation_formula(rng):
    a, b = crandn(rng, 4, 2), crandn(rng, 4, 2)
    np.testing.assert_allclose(extrapolate_factor(a, b, 0.3), 1.3 * a - 0.3 * b)
    np.testing.assert_array_equal(extrapolate_factor(a, b, 0.0), a)
    with pytest.raises(ContractError):
        extrapolate_factor(a, b[:, :1], 0.3)


def test_core_update_large_step_is_projection(rng):
    v = crandn(rng, 2, 5, 6)
    state = init_state(v, (2, 3, 4))
    full = update_core(state, v, 24, 1e12)
    np.testing.assert_allclose(full, state.core, atol=1e-9)  # HOSVD core is the projection
    assert np.count_nonzero(update_core(state, v, 5, 1.0)) == 5


def test_factor_update_stays_semi_orthogonal(rng):
    v = crandn(rng, 2, 5, 6)
    state = init_state(v, (2, 3, 4))
    for mode in range(3):
        u, _ = update_factor(state, v, mode, 0.5)
        assert semi_orthogonality_error(u) <= 1e-12


def test_sparse_update_support_and_zero_budget(rng):
    v = crandn(rng, 2, 5, 6)
    state = init_state(v, (1, 2, 2))
    s = update_sparse(state, v, 7, 10.0)
    assert np.count_nonzero(s) == 7
    assert not update_sparse(state, v, 0, 10.0).any()


def test_auto_steps_positive_and_bounded(rng):
    v = crandn(rng, 2, 5, 6)
    v /= np.linalg.norm(v)
    state = init_state(v, (2, 3, 4))
    s0 = auto_step_sizes(state, v, 0.0)
    s3 = auto_step_sizes(state, v, 0.3)
    assert s0.eta_G > 0 and s0.eta_S > 0 and min(s0.eta_U) > 0
    assert all(a <= b for a, b in zip(s3.eta_U, s0.eta_U))
    assert all(g >= 0 for g in s3.gamma)


# -- config ----------------------------------------------------------------

def test_config_counts_use_floor():
    cfg = StdConfig(ranks=(2, 6, 8), s1=0.5, s2=0.01)
    assert cfg.alpha1 == 48
    assert cfg.alpha2((2, 128, 136)) == 348
    assert StdConfig(ranks=(1, 2, 5), s1=0.3).alpha1 == 3


@pytest.mark.parametrize("bad", [
    dict(s1=0.0), dict(s1=1.5), dict(s2=-0.1), dict(beta=1.0), dict(ranks=(2, 0, 3)),
    dict(ranks=(1, 1, 1), s1=0.5), dict(eta={"G": 1, "S": 1, "U": [1, 1, -1]}),
])
def test_config_rejects_bad_values(bad):
    with pytest.raises(ContractError):
        StdConfig(**bad)


def test_config_json_roundtrip():
    cfg = StdConfig(ranks=(2, 3, 4), s1=0.4, s2=0.02, eta=FIXED_ETA, seed=7)
    back = StdConfig.from_json(cfg.to_json())
    assert back.to_dict() == cfg.to_dict()
    assert StdConfig.from_json(StdConfig().to_json()).eta == "auto"
    with pytest.raises(ContractError):
        StdConfig.from_dict({"ranks": [2, 2, 2], "sparsity": 0.3})


# -- driver ----------------------------------------------------------------

def test_solver_rejects_oversized_ranks(rng):
    with pytest.raises(ContractError):
        apbcd_solve(crandn(rng, 2, 3, 4), StdConfig(ranks=(3, 2, 2)))


def test_zero_tensor_returns_zero_state():
    state, trace = apbcd_solve(np.zeros((2, 4, 5), complex), StdConfig(ranks=(1, 2, 2)))
    assert not state.reconstruct().any()
    assert trace.rel_err == [0.0]


def test_solver_is_deterministic_and_scale_equivariant(rng):
    v = crandn(rng, 2, 6, 7)
    cfg = StdConfig(ranks=(2, 3, 3), s1=0.6, s2=0.05, max_iters=15)
    a, ta = apbcd_solve(v, cfg)
    b, tb = apbcd_solve(v, cfg)
    np.testing.assert_array_equal(a.reconstruct(), b.reconstruct())
    c, tc = apbcd_solve(1e6 * v, cfg)
    np.testing.assert_allclose(c.reconstruct(), 1e6 * a.reconstruct(), rtol=1e-8, atol=1e-3)
    np.testing.assert_allclose(tc.rel_err, ta.rel_err, atol=1e-10)


def test_solver_respects_budgets(rng):
    v = crandn(rng, 2, 6, 7)
    cfg = StdConfig(ranks=(2, 3, 3), s1=0.5, s2=0.05, max_iters=10)
    state, trace = apbcd_solve(v, cfg)
    assert np.count_nonzero(state.core) <= cfg.alpha1
    assert np.count_nonzero(state.sparse) <= cfg.alpha2(v.shape)
    assert all(semi_orthogonality_error(u) <= 1e-10 for u in state.factors)
    assert len(trace) == state.iteration + 1
    assert trace.rel_err[-1] == pytest.approx(relative_error(state.reconstruct(), v), rel=1e-8)


def test_sparse_outliers_are_recovered():
    v = planted(3)
    cfg = StdConfig(ranks=(2, 3, 4), s1=1.0, s2=3 / 160, eta=FIXED_ETA, beta=0.0, tol=1e-13)
    state, trace = apbcd_solve(v, cfg)
    assert trace.rel_err[-1] <= 1e-6
    assert np.count_nonzero(state.sparse) == 3


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_objective_non_increasing_without_inertia(seed):
    v = crandn(stream(seed, "unit-descent"), 2, 5, 6)
    _, trace = apbcd_solve(v, StdConfig(ranks=(2, 2, 3), s1=0.5, s2=0.05, beta=0.0, max_iters=20, tol=0))
    assert np.all(np.diff(trace.objective) <= 1e-12)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_auxiliary_non_increasing_with_inertia(seed):
    v = crandn(stream(seed, "unit-descent"), 2, 5, 6)
    _, trace = apbcd_solve(v, StdConfig(ranks=(2, 2, 3), s1=0.5, s2=0.05, beta=0.3, max_iters=20, tol=0))
    assert np.all(np.diff(trace.aux) <= 1e-12)


def test_early_stop_window(rng):
    v = planted(5)
    cfg = StdConfig(ranks=(2, 3, 4), s1=1.0, s2=3 / 160, eta=FIXED_ETA, beta=0.0, tol=1e-3, window=3)
    _, trace = apbcd_solve(v, cfg)
    assert len(trace) - 1 < cfg.max_iters
    tail = np.abs(np.diff(trace.rel_err[-4:]))
    assert np.all(tail < 1e-3)


def test_trace_csv_and_nonfinite_guard():
    t = DescentTrace()
    t.append(1.0, 1.0, 0.0, 0.5, 0.0, 1.0)
    lines = t.to_csv().strip().splitlines()
    assert lines[0] == "iter,objective,H,step_sq,rel_err"
    assert lines[1].startswith("0,1.0,")
    with pytest.raises(NumericError):
        t.append(float("nan"), 0, 0, 0, 0, 0)


def test_auto_steps_guard_cases(rng):
    v = crandn(rng, 2, 5, 6)
    v /= np.linalg.norm(v)
    state = init_state(v, (2, 3, 4))
    s = auto_step_sizes(state, v)
    assert s.eta_G <= 2.0 / (1.0 + s.M)
    doubled = state.copy()
    doubled.core = 2 * doubled.core
    s2 = auto_step_sizes(doubled, v)
    assert all(b <= a for a, b in zip(s.eta_U, s2.eta_U))
    zero = state.copy()
    zero.core[:] = 0
    sz = auto_step_sizes(zero, np.zeros_like(v))
    assert np.isfinite(sz.eta_G) and sz.eta_G > 0 and min(sz.eta_U) > 0


def test_block_updates_do_not_increase_their_subproblems(rng):
    v = crandn(rng, 2, 5, 6)
    v /= np.linalg.norm(v)
    state = init_state(v, (2, 3, 4))
    state.core = prox_l0_topk(state.core, 12)
    state.sparse = prox_l0_topk(crandn(rng, 2, 5, 6) * 0.05, 6)
    eta = 0.7

    def core_obj(g):
        low = tucker_reconstruct(g, state.factors_bar)
        return 0.5 * np.linalg.norm(v - state.sparse - low) ** 2 + np.linalg.norm(g - state.core) ** 2 / (2 * eta)

    assert core_obj(update_core(state, v, 12, eta)) <= core_obj(state.core) + 1e-12

    def sparse_obj(s):
        low = tucker_reconstruct(state.core, state.factors_bar)
        return 0.5 * np.linalg.norm(v - s - low) ** 2 + np.linalg.norm(s - state.sparse) ** 2 / (2 * eta)

    assert sparse_obj(update_sparse(state, v, 6, eta)) <= sparse_obj(state.sparse) + 1e-12

    for mode in range(3):
        def factor_obj(u):
            fs = list(state.factors_bar)
            fs[mode] = u
            low = tucker_reconstruct(state.core, fs)
            return (0.5 * np.linalg.norm(v - state.sparse - low) ** 2
                    + np.linalg.norm(u - state.factors_bar[mode]) ** 2 / (2 * eta))

        u, _ = update_factor(state, v, mode, eta)
        assert factor_obj(u) <= factor_obj(state.factors_bar[mode]) + 1e-12


def test_iterates_respect_invariants_every_sweep(rng):
    v = crandn(rng, 2, 6, 7)
    for iters in (1, 2, 5):
        cfg = StdConfig(ranks=(2, 3, 3), s1=0.4, s2=0.05, max_iters=iters, tol=0)
        state, _ = apbcd_solve(v, cfg)
        assert np.count_nonzero(state.core) <= cfg.alpha1
        assert np.count_nonzero(state.sparse) <= cfg.alpha2(v.shape)
        assert max(semi_orthogonality_error(u) for u in state.factors) <= 1e-10
