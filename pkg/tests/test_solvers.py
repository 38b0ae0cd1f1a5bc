import numpy as np
import pytest

from conftest import crandn
from hankelrec.errors import DivergenceError, UndefinedResidualError
from hankelrec.hankel import make_shape
from hankelrec.lowrank import LowRankFactor, dense_hard_threshold
from hankelrec.solvers import (
    RESAMPLED,
    SolverConfig,
    fiht_solve,
    iht_solve,
    init_one_step,
    init_resampled,
    observed_residual,
    trim,
)
from hankelrec.spectral import (
    SampleSet,
    SignalGenConfig,
    generate_signal,
    incoherence_estimate,
    sample_indices,
)


def problem(n, r, m, seed, sep=1.5, mode="without"):
    sig = generate_signal(SignalGenConfig(n, r, min_separation=sep / n, seed=seed))
    om = sample_indices(n, m, mode, seed=10_000 + seed)
    obs = np.zeros(n, dtype=complex)
    obs[om.indices] = sig.samples[om.indices]
    return sig.samples, om, obs, make_shape(n)


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestConfig:
    def test_needs_a_stopping_rule(self):
        with pytest.raises(ValueError):
            SolverConfig(r=2, tol_residual=0, tol_step=0).validate()

    def test_rank(self):
        with pytest.raises(ValueError):
            SolverConfig(r=0).validate()

    def test_unknown_init(self):
        with pytest.raises(ValueError):
            SolverConfig(r=1, init="magic").validate()


class TestResidual:
    def test_examples(self, rng):
        x, om, obs, _ = problem(40, 2, 20, 0)
        assert observed_residual(x, obs, om) == 0
        assert observed_residual(np.zeros(40), obs, om) == pytest.approx(1.0)
        e = np.zeros(40, dtype=complex)
        e[om.indices[:3]] = 1e-3 * crandn(rng, 3)
        expect = np.linalg.norm(e[om.indices]) / np.linalg.norm(x[om.indices])
        assert observed_residual(x + e, obs, om) == pytest.approx(expect, rel=1e-12)

    def test_zero_observed(self):
        with pytest.raises(UndefinedResidualError):
            observed_residual(np.ones(5), np.zeros(5), SampleSet(5, [1, 2]))


class TestOneStep:
    def test_full_sampling_exact(self):
        x, _, _, s = problem(63, 3, 63, 1)
        L = init_one_step(x, SampleSet.full(63), 3, s)
        H = s.dense(x)
        assert np.linalg.norm(L.dense() - H) <= 1e-8 * np.linalg.norm(H)

    def test_empty_sample_set(self):
        s = make_shape(20)
        L = init_one_step(np.zeros(20), SampleSet(20, []), 2, s)
        assert not np.any(L.sigma)

    def test_error_shrinks_with_m(self):
        n, r = 127, 4
        s = make_shape(n)
        med = []
        for m in (32, 64, 96):
            errs = []
            for seed in range(50):
                x, om, obs, _ = problem(n, r, m, seed)
                H = s.dense(x)
                errs.append(np.linalg.norm(init_one_step(obs, om, r, s).dense() - H) / np.linalg.norm(H))
            med.append(np.median(errs))
        assert med[0] > med[1] > med[2]


class TestTrim:
    def test_untouched_below_cap(self, rng):
        s = make_shape(50)
        U = np.linalg.qr(crandn(rng, s.n1, 2))[0]
        V = np.linalg.qr(crandn(rng, s.n2, 2))[0]
        L = LowRankFactor(U, np.array([2.0, 1.0]), V)
        out = trim(L, 1e6, s)
        assert np.array_equal(out.U, U) and np.array_equal(out.V, V)

    def test_single_row_halved(self):
        s = make_shape(9)
        mu, r = 1.0, 1
        cap = np.sqrt(mu * s.c_s * r / s.n)
        U = np.zeros((s.n1, 1), complex)
        U[2, 0] = 2 * cap
        U[0, 0] = 0.5 * cap
        V = np.zeros((s.n2, 1), complex)
        out = trim(LowRankFactor(U, np.ones(1), V), mu, s)
        assert out.U[2, 0] == pytest.approx(cap)
        assert out.U[0, 0] == U[0, 0]
        assert not np.any(out.V)

    def test_cap_holds(self, rng):
        s = make_shape(80)
        for mu in (0.1, 0.5, 2.0):
            L = LowRankFactor(crandn(rng, s.n1, 3), np.ones(3), crandn(rng, s.n2, 3))
            out = trim(L, mu, s)
            cap = np.sqrt(mu * s.c_s * 3 / s.n)
            assert np.linalg.norm(out.U, axis=1).max() <= cap + 1e-12
            assert np.linalg.norm(out.V, axis=1).max() <= cap + 1e-12
            assert np.array_equal(out.sigma, L.sigma)


class TestResampled:
    def test_zero_rounds_is_one_step(self):
        x, om, obs, s = problem(63, 2, 40, 3)
        a = init_resampled(obs, om, 2, 0, 5.0, s, seed=1)
        b = init_one_step(obs, om, 2, s, seed=1)
        assert np.allclose(a.dense(), b.dense(), atol=1e-10)

    def test_exact_full_sampling(self):
        x, _, _, s = problem(63, 3, 63, 2)
        om = SampleSet(63, np.concatenate([np.arange(63)] * 3), "with")
        # unshuffled, every batch is one full copy of the index set
        L = init_resampled(x, om, 3, 2, 1e6, s, shuffle=False)
        H = s.dense(x)
        assert np.linalg.norm(L.dense() - H) <= 1e-8 * np.linalg.norm(H)

    def test_partition_errors(self):
        with pytest.raises(ValueError):
            init_resampled(np.ones(10), SampleSet(10, [1, 2]), 1, 3, 1.0, make_shape(10))

    def test_history(self):
        x, om, obs, s = problem(127, 3, 96, 4)
        hist = []
        init_resampled(obs, om, 3, 3, incoherence_estimate_for(x, s), s, history=hist)
        assert len(hist) == 4


def incoherence_estimate_for(x, s, seed=4):
    sig = generate_signal(SignalGenConfig(s.n, 3, min_separation=1.5 / s.n, seed=seed))
    assert np.array_equal(sig.samples, x)
    return incoherence_estimate(sig, s)


class TestSolvers:
    @pytest.mark.parametrize("solve", [iht_solve, fiht_solve])
    def test_fixed_point(self, solve):
        x, om, obs, s = problem(64, 3, 30, 7)
        L = dense_hard_threshold(s.dense(x), 3)
        res = solve(obs, om, 3, s, SolverConfig(max_iters=1, tol_residual=1e-14), initial=L)
        assert rel_err(res.x_rec, x) <= 1e-10

    @pytest.mark.parametrize("solve", [iht_solve, fiht_solve])
    def test_full_sampling(self, solve):
        x, _, _, s = problem(64, 3, 64, 8)
        res = solve(x, SampleSet.full(64), 3, s, SolverConfig(tol_residual=1e-12))
        assert res.iterations <= 2
        assert rel_err(res.x_rec, x) <= 1e-8

    def test_iht_fiht_agree_in_tangent_space(self):
        x, _, _, s = problem(64, 3, 64, 9)
        L = dense_hard_threshold(s.dense(x), 3)
        cfg = SolverConfig(max_iters=1, tol_residual=1e-14)
        a = iht_solve(x, SampleSet.full(64), 3, s, cfg, initial=L)
        b = fiht_solve(x, SampleSet.full(64), 3, s, cfg, initial=L)
        assert np.linalg.norm(a.x_rec - b.x_rec) <= 1e-8 * np.linalg.norm(x)

    @pytest.mark.parametrize("solve", [iht_solve, fiht_solve])
    def test_success_rate(self, solve):
        ok = 0
        for seed in range(50):
            x, om, obs, s = problem(127, 4, 64, seed)
            res = solve(obs, om, 4, s, SolverConfig(tol_step=0))
            ok += rel_err(res.x_rec, x) <= 1e-3
        assert ok >= 48

    def test_linear_convergence(self):
        ratios = []
        for seed in range(20):
            x, om, obs, s = problem(127, 4, 96, seed)
            res = fiht_solve(obs, om, 4, s, SolverConfig(max_iters=10, tol_residual=1e-14, tol_step=0),
                             x_true=x)
            e = np.array([t.true_err for t in res.trace])
            ratios.extend(e[3:10] / e[2:9])
        assert np.median(ratios) < 0.9

    def test_trace_and_json(self):
        x, om, obs, s = problem(63, 2, 40, 1)
        res = fiht_solve(obs, om, 2, s, SolverConfig(), x_true=x)
        assert len(res.trace) == res.iterations
        assert all(t.residual >= 0 and t.true_err is not None for t in res.trace)
        obj = res.to_json()
        assert set(obj) >= {"x_rec", "iterations", "converged", "trace"}
        assert obj["converged"]["reason"] == res.reason
        assert res.init_spectral_gap is None or res.init_spectral_gap > 0

    def test_rank_bound(self):
        x, om, obs, s = problem(63, 2, 40, 2)
        for solve in (iht_solve, fiht_solve):
            res = solve(obs, om, 2, s, SolverConfig(max_iters=5))
            assert res.factor.r == 2

    def test_deterministic(self):
        x, om, obs, s = problem(127, 4, 64, 5)
        a = fiht_solve(obs, om, 4, s, SolverConfig(tol_step=0))
        b = fiht_solve(obs, om, 4, s, SolverConfig(tol_step=0))
        assert np.array_equal(a.x_rec, b.x_rec)
        assert [t.residual for t in a.trace] == [t.residual for t in b.trace]

    def test_with_replacement(self):
        x, om, obs, s = problem(127, 3, 90, 6, mode="with")
        assert np.unique(om.indices).size < om.m
        res = fiht_solve(obs, om, 3, s, SolverConfig(tol_step=0))
        assert rel_err(res.x_rec, x) <= 1e-3

    def test_stop_reasons(self):
        x, om, obs, s = problem(127, 4, 64, 3)
        assert fiht_solve(obs, om, 4, s, SolverConfig(tol_step=0)).reason == "residual"
        assert fiht_solve(obs, om, 4, s, SolverConfig(tol_residual=0, tol_step=1e-3)).reason == "step"
        res = fiht_solve(obs, om, 4, s, SolverConfig(max_iters=2, tol_step=0, tol_residual=1e-300))
        assert res.reason == "max_iters" and not res.converged and res.iterations == 2

    def test_divergence(self):
        x, om, obs, s = problem(63, 2, 30, 0)
        with pytest.raises(DivergenceError) as info:
            fiht_solve(obs, om, 2, s, SolverConfig(stepsize=1e9, max_iters=5))
        assert np.all(np.isfinite(info.value.last_finite))

    def test_resampled_init_solve(self):
        n = 127
        sig = generate_signal(SignalGenConfig(n, 3, min_separation=1.5 / n, seed=1))
        s = make_shape(n)
        om = sample_indices(n, 96, seed=2)
        obs = np.zeros(n, complex)
        obs[om.indices] = sig.samples[om.indices]
        cfg = SolverConfig(init=RESAMPLED, mu=incoherence_estimate(sig, s), tol_step=0)
        res = fiht_solve(obs, om, 3, s, cfg)
        assert rel_err(res.x_rec, sig.samples) <= 1e-3

    def test_resampled_needs_mu(self):
        x, om, obs, s = problem(63, 2, 40, 1)
        with pytest.raises(ValueError):
            fiht_solve(obs, om, 2, s, SolverConfig(init=RESAMPLED))

    def test_iht_large_uses_partial_svd(self):
        x, om, obs, s = problem(1001, 5, 300, 0)
        res = iht_solve(obs, om, 5, s, SolverConfig(tol_residual=0, tol_step=1e-6))
        assert rel_err(res.x_rec, x) <= 1e-3

    def test_sample_set_size_mismatch(self):
        x, om, obs, s = problem(63, 2, 40, 1)
        with pytest.raises(ValueError):
            fiht_solve(obs, SampleSet(64, [1, 2]), 2, s)
