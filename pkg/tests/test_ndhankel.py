import itertools

import numpy as np
import pytest

from conftest import crandn, rel
from hankelrec.errors import MemoryBudgetError
from hankelrec.hankel import adjoint_rank_one, hankel_dense, hankel_matvec, make_shape
from hankelrec.ndhankel import (
    NdMode,
    NdSignal,
    evaluate_nd_modes,
    generate_nd_signal,
    make_nd_shape,
    nd_adjoint_rank_one,
    nd_fiht_solve,
    nd_hankel_dense,
    nd_hankel_matvec,
    nd_hankel_matvec_adjoint,
    nd_vandermonde_factors,
)
from hankelrec.solvers import SolverConfig
from hankelrec.spectral import SampleSet


def index_formula_dense(X, shape):
    # row i = i1 + i2*n1 + ..., column j likewise, entry X[i + j]
    rows = list(itertools.product(*[range(p) for p in shape.pencils[::-1]]))
    cols = list(itertools.product(*[range(q) for q in shape.col_pencils[::-1]]))
    H = np.empty((len(rows), len(cols)), dtype=complex)
    for a, ri in enumerate(rows):
        for b, cj in enumerate(cols):
            H[a, b] = X[tuple(i + j for i, j in zip(ri[::-1], cj[::-1]))]
    return H


def random_case(rng, max_cells=4096):
    while True:
        d = int(rng.integers(1, 4))
        dims = tuple(int(v) for v in rng.integers(1, 9, d))
        pencils = tuple(int(rng.integers(1, v + 1)) for v in dims)
        shape = make_nd_shape(dims, pencils)
        if shape.n1 * shape.n2 <= max_cells:
            return shape


class TestShape:
    def test_weights_3x3(self):
        s = make_nd_shape((3, 3), (2, 2))
        assert s.weights.tolist() == [[1, 2, 1], [2, 4, 2], [1, 2, 1]]

    def test_one_dimensional(self):
        s = make_nd_shape((5,))
        assert s.weights.tolist() == [1, 2, 3, 2, 1]
        assert (s.n1, s.n2) == (make_shape(5).n1, make_shape(5).n2)

    def test_full_scale_dims(self):
        s = make_nd_shape((31, 31, 511))
        assert s.n1 == 16 * 16 * 256 and s.n2 == 16 * 16 * 256

    def test_weight_sum(self, rng):
        for _ in range(30):
            s = random_case(rng, 10**9)
            assert s.weights.sum() == s.n1 * s.n2

    def test_weights_by_counting(self):
        s = make_nd_shape((4, 5), (2, 3))
        count = np.zeros((4, 5), dtype=int)
        for i in itertools.product(range(2), range(3)):
            for j in itertools.product(range(3), range(3)):
                count[i[0] + j[0], i[1] + j[1]] += 1
        assert np.array_equal(s.weights, count)

    def test_invalid(self):
        with pytest.raises(ValueError):
            make_nd_shape((3, 3), (4, 1))
        with pytest.raises(ValueError):
            make_nd_shape(())


class TestDense:
    def test_recursive_matches_index_formula(self, rng):
        for _ in range(20):
            s = random_case(rng, 600)
            X = crandn(rng, *s.dims)
            assert np.array_equal(nd_hankel_dense(X, s), index_formula_dense(X, s))

    def test_entry_formula(self, rng):
        s = make_nd_shape((4, 3, 5), (2, 2, 3))
        X = crandn(rng, *s.dims)
        H = nd_hankel_dense(X, s)
        for i in itertools.product(range(2), range(2), range(3)):
            for j in itertools.product(range(3), range(2), range(3)):
                row = i[0] + i[1] * 2 + i[2] * 4
                col = j[0] + j[1] * 3 + j[2] * 6
                assert H[row, col] == X[i[0] + j[0], i[1] + j[1], i[2] + j[2]]


class TestFastProducts:
    def test_first_column(self, rng):
        s = make_nd_shape((4, 5, 3))
        X = crandn(rng, *s.dims)
        out = nd_hankel_matvec(X, np.eye(s.n2)[0], s)
        sub = X[: s.pencils[0], : s.pencils[1], : s.pencils[2]]
        assert np.allclose(out, sub.transpose(2, 1, 0).reshape(-1))

    def test_4x4(self, rng):
        s = make_nd_shape((4, 4))
        X = crandn(rng, 4, 4)
        v = crandn(rng, s.n2)
        assert rel(nd_hankel_matvec(X, v, s), nd_hankel_dense(X, s) @ v) <= 1e-10

    def test_dense_equivalence(self, rng):
        for _ in range(50):
            s = random_case(rng)
            X = crandn(rng, *s.dims)
            H = nd_hankel_dense(X, s)
            u, v = crandn(rng, s.n1), crandn(rng, s.n2)
            assert rel(nd_hankel_matvec(X, v, s), H @ v) <= 1e-10
            assert rel(nd_hankel_matvec_adjoint(X, u, s), H.conj().T @ u) <= 1e-10
            ref = s.adjoint_dense(np.outer(u, v.conj())).reshape(s.dims)
            assert rel(nd_adjoint_rank_one(u, v, s), ref) <= 1e-10

    def test_rank_one_all_ones(self):
        s = make_nd_shape((3, 3), (2, 2))
        out = nd_adjoint_rank_one(np.ones(4), np.ones(4), s)
        assert np.allclose(out, s.weights)

    def test_rank_one_quadruple_loop(self, rng):
        s = make_nd_shape((6, 5), (3, 3))
        u, v = crandn(rng, s.n1), crandn(rng, s.n2)
        ref = np.zeros((6, 5), dtype=complex)
        for i1, i2, j1, j2 in itertools.product(range(3), range(3), range(4), range(3)):
            ref[i1 + j1, i2 + j2] += u[i1 + 3 * i2] * np.conj(v[j1 + 4 * j2])
        assert np.abs(nd_adjoint_rank_one(u, v, s) - ref).max() <= 1e-12 * np.abs(ref).max()

    def test_one_dimensional_reduction(self, rng):
        for n in (7, 30, 64):
            s1, sn = make_shape(n), make_nd_shape((n,))
            z, u, v = crandn(rng, n), crandn(rng, s1.n1), crandn(rng, s1.n2)
            assert np.allclose(nd_hankel_matvec(z, v, sn), hankel_matvec(z, v, s1), atol=1e-12)
            assert np.allclose(nd_adjoint_rank_one(u, v, sn), adjoint_rank_one(u, v, s1), atol=1e-12)
            assert np.array_equal(nd_hankel_dense(z, sn), hankel_dense(z, s1))

    def test_separable_rank_one(self, rng):
        s = make_nd_shape((6, 7, 5))
        sig = NdSignal.from_modes(s.dims, [NdMode((0.1, 0.3, 0.7), (0.0, 0.05, 0.0), 2 + 1j)])
        E_L, E_R, D = nd_vandermonde_factors(sig, s)
        v = crandn(rng, s.n2)
        assert rel(nd_hankel_matvec(sig.entries, v, s), E_L @ (D @ (E_R.T @ v))) <= 1e-12

    def test_vandermonde_rank(self):
        s = make_nd_shape((7, 6, 9))
        sig = generate_nd_signal(s.dims, 3, (0.0, 0.05), seed=2)
        H = nd_hankel_dense(sig.entries, s)
        sv = np.linalg.svd(H, compute_uv=False)
        assert sv[3] <= 1e-10 * sv[0]
        E_L, E_R, D = nd_vandermonde_factors(sig, s)
        assert rel(E_L @ D @ E_R.T, H) <= 1e-12

    def test_pseudo_inverse_identity(self, rng):
        for _ in range(10):
            s = random_case(rng, 2000)
            X = crandn(rng, *s.dims)
            U, sv, Vh = np.linalg.svd(nd_hankel_dense(X, s), full_matrices=False)
            back = s.pinv_lowrank(U, sv, Vh.conj().T)
            assert rel(back, X.reshape(-1)) <= 1e-10


class TestSignal:
    def test_mode_evaluation(self):
        m = NdMode((0.2, 0.4), (0.1, 0.0), 1 - 2j)
        X = evaluate_nd_modes((4, 3), [m])
        for a, b in itertools.product(range(4), range(3)):
            ref = m.d * np.exp((2j * np.pi * 0.2 - 0.1) * a) * np.exp(2j * np.pi * 0.4 * b)
            assert abs(X[a, b] - ref) <= 1e-12 * abs(ref)

    @pytest.mark.parametrize("binary", [True, False])
    def test_roundtrip(self, tmp_path, binary):
        sig = generate_nd_signal((3, 4, 5), 2, seed=1)
        sig.save(tmp_path / "x.dat", binary=binary)
        back = NdSignal.load(tmp_path / "x.dat")
        assert back.dims == sig.dims and back.modes == sig.modes
        assert np.array_equal(back.entries, sig.entries)

    def test_binary_layout(self, tmp_path):
        sig = NdSignal((2, 2), np.array([[1 + 2j, 3 + 4j], [5 + 6j, 7 + 8j]]))
        sig.save(tmp_path / "x.dat")
        raw = (tmp_path / "x.dat").read_bytes()
        payload = raw.split(b"\n", 1)[1]
        assert np.frombuffer(payload, "<f8").tolist() == [1, 2, 3, 4, 5, 6, 7, 8]

    def test_truncated(self, tmp_path):
        sig = generate_nd_signal((3, 3), 1, seed=0)
        sig.save(tmp_path / "x.dat")
        data = (tmp_path / "x.dat").read_bytes()
        (tmp_path / "y.dat").write_bytes(data[:-8])
        with pytest.raises(ValueError):
            NdSignal.load(tmp_path / "y.dat")


class TestSolve:
    def test_separable_full_sampling(self):
        s = make_nd_shape((5, 6, 7))
        sig = NdSignal.from_modes(s.dims, [NdMode((0.1, 0.2, 0.3), (0.0, 0.0, 0.0), 1.0)])
        res = nd_fiht_solve(sig.entries, SampleSet.full(s.n), 1, s, SolverConfig(tol_residual=1e-12))
        assert res.iterations <= 2
        assert rel(res.x_rec, sig.flat) <= 1e-8

    def test_small_3d(self):
        dims = (9, 9, 15)
        s = make_nd_shape(dims)
        ok = 0
        for seed in range(5):
            sig = generate_nd_signal(dims, 3, (0.0, 0.02), seed=seed)
            om_idx = np.random.default_rng(seed + 99).choice(s.n, int(0.2 * s.n), replace=False)
            om = SampleSet(s.n, om_idx)
            obs = np.zeros(s.n, complex)
            obs[om_idx] = sig.flat[om_idx]
            res = nd_fiht_solve(obs, om, 3, s, SolverConfig(tol_residual=0, tol_step=1e-6), x_true=sig.flat)
            ok += rel(res.x_rec, sig.flat) <= 1e-4
        assert ok >= 4

    def test_memory_budget(self):
        s = make_nd_shape((31, 31, 511))
        with pytest.raises(MemoryBudgetError):
            nd_fiht_solve(np.zeros(s.n), SampleSet(s.n, [0]), 10, s, memory_budget=2**20)
