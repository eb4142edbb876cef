from __future__ import annotations

import tracemalloc

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from butterfly_completion.network import (ButterflyNetwork, LowRankPair, QttNetwork, assemble_block_sparse_oracle,
                                          evaluate_entries, matvec, random_network, random_qtt_network,
                                          reconstruct_dense, reconstruct_entry)
from butterfly_completion.indexing import index_to_tuple
from conftest import rel_fro


def l0_network():
    return ButterflyNetwork(0, 2, 1, [np.array([[[1], [2]]]), np.array([[[3], [4]]])])


class TestButterflyNetwork:
    def test_core_shapes(self):
        net = random_network(3, 2, 4, seed=0)
        assert len(net.cores) == 5
        assert [c.shape for c in net.cores] == [(8, 2, 4)] + [(16, 4, 4)] * 3 + [(8, 2, 4)]
        assert net.n == 16

    def test_rejects_bad_shapes(self):
        net = random_network(2, 2, 2, seed=0)
        with pytest.raises(ValueError):
            ButterflyNetwork(2, 2, 2, net.cores[:-1])
        with pytest.raises(ValueError):
            ButterflyNetwork(2, 2, 3, net.cores)
        with pytest.raises(ValueError):
            ButterflyNetwork(2, 0, 2, net.cores)

    def test_real_input_becomes_complex(self):
        assert l0_network().cores[0].dtype == np.complex128

    def test_random_network_determinism(self):
        a = random_network(2, 2, 2, seed=7)
        b = random_network(2, 2, 2, seed=7)
        c = random_network(2, 2, 2, seed=8)
        assert all(np.array_equal(x, y) for x, y in zip(a.cores, b.cores))
        assert not np.array_equal(a.cores[0], c.cores[0])

    def test_zero_scale(self):
        net = random_network(2, 2, 2, seed=1, scale=0.0)
        assert not np.any(reconstruct_dense(net))


class TestReconstruction:
    def test_ones(self):
        net = ButterflyNetwork.ones(3, 2)
        assert reconstruct_entry(net, 5, 11) == 1
        np.testing.assert_array_equal(reconstruct_dense(net), np.ones((16, 16)))

    def test_l0_hand_example(self):
        net = l0_network()
        assert reconstruct_entry(net, 1, 0) == 6
        np.testing.assert_array_equal(reconstruct_dense(net), [[3, 4], [6, 8]])

    def test_entry_equals_dense_exactly(self):
        net = random_network(2, 2, 2, seed=3)
        D = reconstruct_dense(net)
        for i in range(net.n):
            for j in range(net.n):
                assert reconstruct_entry(net, i, j) == D[i, j]

    def test_entry_matches_explicit_chain(self):
        # direct product s1(i-prefix, i_L) S2 ... S_{L+1} s_{L+2}(j-prefix, j_L)
        net = random_network(2, 2, 2, seed=4)
        from butterfly_completion.indexing import block_key
        L = 2
        for i, j in [(0, 0), (3, 6), (7, 1), (5, 5)]:
            ti, tj = index_to_tuple(i, L, 2), index_to_tuple(j, L, 2)
            x = net.cores[0][block_key(1, ti[:L], L), ti[L]]
            for m in range(1, L + 1):
                x = x @ net.cores[m][block_key(m + 1, ti[:L - m + 1] + tj[:m], L)]
            x = x @ net.cores[L + 1][block_key(L + 2, tj[:L], L), tj[L]]
            assert abs(reconstruct_entry(net, i, j) - x) <= 1e-12 * abs(x)

    def test_size_guard(self):
        net = random_network(4, 4, 1, seed=0)
        with pytest.raises(MemoryError):
            reconstruct_dense(net, max_n=32)

    def test_range_error(self):
        with pytest.raises(IndexError):
            reconstruct_entry(l0_network(), 2, 0)

    def test_grouped_path_agrees(self):
        net = random_network(3, 2, 3, seed=5)
        rows, cols = np.divmod(np.arange(net.n ** 2), net.n)
        assert rel_fro(evaluate_entries(net, rows, cols), reconstruct_dense(net).ravel()) <= 1e-13


class TestBlockSparseOracle:
    def test_l0_is_product(self):
        np.testing.assert_allclose(assemble_block_sparse_oracle(l0_network()), [[3, 4], [6, 8]])

    def test_ones(self):
        np.testing.assert_allclose(assemble_block_sparse_oracle(ButterflyNetwork.ones(2, 3)), np.ones((12, 12)))

    @pytest.mark.parametrize("levels", [0, 1, 2, 3])
    @pytest.mark.parametrize("leaf", [1, 2, 4])
    @pytest.mark.parametrize("rank", [1, 2, 3])
    def test_equivalence(self, levels, leaf, rank):
        net = random_network(levels, leaf, rank, seed=100 * levels + 10 * leaf + rank)
        assert rel_fro(reconstruct_dense(net), assemble_block_sparse_oracle(net)) <= 1e-12

    def test_factor_sparsity(self):
        # each butterfly factor has exactly 2 nonzero r x r blocks per block row
        net = random_network(2, 1, 1, seed=0)
        oracle = assemble_block_sparse_oracle(net)
        assert oracle.shape == (4, 4)


class TestMatvec:
    def test_zero_vector(self):
        net = random_network(3, 2, 2, seed=0)
        np.testing.assert_array_equal(matvec(net, np.zeros(16)), np.zeros(16))

    def test_ones_operator(self, rng):
        v = rng.standard_normal(24) + 1j * rng.standard_normal(24)
        np.testing.assert_allclose(matvec(ButterflyNetwork.ones(3, 3), v), np.full(24, v.sum()), rtol=1e-12)

    @pytest.mark.parametrize("levels, leaf, rank", [(0, 5, 2), (1, 2, 2), (3, 2, 3), (3, 4, 2), (5, 1, 2)])
    def test_matches_dense(self, levels, leaf, rank, rng):
        net = random_network(levels, leaf, rank, seed=levels + leaf)
        v = rng.standard_normal(net.n) + 1j * rng.standard_normal(net.n)
        D = reconstruct_dense(net)
        assert rel_fro(matvec(net, v), D @ v) <= 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            matvec(random_network(2, 2, 1, seed=0), np.ones(7))

    @settings(max_examples=25, deadline=None)
    @given(st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
           st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
           st.integers(0, 2 ** 31))
    def test_linearity(self, alpha, beta, seed):
        net = random_network(3, 2, 2, seed=11)
        r = np.random.default_rng(seed)
        v, w = (r.standard_normal((2, 16)) + 1j * r.standard_normal((2, 16)))
        lhs = matvec(net, alpha * v + beta * w)
        rhs = alpha * matvec(net, v) + beta * matvec(net, w)
        scale = max(np.linalg.norm(rhs), np.linalg.norm(lhs), 1e-300)
        assert np.linalg.norm(lhs - rhs) <= 1e-12 * scale + 1e-12 * (abs(alpha) + abs(beta)) * np.linalg.norm(
            matvec(net, np.abs(v) + np.abs(w)))

    def test_no_dense_intermediate(self, rng):
        # n = 4096: an n x n complex intermediate would need 256 MiB
        net = random_network(10, 4, 2, seed=0)
        v = rng.standard_normal(net.n) + 0j
        tracemalloc.start()
        matvec(net, v)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        assert peak < 64 * net.n * net.rank * 16 * 4


class TestQttNetwork:
    def test_core_count(self):
        q = random_qtt_network(3, 2, 2, seed=0)
        assert len(q.cores) == 4
        assert [c.shape for c in q.cores] == [(2, 2, 2), (2, 2, 2, 2), (2, 2, 2, 2), (2, 2, 2)]

    def test_rejects_l0(self):
        with pytest.raises(ValueError):
            QttNetwork(0, 2, 1, [np.ones((2, 2, 1))])

    def test_dense_matches_digit_products(self):
        q = random_qtt_network(3, 3, 2, seed=1)
        D = reconstruct_dense(q)
        for i, j in [(0, 0), (23, 5), (11, 17), (8, 22)]:
            ti, tj = index_to_tuple(i, 3, 3), index_to_tuple(j, 3, 3)
            x = q.cores[0][ti[0], tj[0]]
            for l in (1, 2):
                x = x @ q.cores[l][ti[l], tj[l]]
            x = x @ q.cores[3][ti[3], tj[3]]
            assert abs(D[i, j] - x) <= 1e-12 * abs(x)


class TestLowRankPair:
    def test_dense(self, rng):
        A = rng.standard_normal((6, 2)) + 1j * rng.standard_normal((6, 2))
        B = rng.standard_normal((6, 2)) + 1j * rng.standard_normal((6, 2))
        pair = LowRankPair(A, B)
        assert rel_fro(reconstruct_dense(pair), A @ B.T) <= 1e-14

    def test_rejects_mismatch(self):
        with pytest.raises(ValueError):
            LowRankPair(np.ones((4, 2)), np.ones((4, 3)))
        with pytest.raises(ValueError):
            LowRankPair(np.ones((4, 0)), np.ones((4, 0)))
