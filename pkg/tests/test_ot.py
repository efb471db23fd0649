import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import numeric_grad, permutation_ot
from tsap.ot import (
    DegenerateEmbeddingError,
    EmbeddingSet,
    SinkhornConfig,
    brute_force_ot,
    cost_matrix,
    exact_ot,
    normalize_embeddings,
    pointwise_loss,
    sinkhorn,
    sinkhorn_distance,
)
from tsap.tensor import Tensor, grad


def _val(t):
    return float(t.data)


class TestNormalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(normalize_embeddings(Tensor([[3.0, 4.0]])).data, [[0.6, 0.8]])

    def test_idempotent(self):
        z = normalize_embeddings(Tensor(np.random.default_rng(0).normal(size=(5, 3)))).data
        np.testing.assert_allclose(normalize_embeddings(Tensor(z)).data, z, atol=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1e-3, 1e3))
    def test_scale_invariant(self, c):
        z = np.random.default_rng(1).normal(size=(6, 4))
        a = normalize_embeddings(Tensor(z)).data
        b = normalize_embeddings(Tensor(c * z)).data
        assert np.abs(a - b).max() < 1e-12

    def test_zero_row_is_degenerate(self):
        with pytest.raises(DegenerateEmbeddingError, match="row 1"):
            normalize_embeddings(Tensor([[1.0, 0.0], [0.0, 0.0]]))

    def test_embedding_set_flag(self):
        out = normalize_embeddings(EmbeddingSet(Tensor([[2.0, 0.0]])))
        assert isinstance(out, EmbeddingSet) and out.normalized
        np.testing.assert_allclose(np.linalg.norm(out.z.data, axis=1), 1.0, atol=1e-9)

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            EmbeddingSet(Tensor(np.zeros((0, 3))))


class TestSinkhorn:
    def test_single_point_zero(self):
        assert _val(sinkhorn_distance(Tensor([[1.0, 2.0]]), Tensor([[1.0, 2.0]]))) == 0.0

    def test_single_coupling(self):
        np.testing.assert_allclose(_val(sinkhorn_distance(Tensor([[0.0]]), Tensor([[3.0]]))), 9.0)

    def test_identity_matching_limits(self):
        cfg = SinkhornConfig(epsilon=0.01, max_iter=2000, tol=1e-9)
        assert abs(_val(sinkhorn_distance(Tensor([[0.0], [1.0]]), Tensor([[0.0], [1.0]]), cfg))) < 0.02
        assert abs(_val(sinkhorn_distance(Tensor([[0.0], [1.0]]), Tensor([[2.0], [3.0]]), cfg)) - 4.0) < 0.02

    def test_plan_marginals(self):
        r = np.random.default_rng(2)
        cfg = SinkhornConfig(epsilon=0.2, tol=1e-8, max_iter=2000)
        res = sinkhorn(Tensor(r.normal(size=(7, 3))), Tensor(r.normal(size=(5, 3))), cfg)
        assert res.converged
        np.testing.assert_allclose(res.plan.sum(axis=1), 1 / 7, atol=1e-8)
        np.testing.assert_allclose(res.plan.sum(axis=0), 1 / 5, atol=1e-8)

    def test_symmetry(self):
        r = np.random.default_rng(3)
        A, B = r.normal(size=(6, 4)), r.normal(size=(6, 4))
        cfg = SinkhornConfig(tol=1e-12, max_iter=5000)
        assert abs(_val(sinkhorn_distance(Tensor(A), Tensor(B), cfg)) -
                   _val(sinkhorn_distance(Tensor(B), Tensor(A), cfg))) < 1e-9

    def test_nonconvergence_flagged(self, caplog):
        r = np.random.default_rng(4)
        cfg = SinkhornConfig(epsilon=1e-3, max_iter=2, tol=1e-12, scaling=None)
        res = sinkhorn(Tensor(r.normal(size=(5, 2))), Tensor(r.normal(size=(5, 2))), cfg)
        assert not res.converged and res.iterations == 2
        sinkhorn_distance(Tensor(r.normal(size=(5, 2))), Tensor(r.normal(size=(5, 2))), cfg)
        assert "Sinkhorn stopped" in caplog.text

    def test_graph_and_numpy_paths_agree(self):
        r = np.random.default_rng(5)
        A, B = r.normal(size=(6, 3)), r.normal(size=(4, 3))
        cfg = SinkhornConfig(epsilon=0.1, tol=1e-10, max_iter=500)
        plain = _val(sinkhorn_distance(Tensor(A), Tensor(B), cfg))
        graph = _val(sinkhorn_distance(Tensor(A, requires_grad=True), Tensor(B), cfg))
        assert abs(plain - graph) < 1e-12

    def test_gradient_matches_finite_differences(self):
        # fixed iteration count: differentiate exactly what is computed
        r = np.random.default_rng(6)
        A, B = r.normal(size=(5, 2)), r.normal(size=(4, 2))
        cfg = SinkhornConfig(epsilon=0.5, max_iter=50, tol=0.0, scaling=None)
        At = Tensor(A, requires_grad=True)
        analytic = grad(sinkhorn_distance(At, Tensor(B), cfg), At).data
        num = numeric_grad(lambda a: _val(sinkhorn_distance(Tensor(a, requires_grad=True), Tensor(B), cfg)), A)
        assert np.abs(analytic - num).max() / np.abs(num).max() < 1e-4

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, (4, 2), elements=st.floats(-5, 5)),
           hnp.arrays(np.float64, (3, 2), elements=st.floats(-5, 5)))
    def test_nonnegative(self, A, B):
        assert _val(sinkhorn_distance(Tensor(A), Tensor(B))) >= 0.0
        assert _val(pointwise_loss(Tensor(A), Tensor(B))) >= 0.0


class TestExactOT:
    def test_identical(self):
        A = np.random.default_rng(0).normal(size=(5, 2))
        assert exact_ot(A, A) == 0.0

    def test_one_dimensional_pairs(self):
        np.testing.assert_allclose(exact_ot(np.array([[0.0], [10.0]]), np.array([[1.0], [9.0]]), p=1), 1.0)

    def test_matches_permutation_oracle(self):
        r = np.random.default_rng(1)
        for _ in range(5):
            A, B = r.normal(size=(6, 3)), r.normal(size=(6, 3))
            np.testing.assert_allclose(exact_ot(A, B), permutation_ot(A, B), atol=1e-12)
            np.testing.assert_allclose(brute_force_ot(A, B), permutation_ot(A, B), atol=1e-12)

    def test_size_cap(self):
        with pytest.raises(ValueError, match="limited"):
            exact_ot(np.zeros((13, 1)), np.zeros((13, 1)))

    def test_unequal_sizes(self):
        with pytest.raises(ValueError):
            exact_ot(np.zeros((3, 1)), np.zeros((2, 1)))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 10_000))
    def test_sinkhorn_within_entropic_bound(self, n, seed):
        r = np.random.default_rng(seed)
        A, B = r.normal(size=(n, 2)), r.normal(size=(n, 2))
        C = cost_matrix(Tensor(A), Tensor(B)).data
        eps = max(0.01 * float(np.median(C)), 1e-4)
        cfg = SinkhornConfig(epsilon=eps, max_iter=2000, tol=1e-9)
        gap = abs(_val(sinkhorn_distance(Tensor(A), Tensor(B), cfg)) - exact_ot(A, B))
        assert gap <= eps * (math.log(n) + 1) + 1e-6


class TestPointwise:
    def test_equal_sets(self):
        A = np.random.default_rng(0).normal(size=(4, 3))
        assert _val(pointwise_loss(A, A)) == 0.0

    def test_mean_offset(self):
        np.testing.assert_allclose(_val(pointwise_loss(np.zeros((2, 2)), np.array([[3.0, 4.0], [3.0, 4.0]]))), 25.0)

    def test_blind_to_spread(self):
        A, B = np.array([[-1.0], [1.0]]), np.array([[-2.0], [2.0]])
        assert _val(pointwise_loss(A, B)) == 0.0
        assert exact_ot(A, B, p=1) == 1.0
        cfg = SinkhornConfig(p=1, epsilon=0.01, max_iter=2000, tol=1e-9)
        assert _val(sinkhorn_distance(Tensor(A), Tensor(B), cfg)) > 0.9

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            pointwise_loss(np.zeros((2, 2)), np.zeros((2, 3)))
