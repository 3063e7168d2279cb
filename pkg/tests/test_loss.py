"""Assignment, topology edges, loss assembly and gradient oracles."""

import numpy as np
import pytest

from dualcl.layers import DclLayer, DeepDcl, DenseLayer, VclLayer, dcl_forward, new_deep_dcl
from dualcl.loss import (
    assign,
    chl_edges,
    connected_components,
    grad_dcl,
    grad_deep,
    grad_prototypes,
    grad_vcl,
    loss_given_assignment,
    prune_lonely,
    quantization,
    total_loss,
    valid_prototypes,
)


def fd_gradient(fun, theta, h=1e-6):
    """Central finite differences of a scalar function of an array."""
    g = np.zeros_like(theta)
    flat = theta.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = fun(theta)
        flat[i] = orig - h
        lo = fun(theta)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


class TestAssign:
    def test_separated_pairs(self):
        X = np.array([[-1.0, 1.0]])
        P = np.array([[-1.0, 1.0]])
        a = assign(X, P)
        assert a.winner1.tolist() == [0, 1]
        assert a.winner2.tolist() == [1, 0]
        assert a.counts.tolist() == [1, 1]

    def test_tie_breaks_to_lower_index(self):
        # sample at 1 is equidistant from prototypes at 0 and 2 (indices 1, 3)
        X = np.array([[1.0]])
        P = np.array([[5.0, 0.0, 9.0, 2.0]])
        a = assign(X, P)
        assert a.winner1[0] == 1
        assert a.winner2[0] == 3

    def test_brute_force_sort_oracle(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((2, 200))
        P = rng.standard_normal((2, 30))
        a = assign(X, P)
        for i in range(200):
            dists = [float(np.sum((X[:, i] - P[:, j]) ** 2)) for j in range(30)]
            order = sorted(range(30), key=lambda j: (dists[j], j))
            assert a.winner1[i] == order[0]
            assert a.winner2[i] == order[1]

    def test_counts_sum_to_n(self):
        rng = np.random.default_rng(1)
        a = assign(rng.standard_normal((3, 50)), rng.standard_normal((3, 6)))
        assert int(a.counts.sum()) == 50

    def test_rejects_single_prototype(self):
        with pytest.raises(ValueError, match="at least 2"):
            assign(np.zeros((2, 4)), np.zeros((2, 1)))


class TestChlEdges:
    def test_single_edge_topology(self):
        X = np.array([[0.0, 0.1, -0.1]])
        P = np.array([[0.0, 1.0, 50.0]])
        a = assign(X, P)
        e = chl_edges(a, P)
        nonzero = np.argwhere(e.values > 0)
        assert sorted(map(tuple, nonzero.tolist())) == [(0, 1), (1, 0)]
        assert e.occupancy[0, 1] == 3

    def test_coincident_prototypes_zero_weight(self):
        X = np.array([[0.0, 0.2]])
        P = np.array([[0.0, 0.0, 9.0]])
        a = assign(X, P)
        e = chl_edges(a, P)
        assert e.occupancy[0, 1] > 0
        assert e.values[0, 1] == 0.0

    def test_symmetry_and_zero_diagonal(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((2, 40))
        P = rng.standard_normal((2, 5))
        e = chl_edges(assign(X, P), P)
        assert np.array_equal(e.values, e.values.T)
        assert np.array_equal(e.occupancy, e.occupancy.T)
        assert np.all(np.diag(e.values) == 0)
        assert np.all(np.diag(e.occupancy) == 0)
        assert np.all(e.values[e.occupancy == 0] == 0)


class TestQuantization:
    def test_perfect_quantization(self):
        X = np.array([[-1.0, 1.0]])
        P = np.array([[-1.0, 1.0]])
        assert quantization(X, P, assign(X, P)) == 0.0

    def test_hand_computation(self):
        X = np.array([[0.0, 2.0]])
        P = np.array([[1.0, 9.0]])
        a = assign(X, P)
        assert a.winner1.tolist() == [0, 0]
        assert quantization(X, P, a) == pytest.approx(1.0, abs=1e-14)

    def test_direct_summation_oracle(self):
        rng = np.random.default_rng(12)
        X = rng.standard_normal((3, 25))
        P = rng.standard_normal((3, 4))
        a = assign(X, P)
        expected = sum(
            float(np.sum((X[:, i] - P[:, a.winner1[i]]) ** 2)) for i in range(25)
        ) / 25
        assert quantization(X, P, a) == pytest.approx(expected, rel=1e-12)


class TestTotalLoss:
    def test_lambda_zero_is_pure_quantization(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((2, 30))
        P = rng.standard_normal((2, 4))
        brk = total_loss(X, P, lam=0.0)
        assert brk.total == brk.quantization

    def test_linearity_in_lambda(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((2, 30))
        P = rng.standard_normal((2, 4))
        one = total_loss(X, P, lam=0.01)
        two = total_loss(X, P, lam=0.02)
        assert two.total - two.quantization == 2 * (one.total - one.quantization)

    def test_decomposition_exact(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            X = rng.standard_normal((3, 20))
            P = rng.standard_normal((3, 5))
            brk = total_loss(X, P, lam=0.37)
            assert brk.total == brk.quantization + brk.lam * brk.edge_norm


class TestGradVcl:
    def test_centroid_is_critical_point(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((2, 10))
        P = rng.standard_normal((2, 2)) * 10
        a = assign(X, P)
        W = P.T.copy()
        for j in range(2):
            members = a.winner1 == j
            if members.any():
                W[j] = X[:, members].mean(axis=1)
        # keep the original assignment frozen while placing rows on centroids
        g = grad_vcl(X, VclLayer(weights=W), a, lam=0.0)
        for j in range(2):
            if a.counts[j] > 0:
                assert np.linalg.norm(g[j]) <= 1e-12

    def test_single_sample_direction(self):
        X = np.array([[2.0], [1.0]])
        W = np.array([[0.0, 0.0], [50.0, 50.0]])
        a = assign(X, W.T)
        g = grad_vcl(X, VclLayer(weights=W), a, lam=0.0)
        np.testing.assert_allclose(g[0], 2.0 * (W[0] - X[:, 0]), atol=1e-12)
        np.testing.assert_allclose(g[1], 0.0, atol=1e-12)

    def test_finite_difference_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            X = rng.standard_normal((3, 12))
            layer = VclLayer(weights=rng.standard_normal((4, 3)))
            a = assign(X, layer.weights.T)
            lam = 0.05
            g = grad_vcl(X, layer, a, lam)
            fd = fd_gradient(
                lambda W: loss_given_assignment(X, W.T, a, lam).total,
                layer.weights.copy(),
            )
            assert rel_err(g, fd) <= 1e-5

    def test_empty_voronoi_row_is_zero(self):
        X = np.array([[0.0, 0.1]])
        W = np.array([[0.05], [99.0]])
        a = assign(X, W.T)
        g = grad_vcl(X, VclLayer(weights=W), a, lam=0.0)
        assert np.all(g[1] == 0)


class TestGradDcl:
    def test_pseudoinverse_critical_point(self):
        from dualcl.linalg import pseudoinverse

        rng = np.random.default_rng(8)
        X = rng.standard_normal((6, 4))
        # freeze an assignment computed from a random start
        W0 = rng.standard_normal((2, 4))
        a = assign(X, dcl_forward(DclLayer(weights=W0), X))
        W = np.zeros((2, 4))
        pinv = pseudoinverse(X)
        for j in range(2):
            members = a.winner1 == j
            mu = X[:, members].mean(axis=1) if members.any() else np.zeros(6)
            W[j] = pinv @ mu
        g = grad_dcl(X, DclLayer(weights=W), a, lam=0.0)
        assert np.max(np.abs(g)) <= 1e-8

    def test_single_sample_formula(self):
        rng = np.random.default_rng(9)
        X = rng.standard_normal((3, 1))
        W = rng.standard_normal((2, 1))
        a = assign(X, dcl_forward(DclLayer(weights=W), X))
        g = grad_dcl(X, DclLayer(weights=W), a, lam=0.0)
        j = a.winner1[0]
        expected = 2.0 * (X.T @ X @ W[j] - X.T @ X[:, 0])
        np.testing.assert_allclose(g[j], expected, atol=1e-12)

    def test_finite_difference_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(5):
            X = rng.standard_normal((3, 8))
            layer = DclLayer(weights=rng.standard_normal((3, 8)))
            a = assign(X, dcl_forward(layer, X))
            lam = 0.05
            g = grad_dcl(X, layer, a, lam)
            fd = fd_gradient(
                lambda W: loss_given_assignment(
                    X, dcl_forward(DclLayer(weights=W), X), a, lam
                ).total,
                layer.weights.copy(),
            )
            assert rel_err(g, fd) <= 1e-5

    def test_bias_gradient_matches_fd(self):
        from dualcl.loss import grad_dcl_bias

        rng = np.random.default_rng(20)
        X = rng.standard_normal((3, 8))
        layer = DclLayer(weights=rng.standard_normal((2, 8)), bias=rng.standard_normal(2))
        a = assign(X, dcl_forward(layer, X))
        lam = 0.05
        g = grad_dcl_bias(X, layer, a, lam)
        fd = fd_gradient(
            lambda b: loss_given_assignment(
                X, dcl_forward(DclLayer(weights=layer.weights, bias=b), X), a, lam
            ).total,
            layer.bias.copy(),
        )
        assert rel_err(g, fd) <= 1e-5


class TestGradDeep:
    def test_empty_encoder_reduces_to_grad_dcl(self):
        rng = np.random.default_rng(11)
        X = rng.standard_normal((3, 7))
        head = DclLayer(weights=rng.standard_normal((2, 7)))
        model = DeepDcl(encoder=[], head=head)
        a = assign(X, dcl_forward(head, X))
        deep = grad_deep(model, X, a, lam=0.02)
        shallow = grad_dcl(X, head, a, lam=0.02)
        np.testing.assert_allclose(deep.head, shallow, atol=1e-12)
        assert deep.encoder == []

    def test_identity_encoder_head_gradient(self):
        rng = np.random.default_rng(12)
        X = rng.standard_normal((3, 7))
        head = DclLayer(weights=rng.standard_normal((2, 7)))
        ident = DenseLayer(weights=np.eye(3), bias=np.zeros(3), activation="identity")
        model = DeepDcl(encoder=[ident], head=head)
        a = assign(X, dcl_forward(head, X))
        deep = grad_deep(model, X, a, lam=0.0)
        shallow = grad_dcl(X, head, a, lam=0.0)
        np.testing.assert_allclose(deep.head, shallow, atol=1e-12)

    def test_finite_difference_all_parameters(self):
        rng = np.random.default_rng(13)
        model = new_deep_dcl(d=4, n=6, k=2, hidden=(3,), encoded_dim=2, seed=5)
        X = rng.standard_normal((4, 6))
        from dualcl.layers import deep_forward

        F, P = deep_forward(model, X)
        a = assign(F, P)
        lam = 0.05

        def loss_now():
            F2, P2 = deep_forward(model, X)
            return loss_given_assignment(F2, P2, a, lam).total

        grads = grad_deep(model, X, a, lam)
        for idx, layer in enumerate(model.encoder):
            fd_w = fd_gradient(lambda _: loss_now(), layer.weights)
            assert rel_err(grads.encoder[idx][0], fd_w) <= 1e-4
            fd_b = fd_gradient(lambda _: loss_now(), layer.bias)
            assert rel_err(grads.encoder[idx][1], fd_b) <= 1e-4
        fd_head = fd_gradient(lambda _: loss_now(), model.head.weights)
        assert rel_err(grads.head, fd_head) <= 1e-4


class TestDescentAndDuality:
    def test_small_step_never_increases_frozen_loss(self):
        rng = np.random.default_rng(14)
        eps = 1e-4
        for _ in range(20):
            X = rng.standard_normal((2, 15))
            layer = VclLayer(weights=rng.standard_normal((3, 2)))
            a = assign(X, layer.weights.T)
            lam = 0.01
            before = loss_given_assignment(X, layer.weights.T, a, lam).total
            stepped = layer.weights - eps * grad_vcl(X, layer, a, lam)
            after = loss_given_assignment(X, stepped.T, a, lam).total
            assert after <= before + 1e-12

    def test_duality_fixed_point_frozen_assignment(self):
        # with matched frozen Voronoi sets both layers converge to centroids
        rng = np.random.default_rng(15)
        X = rng.standard_normal((3, 12))
        vcl = VclLayer(weights=rng.standard_normal((2, 3)))
        dcl = DclLayer(weights=rng.standard_normal((2, 12)))
        a = assign(X, vcl.weights.T)
        for _ in range(8000):
            vcl.weights -= 0.05 * grad_vcl(X, vcl, a, lam=0.0)
            dcl.weights -= 0.005 * grad_dcl(X, dcl, a, lam=0.0)
        for j in range(2):
            members = a.winner1 == j
            if not members.any():
                continue
            mu = X[:, members].mean(axis=1)
            bound = 1e-3 * np.linalg.norm(mu) + 1e-6
            assert np.linalg.norm(vcl.weights[j] - mu) <= bound
            assert np.linalg.norm(X @ dcl.weights[j] - mu) <= bound


class TestValidityAndPruning:
    def test_single_attractor(self):
        X = np.array([[0.0, 0.1, -0.1, 0.05]])
        P = np.array([[0.0, 80.0]])
        a = assign(X, P)
        assert valid_prototypes(a) == 1

    def test_prune_keeps_all_first_winners(self):
        rng = np.random.default_rng(16)
        for _ in range(10):
            X = rng.standard_normal((2, 30))
            P = rng.standard_normal((2, 8)) * 2
            a = assign(X, P)
            e = chl_edges(a, P)
            kept = e.occupancy.sum(axis=1) > 0
            assert all(kept[j] for j in np.unique(a.winner1))
            pruned = prune_lonely(P, e)
            assert pruned.shape == (2, int(kept.sum()))

    def test_connected_components(self):
        occ = np.zeros((5, 5), dtype=np.int64)
        occ[0, 1] = occ[1, 0] = 3
        occ[2, 3] = occ[3, 2] = 1
        # prototype 4 is lonely and does not count as a cluster
        assert connected_components(occ) == 2
        occ[1, 2] = occ[2, 1] = 2
        assert connected_components(occ) == 1

    def test_grad_prototypes_matches_fd_with_edges(self):
        rng = np.random.default_rng(17)
        X = rng.standard_normal((2, 20))
        P = rng.standard_normal((2, 5))
        a = assign(X, P)
        g = grad_prototypes(X, P, a, lam=0.1)
        fd = fd_gradient(
            lambda Q: loss_given_assignment(X, Q, a, 0.1).total, P.copy()
        )
        assert rel_err(g, fd) <= 1e-5
