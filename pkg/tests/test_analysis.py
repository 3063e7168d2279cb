"""Gradient-flow predictions versus discrete training, rate fits, subspaces."""

import numpy as np
import pytest

from dualcl.analysis import (
    decompose_dual_flow,
    duality_checks,
    fit_decay_rates,
    flow_times,
    predict_base_flow,
    predict_dual_flow,
    subspace_residuals,
)
from dualcl.layers import DclLayer, VclLayer, dcl_forward
from dualcl.linalg import pseudoinverse, svd
from dualcl.loss import VoronoiAssignment, assign, grad_dcl, grad_vcl
from dualcl.trainer import TrainConfig, train
from dualcl.datasets import Dataset


def orthonormal_rows(d, n, seed):
    """Data with X X^T = I_d (requires n >= d)."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, d)))
    return q[:, :d].T


class TestPredictDualFlow:
    def test_critical_point_is_constant(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((5, 3))
        mu = X @ rng.dirichlet(np.ones(3))
        crit = pseudoinverse(X) @ mu
        traj = predict_dual_flow(X, crit, mu, epochs=20, eps=0.01)
        np.testing.assert_allclose(traj, np.tile(crit, (21, 1)), atol=1e-12)

    def test_limit_satisfies_normal_equations(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((6, 3))  # d >= n
        w0 = rng.standard_normal(3)
        mu = X @ rng.dirichlet(np.ones(3))
        traj = predict_dual_flow(X, w0, mu, epochs=30000, eps=0.05)
        end = traj[-1]
        assert np.linalg.norm(X.T @ X @ end - X.T @ mu) <= 1e-8

    def test_whitened_data_decays_at_unit_rate(self):
        X = orthonormal_rows(3, 6, seed=2)
        pred, _ = decompose_dual_flow(X, np.zeros(6), X.mean(axis=1), eps=0.01)
        nonzero = pred.rates[~pred.center_mask]
        np.testing.assert_allclose(nonzero, 1.0, atol=1e-10)

    def test_center_modes_stay_constant(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((2, 6))  # n > d: 4 center modes
        w0 = rng.standard_normal(6)
        mu = X @ rng.dirichlet(np.ones(6))
        traj = predict_dual_flow(X, w0, mu, epochs=200, eps=0.05)
        f = svd(X)
        center_coords = traj @ f.v[:, 2:]
        for t in range(201):
            np.testing.assert_allclose(center_coords[t], center_coords[0], atol=1e-9)


class TestPredictBaseFlow:
    def test_centroid_start_is_constant(self):
        mu = np.array([1.0, -2.0, 3.0])
        traj = predict_base_flow(mu, mu, epochs=10, eps=0.1, n_samples=4)
        np.testing.assert_allclose(traj, np.tile(mu, (11, 1)), atol=1e-15)

    def test_isotropic_decay_factor(self):
        rng = np.random.default_rng(4)
        w0 = rng.standard_normal(5)
        mu = rng.standard_normal(5)
        traj = predict_base_flow(w0, mu, epochs=50, eps=0.02, n_samples=3)
        dev = traj - mu[None, :]
        ratios = dev[10] / dev[0]
        np.testing.assert_allclose(ratios, ratios[0], atol=1e-12)

    def test_discrete_gd_matches_ode(self):
        # two samples, two prototypes, frozen cells of one sample each:
        # the discrete update matches the continuous prediction to O(eps)
        rng = np.random.default_rng(5)
        X = rng.standard_normal((3, 2))
        weights = rng.standard_normal((2, 3))
        a = VoronoiAssignment(
            winner1=np.array([0, 1]), winner2=np.array([1, 0]), counts=np.array([1, 1])
        )
        eps = 1e-3
        layer = VclLayer(weights=weights.copy())
        recorded = [layer.weights[0].copy()]
        for _ in range(200):
            layer.weights -= eps * grad_vcl(X, layer, a, lam=0.0)
            recorded.append(layer.weights[0].copy())
        predicted = predict_base_flow(
            weights[0], X[:, 0], epochs=200, eps=eps, n_samples=2
        )
        scale = np.linalg.norm(weights[0] - X[:, 0])
        gap = np.max(np.linalg.norm(np.array(recorded) - predicted, axis=1))
        assert gap <= 0.02 * scale

    def test_agrees_with_dual_flow_under_whitening(self):
        # all nonzero rates equal 1 and no centers: the flows coincide
        X = orthonormal_rows(4, 4, seed=6)
        rng = np.random.default_rng(7)
        w0 = rng.standard_normal(4)
        mu = X @ rng.dirichlet(np.ones(4))
        dual = predict_dual_flow(X, w0, mu, epochs=100, eps=0.02)
        base = predict_base_flow(X @ w0, mu, epochs=100, eps=0.02, n_samples=4)
        gap = np.max(np.abs(dual @ X.T - base))
        assert gap <= 1e-9


class TestFitDecayRates:
    def test_recovers_exact_synthetic_rates(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((3, 2))
        w0 = rng.standard_normal(2)
        mu = X @ rng.dirichlet(np.ones(2))
        eps = 1e-3
        traj = predict_dual_flow(X, w0, mu, epochs=400, eps=eps)
        f = svd(X)
        crit = pseudoinverse(X) @ mu
        fit = fit_decay_rates(traj, f, eps, center=crit)
        for i in range(2):
            if fit.observable[i]:
                assert abs(fit.rates[i] + f.singular_values[i] ** 2) <= 1e-6

    def test_dcl_training_rates_match_theory(self):
        # frozen one-sample cells; fitted top-mode rate within 10% of -sigma^2
        rng = np.random.default_rng(9)
        X = rng.standard_normal((3, 2))
        f = svd(X)
        layer = DclLayer(weights=rng.standard_normal((2, 2)))
        a = VoronoiAssignment(
            winner1=np.array([0, 1]), winner2=np.array([1, 0]), counts=np.array([1, 1])
        )
        eps = 1e-3
        snapshots = [layer.weights[0].copy()]
        for _ in range(2000):
            layer.weights -= eps * grad_dcl(X, layer, a, lam=0.0)
            snapshots.append(layer.weights[0].copy())
        crit = pseudoinverse(X) @ X[:, 0]
        fit = fit_decay_rates(np.array(snapshots), f, eps, center=crit)
        assert fit.observable[0]
        assert abs(fit.rates[0] + f.singular_values[0] ** 2) <= 0.1 * f.singular_values[0] ** 2

    def test_base_layer_rates_isotropic(self):
        rng = np.random.default_rng(10)
        X = rng.standard_normal((3, 2))
        f = svd(X)
        layer = VclLayer(weights=rng.standard_normal((2, 3)))
        a = VoronoiAssignment(
            winner1=np.array([0, 1]), winner2=np.array([1, 0]), counts=np.array([1, 1])
        )
        eps = 1e-3
        snapshots = [layer.weights[0].copy()]
        for _ in range(2000):
            layer.weights -= eps * grad_vcl(X, layer, a, lam=0.0)
            snapshots.append(layer.weights[0].copy())
        fit = fit_decay_rates(np.array(snapshots), f, eps, center=X[:, 0])
        rates = fit.rates[fit.observable]
        assert rates.size >= 2
        spread = (rates.max() - rates.min()) / abs(rates.mean())
        assert spread <= 0.05

    def test_dimension_mismatch_rejected(self):
        f = svd(np.eye(3))
        with pytest.raises(ValueError, match="matches neither"):
            fit_decay_rates(np.zeros((5, 7)), f, eps=0.1)


class TestSubspaceResiduals:
    def test_vector_in_span(self):
        rng = np.random.default_rng(11)
        X = rng.standard_normal((5, 2))
        v = X @ rng.standard_normal((2, 1))
        rep = subspace_residuals(v, X, "range_X")
        assert rep.basis_rank == 2
        assert rep.residual_norms[0] <= 1e-10

    def test_orthogonal_vector(self):
        X = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])[:, :2]
        v = np.array([[0.0], [0.0], [2.5]])
        rep = subspace_residuals(v, X, "range_X")
        assert rep.residual_norms[0] == pytest.approx(2.5, abs=1e-12)

    def test_trained_vcl_prototypes_approach_data_range(self):
        import warnings

        rng = np.random.default_rng(12)
        X = rng.standard_normal((3, 2))
        ds = Dataset(X=X, labels=None, name="tiny")
        # seed picked so each prototype wins one sample; a dead unit would
        # simply keep its initial residual
        cfg = TrainConfig(
            model_kind="vcl", k=2, epochs=300, learning_rate=0.05, lam=0.0, seed=0
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            _, trace = train(ds, cfg)
        curve = np.array(
            [
                subspace_residuals(trace.prototypes[t], ds.X, "range_X").residual_norms.max()
                for t in range(trace.prototypes.shape[0])
            ]
        )
        smooth = np.convolve(curve, np.ones(10) / 10, mode="valid")
        assert np.all(np.diff(smooth) <= 1e-12)
        assert curve[-1] <= 1e-3 * max(curve[0], 1e-12) + 1e-9

    def test_bad_subspace_name(self):
        with pytest.raises(ValueError, match="range_X"):
            subspace_residuals(np.zeros((2, 1)), np.eye(2), "span")


class TestDualityChecks:
    def test_constructed_white_data(self):
        X = orthonormal_rows(3, 8, seed=13)
        rep = duality_checks(X)
        assert rep.base_whiteness <= 1e-10
        assert rep.u_recovery_max_error <= 1e-9
        assert rep.centroid_recovery_max_error <= 1e-9

    def test_overcomplete_duality_impossible(self):
        rng = np.random.default_rng(14)
        X = rng.standard_normal((3, 9))  # n > d: rank deficiency forces >= 1
        rep = duality_checks(X)
        assert rep.dual_whiteness >= 1.0

    def test_u_recovery_on_random_data(self):
        rng = np.random.default_rng(15)
        rep = duality_checks(rng.standard_normal((6, 4)))
        assert rep.u_recovery_max_error <= 1e-9

    def test_critical_point_consistency_both_branches(self):
        rng = np.random.default_rng(16)
        for d, n in [(7, 3), (3, 7)]:
            X = rng.standard_normal((d, n))
            mu = X @ rng.dirichlet(np.ones(n))
            w = pseudoinverse(X) @ mu
            assert np.linalg.norm(X.T @ X @ w - X.T @ mu) <= 1e-8


class TestFlowTimes:
    def test_mapping(self):
        t = flow_times(4, eps=0.01, n_samples=2)
        np.testing.assert_allclose(t, [0.0, 0.01, 0.02, 0.03, 0.04])
