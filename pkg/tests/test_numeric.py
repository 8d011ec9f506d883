import math

import numpy as np
import pytest

from metalabel import (LinearClassifier, LogRegConfig, RidgeConfig, ValidationError,
                       grad_check, logreg_fit, mean_cross_entropy, one_hot, ridge_fit,
                       softmax_ce)


def ridge_normal_equation_oracle(X, y, n_classes, lam):
    """Independent solve of (X^T X + n*lam*I) W^T = X^T Y."""
    n, p = X.shape
    Y = one_hot(y, n_classes)
    A = X.T @ X + n * lam * np.eye(p)
    return np.linalg.solve(A, X.T @ Y).T


def logreg_gd_oracle(X, y, n_classes, lam, steps, lr):
    """Plain fixed-step full-batch gradient descent on the same objective."""
    n = X.shape[0]
    Y = one_hot(y, n_classes)
    W = np.zeros((n_classes, X.shape[1]))
    for _ in range(steps):
        Z = X @ W.T
        Z = Z - Z.max(axis=1, keepdims=True)
        P = np.exp(Z)
        P /= P.sum(axis=1, keepdims=True)
        W -= lr * ((P - Y).T @ X / n + 2 * lam * W)
    return W


class TestSoftmaxCE:
    def test_uniform_two_logits(self):
        assert softmax_ce([0.0, 0.0], 0) == pytest.approx(math.log(2), abs=1e-12)

    def test_direct_evaluation(self):
        # high-precision oracle: -log(e^3 / (e^1 + e^2 + e^3))
        assert softmax_ce([1.0, 2.0, 3.0], 2) == pytest.approx(0.4076059644443804,
                                                               abs=1e-12)

    def test_large_logit_is_stable(self):
        value = softmax_ce([1000.0, 0.0], 0)
        assert value == 0.0

    def test_nonnegative(self, rng):
        for _ in range(50):
            logits = rng.standard_normal(6) * 10
            assert softmax_ce(logits, int(rng.integers(6))) >= 0.0

    def test_shift_invariance(self, rng):
        for _ in range(50):
            logits = rng.standard_normal(5) * 5
            shift = float(rng.standard_normal() * 100)
            label = int(rng.integers(5))
            assert softmax_ce(logits + shift, label) == pytest.approx(
                softmax_ce(logits, label), abs=1e-12)

    def test_needs_two_logits(self):
        with pytest.raises(ValidationError):
            softmax_ce([1.0], 0)


class TestRidge:
    def test_standard_basis_unit_regularization(self):
        # two samples, X^T X = I; with n*lam = 1 the solve is (I + I)^{-1} = I/2
        X = np.eye(2)
        y = np.array([0, 1])
        clf = ridge_fit(X, y, 2, RidgeConfig(lam=0.5))
        assert np.allclose(clf.weights, 0.5 * np.eye(2), atol=1e-12)

    def test_matches_normal_equation_oracle(self, rng):
        X = rng.standard_normal((20, 6))
        y = rng.integers(0, 3, 20)
        for lam in (1e-3, 0.1, 1.0):
            clf = ridge_fit(X, y, 3, RidgeConfig(lam=lam))
            expected = ridge_normal_equation_oracle(X, y, 3, lam)
            assert np.abs(clf.weights - expected).max() < 1e-8

    def test_matches_gd_oracle(self, rng):
        X = rng.standard_normal((20, 6))
        y = rng.integers(0, 3, 20)
        clf = ridge_fit(X, y, 3, RidgeConfig(lam=0.1))
        W = np.zeros((3, 6))
        Y = one_hot(y, 3)
        for _ in range(200_000):
            W -= 0.01 * (2 / 20 * (W @ X.T @ X - Y.T @ X) + 2 * 0.1 * W)
        assert np.abs(clf.weights - W).max() < 1e-6

    def test_huge_regularization_shrinks_to_zero(self, rng):
        X = rng.standard_normal((10, 4))
        y = rng.integers(0, 2, 10)
        clf = ridge_fit(X, y, 2, RidgeConfig(lam=1e12))
        assert np.linalg.norm(clf.weights) <= 1e-6

    def test_normal_equation_residual(self, rng):
        X = rng.standard_normal((30, 5))
        y = rng.integers(0, 4, 30)
        lam = 1e-3
        clf = ridge_fit(X, y, 4, RidgeConfig(lam=lam))
        rhs = X.T @ one_hot(y, 4)
        residual = (X.T @ X + lam * 30 * np.eye(5)) @ clf.weights.T - rhs
        assert np.linalg.norm(residual) <= 1e-8 * np.linalg.norm(rhs)

    def test_permutation_equivariance(self, rng):
        X = rng.standard_normal((25, 4))
        y = rng.integers(0, 3, 25)
        perm = rng.permutation(25)
        a = ridge_fit(X, y, 3)
        b = ridge_fit(X[perm], y[perm], 3)
        assert np.abs(a.weights - b.weights).max() <= 1e-12

    def test_rejects_nonfinite(self):
        with pytest.raises(ValidationError):
            ridge_fit(np.array([[np.nan, 0.0]]), [0], 2)

    def test_bias_flag_appends_constant_feature(self, rng):
        X = rng.standard_normal((12, 3)) + 5.0
        y = rng.integers(0, 2, 12)
        clf = ridge_fit(X, y, 2, RidgeConfig(lam=0.1, add_bias=True))
        assert clf.bias is not None and clf.bias.shape == (2,)
        assert clf.decision_function(X).shape == (12, 2)


class TestLogReg:
    def test_separable_sign(self):
        X = np.array([[-1.0], [1.0]])
        y = np.array([0, 1])
        clf = logreg_fit(X, y, 2, LogRegConfig(lam=0.1))
        assert clf.weights[1, 0] - clf.weights[0, 0] > 0

    def test_huge_regularization_shrinks_to_zero(self, rng):
        X = rng.standard_normal((10, 3))
        y = rng.integers(0, 2, 10)
        # the optimum sits within float precision of zero, so the gradient-norm
        # stop stalls; the shrunken best iterate is still returned
        with pytest.warns(RuntimeWarning):
            clf = logreg_fit(X, y, 2, LogRegConfig(lam=1e12))
        assert np.linalg.norm(clf.weights) <= 1e-5

    def test_objective_matches_long_gd_oracle(self, rng):
        import warnings

        X = rng.standard_normal((30, 4))
        y = rng.integers(0, 3, 30)
        lam = 0.05
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            clf = logreg_fit(X, y, 3, LogRegConfig(lam=lam, tol=1e-9))
        W_oracle = logreg_gd_oracle(X, y, 3, lam, steps=100_000, lr=0.05)

        def objective(W):
            return mean_cross_entropy(X @ W.T, y) + lam * float((W * W).sum())

        assert abs(objective(clf.weights) - objective(W_oracle)) < 1e-5

    def test_objective_monotone_nonincreasing(self, rng):
        X = rng.standard_normal((40, 5))
        y = rng.integers(0, 4, 40)
        clf = logreg_fit(X, y, 4, LogRegConfig(lam=0.01))
        assert np.all(np.diff(clf.objective_history) <= 1e-15)

    def test_permutation_equivariance(self, rng):
        X = rng.standard_normal((20, 3))
        y = rng.integers(0, 2, 20)
        perm = rng.permutation(20)
        a = logreg_fit(X, y, 2, LogRegConfig(lam=0.1))
        b = logreg_fit(X[perm], y[perm], 2, LogRegConfig(lam=0.1))
        assert np.abs(a.weights - b.weights).max() <= 1e-12

    def test_nonconvergence_is_flagged(self, rng):
        X = rng.standard_normal((10, 3))
        y = rng.integers(0, 2, 10)
        with pytest.warns(RuntimeWarning):
            clf = logreg_fit(X, y, 2, LogRegConfig(lam=1e-6, max_iter=3))
        assert not clf.converged
        assert clf.weights.shape == (2, 3)


class TestGradCheck:
    def test_quadratic(self):
        err = grad_check(lambda w: float(w @ w), lambda w: 2 * w,
                         np.array([1.0, 2.0]))
        assert err < 1e-8

    def test_softmax_with_linear_map(self, rng):
        X = rng.standard_normal((7, 3))
        y = rng.integers(0, 2, 7)

        def f(w):
            return mean_cross_entropy(X @ w.reshape(2, 3).T, y)

        def g(w):
            W = w.reshape(2, 3)
            Z = X @ W.T
            Z = Z - Z.max(axis=1, keepdims=True)
            P = np.exp(Z)
            P /= P.sum(axis=1, keepdims=True)
            return ((P - one_hot(y, 2)).T @ X / 7).ravel()

        assert grad_check(f, g, rng.standard_normal(6), eps=1e-4) < 1e-5

    def test_constant_function(self):
        err = grad_check(lambda w: 3.0, lambda w: np.zeros_like(w),
                         np.array([0.3, -0.7, 2.0]))
        assert err == 0.0


def test_linear_classifier_predict(rng):
    clf = LinearClassifier(weights=np.array([[1.0, 0.0], [0.0, 1.0]]))
    X = np.array([[2.0, 1.0], [0.0, 3.0]])
    assert list(clf.predict(X)) == [0, 1]
