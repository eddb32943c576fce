import numpy as np
import pytest

from mentalsim import regress as rg


def _problem(n=40, p=5, q=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * rng.uniform(0.5, 3, size=p) + rng.normal(size=p)
    W0 = rng.normal(size=(q, p))
    return X, W0, rng


def _gd_ridge(X, Y, lam, steps=50_000):
    """Plain gradient descent on ||Y - XW^T - 1c^T||^2 + lam ||W||^2."""
    n, p = X.shape
    W = np.zeros((Y.shape[1], p))
    c = np.zeros(Y.shape[1])
    A = np.hstack([X, np.ones((n, 1))])
    L = 2 * (np.linalg.eigvalsh(A.T @ A).max() + lam)
    lr = 1.0 / L
    for _ in range(steps):
        R = X @ W.T + c - Y
        W -= lr * (2 * R.T @ X + 2 * lam * W)
        c -= lr * 2 * R.sum(axis=0)
    return W, c


def test_ridge_matches_gradient_descent():
    X, W0, rng = _problem()
    Y = X @ W0.T + rng.normal(size=(40, 3))
    sol = rg.ridge_fit(X, Y, 2.5)
    W, c = _gd_ridge(X, Y, 2.5)
    assert np.max(np.abs(sol.weights - W)) < 1e-6
    assert np.max(np.abs(sol.intercept - c)) < 1e-6


def test_ridge_interpolation():
    X, W0, _ = _problem()
    sol = rg.ridge_fit(X, X @ W0.T + 1.5, 0.0)
    assert np.max(np.abs(sol.weights - W0)) < 1e-8
    assert np.allclose(sol.intercept, 1.5, atol=1e-8)


def test_ridge_shrinkage_limit():
    X, W0, rng = _problem()
    Y = X @ W0.T + rng.normal(size=(40, 3))
    big = rg.ridge_fit(X, Y, 1e12)
    free = rg.ridge_fit(X, Y, 0.0)
    assert np.linalg.norm(big.weights) < 1e-6 * np.linalg.norm(free.weights)
    assert np.allclose(big.intercept, Y.mean(axis=0), atol=1e-6)


def test_ridge_target_shift():
    X, W0, rng = _problem()
    Y = X @ W0.T + rng.normal(size=(40, 3))
    shift = np.array([3.0, -7.0, 0.25])
    for standardize in (False, True):
        a = rg.ridge_fit(X, Y, 1.0, standardize)
        b = rg.ridge_fit(X, Y + shift, 1.0, standardize)
        assert np.max(np.abs(a.weights - b.weights)) < 1e-10
        assert np.max(np.abs(b.intercept - a.intercept - shift)) < 1e-10


def test_ridge_rejects_non_finite():
    X, W0, _ = _problem()
    X[0, 0] = np.nan
    with pytest.raises(ValueError):
        rg.ridge_fit(X, X[:, :1], 1.0)
    with pytest.raises(ValueError):
        rg.ridge_fit(np.ones((3, 2)), np.ones(3), -1.0)


def test_standardized_ridge_scale_invariant():
    X, W0, rng = _problem()
    Y = X @ W0.T + rng.normal(size=(40, 3))
    D = rng.uniform(0.1, 10, size=X.shape[1])
    a = rg.ridge_fit(X, Y, 3.0, standardize=True)
    b = rg.ridge_fit(X * D, Y, 3.0, standardize=True)
    assert np.allclose(a.predict(X), b.predict(X * D), atol=1e-10)


def test_ridge_cv_singleton_and_duplicates():
    X, W0, rng = _problem(n=50)
    Y = X @ W0.T + 3 * rng.normal(size=(50, 3))
    lam, _, _ = rg.ridge_cv(X, Y, [7.0])
    assert lam == 7.0
    a = rg.ridge_cv(X, Y, [0.1, 1.0, 10.0, 100.0])
    b = rg.ridge_cv(X, Y, [100.0, 0.1, 1.0, 1.0, 10.0, 10.0])
    assert a[0] == b[0]
    assert np.array_equal(a[1].weights, b[1].weights)
    with pytest.raises(ValueError):
        rg.ridge_cv(X, Y, [])


def test_ridge_cv_noiseless_picks_grid_minimum():
    X, W0, _ = _problem(n=60)
    Y = X @ W0.T
    plan = rg.make_folds(np.arange(60) % 5, 5, "grouped")
    lam, _, scores = rg.ridge_cv(X, Y, rg.DEFAULT_LAMBDAS, plan, score=rg.neg_mse)
    # oracle: evaluate every fold score directly
    direct = {}
    for l in rg.DEFAULT_LAMBDAS:
        s = [rg.neg_mse(rg.ridge_fit(X[tr], Y[tr], l, True).predict(X[te]), Y[te]) for tr, te in plan]
        direct[l] = np.mean(s)
    assert max(direct, key=direct.get) == lam == min(rg.DEFAULT_LAMBDAS)
    for l in direct:
        assert scores[float(l)] == pytest.approx(direct[l], rel=1e-9, abs=1e-18)


def test_ridge_cv_tie_goes_to_larger_lambda():
    X = np.random.default_rng(0).normal(size=(20, 2))
    Y = np.ones((20, 1))  # every lambda predicts the constant exactly
    lam, _, _ = rg.ridge_cv(X, Y, [0.1, 1.0, 10.0], score=rg.neg_mse)
    assert lam == 10.0


def test_ridge_cv_small_fold():
    X = np.zeros((6, 2))
    plan = rg.FoldPlan((np.array([0]), np.array([1, 2, 3, 4, 5])), "grouped")
    with pytest.raises(ValueError, match="at least 2"):
        rg.ridge_cv(X, np.ones(6), [1.0], plan)


def test_stratified_balanced():
    labels = np.repeat(np.arange(5), 2)
    plan = rg.make_folds(labels, 5, "stratified", 0)
    for f in plan.folds:
        assert sorted(labels[f]) == [0, 1, 2, 3, 4] or len(f) == 2
    # 10 samples, 5 classes of 2, k=5: two samples per fold, no fold repeats a class
    for f in plan.folds:
        assert len(set(labels[f])) == len(f)


@pytest.mark.parametrize("seed", range(5))
def test_stratified_proportions(seed):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 2, size=int(rng.integers(30, 200)))
    plan = rg.make_folds(labels, 5, "stratified", seed)
    all_idx = np.sort(np.concatenate(plan.folds))
    assert np.array_equal(all_idx, np.arange(len(labels)))
    p = labels.mean()
    for f in plan.folds:
        assert abs(labels[f].mean() - p) <= 1 / len(f) + 1e-12
    for c in (0, 1):
        per_fold = [np.sum(labels[f] == c) for f in plan.folds]
        assert max(per_fold) - min(per_fold) <= 1


def test_grouped_disjoint_and_deterministic():
    groups = np.repeat(np.arange(17), np.arange(17) % 4 + 2)
    a = rg.make_folds(groups, 5, "grouped", 3)
    b = rg.make_folds(groups, 5, "grouped", 3)
    assert all(np.array_equal(x, y) for x, y in zip(a.folds, b.folds))
    seen = {}
    for k, f in enumerate(a.folds):
        for g in set(groups[f]):
            assert g not in seen
            seen[g] = k
    assert len(seen) == 17
    with pytest.raises(ValueError):
        rg.make_folds(np.arange(3), 5, "grouped")
    with pytest.raises(ValueError):
        rg.make_folds(np.arange(10), 1)


def _blobs(n=200, margin=5.0, p=3, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    X = rng.normal(size=(n, p))
    X[:, 0] += np.where(y == 1, margin / 2, -margin / 2)
    return X, y


def test_logistic_separable():
    X, y = _blobs()
    # make it exactly separable for the test assertion
    keep = (2 * y - 1) * X[:, 0] > 0.5
    X, y = X[keep], y[keep]
    clf = rg.logistic_fit(X, y, iters=2000)
    assert np.mean(clf.predict(X) == y) == 1.0
    assert np.all(clf.predict_proba(X[y == 1]) > 0.5)


def test_logistic_chance():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(2000, 10))
    y = rng.permutation(np.repeat([0, 1], 1000))
    clf = rg.logistic_fit(X, y, iters=500)
    held = clf.cv_scores[clf.C]
    assert abs(held - 0.5) <= 0.05


def test_logistic_intercept_only():
    y = np.array([1] * 30 + [0] * 70)
    clf = rg.logistic_fit(np.zeros((100, 4)), y, iters=3000)
    assert np.allclose(clf.predict_proba(np.zeros((5, 4))), 0.3, atol=1e-8)


def test_logistic_single_class():
    with pytest.raises(ValueError, match="both classes"):
        rg.logistic_fit(np.ones((5, 2)), np.ones(5))


@pytest.mark.parametrize("margin", [5.0, 0.5])
def test_logistic_loss_monotone(margin):
    X, y = _blobs(margin=margin)
    clf = rg.logistic_fit(X, y, iters=300, Cs=[1.0])
    losses = np.array(clf.losses)
    assert len(losses) == 301
    assert np.all(np.diff(losses) <= 1e-15)


def test_logistic_refit_runs_exact_iterations():
    X, y = _blobs()
    clf = rg.logistic_fit(X, y, iters=123)
    assert len(clf.losses) == 124


def test_logistic_matches_optimality_conditions():
    X, y = _blobs(margin=1.0)
    clf = rg.logistic_fit(X, y, iters=20000, Cs=[0.1])
    Z = clf.standardizer(X)
    p = clf.predict_proba(X)
    gw = Z.T @ (p - y) / len(y) + clf.weights / 0.1
    assert np.max(np.abs(gw)) < 1e-8
    assert abs(np.mean(p - y)) < 1e-8
