"""Ridge and logistic regression with stratified / grouped k-fold cross-validation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

DEFAULT_LAMBDAS = tuple(np.logspace(-4, 4, 9))
DEFAULT_CS = tuple(np.logspace(-3, 1, 5))


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        # constant features get a unit divisor
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def __call__(self, X):
        return (X - self.mean) / self.scale


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple  # tuple of index arrays (held-out indices per fold)
    kind: str
    labels: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.folds)

    def __iter__(self):
        """Yields ``(train_idx, test_idx)`` pairs."""
        n = sum(len(f) for f in self.folds)
        for f in self.folds:
            mask = np.ones(n, dtype=bool)
            mask[f] = False
            yield np.nonzero(mask)[0], np.sort(f)


def make_folds(labels, k: int = 5, kind: str = "stratified", seed: int = 0) -> FoldPlan:
    """Stratified folds deal each class round-robin; grouped folds keep every group whole."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    buckets = [[] for _ in range(k)]
    if kind == "stratified":
        if n < k:
            raise ValueError(f"{n} samples cannot fill {k} folds")
        offset = 0
        for cls in np.unique(labels):
            members = rng.permutation(np.nonzero(labels == cls)[0])
            for j, idx in enumerate(members):
                buckets[(offset + j) % k].append(idx)
            offset += len(members)
    elif kind == "grouped":
        groups = np.unique(labels)
        if k > len(groups):
            raise ValueError(f"k={k} exceeds the number of groups ({len(groups)})")
        groups = groups[rng.permutation(len(groups))]
        sizes = np.array([np.sum(labels == g) for g in groups])
        # largest groups first, each to the currently smallest fold; stable on ties
        order = np.argsort(-sizes, kind="stable")
        load = np.zeros(k, dtype=int)
        for gi in order:
            f = int(np.argmin(load))
            buckets[f].extend(np.nonzero(labels == groups[gi])[0].tolist())
            load[f] += sizes[gi]
    else:
        raise ValueError(f"unknown fold kind {kind!r}")
    folds = tuple(np.array(sorted(b), dtype=int) for b in buckets)
    return FoldPlan(folds, kind, labels)


# ---------------------------------------------------------------------------
# ridge


@dataclass(frozen=True)
class RidgeSolution:
    weights: np.ndarray  # [targets x features]
    intercept: np.ndarray  # [targets]
    lam: float

    def predict(self, X):
        return np.asarray(X, float) @ self.weights.T + self.intercept


def _ridge_path(X, Y, lambdas, standardize):
    """Closed-form solutions for every lambda from one SVD of the centred design."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("ridge inputs must be finite")
    if X.shape[0] < 1:
        raise ValueError("ridge needs at least one sample")
    squeeze = Y.ndim == 1
    if squeeze:
        Y = Y[:, None]
    if standardize:
        st = Standardizer.fit(X)
        mu, scale = st.mean, st.scale
    else:
        mu, scale = X.mean(axis=0), np.ones(X.shape[1])
    Xc = (X - mu) / scale
    ymu = Y.mean(axis=0)
    Yc = Y - ymu
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    UtY = U.T @ Yc
    out = []
    for lam in lambdas:
        with np.errstate(divide="ignore", invalid="ignore"):
            shrink = np.where(s > s[0] * 1e-12 if s.size else s > 0, s / (s * s + lam), 0.0)
        B = Vt.T @ (shrink[:, None] * UtY)  # [features x targets] in standardized units
        W = (B / scale[:, None]).T
        c = ymu - W @ mu
        out.append(RidgeSolution(W, c, float(lam)))
    return out


def ridge_fit(X, Y, lam: float, standardize: bool = False) -> RidgeSolution:
    """Minimise ``||Y - X W^T - 1 c^T||^2 + lam ||W||^2`` with an unpenalised intercept.

    With ``standardize`` the penalty applies to weights on z-scored features
    (train statistics), which makes the fit invariant to per-feature rescaling.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return _ridge_path(X, Y, [lam], standardize)[0]


def mean_pearson(pred, Y) -> float:
    pred = pred - pred.mean(axis=0)
    Y = Y - Y.mean(axis=0)
    num = (pred * Y).sum(axis=0)
    den = np.sqrt((pred * pred).sum(axis=0) * (Y * Y).sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / den
    r = r[np.isfinite(r)]
    return float(r.mean()) if r.size else -np.inf


def neg_mse(pred, Y) -> float:
    return -float(np.mean((pred - Y) ** 2))


def ridge_cv(X, Y, lambdas=DEFAULT_LAMBDAS, plan: FoldPlan | None = None,
             score: Callable = mean_pearson, standardize: bool = True):
    """Pick the lambda with the best mean held-fold score, then refit on everything.

    Ties go to the larger lambda. Returns ``(lam, solution, mean scores per lambda)``.
    """
    grid = sorted(set(float(l) for l in lambdas))
    if not grid:
        raise ValueError("lambda grid is empty")
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if plan is None:
        plan = make_folds(np.arange(X.shape[0]) % 5, 5, "grouped")
    scores = np.zeros(len(grid))
    for tr, te in plan:
        if len(te) < 2 or len(tr) < 2:
            raise ValueError("every fold needs at least 2 train and 2 held-out samples")
        for j, sol in enumerate(_ridge_path(X[tr], Y[tr], grid, standardize)):
            scores[j] += score(sol.predict(X[te]), Y[te])
    scores /= len(plan)
    best = max(range(len(grid)), key=lambda j: (scores[j], grid[j]))
    return grid[best], _ridge_path(X, Y, [grid[best]], standardize)[0], dict(zip(grid, scores))


# ---------------------------------------------------------------------------
# logistic regression


def _log1pexp(z):
    return np.logaddexp(0.0, z)


@dataclass(frozen=True)
class LogisticClassifier:
    weights: np.ndarray
    intercept: float
    standardizer: Standardizer
    C: float
    losses: tuple = ()
    cv_scores: Optional[dict] = None

    def decision_function(self, X):
        return self.standardizer(np.asarray(X, float)) @ self.weights + self.intercept

    def predict_proba(self, X):
        z = self.decision_function(X)
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def predict(self, X):
        # p == 0.5 resolves to the negative class
        return (self.predict_proba(X) > 0.5).astype(int)


def _logistic_objective(w, b, X, y, penalty):
    z = X @ w + b
    return float(np.mean(_log1pexp(z) - y * z) + 0.5 * penalty * (w @ w))


def _fit_logistic(X, y, C, iters, tol=None):
    """Full-batch gradient descent with Armijo backtracking.

    Objective: mean log-loss + ||w||^2 / (2 C); the intercept is unpenalised.
    With ``tol`` the loop stops once the gradient norm drops below it;
    otherwise it runs exactly ``iters`` iterations.
    """
    n, p = X.shape
    penalty = 1.0 / C
    w = np.zeros(p)
    b = 0.0
    f = _logistic_objective(w, b, X, y, penalty)
    # Lipschitz constant of the gradient; a 1/L step always descends in exact arithmetic
    lip = (np.linalg.norm(np.hstack([X, np.ones((n, 1))]), 2) ** 2) / (4 * n) + penalty
    step = 1.0
    losses = [f]
    for _ in range(iters):
        z = X @ w + b
        r = 0.5 * (1.0 + np.tanh(0.5 * z)) - y
        gw = X.T @ r / n + penalty * w
        gb = r.mean()
        gnorm2 = gw @ gw + gb * gb
        if tol is not None and gnorm2 < tol * tol:
            break
        if gnorm2 == 0.0:
            losses.append(f)
            continue
        if 0.5 * gnorm2 / lip < 1e-15 * max(abs(f), 1.0):
            # the Armijo decrease is below float resolution of f: plain 1/L step
            w = w - gw / lip
            b = b - gb / lip
            f = _logistic_objective(w, b, X, y, penalty)
            losses.append(f)
            continue
        step *= 2.0
        while True:
            w_new = w - step * gw
            b_new = b - step * gb
            f_new = _logistic_objective(w_new, b_new, X, y, penalty)
            if f_new <= f - 0.5 * step * gnorm2 or step < 1e-20:
                break
            step *= 0.5
        if f_new <= f:
            w, b, f = w_new, b_new, f_new
        losses.append(f)
    return w, b, losses


def logistic_fit(X, y, iters: int = 20_000, Cs=DEFAULT_CS, plan: FoldPlan | None = None,
                 seed: int = 0, cv_tol: float = 1e-6) -> LogisticClassifier:
    """L2 logistic regression; C chosen by stratified 5-fold accuracy, then a full refit.

    Fold fits stop early once converged (gradient norm < ``cv_tol``); the final
    refit always runs exactly ``iters`` iterations.
    """
    X = np.asarray(X, float)
    y = np.asarray(y).astype(float)
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ValueError("labels must be 0/1")
    if len(np.unique(y)) < 2:
        raise ValueError("logistic regression needs both classes present")
    Cs = sorted(set(float(c) for c in Cs))
    cv_scores = None
    if len(Cs) > 1:
        if plan is None:
            plan = make_folds(y.astype(int), 5, "stratified", seed)
        acc = np.zeros(len(Cs))
        for tr, te in plan:
            st = Standardizer.fit(X[tr])
            Xtr, Xte = st(X[tr]), st(X[te])
            for j, C in enumerate(Cs):
                w, b, _ = _fit_logistic(Xtr, y[tr], C, iters, tol=cv_tol)
                acc[j] += np.mean(((Xte @ w + b) > 0) == (y[te] > 0.5))
        acc /= len(plan)
        cv_scores = dict(zip(Cs, acc))
        # ties go to the stronger regularizer (smaller C)
        C = Cs[max(range(len(Cs)), key=lambda j: (acc[j], -Cs[j]))]
    else:
        C = Cs[0]
    st = Standardizer.fit(X)
    w, b, losses = _fit_logistic(st(X), y, C, iters)
    return LogisticClassifier(w, float(b), st, C, tuple(losses), cv_scores)
