"""Correlation, split-half reliability and the reliability-adjusted neural predictivity.

Response containers used throughout are lists with one entry per condition:

* a 3-d array ``[trials x frames x units]`` for trial-structured data
  (all-NaN trials mark missing recordings), or
* a 2-d array ``[frames x features]`` for deterministic sources such as models,
  whose two "split halves" are the source itself.

Held-out axes (conditions x frames) are flattened before any correlation.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import NamedTuple, Sequence

import numpy as np

from .regress import ridge_fit


def pearson(a, b) -> float:
    """Pearson r; NaN when either input has zero variance."""
    a = np.asarray(a, float).ravel()
    b = np.asarray(b, float).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ValueError("pearson needs two equal-length vectors of length >= 2")
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    if den == 0.0:
        return math.nan
    return float(np.clip((a @ b) / den, -1.0, 1.0))


def pearson_columns(A, B) -> np.ndarray:
    """Column-wise Pearson r between two ``[samples x units]`` matrices."""
    A = A - A.mean(axis=0)
    B = B - B.mean(axis=0)
    den = np.sqrt((A * A).sum(axis=0) * (B * B).sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (A * B).sum(axis=0) / den
    r[den == 0] = np.nan
    return np.clip(r, -1.0, 1.0)


def spearman_brown(r):
    """Full-length reliability predicted from a half-length correlation: 2r / (1 + r)."""
    r = np.asarray(r, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r > -1.0, 2.0 * r / (1.0 + r), np.nan)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# trial averaging


def usable_trials(trials: np.ndarray) -> np.ndarray:
    return np.nonzero(~np.isnan(trials).all(axis=tuple(range(1, trials.ndim))))[0]


def trial_mean(trials: np.ndarray) -> np.ndarray:
    if trials.ndim == 2:
        return trials
    idx = usable_trials(trials)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(trials[idx], axis=0)


def _halves(trials, rng):
    idx = usable_trials(trials)
    if idx.size < 2:
        raise ValueError(f"split-half needs >= 2 usable trials, got {idx.size}")
    idx = rng.permutation(idx)
    h = (idx.size + 1) // 2
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(trials[idx[:h]], axis=0), np.nanmean(trials[idx[h:]], axis=0)


def split_half(trials: np.ndarray, seed=0, n_repeats: int = 10) -> list:
    """``n_repeats`` random disjoint halvings of the usable trials, each trial-averaged."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return [_halves(trials, rng) for _ in range(n_repeats)]


def split_half_conditions(responses: Sequence[np.ndarray], rng):
    """One halving per condition; deterministic (2-d) entries return themselves twice."""
    first, second = [], []
    for r in responses:
        if r.ndim == 2:
            first.append(r)
            second.append(r)
        else:
            a, b = _halves(r, rng)
            first.append(a)
            second.append(b)
    return first, second


def split_half_reliability(trials: np.ndarray, seed=0, n_repeats: int = 10) -> np.ndarray:
    """Spearman-Brown corrected split-half correlation per repeat (all units pooled)."""
    return np.array([spearman_brown(pearson(a, b)) for a, b in split_half(trials, seed, n_repeats)])


# ---------------------------------------------------------------------------
# neural predictivity


@dataclass
class SplitPredictivity:
    np: np.ndarray  # per unit
    numerator: np.ndarray
    source_reliability: np.ndarray
    target_reliability: np.ndarray
    lam: float


@dataclass
class PredictivityResult:
    per_split: np.ndarray  # [splits x units]
    unit_labels: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)

    @property
    def per_unit(self) -> np.ndarray:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanmean(self.per_split, axis=0)

    @property
    def flagged(self) -> np.ndarray:
        return np.isnan(self.per_split).any(axis=0)

    @property
    def summary(self) -> "MedianSem":
        return median_sem(self.per_unit)

    @property
    def median(self) -> float:
        return self.summary.median

    @property
    def sem(self) -> float:
        return self.summary.sem

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            cols = [f"np_split{i}" for i in range(self.per_split.shape[0])]
            fh.write(",".join(["unit_id", "animal", "np_mean", *cols, "flagged"]) + "\n")
            per_unit = self.per_unit
            labels = self.unit_labels or [("", i) for i in range(per_unit.size)]
            for u, (animal, uid) in enumerate(labels):
                vals = [repr(float(v)) for v in self.per_split[:, u]]
                fh.write(",".join([str(uid), str(animal), repr(float(per_unit[u])), *vals,
                                   str(int(self.flagged[u]))]) + "\n")


def _stack(responses, idx):
    return np.concatenate([responses[i] for i in idx], axis=0)


def neural_predictivity(source, target, train, test, lam: float, n_repeats: int = 10,
                        seed=0, standardize: bool = True) -> SplitPredictivity:
    """Held-out, reliability-adjusted predictivity of every target unit for one split.

    ``NP = Corr(L(S), A) / sqrt(SB(Corr(L1(S1), L2(S2))) * SB(Corr(A1, A2)))`` where the
    maps ``L``, ``L1``, ``L2`` are ridge fits on the ``train`` conditions, halves are
    random split-half trial averages and ``SB`` is the Spearman-Brown correction.
    Both reliability terms are averaged over ``n_repeats`` halvings before forming
    the ratio. Units whose radicand is not positive come back as NaN.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    S_mean = [trial_mean(s) for s in source]
    A_mean = [trial_mean(a) for a in target]
    fit = ridge_fit(_stack(S_mean, train), _stack(A_mean, train), lam, standardize)
    num = pearson_columns(fit.predict(_stack(S_mean, test)), _stack(A_mean, test))

    deterministic_source = all(s.ndim == 2 for s in source)
    rel_s, rel_a = [], []
    for _ in range(n_repeats):
        A1, A2 = split_half_conditions(target, rng)
        S1, S2 = split_half_conditions(source, rng)
        if deterministic_source:
            S1 = S2 = S_mean
        f1 = ridge_fit(_stack(S1, train), _stack(A1, train), lam, standardize)
        f2 = ridge_fit(_stack(S2, train), _stack(A2, train), lam, standardize)
        p1 = f1.predict(_stack(S1, test))
        p2 = f2.predict(_stack(S2, test))
        rel_s.append(spearman_brown(pearson_columns(p1, p2)))
        rel_a.append(spearman_brown(pearson_columns(_stack(A1, test), _stack(A2, test))))
    rs = np.mean(rel_s, axis=0)
    ra = np.mean(rel_a, axis=0)
    radicand = rs * ra
    with np.errstate(invalid="ignore", divide="ignore"):
        npv = np.where(radicand > 0, num / np.sqrt(np.where(radicand > 0, radicand, 1.0)), np.nan)
    return SplitPredictivity(npv, num, rs, ra, float(lam))


# ---------------------------------------------------------------------------
# aggregation


class WeightedStats(NamedTuple):
    weighted_mean: float
    variance: float
    effective_sample_size: float
    weighted_sem: float


def weighted_mean_sem(x, w) -> WeightedStats:
    """Weighted mean, weighted (population) variance, Kish effective sample size and s.e.m."""
    x = np.asarray(x, float)
    w = np.asarray(w, float)
    if x.size == 0:
        raise ValueError("weighted_mean_sem needs at least one group")
    if x.shape != w.shape:
        raise ValueError("x and w must have the same length")
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    sw = w.sum()
    mean = float((w * x).sum() / sw)
    var = float((w * (x - mean) ** 2).sum() / sw)
    ess = float(sw ** 2 / (w * w).sum())
    return WeightedStats(mean, var, ess, math.sqrt(var / ess))


def weighted_mean_sem_exact(x, w) -> tuple:
    """Rational-arithmetic version; returns Fractions plus the float sem."""
    xs = [Fraction(v) for v in x]
    ws = [Fraction(v) for v in w]
    sw = sum(ws)
    mean = sum(wi * xi for wi, xi in zip(ws, xs)) / sw
    var = sum(wi * (xi - mean) ** 2 for wi, xi in zip(ws, xs)) / sw
    ess = sw ** 2 / sum(wi * wi for wi in ws)
    return mean, var, ess, math.sqrt(var / ess)


class MedianSem(NamedTuple):
    median: float
    sem: float
    n: int
    n_nan: int


def median_sem(values) -> MedianSem:
    """Median and s.e.m. (sample std / sqrt(n)) over the finite entries."""
    v = np.asarray(values, float).ravel()
    finite = v[np.isfinite(v)]
    n_nan = int(v.size - finite.size)
    if finite.size == 0:
        return MedianSem(math.nan, math.nan, 0, n_nan)
    sem = float(finite.std(ddof=1) / math.sqrt(finite.size)) if finite.size > 1 else 0.0
    return MedianSem(float(np.median(finite)), sem, int(finite.size), n_nan)
