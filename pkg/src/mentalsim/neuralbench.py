"""Mental-Pong neural benchmark: align binned responses to frames and score sources on held-out conditions.

Every fit sees only the train half of the conditions of a split; scores are computed on the
occluded frames of the test half. Ridge strength is picked per split by grouped five-fold
cross-validation over the train conditions (groups = conditions).
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from .metrics import (PredictivityResult, median_sem, neural_predictivity, pearson_columns,
                      trial_mean)
from .mpong import ConditionSet, context_indices, oracle_latents
from .regress import DEFAULT_LAMBDAS, make_folds, mean_pearson, ridge_cv
from .tensorio import DataError, NeuralDataset


class AlignmentError(DataError):
    pass


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("MSIM_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    n = _threads()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# alignment


@dataclass
class AlignedResponses:
    responses: list  # per condition [trials x frames x units]
    masks: list  # per condition bool [frames], True on occluded frames
    condition_ids: list
    unit_labels: list
    n_clamped: int = 0

    def occluded(self) -> list:
        return [r[:, m] for r, m in zip(self.responses, self.masks)]

    def units(self, idx) -> "AlignedResponses":
        idx = np.asarray(idx)
        return AlignedResponses([r[:, :, idx] for r in self.responses], self.masks,
                                self.condition_ids, [self.unit_labels[i] for i in idx], self.n_clamped)

    def animal(self, name) -> "AlignedResponses":
        return self.units([i for i, (a, _) in enumerate(self.unit_labels) if a == name])

    @property
    def n_units(self) -> int:
        return len(self.unit_labels)


def interpolate_bins(neural: NeuralDataset, conditions: ConditionSet) -> AlignedResponses:
    """Linear interpolation from bin centres to frame centres, per trial and unit.

    Frames whose centre lies outside the span of bin centres take the nearest bin;
    their count is recorded in ``n_clamped``.
    """
    if len(neural.responses) != len(conditions):
        raise AlignmentError(
            f"neural dataset has {len(neural.responses)} conditions, "
            f"condition set has {len(conditions)}"
        )
    fr = conditions.spec.frame_rate
    bw = neural.bin_width / 1000.0
    out, masks, clamped = [], [], 0
    for r, cond, cid in zip(neural.responses, conditions, neural.condition_ids):
        n_bins = r.shape[1]
        duration = cond.n_frames / fr
        if n_bins * bw < duration - 1e-9:
            raise AlignmentError(
                f"condition {cid}: {n_bins} bins x {neural.bin_width} ms cover {n_bins * bw:.3f} s, "
                f"condition lasts {duration:.3f} s"
            )
        t_frame = (np.arange(cond.n_frames) + 0.5) / fr
        pos = t_frame / bw - 0.5  # fractional bin index of each frame centre
        clamped += int(np.sum((pos < 0) | (pos > n_bins - 1)))
        pos = np.clip(pos, 0, n_bins - 1)
        lo = np.minimum(np.floor(pos).astype(int), max(n_bins - 2, 0))
        hi = np.minimum(lo + 1, n_bins - 1)
        w = (pos - lo)[None, :, None]
        out.append((1.0 - w) * r[:, lo] + w * r[:, hi])
        masks.append(cond.occluded_mask())
    labels = neural.unit_labels()
    return AlignedResponses(out, masks, list(neural.condition_ids), labels, clamped)


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitPlan:
    splits: tuple  # ((train_idx, test_idx), ...)
    seed: int

    def __iter__(self):
        return iter(self.splits)

    def __len__(self):
        return len(self.splits)


def make_splits(n_conditions: int, n_splits: int = 5, seed: int = 0) -> SplitPlan:
    """Independent random 50/50 partitions of the conditions (train gets the odd one)."""
    rng = np.random.default_rng(seed)
    out = []
    n_train = n_conditions - n_conditions // 2
    for _ in range(n_splits):
        perm = rng.permutation(n_conditions)
        out.append((np.sort(perm[:n_train]), np.sort(perm[n_train:])))
    return SplitPlan(tuple(out), int(seed))


def _select_lambda(source, target, train, lambdas, score=mean_pearson, k=5, seed=0):
    X = np.concatenate([trial_mean(source[i]) for i in train])
    Y = np.concatenate([trial_mean(target[i]) for i in train])
    groups = np.concatenate([np.full(trial_mean(target[i]).shape[0], i) for i in train])
    plan = make_folds(groups, k, "grouped", seed)
    lam, _, _ = ridge_cv(X, Y, lambdas, plan, score=score)
    return lam


def _split_seed(seed, j):
    return np.random.SeedSequence([seed, j])


def score_source(source, target, splits: SplitPlan, lambdas=DEFAULT_LAMBDAS, n_repeats=10,
                 seed=0, fixed_lambdas=None, score=mean_pearson, unit_labels=None) -> PredictivityResult:
    """Per-split NP of ``source`` (per-condition arrays) against ``target`` (per-condition trials)."""
    if len(source) != len(target):
        raise AlignmentError(f"source has {len(source)} conditions, target has {len(target)}")
    for c, (s, t) in enumerate(zip(source, target)):
        if s.shape[-2] != t.shape[-2]:
            raise AlignmentError(f"condition {c}: source has {s.shape[-2]} frames, target {t.shape[-2]}")

    def one(j):
        train, test = splits.splits[j]
        if fixed_lambdas is not None:
            lam = fixed_lambdas[j]
        else:
            lam = _select_lambda(source, target, train, lambdas, score, seed=seed + j)
        rng = np.random.default_rng(_split_seed(seed, j))
        return neural_predictivity(source, target, train, test, lam, n_repeats, rng)

    parts = _map(one, range(len(splits)))
    return PredictivityResult(np.stack([p.np for p in parts]), list(unit_labels or []),
                              [p.lam for p in parts])


def _drop_dead_units(aligned: AlignedResponses):
    dead = [u for u in range(aligned.n_units)
            if all(np.isnan(r[:, m, u]).all() for r, m in zip(aligned.responses, aligned.masks))]
    keep = [u for u in range(aligned.n_units) if u not in dead]
    return aligned.units(keep), [aligned.unit_labels[u] for u in dead]


@dataclass
class Ceiling:
    a_to_b: PredictivityResult
    b_to_a: PredictivityResult
    excluded_units: list = field(default_factory=list)

    @property
    def combined(self) -> PredictivityResult:
        """Both directions pooled: each unit is scored once, as a target."""
        return PredictivityResult(
            np.concatenate([self.b_to_a.per_split, self.a_to_b.per_split], axis=1),
            self.b_to_a.unit_labels + self.a_to_b.unit_labels,
            self.a_to_b.lambdas,
        )

    @property
    def median(self) -> float:
        return self.combined.median


def fit_internal_consistency(animal_a: AlignedResponses, animal_b: AlignedResponses,
                             splits: SplitPlan, lambdas=DEFAULT_LAMBDAS, n_repeats=10,
                             seed=0) -> Ceiling:
    """Inter-animal consistency in both directions on held-out occluded frames."""
    if animal_a.condition_ids != animal_b.condition_ids:
        raise AlignmentError("animals are aligned to different condition sets")
    animal_a, dead_a = _drop_dead_units(animal_a)
    animal_b, dead_b = _drop_dead_units(animal_b)
    A, B = animal_a.occluded(), animal_b.occluded()
    ab = score_source(A, B, splits, lambdas, n_repeats, seed, unit_labels=animal_b.unit_labels)
    ba = score_source(B, A, splits, lambdas, n_repeats, seed + 1, unit_labels=animal_a.unit_labels)
    return Ceiling(ab, ba, dead_a + dead_b)


def model_predictivity(model_latents, neural: AlignedResponses, splits: SplitPlan,
                       lambdas=DEFAULT_LAMBDAS, n_repeats=10, seed=0,
                       fixed_lambdas=None) -> PredictivityResult:
    """NP of frame-aligned model features (one ``[frames x d]`` array per condition)."""
    if len(model_latents) != len(neural.responses):
        raise AlignmentError(
            f"model latents cover {len(model_latents)} conditions, neural data {len(neural.responses)}"
        )
    source = []
    for c, (z, m) in enumerate(zip(model_latents, neural.masks)):
        z = np.asarray(z, float)
        if z.shape[0] != m.shape[0]:
            raise AlignmentError(f"condition {neural.condition_ids[c]}: model latents have "
                                 f"{z.shape[0]} frames, neural data {m.shape[0]}")
        source.append(z[m])
    return score_source(source, neural.occluded(), splits, lambdas, n_repeats, seed,
                        fixed_lambdas=fixed_lambdas, unit_labels=neural.unit_labels)


# ---------------------------------------------------------------------------
# model features on the frame grid


def rollout_schedule(condition, T: int = 7):
    """Context frame indices, the frame spacing between model steps, and the rollout length."""
    idx = context_indices(condition, T)
    spacing = (condition.n_visible - 1) / (T - 1)
    n_steps = max(1, math.ceil((condition.n_frames - 1 - idx[-1]) / spacing - 1e-9))
    return idx, spacing, n_steps


def model_frame_latents(model: dyn.DynamicsModel, frame_latents: np.ndarray, condition,
                        T: int = 7) -> np.ndarray:
    """Context latents plus closed-loop rollout, linearly interpolated onto every frame."""
    frame_latents = np.asarray(frame_latents, float)
    if frame_latents.shape[0] != condition.n_frames:
        raise AlignmentError(f"condition {condition.id}: encoder latents have {frame_latents.shape[0]} "
                             f"frames, condition has {condition.n_frames}")
    idx, spacing, n_steps = rollout_schedule(condition, T)
    ctx = frame_latents[idx]
    future = dyn.rollout(model, ctx, n_steps)
    times = np.concatenate([np.asarray(idx, float), idx[-1] + spacing * np.arange(1, n_steps + 1)])
    values = np.vstack([ctx, future])
    frames = np.arange(condition.n_frames)
    return np.stack([np.interp(frames, times, values[:, k]) for k in range(values.shape[1])], axis=1)


def oracle_frame_latents(conditions: ConditionSet, kind: str) -> list:
    return [oracle_latents(t, kind) for t in conditions.trajectories()]


# ---------------------------------------------------------------------------
# ball decoding


def median_pearson(pred, Y) -> float:
    r = pearson_columns(pred, Y)
    r = r[np.isfinite(r)]
    return float(np.median(r)) if r.size else -np.inf


@dataclass
class BallDecode:
    per_split: np.ndarray  # [splits x 4] for (x, y, vx, vy)
    lambdas: list

    @property
    def per_quantity(self) -> np.ndarray:
        return np.nanmean(self.per_split, axis=0)

    def summary(self) -> dict:
        q = self.per_quantity
        pack = lambda v: median_sem(v)._asdict()
        return {
            "joint": pack(q),
            "position": pack(q[:2]),
            "velocity": pack(q[2:]),
            "per_quantity": dict(zip(("x", "y", "vx", "vy"), map(float, q))),
        }


def ball_decode(source, conditions: ConditionSet, splits: SplitPlan, lambdas=DEFAULT_LAMBDAS,
                n_repeats=10, seed=0) -> BallDecode:
    """Predictivity of the occluded ball state (x, y, vx, vy) from ``source``.

    ``source`` is either aligned neural responses (all animals' units together) or a list of
    frame-aligned feature arrays. The ridge strength maximises the median of the four held-out
    correlations.
    """
    masks = [c.occluded_mask() for c in conditions]
    if isinstance(source, AlignedResponses):
        src = source.occluded()
    else:
        if len(source) != len(conditions):
            raise AlignmentError(f"source covers {len(source)} conditions, condition set {len(conditions)}")
        src = [np.asarray(z, float)[m] for z, m in zip(source, masks)]
    target = [t.state[m] for t, m in zip(conditions.trajectories(), masks)]
    res = score_source(src, target, splits, lambdas, n_repeats, seed, score=median_pearson)
    return BallDecode(res.per_split, res.lambdas)


def select_best_layer(candidates: dict, neural: AlignedResponses, splits: SplitPlan,
                      lambdas=DEFAULT_LAMBDAS, n_repeats=10, seed=0, tol=1e-9):
    """The candidate feature set with the highest median held-out NP.

    Returns ``(name, table, ties)``; candidates within ``tol`` of the best keep
    their declared order and the first wins.
    """
    if not candidates:
        raise ValueError("no candidate feature sets")
    table = {name: model_predictivity(feats, neural, splits, lambdas, n_repeats, seed).median
             for name, feats in candidates.items()}
    best = max(v for v in table.values() if not math.isnan(v)) if any(
        not math.isnan(v) for v in table.values()) else math.nan
    tied = [n for n, v in table.items() if not math.isnan(v) and best - v <= tol]
    chosen = tied[0] if tied else next(iter(candidates))
    return chosen, table, tied if len(tied) > 1 else []
