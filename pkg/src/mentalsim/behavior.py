"""Object-contact-prediction readout on observed + simulated latents, scored against human judgements."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dynamics as dyn
from .metrics import WeightedStats, pearson, weighted_mean_sem
from .regress import DEFAULT_CS, LogisticClassifier, logistic_fit
from .tensorio import HumanJudgements, LatentDataset

# readout-test stimuli per Physion scenario
PHYSION_COUNTS = {
    "Dominoes": 150, "Support": 149, "Collide": 150, "Contain": 150,
    "Drop": 150, "Link": 150, "Roll": 94, "Drape": 149,
}


@dataclass(frozen=True)
class OCPFeatures:
    X: np.ndarray  # [stimuli x total*d]
    stimuli: tuple
    labels: np.ndarray | None
    scenarios: tuple | None


def build_features(latents: LatentDataset, model: dyn.DynamicsModel, T: int = 7,
                   total: int = 25) -> OCPFeatures:
    """First ``T`` observed latents followed by ``total - T`` rollout latents, flattened."""
    if total <= T:
        raise ValueError("total must exceed T")
    rows = []
    for sid, seq in zip(latents.stimuli, latents.latents):
        if seq.shape[0] < T:
            raise ValueError(f"stimulus {sid}: {seq.shape[0]} frames, need T={T} observed frames")
        ctx = np.asarray(seq[:T], dtype=np.float64)
        sim = dyn.rollout(model, ctx, total - T)
        rows.append(np.concatenate([ctx, sim]).ravel())
    labels = None if latents.labels is None else np.asarray(latents.labels)
    return OCPFeatures(np.stack(rows), latents.stimuli, labels, latents.scenarios)


def train_readout(features: OCPFeatures, labels=None, iters: int = 20_000, Cs=DEFAULT_CS,
                  seed: int = 0) -> LogisticClassifier:
    labels = features.labels if labels is None else labels
    if labels is None:
        raise ValueError("readout training needs hit/no-hit labels")
    return logistic_fit(features.X, labels, iters=iters, Cs=Cs, seed=seed)


@dataclass(frozen=True)
class ScenarioScore:
    scenario: str
    accuracy: float
    pearson_to_human: float
    n_stimuli: int

    @property
    def flagged(self) -> bool:
        return math.isnan(self.pearson_to_human)


def score_probabilities(probs, labels, human, scenarios) -> list:
    """Per-scenario accuracy (p > 0.5 means hit) and Pearson r with human proportion-hit."""
    probs = np.asarray(probs, float)
    labels = np.asarray(labels)
    human = np.asarray(human, float)
    scenarios = np.asarray(scenarios)
    out = []
    for name in dict.fromkeys(scenarios.tolist()):
        sel = scenarios == name
        acc = float(np.mean((probs[sel] > 0.5) == (labels[sel] == 1)))
        r = pearson(probs[sel], human[sel]) if sel.sum() >= 3 else math.nan
        out.append(ScenarioScore(str(name), acc, r, int(sel.sum())))
    return out


def evaluate(classifier: LogisticClassifier, test_features: OCPFeatures,
             judgements: HumanJudgements) -> list:
    lookup = {s: i for i, s in enumerate(judgements.stimuli)}
    try:
        rows = [lookup[s] for s in test_features.stimuli]
    except KeyError as exc:
        raise ValueError(f"no human judgement for stimulus {exc.args[0]!r}") from None
    probs = classifier.predict_proba(test_features.X)
    return score_probabilities(
        probs, judgements.labels[rows], judgements.proportions[rows],
        [judgements.scenarios[i] for i in rows],
    )


def aggregate(scores: list, weights: dict | None = None) -> dict:
    """Stimulus-count weighted mean and s.e.m. of accuracy and human correlation across scenarios.

    Scenarios with a flagged (NaN) correlation drop out of the correlation aggregate only.
    """
    w = np.array([(weights or {}).get(s.scenario, s.n_stimuli) for s in scores], float)
    acc = weighted_mean_sem([s.accuracy for s in scores], w)
    ok = [i for i, s in enumerate(scores) if not s.flagged]
    corr = (weighted_mean_sem([scores[i].pearson_to_human for i in ok], w[ok]) if ok
            else WeightedStats(math.nan, math.nan, math.nan, math.nan))
    return {"accuracy": acc, "correlation": corr, "n_flagged": len(scores) - len(ok)}


def write_scores_csv(path, scores: list, agg: dict) -> None:
    with open(path, "w") as fh:
        fh.write("scenario,n,accuracy,pearson_to_human\n")
        for s in scores:
            fh.write(f"{s.scenario},{s.n_stimuli},{s.accuracy!r},{s.pearson_to_human!r}\n")
        n = sum(s.n_stimuli for s in scores)
        fh.write(f"aggregate,{n},{agg['accuracy'].weighted_mean!r},"
                 f"{agg['correlation'].weighted_mean!r}\n")
