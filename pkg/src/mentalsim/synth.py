"""Synthetic data with known ground truth: linear latent worlds and simulated DMFC populations."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mpong import ConditionSet
from .tensorio import HumanJudgements, LatentDataset, NeuralDataset, make_latent_dataset, make_neural_dataset

READOUT_KINDS = ("position", "velocity", "position+velocity", "random")
OCP_SCENARIOS = ("Dominoes", "Support", "Collide", "Contain", "Drop", "Link", "Roll", "Drape")


def scaled_dynamics_matrix(d: int, spectral_radius: float, rng) -> np.ndarray:
    A = rng.normal(size=(d, d)) / math.sqrt(d)
    return A * (spectral_radius / np.max(np.abs(np.linalg.eigvals(A))))


def make_linear_world(d: int, spectral_radius: float, n_stimuli: int, frames: int,
                      noise: float = 0.0, seed: int = 0, return_matrix: bool = False):
    """Sequences ``h[t+1] = A h[t] + eps`` with a random ``A`` of the requested spectral radius."""
    if not 0 < spectral_radius < 1:
        raise ValueError("spectral_radius must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    A = scaled_dynamics_matrix(d, spectral_radius, rng)
    seqs = []
    for _ in range(n_stimuli):
        h = np.empty((frames, d))
        h[0] = rng.normal(size=d)
        for t in range(1, frames):
            h[t] = A @ h[t - 1]
            if noise > 0:
                h[t] += noise * rng.normal(size=d)
        seqs.append(h)
    ds = make_latent_dataset([f"lw{i:05d}" for i in range(n_stimuli)], seqs)
    return (ds, A) if return_matrix else ds


@dataclass(frozen=True)
class SynthNeuralSpec:
    n_units: int = 50
    kind: str = "position+velocity"
    readout_seed: int = 0
    noise: float = 0.5
    n_trials: int = 20
    softplus: bool = False
    bin_width_ms: float = 50.0

    def __post_init__(self):
        if self.kind not in READOUT_KINDS:
            raise ValueError(f"unknown readout kind {self.kind!r}")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.n_trials < 2:
            raise ValueError("n_trials must be >= 2")


def ball_state_zscore(states):
    """Per-quantity z-scoring pooled over every frame of every condition."""
    allv = np.concatenate(states, axis=0)
    mu = allv.mean(axis=0)
    sd = allv.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return [(s - mu) / sd for s in states]


def bin_frames(values: np.ndarray, frame_rate: float, bin_width_ms: float) -> np.ndarray:
    """Average per-frame values into consecutive bins of ``bin_width_ms``."""
    n = values.shape[0]
    bw = bin_width_ms / 1000.0
    n_bins = int(math.ceil(n / frame_rate / bw - 1e-9))
    which = np.minimum(((np.arange(n) + 0.5) / frame_rate / bw).astype(int), n_bins - 1)
    out = np.zeros((n_bins,) + values.shape[1:])
    counts = np.bincount(which, minlength=n_bins)
    np.add.at(out, which, values)
    # a bin can only be empty when frames are sparser than bins; fill from neighbours
    filled = counts > 0
    out[filled] /= counts[filled, None]
    if not filled.all():
        idx = np.arange(n_bins)
        for u in range(out.shape[1]):
            out[~filled, u] = np.interp(idx[~filled], idx[filled], out[filled, u])
    return out


def make_synth_dmfc(conditions: ConditionSet, spec: SynthNeuralSpec = SynthNeuralSpec(),
                    seed: int = 0, animal: str = "synth") -> NeuralDataset:
    """Simulated population: ``rates = M @ ballstate`` per frame, binned, plus Gaussian trial noise.

    The readout matrix ``M`` depends only on ``spec.readout_seed``; ``seed`` drives the
    trial noise, so two calls with different seeds give two animals sharing one readout.
    """
    states = ball_state_zscore([t.state for t in conditions.trajectories()])
    rrng = np.random.default_rng(spec.readout_seed)
    if spec.kind == "position":
        drive = [s[:, :2] for s in states]
    elif spec.kind == "velocity":
        drive = [s[:, 2:] for s in states]
    elif spec.kind == "position+velocity":
        drive = states
    else:
        drive = [rrng.normal(size=(s.shape[0], 4)) for s in states]
    k = drive[0].shape[1]
    M = rrng.normal(size=(spec.n_units, k)) / math.sqrt(k)
    nrng = np.random.default_rng(seed)
    responses = []
    fr = conditions.spec.frame_rate
    for z in drive:
        rates = z @ M.T
        if spec.softplus:
            rates = np.logaddexp(0.0, rates)
        binned = bin_frames(rates, fr, spec.bin_width_ms)
        trials = binned[None] + spec.noise * nrng.normal(size=(spec.n_trials,) + binned.shape)
        responses.append(trials)
    return make_neural_dataset(
        [(animal, spec.n_units)], responses, spec.bin_width_ms, [str(c.id) for c in conditions]
    )


def merge_animals(*datasets: NeuralDataset) -> NeuralDataset:
    """Concatenate units of several single- or multi-animal datasets over shared conditions."""
    first = datasets[0]
    for ds in datasets[1:]:
        if ds.condition_ids != first.condition_ids or ds.bin_width != first.bin_width:
            raise ValueError("datasets must share condition ids and bin width")
    animals = [a for ds in datasets for a in ds.animals]
    responses = []
    for c in range(len(first.responses)):
        parts = [ds.responses[c] for ds in datasets]
        n_trials = max(p.shape[0] for p in parts)
        padded = []
        for p in parts:
            if p.shape[0] < n_trials:
                pad = np.full((n_trials - p.shape[0],) + p.shape[1:], np.nan)
                p = np.concatenate([p, pad], axis=0)
            padded.append(p)
        responses.append(np.concatenate(padded, axis=2))
    return make_neural_dataset(animals, responses, first.bin_width, first.condition_ids)


def make_ocp_world(d: int = 8, frames: int = 25, per_scenario: int = 60, seed: int = 0,
                   label_frame: int = 6, shuffle_labels: bool = False):
    """Readout-train and readout-test latents plus human judgements for eight scenarios.

    A stimulus is a hit iff ``latent[label_frame, 0] > 0``, so with the default
    ``label_frame = T - 1`` the label is visible in the observed context. Human
    proportion-hit is a logistic function of the same coordinate.
    """
    rng = np.random.default_rng(seed)

    def block(prefix, n_per):
        ids, lats, scen, labels, props = [], [], [], [], []
        for name in OCP_SCENARIOS:
            for j in range(n_per):
                seq = rng.normal(size=(frames, d))
                ids.append(f"{prefix}-{name}-{j:04d}")
                lats.append(seq)
                scen.append(name)
                labels.append(int(seq[label_frame, 0] > 0))
                props.append(1.0 / (1.0 + math.exp(-3.0 * seq[label_frame, 0])))
        if shuffle_labels:
            labels = rng.permutation(labels).tolist()
        return ids, lats, scen, labels, props

    tr = block("train", per_scenario)
    te = block("test", max(3, per_scenario // 2))
    train = make_latent_dataset(tr[0], tr[1], scenarios=tr[2], labels=tr[3])
    test = make_latent_dataset(te[0], te[1], scenarios=te[2], labels=te[3])
    judgements = HumanJudgements(tuple(te[0]), np.array(te[4]), np.array(te[3]), tuple(te[2]))
    return train, test, judgements
