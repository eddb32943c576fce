"""Latent future-prediction dynamics: CTRNN, LSTM and the No-Dynamics baseline.

Models consume ``T`` context latents from a frozen encoder and predict the next
latent. Gradients are written out by hand (backpropagation through time) for the
two recurrent architectures; everything runs in float64 numpy.

Batched arrays use row vectors: states are ``[batch x hidden]``, inputs
``[batch x d]``, sequences ``[batch x T x d]``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .tensorio import LatentDataset, read_tensor, write_tensor

log = logging.getLogger(__name__)

KINDS = ("ctrnn", "lstm", "none")


class NonFiniteLoss(ArithmeticError):
    pass


@dataclass
class DynamicsModel:
    kind: str
    d: int
    hidden: int = 512
    params: dict = field(default_factory=dict)
    tau: float = 1.0
    dt: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dynamics kind {self.kind!r}")
        if not self.tau >= self.dt > 0:
            raise ValueError("need tau >= dt > 0")

    @property
    def alpha(self) -> float:
        return self.dt / self.tau

    def copy(self) -> "DynamicsModel":
        return DynamicsModel(self.kind, self.d, self.hidden,
                             {k: v.copy() for k, v in self.params.items()}, self.tau, self.dt)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


def _uniform(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_model(kind: str, d: int, hidden: int = 512, seed: int = 0, tau: float = 1.0,
               dt: float = 0.1, spectral_radius: float = 0.9) -> DynamicsModel:
    rng = np.random.default_rng(seed)
    h = hidden
    if kind == "none":
        params = {}
    elif kind == "ctrnn":
        W = _uniform(rng, (h, h), h)
        rho = np.max(np.abs(np.linalg.eigvals(W)))
        params = {
            "W": W * (spectral_radius / rho),
            "U": _uniform(rng, (h, d), d),
            "b": _uniform(rng, (h,), h),
            "R": _uniform(rng, (d, h), h),
            "bR": _uniform(rng, (d,), h),
        }
    elif kind == "lstm":
        params = {
            "Wx": _uniform(rng, (4 * h, d), h),
            "Wh": _uniform(rng, (4 * h, h), h),
            "b": _uniform(rng, (4 * h,), h),
            "R": _uniform(rng, (d, h), h),
            "bR": _uniform(rng, (d,), h),
        }
    else:
        raise ValueError(f"unknown dynamics kind {kind!r}")
    return DynamicsModel(kind, d, hidden, params, tau, dt)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _check_dims(model, state_h, x):
    if x.shape[-1] != model.d:
        raise ValueError(f"input has dim {x.shape[-1]}, model expects d={model.d}")
    if state_h.shape[-1] != model.hidden:
        raise ValueError(f"state has dim {state_h.shape[-1]}, model expects hidden={model.hidden}")


# ---------------------------------------------------------------------------
# single steps


def ctrnn_step(model: DynamicsModel, state, x):
    """One forward-Euler step of the leaky tanh network, then the linear readout."""
    p = model.params
    state, x = np.asarray(state, float), np.asarray(x, float)
    _check_dims(model, state, x)
    u = np.tanh(state @ p["W"].T + x @ p["U"].T + p["b"])
    new = state + model.alpha * (u - state)
    return new, new @ p["R"].T + p["bR"]


def lstm_step(model: DynamicsModel, state, x):
    p = model.params
    h, c = (np.asarray(s, float) for s in state)
    x = np.asarray(x, float)
    _check_dims(model, h, x)
    H = model.hidden
    z = x @ p["Wx"].T + h @ p["Wh"].T + p["b"]
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = _sigmoid(z[..., 3 * H:])
    c_new = f * c + i * g
    h_new = o * np.tanh(c_new)
    return (h_new, c_new), h_new @ p["R"].T + p["bR"]


def none_step(context_latents):
    context_latents = np.asarray(context_latents)
    if context_latents.shape[-2] == 0:
        raise ValueError("No-Dynamics needs at least one context latent")
    return context_latents[..., -1, :]


def initial_state(model: DynamicsModel, batch: int | None = None):
    shape = (model.hidden,) if batch is None else (batch, model.hidden)
    if model.kind == "lstm":
        return (np.zeros(shape), np.zeros(shape))
    return np.zeros(shape)


def step(model, state, x):
    if model.kind == "ctrnn":
        return ctrnn_step(model, state, x)
    if model.kind == "lstm":
        return lstm_step(model, state, x)
    raise ValueError("No-Dynamics has no recurrent step")


# ---------------------------------------------------------------------------
# loss and gradients


def predict_next(model: DynamicsModel, X: np.ndarray) -> np.ndarray:
    """One-step prediction after consuming the context ``X`` ([batch x T x d])."""
    X = np.asarray(X, float)
    if model.kind == "none":
        return none_step(X).copy()
    state = initial_state(model, X.shape[0])
    pred = None
    for t in range(X.shape[1]):
        state, pred = step(model, state, X[:, t])
    return pred


def mse(pred, Y) -> float:
    return float(np.mean((pred - Y) ** 2))


def _ctrnn_loss_grad(model, X, Y):
    p = model.params
    a = model.alpha
    B, T, _ = X.shape
    s = np.zeros((B, model.hidden))
    states, us = [s], []
    for t in range(T):
        u = np.tanh(s @ p["W"].T + X[:, t] @ p["U"].T + p["b"])
        s = s + a * (u - s)
        us.append(u)
        states.append(s)
    pred = s @ p["R"].T + p["bR"]
    diff = pred - Y
    loss = float(np.mean(diff ** 2))
    gpred = 2.0 * diff / diff.size
    g = {"R": gpred.T @ s, "bR": gpred.sum(0)}
    gz_all = np.empty((T, B, model.hidden))
    gs = gpred @ p["R"]
    for t in range(T - 1, -1, -1):
        u = us[t]
        gz = a * gs * (1.0 - u * u)
        gz_all[t] = gz
        gs = (1.0 - a) * gs + gz @ p["W"]
    # weight gradients as single products over all timesteps
    gz_flat = gz_all.reshape(T * B, -1)
    g["W"] = gz_flat.T @ np.stack(states[:T]).reshape(T * B, -1)
    g["U"] = gz_flat.T @ X.transpose(1, 0, 2).reshape(T * B, -1)
    g["b"] = gz_flat.sum(0)
    return loss, g


def _lstm_loss_grad(model, X, Y):
    p = model.params
    H = model.hidden
    B, T, _ = X.shape
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(T):
        z = X[:, t] @ p["Wx"].T + h @ p["Wh"].T + p["b"]
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        gg = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        c_new = f * c + i * gg
        tc = np.tanh(c_new)
        cache.append((h, c, i, f, gg, o, tc))
        h, c = o * tc, c_new
    pred = h @ p["R"].T + p["bR"]
    diff = pred - Y
    loss = float(np.mean(diff ** 2))
    gpred = 2.0 * diff / diff.size
    grads = {"R": gpred.T @ h, "bR": gpred.sum(0)}
    gWx = np.zeros_like(p["Wx"])
    gWh = np.zeros_like(p["Wh"])
    gb = np.zeros_like(p["b"])
    gh = gpred @ p["R"]
    gc = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        h_prev, c_prev, i, f, gg, o, tc = cache[t]
        go = gh * tc
        gct = gc + gh * o * (1.0 - tc * tc)
        gz = np.concatenate([
            gct * gg * i * (1.0 - i),
            gct * c_prev * f * (1.0 - f),
            gct * i * (1.0 - gg * gg),
            go * o * (1.0 - o),
        ], axis=1)
        gc = gct * f
        gWx += gz.T @ X[:, t]
        gWh += gz.T @ h_prev
        gb += gz.sum(0)
        gh = gz @ p["Wh"]
    grads.update(Wx=gWx, Wh=gWh, b=gb)
    return loss, grads


def loss_and_grad(model: DynamicsModel, X, Y):
    """MSE of the one-step prediction and its gradient w.r.t. every parameter."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    if model.kind == "ctrnn":
        return _ctrnn_loss_grad(model, X, Y)
    if model.kind == "lstm":
        return _lstm_loss_grad(model, X, Y)
    return mse(none_step(X), Y), {}


def grad_check(model: DynamicsModel, batch, eps: float = 1e-5) -> float:
    """Largest relative error between analytic and central-difference gradients."""
    X, Y = batch
    if not model.params:
        return 0.0
    _, analytic = loss_and_grad(model, X, Y)
    worst = 0.0
    probe = model.copy()
    for name, theta in probe.params.items():
        flat = theta.reshape(-1)
        ga = analytic[name].reshape(-1)
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + eps
            up = mse(predict_next(probe, X), Y)
            flat[j] = keep - eps
            down = mse(predict_next(probe, X), Y)
            flat[j] = keep
            num = (up - down) / (2 * eps)
            err = abs(num - ga[j]) / max(abs(ga[j]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_update(params: dict, grads: dict, state: AdamState, lr: float,
                beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """Bias-corrected Adam. Advances ``state`` in place and returns new parameter arrays."""
    state.t += 1
    t = state.t
    out = {}
    for name, theta in params.items():
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - beta1) * g if m is None else beta1 * m + (1 - beta1) * g
        v = (1 - beta2) * g * g if v is None else beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        out[name] = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    T: int = 7
    batch_size: int = 32
    lr: float = 1e-4
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.T < 2:
            raise ValueError("T must be >= 2")
        if self.batch_size < 1 or self.lr < 0 or self.epochs < 0:
            raise ValueError("batch_size, lr and epochs must be non-negative (batch_size >= 1)")


@dataclass
class TrainState:
    """Everything needed to resume training bit-exactly."""

    adam: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    losses: list = field(default_factory=list)


def make_windows(dataset: LatentDataset | list, T: int):
    """All teacher-forced windows: ``T`` context latents and the next latent as target."""
    seqs = dataset.latents if isinstance(dataset, LatentDataset) else dataset
    X, Y = [], []
    for k, seq in enumerate(seqs):
        seq = np.asarray(seq, dtype=np.float64)
        if seq.shape[0] < T + 1:
            raise ValueError(f"stimulus {k} has {seq.shape[0]} frames, need T+1={T + 1}")
        for s in range(seq.shape[0] - T):
            X.append(seq[s:s + T])
            Y.append(seq[s + T])
    return np.stack(X), np.stack(Y)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    # Philox is counter-based: the permutation depends only on (seed, epoch)
    ss = np.random.SeedSequence([seed, epoch])
    return np.random.Generator(np.random.Philox(ss)).permutation(n)


def train(model: DynamicsModel, dataset, cfg: TrainConfig, state: TrainState | None = None,
          progress=None):
    """Teacher-forced MSE training with Adam. Returns ``(model, losses, state)``.

    The model is updated in place. Passing a ``state`` from an earlier call resumes
    from its epoch; the result is bit-identical to an uninterrupted run.
    """
    state = state or TrainState()
    X, Y = make_windows(dataset, cfg.T)
    n = X.shape[0]
    if model.kind == "none":
        loss = mse(none_step(X), Y)
        state.losses.extend([loss] * (cfg.epochs - state.epoch))
        state.epoch = cfg.epochs
        return model, list(state.losses), state
    for epoch in range(state.epoch, cfg.epochs):
        order = epoch_order(n, cfg.seed, epoch)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grad(model, X[idx], Y[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, batch {b}")
            model.params = adam_update(model.params, grads, state.adam, cfg.lr)
            total += loss * len(idx)
        state.losses.append(total / n)
        state.epoch = epoch + 1
        if progress is not None:
            progress(epoch, state.losses[-1])
        log.debug("epoch %d mean mse %.6g", epoch, state.losses[-1])
    return model, list(state.losses), state


def rollout(model: DynamicsModel, context_latents, n_steps: int) -> np.ndarray:
    """Warm up on the context, then feed each prediction back in for ``n_steps``."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    ctx = np.asarray(context_latents, dtype=np.float64)
    if model.kind == "none":
        return np.repeat(none_step(ctx)[None, :], n_steps, axis=0)
    state = initial_state(model)
    pred = None
    for x in ctx:
        state, pred = step(model, state, x)
    out = [pred]
    for _ in range(n_steps - 1):
        state, pred = step(model, state, pred)
        out.append(pred)
    return np.stack(out)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: DynamicsModel, cfg: TrainConfig | None = None,
                    state: TrainState | None = None) -> Path:
    path = Path(path)
    (path / "params").mkdir(parents=True, exist_ok=True)
    doc = {
        "kind": model.kind, "d": model.d, "hidden": model.hidden, "tau": model.tau, "dt": model.dt,
        "params": {},
    }
    if cfg is not None:
        doc["config"] = asdict(cfg)
    for name, arr in model.params.items():
        rel = f"params/{name}.msb"
        write_tensor(arr, path / rel)
        doc["params"][name] = rel
    if state is not None:
        doc["train_state"] = {"epoch": state.epoch, "adam_t": state.adam.t, "moments": {}}
        for name in state.adam.m:
            for which, store in (("m", state.adam.m), ("v", state.adam.v)):
                rel = f"params/adam_{which}_{name}.msb"
                write_tensor(store[name], path / rel)
                doc["train_state"]["moments"][f"{which}:{name}"] = rel
        with open(path / "loss.csv", "w") as fh:
            fh.write("epoch,mean_mse\n")
            for e, loss in enumerate(state.losses):
                fh.write(f"{e},{loss!r}\n")
    (path / "checkpoint.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def load_checkpoint(path):
    """Returns ``(model, config or None, train state or None)``."""
    path = Path(path)
    doc = json.loads((path / "checkpoint.json").read_text())
    params = {name: read_tensor(path / rel) for name, rel in doc["params"].items()}
    model = DynamicsModel(doc["kind"], doc["d"], doc["hidden"], params, doc["tau"], doc["dt"])
    cfg = TrainConfig(**doc["config"]) if "config" in doc else None
    state = None
    if "train_state" in doc:
        ts = doc["train_state"]
        adam = AdamState(t=ts["adam_t"])
        for key, rel in ts["moments"].items():
            which, name = key.split(":", 1)
            getattr(adam, which)[name] = read_tensor(path / rel)
        losses = []
        loss_csv = path / "loss.csv"
        if loss_csv.exists():
            for line in loss_csv.read_text().splitlines()[1:]:
                losses.append(float(line.split(",")[1]))
        state = TrainState(adam, ts["epoch"], losses)
    return model, cfg, state
