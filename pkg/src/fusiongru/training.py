"""Optimizer, scheduler, training loop, checkpoints, evaluation and baselines."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .config import TrainConfig
from .errors import ConfigError, DatasetParseError, DimensionError, DivergenceError, VersionError
from .losses import total_loss
from .metrics import horizon_report, per_step_displacement, to_pixels
from .model import forward, init_params
from .params import ParameterStore

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, arrays):
        return cls(
            m={name: np.zeros_like(a) for name, a in arrays.items()},
            v={name: np.zeros_like(a) for name, a in arrays.items()},
        )


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update.

    Returns new ``(params, state)``; the inputs are left untouched.
    """
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise DimensionError(f"{name}: parameter {p.shape}, gradient {g.shape}, moment {state.m[name].shape}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name], new_v[name] = m, v
    return new_params, AdamState(new_m, new_v, t)


def clip_by_global_norm(grads, max_norm):
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or total <= max_norm:
        return grads, total
    scale = max_norm / total
    return {name: g * scale for name, g in grads.items()}, total


# ----------------------------------------------------------------- scheduler


class ReduceLROnPlateau:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without improvement.

    Improvement means beating the best loss by the relative ``threshold``.
    """

    def __init__(self, lr, factor=0.5, patience=3, min_lr=1e-6, threshold=1e-4):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = math.inf
        self.num_bad = 0

    def step(self, loss):
        if loss < self.best * (1.0 - self.threshold) or self.best == math.inf:
            self.best = loss
            self.num_bad = 0
        else:
            self.num_bad += 1
        if self.num_bad >= self.patience:
            self.lr = max(self.lr * self.factor, self.min_lr)
            self.num_bad = 0
        return self.lr

    def state_dict(self):
        return {"lr": self.lr, "best": self.best, "num_bad": self.num_bad}


def reduce_lr_on_plateau(history, lr, factor=0.5, patience=3, min_lr=1e-6, threshold=1e-4):
    """Learning rate after replaying a history of validation losses."""
    if not history:
        raise ValueError("need at least one completed epoch")
    sched = ReduceLROnPlateau(lr, factor, patience, min_lr, threshold)
    for loss in history:
        sched.step(loss)
    return sched.lr


# ---------------------------------------------------------------- checkpoint


@dataclass
class Checkpoint:
    config: TrainConfig
    params: ParameterStore
    moments: AdamState
    epoch: int = 0
    best_val_loss: float = math.inf
    lr: float | None = None
    history: list = field(default_factory=list)
    data_fps: float | None = None

    def save(self, path):
        meta = {
            "format_version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "best_val_loss": None if math.isinf(self.best_val_loss) else self.best_val_loss,
            "lr": self.lr,
            "history": self.history,
            "data_fps": self.data_fps,
            "adam_t": self.moments.t,
            "shapes": {name: list(a.shape) for name, a in self.params.items()},
        }
        arrays = {"meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
        for name, a in self.params.items():
            arrays[f"param/{name}"] = a
            arrays[f"adam_m/{name}"] = self.moments.m[name]
            arrays[f"adam_v/{name}"] = self.moments.v[name]
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path):
        try:
            with np.load(path, allow_pickle=False) as data:
                meta = json.loads(bytes(data["meta"]).decode("utf-8"))
                if meta.get("format_version") != CHECKPOINT_VERSION:
                    raise VersionError(f"unsupported checkpoint version {meta.get('format_version')}")
                names = list(meta["shapes"])
                params = ParameterStore({n: data[f"param/{n}"] for n in names})
                moments = AdamState(
                    m={n: data[f"adam_m/{n}"] for n in names},
                    v={n: data[f"adam_v/{n}"] for n in names},
                    t=int(meta["adam_t"]),
                )
        except (OSError, ValueError, KeyError) as exc:
            if isinstance(exc, DatasetParseError):
                raise
            raise DatasetParseError(f"cannot read checkpoint {path}: {exc}") from exc
        for name, shape in meta["shapes"].items():
            if list(params[name].shape) != shape:
                raise DatasetParseError(f"checkpoint array {name} has shape {params[name].shape}, expected {shape}")
        best = meta["best_val_loss"]
        return cls(
            config=TrainConfig.from_dict(meta["config"]),
            params=params,
            moments=moments,
            epoch=int(meta["epoch"]),
            best_val_loss=math.inf if best is None else float(best),
            lr=meta["lr"],
            history=meta["history"],
            data_fps=meta["data_fps"],
        )


# -------------------------------------------------------------------- train


def _batches(n, size, rng=None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, size):
        yield order[start : start + size]


def dataset_loss(store, config, samples, chunk=512):
    """Agent-averaged total loss over a whole sample set (no tape)."""
    if len(samples) == 0:
        raise ValueError("empty sample set")
    model_config = config.model_config()
    params = store.bind()
    total = 0.0
    for idx in _batches(len(samples), chunk):
        batch = samples.subset(idx)
        report = total_loss(forward(batch, params, model_config), batch.truth, config.lam)
        total += report.total * len(idx)
    return total / len(samples)


def _check_compatible(config, samples, what):
    mismatched = []
    if samples.D != config.D:
        mismatched.append(f"D (config {config.D}, {what} {samples.D})")
    if samples.T_obs != config.T_obs:
        mismatched.append(f"T_obs (config {config.T_obs}, {what} {samples.T_obs})")
    if samples.N != config.N:
        mismatched.append(f"N (config {config.N}, {what} {samples.N})")
    if mismatched:
        raise ConfigError(f"config incompatible with {what}: " + "; ".join(mismatched), [m.split()[0] for m in mismatched])


def loss_and_grads(store, config, batch):
    with nx.Tape() as tape:
        params = store.bind(tape)
        report = total_loss(forward(batch, params, config.model_config()), batch.truth, config.lam)
    return report, nx.backward(tape, report.value)


def train(config, train_set, val_set, on_epoch=None):
    """Train from scratch and return the checkpoint with the lowest validation loss.

    ``on_epoch`` is called with a dict per finished epoch. The full loss
    history is stored on the returned checkpoint.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    _check_compatible(config, train_set, "training data")
    _check_compatible(config, val_set, "validation data")
    if train_set.fps != val_set.fps:
        raise ConfigError(f"train fps {train_set.fps} != validation fps {val_set.fps}", ["fps"])
    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).generate_state(2)
    store = init_params(config.model_config(), seed=int(init_seed))
    shuffle_rng = np.random.default_rng(int(shuffle_seed))
    moments = AdamState.zeros(store.to_dict())
    sched = ReduceLROnPlateau(
        config.learning_rate,
        config.scheduler.factor,
        config.scheduler.patience,
        config.scheduler.min_lr,
        config.scheduler.threshold,
    )
    best = Checkpoint(
        config=config,
        params=store.copy(),
        moments=moments,
        epoch=0,
        lr=sched.lr,
        data_fps=train_set.fps,
    )
    history = []
    for epoch in range(1, config.epochs + 1):
        lr = sched.lr
        running, seen = 0.0, 0
        for b, idx in enumerate(_batches(len(train_set), config.batch_size, shuffle_rng)):
            report, grads = loss_and_grads(store, config, train_set.subset(idx))
            if not math.isfinite(report.total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise DivergenceError(f"non-finite loss or gradient at epoch {epoch}, batch {b} (loss {report.total})")
            grads, _ = clip_by_global_norm(grads, config.clip_norm)
            new_params, moments = adam_step(store.to_dict(), grads, moments, lr, config.beta1, config.beta2, config.eps)
            store = ParameterStore(new_params)
            running += report.total * len(idx)
            seen += len(idx)
        train_loss = running / seen
        val_loss = dataset_loss(store, config, val_set)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss after epoch {epoch}")
        next_lr = sched.step(val_loss)
        entry = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": lr}
        history.append(entry)
        if val_loss < best.best_val_loss:
            best = Checkpoint(
                config=config,
                params=store.copy(),
                moments=AdamState(dict(moments.m), dict(moments.v), moments.t),
                epoch=epoch,
                best_val_loss=val_loss,
                lr=next_lr,
                data_fps=train_set.fps,
            )
        log.debug("epoch %d train %.6g val %.6g lr %.3g", epoch, train_loss, val_loss, lr)
        if on_epoch is not None:
            on_epoch(entry)
    best.history = history
    return best


def fit_steps(config, samples, steps, seed=None):
    """Repeat full-batch Adam steps on ``samples``; returns (store, loss trace)."""
    store = init_params(config.model_config(), seed=config.seed if seed is None else seed)
    moments = AdamState.zeros(store.to_dict())
    trace = []
    for _ in range(steps):
        report, grads = loss_and_grads(store, config, samples)
        trace.append(report.total)
        grads, _ = clip_by_global_norm(grads, config.clip_norm)
        new_params, moments = adam_step(store.to_dict(), grads, moments, config.learning_rate, config.beta1, config.beta2, config.eps)
        store = ParameterStore(new_params)
    return store, trace


# ---------------------------------------------------------------- inference


def predict(store, config, samples, chunk=512):
    """Normalized (intermediary, final) boxes for every sample, each (S, N, 4)."""
    model_config = config.model_config() if isinstance(config, TrainConfig) else config
    params = store.bind()
    inter, final = [], []
    for idx in _batches(len(samples), chunk):
        out = forward(samples.subset(idx), params, model_config)
        inter.append(out.intermediary.data)
        final.append(out.final.data)
    if not inter:
        N = model_config.N
        return np.zeros((0, N, 4)), np.zeros((0, N, 4))
    return np.concatenate(inter), np.concatenate(final)


BASELINES = ("persistence", "constant-velocity")


def baseline_predict(kind, window, N):
    """Predict N future boxes from an observed window (..., T, 4) of boxes."""
    window = np.asarray(window, dtype=np.float64)
    if kind not in BASELINES:
        raise ValueError(f"unknown baseline {kind!r}; choose from {BASELINES}")
    T = window.shape[-2]
    last = window[..., -1, :]
    steps = np.arange(1, N + 1, dtype=np.float64)[:, None]
    if kind == "persistence":
        if T < 1:
            raise ValueError("persistence needs at least one observed box")
        return np.repeat(last[..., None, :], N, axis=-2)
    if T < 2:
        raise ValueError("constant-velocity needs at least two observed boxes")
    delta = window[..., -1, :2] - window[..., -2, :2]
    centres = last[..., None, :2] + steps * delta[..., None, :]
    sizes = np.repeat(last[..., None, 2:], N, axis=-2)
    return np.concatenate([centres, sizes], axis=-1)


def horizon_steps(horizons, fps, N):
    steps = []
    for h in horizons:
        s = int(round(h * fps))
        if not 1 <= s <= N:
            raise ConfigError(f"horizon {h}s is {s} steps at {fps} fps; model predicts 1..{N}", ["horizons"])
        steps.append(s)
    return steps


def evaluate_predictions(pred, samples, horizons=(0.5, 1.0)):
    """Per-horizon metric reports for normalized predictions (S, N, 4)."""
    if len(samples) == 0:
        raise ValueError("no samples to evaluate")
    scale = samples.frame_size[:, None, :]
    pred_px = to_pixels_per_sample(pred, scale)
    truth_px = to_pixels_per_sample(samples.truth, scale)
    steps = horizon_steps(horizons, samples.fps, samples.N)
    return [horizon_report(pred_px, truth_px, s, h) for s, h in zip(steps, horizons)]


def to_pixels_per_sample(boxes, scale):
    """Like :func:`to_pixels` with a per-sample (S, 1, 2) frame size."""
    scale = np.asarray(scale)
    if scale.ndim == 1:
        return to_pixels(boxes, scale)
    factors = np.concatenate([scale, scale], axis=-1)
    return np.asarray(boxes) * factors


def step_errors(pred, samples):
    scale = samples.frame_size[:, None, :]
    return per_step_displacement(to_pixels_per_sample(pred, scale), to_pixels_per_sample(samples.truth, scale))


def evaluate(checkpoint, samples, horizons=(0.5, 1.0)):
    """Model metrics (pixels) at each horizon in seconds."""
    config = checkpoint.config
    _check_compatible(config, samples, "test data")
    if checkpoint.data_fps is not None and checkpoint.data_fps != samples.fps:
        raise ConfigError(f"fps (checkpoint {checkpoint.data_fps}, test data {samples.fps})", ["fps"])
    _, final = predict(checkpoint.params, config, samples)
    return evaluate_predictions(final, samples, horizons)
