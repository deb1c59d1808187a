"""Finite-difference verification of the analytic gradients of the full model."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .losses import total_loss
from .model import forward, init_params


@dataclass
class GradcheckResult:
    checked: int
    failures: list = field(default_factory=list)  # (name, index, analytic, numeric, error)
    worst: dict = field(default_factory=dict)  # name -> worst relative error
    seconds: float = 0.0

    @property
    def passed(self):
        return self.checked > 0 and not self.failures


@dataclass
class _Window:
    boxes: np.ndarray
    object_flow: np.ndarray
    global_flow: np.ndarray
    distances: np.ndarray


def random_problem(model_config, T_obs, agents, rng):
    """Random observation windows and future boxes in realistic ranges."""
    D, N = model_config.D, model_config.N
    centres = rng.uniform(0.1, 0.9, size=(agents, T_obs, 2))
    sizes = rng.uniform(0.03, 0.3, size=(agents, T_obs, 2))
    window = _Window(
        boxes=np.concatenate([centres, sizes], axis=-1),
        object_flow=rng.normal(size=(agents, T_obs, D)),
        global_flow=np.repeat(rng.normal(size=(1, T_obs, D)), agents, axis=0),
        distances=np.sort(rng.uniform(0.0, 80.0, size=(agents, T_obs, 6)), axis=-1),
    )
    truth = np.concatenate(
        [rng.uniform(0.1, 0.9, size=(agents, N, 2)), rng.uniform(0.03, 0.3, size=(agents, N, 2))], axis=-1
    )
    return window, truth


def compare(analytic, numeric, rtol=1e-4, atol=1e-8):
    """Return (ok, error); tiny gradients are compared absolutely."""
    if abs(analytic) < atol and abs(numeric) < atol:
        return abs(analytic - numeric) <= atol, abs(analytic - numeric)
    err = abs(analytic - numeric) / max(abs(analytic), abs(numeric))
    return err < rtol, err


def gradient_check(config, seed=0, agents=2, step=1e-5, rtol=1e-4, atol=1e-8):
    """Check every parameter element of a freshly initialized model.

    ``config`` is a :class:`~fusiongru.config.TrainConfig`; the loss is the
    training objective with its ``lam``.
    """
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    model_config = config.model_config()
    store = init_params(model_config, seed=seed)
    window, truth = random_problem(model_config, config.T_obs, agents, rng)

    with nx.Tape() as tape:
        report = total_loss(forward(window, store.bind(tape), model_config), truth, config.lam)
    grads = nx.backward(tape, report.value)

    arrays = {name: a.copy() for name, a in store.items()}
    params = {name: nx.Tensor(a, name=name) for name, a in arrays.items()}

    def loss():
        return total_loss(forward(window, params, model_config), truth, config.lam).total

    result = GradcheckResult(checked=0)
    for name, a in arrays.items():
        worst = 0.0
        for idx in np.ndindex(a.shape):
            original = a[idx]
            a[idx] = original + step
            up = loss()
            a[idx] = original - step
            down = loss()
            a[idx] = original
            numeric = (up - down) / (2 * step)
            ok, err = compare(float(grads[name][idx]), numeric, rtol, atol)
            result.checked += 1
            if abs(grads[name][idx]) >= atol or abs(numeric) >= atol:
                worst = max(worst, err)
            if not ok:
                result.failures.append((name, idx, float(grads[name][idx]), numeric, err))
        result.worst[name] = worst
    result.seconds = time.perf_counter() - started
    return result
