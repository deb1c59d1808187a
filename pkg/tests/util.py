"""Shared builders for tests."""

from types import SimpleNamespace

import numpy as np

from fusiongru import features as ft
from fusiongru.model import ModelConfig, init_params


def random_store(config, seed, bias_scale=0.3):
    """Initialized parameters with nonzero biases so oracles exercise them."""
    store = init_params(config, seed=seed)
    rng = np.random.default_rng(10_000 + seed)
    for name, a in list(store.items()):
        if a.ndim == 1:
            store[name] = rng.normal(scale=bias_scale, size=a.shape)
    return store


def random_window(rng, D, T=5, agents=None):
    lead = () if agents is None else (agents,)
    centres = rng.uniform(0.1, 0.9, size=lead + (T, 2))
    sizes = rng.uniform(0.03, 0.3, size=lead + (T, 2))
    return SimpleNamespace(
        boxes=np.concatenate([centres, sizes], axis=-1),
        object_flow=rng.normal(size=lead + (T, D)),
        global_flow=rng.normal(size=lead + (T, D)),
        distances=np.sort(rng.uniform(0, 80, size=lead + (T, 6)), axis=-1),
    )


def random_cues(rng, d, k, scale=1.0):
    return ft.EmbeddedCues(
        flow=_t(rng.normal(scale=scale, size=2 * d)),
        box=_t(rng.normal(scale=scale, size=d)),
        dist=_t(rng.normal(scale=scale, size=k)),
    )


def _t(a):
    from fusiongru import numerics as nx

    return nx.Tensor(a)


def small_config(**overrides):
    base = dict(D=6, d=4, k=2, N=4)
    base.update(overrides)
    return ModelConfig(**base)
