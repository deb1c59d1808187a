import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fusiongru import features as ft
from fusiongru.errors import DimensionError
from fusiongru.params import ParameterStore
from tests import oracles


def _store(D=3, d=5, k=4, seed=0, zero_bias=False):
    store = ParameterStore.initialize(ft.feature_shapes(D, d, k), np.random.default_rng(seed))
    if not zero_bias:
        rng = np.random.default_rng(seed + 1)
        for name in ("flow_proj.b", "box_embed.b", "dist_embed.b"):
            store[name] = rng.normal(size=store[name].shape)
    return store


def test_fuse_flow_examples():
    assert ft.fuse_flow(np.array([1.0, 2.0]), np.array([3.0, 4.0])).data.tolist() == [1.0, 2.0, 3.0, 4.0]
    assert np.array_equal(ft.fuse_flow(np.zeros(5), np.zeros(5)).data, np.zeros(10))
    v = np.array([0.5, -1.0, 2.0])
    out = ft.fuse_flow(v, v).data
    assert np.array_equal(out[:3], out[3:])


def test_fuse_flow_length_mismatch():
    with pytest.raises(DimensionError):
        ft.fuse_flow(np.zeros(3), np.zeros(4))


@given(arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)), arrays(np.float64, 6, elements=st.floats(-1e3, 1e3)))
def test_fuse_flow_halves_recoverable(o, g):
    out = ft.fuse_flow(o, g).data
    assert np.array_equal(out[:6], o) and np.array_equal(out[6:], g)


def test_project_flow_zero_and_identity():
    store = _store(D=3, d=3)
    store["flow_proj.W"] = np.zeros((6, 6))
    store["flow_proj.b"] = np.zeros(6)
    assert np.array_equal(ft.project_flow(np.arange(6.0), store.bind()).data, np.zeros(6))
    store["flow_proj.W"] = np.eye(6)
    f = np.array([0.1, -3.0, 2.5, 7.0, 0.0, -1.25])
    assert np.array_equal(ft.project_flow(f, store.bind()).data, f)


def test_project_flow_shape_mismatch():
    store = _store(D=3, d=3)
    with pytest.raises(DimensionError):
        ft.project_flow(np.ones(5), store.bind())


def test_embed_box_examples():
    store = _store(d=6)
    store["box_embed.W"] = np.zeros((6, 4))
    store["box_embed.b"] = np.zeros(6)
    assert np.array_equal(ft.embed_box(np.array([0.3, 0.4, 0.1, 0.2]), store.bind()).data, np.zeros(6))
    store["box_embed.W"] = np.vstack([np.eye(4), np.zeros((2, 4))])
    box = np.array([0.3, 0.4, 0.1, 0.2])
    assert np.array_equal(ft.embed_box(box, store.bind()).data[:4], box)


def test_embed_box_rejects_non_finite():
    with pytest.raises(ValueError):
        ft.embed_box(np.array([0.1, np.nan, 0.1, 0.1]), _store().bind())


def test_embed_distance_examples():
    store = _store(k=4)
    W, b = store["dist_embed.W"], store["dist_embed.b"]
    out = ft.embed_distance(np.full(6, 80.0), store.bind()).data
    assert np.allclose(out, 80.0 * W.sum(axis=1) + b, rtol=0, atol=1e-12)
    store["dist_embed.W"] = np.zeros_like(W)
    store["dist_embed.b"] = np.zeros_like(b)
    assert np.array_equal(ft.embed_distance(np.arange(6.0), store.bind()).data, np.zeros(4))


def test_embed_distance_rejects_negative():
    with pytest.raises(ValueError):
        ft.embed_distance(np.array([-1.0, 2, 3, 4, 5, 6]), _store().bind())


def test_embeddings_match_matmul_oracle():
    rng = np.random.default_rng(7)
    for seed in range(20):
        store = _store(D=4, d=5, k=3, seed=seed)
        box, obj, glob = rng.uniform(0, 1, 4), rng.normal(size=4), rng.normal(size=4)
        dist = np.sort(rng.uniform(0, 80, 6))
        cues = ft.embed_cues(box, obj, glob, dist, store.bind())
        f, b, r = oracles.embed(box, obj, glob, dist, store)
        assert np.max(np.abs(cues.flow.data - f)) < 1e-12
        assert np.max(np.abs(cues.box.data - b)) < 1e-12
        assert np.max(np.abs(cues.dist.data - r)) < 1e-12
        assert cues.flow.shape == (10,) and cues.box.shape == (5,) and cues.dist.shape == (3,)


vec = st.floats(-10, 10)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_embeddings_are_linear_without_bias(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    params = _store(D=3, d=4, k=5, seed=seed, zero_bias=True).bind()
    cases = [
        (lambda x: ft.project_flow(x, params), 6),
        (lambda x: ft.embed_box(x, params), 4),
    ]
    for fn, n in cases:
        u, v = rng.normal(size=n), rng.normal(size=n)
        lhs = fn(alpha * u + beta * v).data
        rhs = alpha * fn(u).data + beta * fn(v).data
        assert np.max(np.abs(lhs - rhs)) < 1e-10
    u, v = rng.uniform(0, 80, 6), rng.uniform(0, 80, 6)
    a, b = abs(alpha), abs(beta)
    embed = lambda x: ft.embed_distance(x, params).data  # noqa: E731
    assert np.max(np.abs(embed(a * u + b * v) - (a * embed(u) + b * embed(v)))) < 1e-10


def test_pad_distances():
    assert ft.pad_distances([5.0, 1.0]).tolist() == [1.0, 5.0, 80.0, 80.0, 80.0, 80.0]
    assert ft.pad_distances([]).tolist() == [80.0] * 6
    assert ft.pad_distances([9, 8, 7, 6, 5, 4, 3, 100]).tolist() == [3, 4, 5, 6, 7, 8]


def test_bounding_box_validation():
    box = ft.BoundingBox(0.5, 0.5, 0.1, 0.2)
    assert ft.BoundingBox.from_array(box.as_array()) == box
    with pytest.raises(ValueError):
        ft.BoundingBox(0.5, 0.5, 0.0, 0.2)
    with pytest.raises(ValueError):
        ft.BoundingBox(np.inf, 0.5, 0.1, 0.2)


def test_agent_observation_validation():
    box = ft.BoundingBox(0.5, 0.5, 0.1, 0.2)
    ok = ft.AgentObservation(box, np.zeros(4), np.zeros(4), np.arange(6.0))
    assert ok.distances.shape == (6,)
    with pytest.raises(DimensionError):
        ft.AgentObservation(box, np.zeros(4), np.zeros(3), np.arange(6.0))
    with pytest.raises(ValueError):
        ft.AgentObservation(box, np.zeros(4), np.zeros(4), np.arange(6.0)[::-1])
    with pytest.raises(ValueError):
        ft.AgentObservation(box, np.zeros(4), np.zeros(4), np.arange(5.0))
