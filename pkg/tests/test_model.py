import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusiongru import model as m
from fusiongru import numerics as nx
from fusiongru.errors import ConfigError, DimensionError
from fusiongru.features import EmbeddedCues
from tests import oracles
from tests.util import random_cues, random_store, random_window, small_config


def _max_diff(a, b):
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


@pytest.mark.parametrize("standard", [False, True])
def test_fusion_step_matches_scalar_oracle(standard):
    config = small_config(candidate_form="standard" if standard else "paper")
    rng = np.random.default_rng(1)
    for seed in range(25):
        store = random_store(config, seed)
        cues = random_cues(rng, config.d, config.k)
        h = rng.uniform(-1, 1, config.d)
        got = m.fusion_gru_step(cues, h, store.bind(), standard_candidate=standard).data
        want = oracles.fusion_step(cues.flow.data, cues.box.data, cues.dist.data, h.tolist(), store, standard)
        assert _max_diff(got, want) < 1e-12


def test_fusion_step_all_zero():
    config = small_config()
    store = m.init_params(config)
    for name, a in store.items():
        store[name] = np.zeros_like(a)
    cues = random_cues(np.random.default_rng(0), config.d, config.k)
    assert np.array_equal(m.fusion_gru_step(cues, np.zeros(config.d), store.bind()).data, np.zeros(config.d))


def test_fusion_step_carries_state_when_update_gate_saturates():
    config = small_config()
    store = random_store(config, 2)
    store["enc.b_u"] = np.full(config.d, 60.0)
    h_prev = np.array([0.3, -0.7, 0.9, -0.1])
    cues = random_cues(np.random.default_rng(2), config.d, config.k)
    assert np.allclose(m.fusion_gru_step(cues, h_prev, store.bind()).data, h_prev, atol=1e-12)


def test_fusion_step_dimension_error():
    config = small_config()
    cues = random_cues(np.random.default_rng(0), config.d, config.k)
    with pytest.raises(DimensionError):
        m.fusion_gru_step(cues, np.zeros(config.d + 1), m.init_params(config).bind())


def test_encode_equals_unrolled_chain():
    config = small_config()
    store = random_store(config, 4)
    rng = np.random.default_rng(4)
    seq = [random_cues(rng, config.d, config.k) for _ in range(5)]
    h = [0.0] * config.d
    for c in seq:
        h = oracles.fusion_step(c.flow.data, c.box.data, c.dist.data, h, store)
    assert _max_diff(m.encode(seq, store.bind()).data, h) < 1e-12


def test_encode_zero_weights_zero_cues():
    config = small_config()
    store = m.init_params(config)
    for name, a in store.items():
        store[name] = np.zeros_like(a)
    zero = EmbeddedCues(nx.Tensor(np.zeros(2 * config.d)), nx.Tensor(np.zeros(config.d)), nx.Tensor(np.zeros(config.k)))
    assert np.array_equal(m.encode([zero] * 3, store.bind()).data, np.zeros(config.d))


def test_encode_empty_sequence():
    with pytest.raises(ValueError):
        m.encode([], m.init_params(small_config()).bind())


def test_intermediary_matches_two_layer_oracle():
    rng = np.random.default_rng(5)
    for N in (1, 4, 10):
        config = small_config(N=N)
        store = random_store(config, N)
        h = rng.uniform(-1, 1, config.d)
        got = m.intermediary_estimate(h, store.bind()).data
        assert got.shape == (N, 4)
        assert _max_diff(got, oracles.intermediary(h.tolist(), store)) < 1e-12


def test_intermediary_zero_weights():
    config = small_config()
    store = m.init_params(config)
    store["inter.W1"] = np.zeros_like(store["inter.W1"])
    assert np.array_equal(m.intermediary_estimate(np.ones(config.d), store.bind()).data, np.zeros((config.N, 4)))


def test_form_subsets_examples():
    assert m.form_subsets(["s1", "s2", "s3"]) == [["s1", "s2", "s3"], ["s2", "s3"], ["s3"]]
    assert m.form_subsets(["s1"]) == [["s1"]]
    assert [len(s) for s in m.form_subsets(range(4))] == [4, 3, 2, 1]
    with pytest.raises(ValueError):
        m.form_subsets([])


@pytest.mark.parametrize("N", range(1, 11))
def test_form_subsets_suffix_property(N):
    items = [f"s{i}" for i in range(1, N + 1)]
    subsets = m.form_subsets(items)
    assert len(subsets) == N
    for j, subset in enumerate(subsets, start=1):
        assert len(subset) == N - j + 1
        assert subset == items[N - (N - j + 1) :]


def test_aggregate_matches_scalar_oracle():
    config = small_config()
    rng = np.random.default_rng(6)
    for seed in range(20):
        store = random_store(config, seed)
        subset = [rng.uniform(-1, 1, 4) for _ in range(3)]
        x, w = m.aggregate(subset, store.bind(), return_weights=True)
        want_x, want_w = oracles.aggregate([s.tolist() for s in subset], store)
        assert _max_diff(x.data, want_x) < 1e-12
        assert _max_diff(w.data, want_w) < 1e-12


def test_aggregate_singleton_and_duplicates():
    config = small_config()
    store = random_store(config, 3)
    box = np.array([0.2, 0.4, 0.1, 0.3])
    z = oracles.relu(oracles.affine(oracles.P(store, "agg.W_z"), oracles.P(store, "agg.b_z"), box.tolist()))
    assert _max_diff(m.aggregate([box], store.bind()).data, z) < 1e-15
    x, w = m.aggregate([box, box.copy()], store.bind(), return_weights=True)
    assert w.data.tolist() == [0.5, 0.5]
    assert _max_diff(x.data, z) < 1e-15
    with pytest.raises(ValueError):
        m.aggregate([], store.bind())


@settings(max_examples=40)
@given(st.integers(1, 10), st.integers(0, 10_000))
def test_aggregate_weights_normalize_and_ignore_order(n, seed):
    config = small_config()
    store = random_store(config, seed % 50)
    rng = np.random.default_rng(seed)
    subset = [rng.uniform(-3, 3, 4) for _ in range(n)]
    x, w = m.aggregate(subset, store.bind(), return_weights=True)
    assert abs(w.data.sum() - 1.0) < 1e-12
    perm = rng.permutation(n)
    x_perm = m.aggregate([subset[i] for i in perm], store.bind()).data
    assert _max_diff(x.data, x_perm) < 1e-12


def test_aggregate_subsets_matches_per_subset_aggregate():
    config = small_config(N=7)
    store = random_store(config, 8)
    boxes = np.random.default_rng(8).uniform(-1, 1, (3, 7, 4))
    x, w = m.aggregate_subsets(boxes, store.bind(), return_weights=True)
    for a in range(3):
        for j, subset in enumerate(m.form_subsets(list(boxes[a]))):
            assert _max_diff(x.data[a, j], m.aggregate(subset, store.bind()).data) < 1e-12
        assert np.all(w.data[a][np.tril_indices(7, -1)] == 0.0)
        assert np.allclose(w.data[a].sum(axis=-1), 1.0, atol=1e-12)


def test_horizon_decomposition():
    """Aggregation input j never sees intermediary boxes before j."""
    config = small_config(N=6)
    store = random_store(config, 9)
    boxes = np.random.default_rng(9).uniform(-1, 1, (6, 4))
    x = m.aggregate_subsets(boxes, store.bind()).data
    for j in range(6):
        zeroed = boxes.copy()
        zeroed[:j] = 0.0
        assert np.array_equal(m.aggregate_subsets(zeroed, store.bind()).data[j], x[j])


def test_decode_matches_unrolled_gru_oracle():
    config = small_config(N=4)
    rng = np.random.default_rng(10)
    for seed in range(20):
        store = random_store(config, seed)
        xs = [rng.normal(size=config.d) for _ in range(4)]
        h = rng.uniform(-1, 1, config.d)
        got = m.decode(xs, h, store.bind()).data
        want = oracles.decode([x.tolist() for x in xs], h.tolist(), store)
        assert _max_diff(got, want) < 1e-12


def test_decode_base_cases():
    config = small_config(N=1)
    store = random_store(config, 11)
    x, h = np.full(config.d, 0.2), np.full(config.d, -0.3)
    step = oracles.head(oracles.gru(x.tolist(), h.tolist(), store), store)
    assert _max_diff(m.decode([x], h, store.bind()).data, [step]) < 1e-12
    store["head.W2"] = np.zeros((4, config.d))
    store["head.b2"] = np.zeros(4)
    assert np.array_equal(m.decode([x, x, x], h, store.bind()).data, np.zeros((3, 4)))
    with pytest.raises(DimensionError):
        m.decode([np.zeros(config.d + 2)], h, store.bind())


@pytest.mark.parametrize("box_frame", ["absolute", "last-observed"])
@pytest.mark.parametrize("candidate_form", ["paper", "standard"])
def test_forward_matches_composed_oracle(box_frame, candidate_form):
    config = m.ModelConfig(D=6, d=8, k=4, N=4, box_frame=box_frame, candidate_form=candidate_form)
    store = random_store(config, 12)
    win = random_window(np.random.default_rng(12), config.D, T=5)
    out = m.forward(win, store.bind(), config)
    inter, final = oracles.pipeline(
        win.boxes, win.object_flow, win.global_flow, win.distances, store,
        relative=box_frame == "last-observed", standard=candidate_form == "standard",
    )
    assert _max_diff(out.intermediary.data, inter) < 1e-10
    assert _max_diff(out.final.data, final) < 1e-10


def test_forward_batched_equals_per_agent():
    config = m.ModelConfig(D=6, d=8, k=4, N=4)
    store = random_store(config, 13)
    win = random_window(np.random.default_rng(13), config.D, T=5, agents=3)
    batched = m.forward(win, store.bind(), config).final.data
    for a in range(3):
        single = type(win)(**{k: v[a] for k, v in vars(win).items()})
        assert _max_diff(m.forward(single, store.bind(), config).final.data, batched[a]) < 1e-13


def test_forward_with_zero_parameters():
    config = m.ModelConfig(D=6, d=8, k=4, N=4, box_frame="absolute")
    store = m.init_params(config)
    for name, a in store.items():
        store[name] = np.zeros_like(a)
    win = random_window(np.random.default_rng(14), config.D, T=5)
    out = m.forward(win, store.bind(), config)
    assert np.array_equal(out.intermediary.data, np.zeros((4, 4)))
    assert np.array_equal(out.final.data, np.zeros((4, 4)))
    # relative frame: zero offsets put every box at the last observed centre
    rel = m.forward(win, store.bind(), m.ModelConfig(D=6, d=8, k=4, N=4))
    anchor = np.array([*win.boxes[-1, :2], 0.0, 0.0])
    assert np.array_equal(rel.final.data, np.tile(anchor, (4, 1)))


def test_forward_infers_config_from_params():
    config = m.ModelConfig(D=6, d=8, k=4, N=3, box_frame="absolute")
    store = random_store(config, 15)
    win = random_window(np.random.default_rng(15), config.D)
    assert np.array_equal(m.forward(win, store.bind()).final.data, m.forward(win, store.bind(), config).final.data)


def test_forward_observations_matches_window():
    from fusiongru.features import AgentObservation, BoundingBox

    config = m.ModelConfig(D=6, d=8, k=4, N=3)
    store = random_store(config, 16)
    win = random_window(np.random.default_rng(16), config.D)
    obs = [
        AgentObservation(BoundingBox.from_array(win.boxes[t]), win.object_flow[t], win.global_flow[t], win.distances[t])
        for t in range(5)
    ]
    a = m.forward_observations(obs, store.bind(), config).final.data
    assert np.array_equal(a, m.forward(win, store.bind(), config).final.data)
    with pytest.raises(ValueError):
        m.forward_observations([], store.bind(), config)


def test_hidden_state_stays_bounded_under_extreme_cues():
    config = small_config()
    rng = np.random.default_rng(17)
    for seed in range(50):
        store = random_store(config, seed, bias_scale=3.0)
        seq = [random_cues(rng, config.d, config.k, scale=50.0) for _ in range(20)]
        assert np.max(np.abs(m.encode(seq, store.bind()).data)) <= 1.0 + 1e-12


def test_model_config_validation():
    with pytest.raises(ConfigError):
        m.ModelConfig(d=8, d_agg=4)
    with pytest.raises(ConfigError):
        m.ModelConfig(candidate_form="other")
    with pytest.raises(ConfigError):
        m.ModelConfig(N=0)


def test_param_shapes_follow_config():
    shapes = m.param_shapes(m.ModelConfig(D=5, d=7, k=3, N=2))
    assert shapes["enc.W_fr"] == (7, 14) and shapes["enc.W_dr"] == (7, 3)
    assert shapes["inter.W1"] == (8, 7) and shapes["agg.W_sa"] == (1, 7)
    assert "enc.W_h1" not in shapes
    assert "enc.W_h1" in m.param_shapes(m.ModelConfig(candidate_form="standard"))
