"""Fusion-GRU encoder, intermediary estimator, attention aggregation and GRU decoder."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError
from .features import DISTANCE_SENTINEL, NEIGHBOURS, embed_cues, feature_shapes
from .params import ParameterStore

CANDIDATE_FORMS = ("paper", "standard")
BOX_FRAMES = ("last-observed", "absolute")


@dataclass(frozen=True)
class ModelConfig:
    D: int = 64
    d: int = 64
    k: int = 32
    N: int = 10
    d_agg: int | None = None
    candidate_form: str = "paper"
    box_frame: str = "last-observed"

    def __post_init__(self):
        for field in ("D", "d", "k", "N"):
            if getattr(self, field) < 1:
                raise ConfigError(f"{field} must be positive", [field])
        if self.d_agg is None:
            object.__setattr__(self, "d_agg", self.d)
        if self.d_agg != self.d:
            raise ConfigError(f"d_agg ({self.d_agg}) must equal d ({self.d})", ["d_agg"])
        if self.candidate_form not in CANDIDATE_FORMS:
            raise ConfigError(f"candidate_form must be one of {CANDIDATE_FORMS}", ["candidate_form"])
        if self.box_frame not in BOX_FRAMES:
            raise ConfigError(f"box_frame must be one of {BOX_FRAMES}", ["box_frame"])

    @property
    def standard_candidate(self):
        return self.candidate_form == "standard"


@dataclass
class PredictionSet:
    """Intermediary and final boxes, each of shape (..., N, 4)."""

    intermediary: nx.Tensor
    final: nx.Tensor

    @property
    def horizon(self):
        return self.final.shape[-2]


def param_shapes(config):
    D, d, k, N, d_agg = config.D, config.d, config.k, config.N, config.d_agg
    shapes = feature_shapes(D, d, k)
    for gate in ("r", "u"):
        shapes[f"enc.W_f{gate}"] = (d, 2 * d)
        shapes[f"enc.W_b{gate}"] = (d, d)
        shapes[f"enc.W_d{gate}"] = (d, k)
        shapes[f"enc.W_h{gate}"] = (d, d)
        shapes[f"enc.b_{gate}"] = (d,)
    shapes["enc.W_f1"] = (d, 2 * d)
    shapes["enc.W_b1"] = (d, d)
    shapes["enc.W_d1"] = (d, k)
    shapes["enc.b_e"] = (d,)
    if config.standard_candidate:
        shapes["enc.W_h1"] = (d, d)
    shapes.update(
        {
            "inter.W0": (d, d),
            "inter.b0": (d,),
            "inter.W1": (4 * N, d),
            "inter.b1": (4 * N,),
            "agg.W_z": (d_agg, 4),
            "agg.b_z": (d_agg,),
            "agg.W_sa": (1, d_agg),
        }
    )
    for gate in ("r", "z", "n"):
        shapes[f"dec.W_i{gate}"] = (d, d_agg)
        shapes[f"dec.W_h{gate}"] = (d, d)
        shapes[f"dec.b_i{gate}"] = (d,)
        shapes[f"dec.b_h{gate}"] = (d,)
    shapes.update({"head.W1": (d, d), "head.b1": (d,), "head.W2": (4, d), "head.b2": (4,)})
    return shapes


def init_params(config, seed=0):
    store = ParameterStore.initialize(param_shapes(config), np.random.default_rng(seed))
    # distances arrive in metres (up to the 80 m sentinel); keep their embedding O(1)
    store["dist_embed.W"] = store["dist_embed.W"] / DISTANCE_SENTINEL
    return store


# ------------------------------------------------------------------ encoder


def _gate(cues, h_prev, params, tag):
    pre = nx.linear(cues.flow, params[f"enc.W_f{tag}"])
    pre = pre + nx.linear(cues.box, params[f"enc.W_b{tag}"])
    pre = pre + nx.linear(cues.dist, params[f"enc.W_d{tag}"])
    pre = pre + nx.linear(h_prev, params[f"enc.W_h{tag}"], params[f"enc.b_{tag}"])
    return nx.sigmoid(pre)


def fusion_gru_step(cues, h_prev, params, standard_candidate=False):
    """One Fusion-GRU update; returns the new hidden state.

    The candidate adds ``reset * h_prev`` without a weight matrix, exactly as
    the cell is defined. ``standard_candidate`` inserts the usual recurrent
    weight ``enc.W_h1`` on that term instead.
    """
    h_prev = nx.as_tensor(h_prev)
    d = params["enc.W_hr"].shape[0]
    if h_prev.shape[-1] != d:
        raise DimensionError(f"hidden state has size {h_prev.shape[-1]}, cell expects {d}")
    reset = _gate(cues, h_prev, params, "r")
    gated = reset * h_prev
    if standard_candidate:
        gated = nx.linear(gated, params["enc.W_h1"])
    pre = gated + nx.linear(cues.flow, params["enc.W_f1"])
    pre = pre + nx.linear(cues.box, params["enc.W_b1"])
    pre = pre + nx.linear(cues.dist, params["enc.W_d1"], params["enc.b_e"])
    candidate = nx.tanh(pre)
    update = _gate(cues, h_prev, params, "u")
    return (1.0 - update) * candidate + update * h_prev


def encode(sequence, params, standard_candidate=False):
    """Fold the cell over frames, oldest first, from a zero state."""
    if len(sequence) == 0:
        raise ValueError("encode needs at least one observed frame")
    d = params["enc.W_hr"].shape[0]
    h = nx.Tensor(np.zeros(sequence[0].box.shape[:-1] + (d,)))
    for cues in sequence:
        h = fusion_gru_step(cues, h, params, standard_candidate)
    return h


# ------------------------------------------------- intermediary + aggregation


def intermediary_estimate(h, params):
    """Provisional boxes for the whole horizon, shape (..., N, 4)."""
    h = nx.as_tensor(h)
    hidden = nx.relu(nx.linear(h, params["inter.W0"], params["inter.b0"]))
    flat = nx.linear(hidden, params["inter.W1"], params["inter.b1"])
    return flat.reshape(flat.shape[:-1] + (flat.shape[-1] // 4, 4))


def form_subsets(boxes):
    """Suffixes of the intermediary boxes: subset j holds boxes j..N."""
    boxes = list(boxes)
    if not boxes:
        raise ValueError("form_subsets needs at least one box")
    return [boxes[j:] for j in range(len(boxes))]


def _embed_boxes(boxes, params):
    return nx.relu(nx.linear(boxes, params["agg.W_z"], params["agg.b_z"]))


def aggregate(subset, params, return_weights=False):
    """Attention-weighted sum of the embedded boxes of one subset."""
    if len(subset) == 0:
        raise ValueError("aggregate needs a nonempty subset")
    stacked = nx.stack([nx.as_tensor(b) for b in subset], axis=-2)  # (..., m, 4)
    z = _embed_boxes(stacked, params)
    scores = nx.linear(z, params["agg.W_sa"])  # (..., m, 1)
    weights = nx.softmax(scores.reshape(scores.shape[:-1]), axis=-1)
    pooled = nx.matmul(weights.reshape(weights.shape[:-1] + (1, weights.shape[-1])), z)
    x = pooled.reshape(pooled.shape[:-2] + (pooled.shape[-1],))
    return (x, weights) if return_weights else x


def aggregate_subsets(boxes, params, return_weights=False):
    """All N aggregations at once from boxes of shape (..., N, 4).

    Row j of the result equals ``aggregate(form_subsets(boxes)[j])``; the
    suffix structure is expressed as a mask over a shared score matrix.
    """
    boxes = nx.as_tensor(boxes)
    N = boxes.shape[-2]
    z = _embed_boxes(boxes, params)  # (..., N, d_agg)
    scores = nx.linear(z, params["agg.W_sa"])  # (..., N, 1)
    row = scores.reshape(scores.shape[:-2] + (1, N))
    grid = nx.matmul(np.ones((N, 1)), row)  # (..., N, N), every row the same scores
    suffix = np.triu(np.ones((N, N), dtype=bool))
    weights = nx.softmax(grid, axis=-1, mask=suffix)
    x = nx.matmul(weights, z)
    return (x, weights) if return_weights else x


# ------------------------------------------------------------------ decoder


def gru_cell(x, h, params, prefix="dec"):
    """Conventional GRU cell (reset applied after the recurrent matmul)."""
    p = params
    r = nx.sigmoid(nx.linear(x, p[f"{prefix}.W_ir"], p[f"{prefix}.b_ir"]) + nx.linear(h, p[f"{prefix}.W_hr"], p[f"{prefix}.b_hr"]))
    z = nx.sigmoid(nx.linear(x, p[f"{prefix}.W_iz"], p[f"{prefix}.b_iz"]) + nx.linear(h, p[f"{prefix}.W_hz"], p[f"{prefix}.b_hz"]))
    n = nx.tanh(
        nx.linear(x, p[f"{prefix}.W_in"], p[f"{prefix}.b_in"]) + r * nx.linear(h, p[f"{prefix}.W_hn"], p[f"{prefix}.b_hn"])
    )
    return (1.0 - z) * n + z * h


def output_head(hidden, params):
    mid = nx.relu(nx.linear(hidden, params["head.W1"], params["head.b1"]))
    return nx.linear(mid, params["head.W2"], params["head.b2"])


def decode(x_seq, h_enc, params):
    """Run the decoder GRU over the N aggregated inputs; boxes (..., N, 4)."""
    if isinstance(x_seq, nx.Tensor):
        x_seq = [x_seq[(Ellipsis, j, slice(None))] for j in range(x_seq.shape[-2])]
    if len(x_seq) == 0:
        raise ValueError("decode needs at least one input step")
    d_agg = params["dec.W_ir"].shape[1]
    h = nx.as_tensor(h_enc)
    hiddens = []
    for x in x_seq:
        x = nx.as_tensor(x)
        if x.shape[-1] != d_agg:
            raise DimensionError(f"decoder input has size {x.shape[-1]}, expected {d_agg}")
        h = gru_cell(x, h, params)
        hiddens.append(h)
    return output_head(nx.stack(hiddens, axis=-2), params)


# ------------------------------------------------------------------ pipeline


def box_anchor(boxes):
    """Centre of the last observed box as a (..., 4) offset with zero size part."""
    anchor = np.zeros(boxes.shape[:-2] + (4,))
    anchor[..., :2] = boxes[..., -1, :2]
    return anchor


def forward(window, params, config=None):
    """Full pipeline on an observation window.

    ``window`` carries arrays ``boxes`` (..., T, 4), ``object_flow`` and
    ``global_flow`` (..., T, D) and ``distances`` (..., T, 6).

    With ``box_frame="last-observed"`` box centres are shifted so the last
    observed centre sits at the origin before embedding, and predictions are
    shifted back; sizes are untouched. ``"absolute"`` feeds boxes as given.
    """
    config = config or ModelConfig(
        D=params["flow_proj.W"].shape[1] // 2,
        d=params["enc.W_hr"].shape[0],
        k=params["dist_embed.W"].shape[0],
        N=params["inter.W1"].shape[0] // 4,
        candidate_form="standard" if "enc.W_h1" in params else "paper",
        box_frame="absolute",
    )
    boxes = np.asarray(window.boxes, dtype=np.float64)
    T = boxes.shape[-2]
    if T < 1:
        raise ValueError("forward needs at least one observed frame")
    if window.distances.shape[-1] != NEIGHBOURS:
        raise DimensionError(f"distance vectors must have length {NEIGHBOURS}")
    anchor = None
    if config.box_frame == "last-observed":
        anchor = box_anchor(boxes)
        boxes = boxes - anchor[..., None, :]
    sequence = [
        embed_cues(
            boxes[..., t, :],
            window.object_flow[..., t, :],
            window.global_flow[..., t, :],
            window.distances[..., t, :],
            params,
        )
        for t in range(T)
    ]
    h = encode(sequence, params, config.standard_candidate)
    intermediary = intermediary_estimate(h, params)
    x = aggregate_subsets(intermediary, params)
    final = decode(x, h, params)
    if anchor is not None:
        shift = np.broadcast_to(anchor[..., None, :], final.shape).copy()
        intermediary = intermediary + shift
        final = final + shift
    return PredictionSet(intermediary=intermediary, final=final)


@dataclass
class _Window:
    boxes: np.ndarray
    object_flow: np.ndarray
    global_flow: np.ndarray
    distances: np.ndarray


def window_from_observations(observations):
    """Stack a list of per-frame :class:`AgentObservation` for one agent."""
    return _Window(
        boxes=np.stack([o.box.as_array() for o in observations]),
        object_flow=np.stack([o.object_flow for o in observations]),
        global_flow=np.stack([o.global_flow for o in observations]),
        distances=np.stack([o.distances for o in observations]),
    )


def forward_observations(observations, params, config=None):
    if len(observations) == 0:
        raise ValueError("forward needs at least one observed frame")
    return forward(window_from_observations(observations), params, config)


def predict_boxes(window, store, config):
    """Inference without a tape; returns (intermediary, final) arrays."""
    out = forward(window, store.bind(), config)
    return out.intermediary.data, out.final.data
