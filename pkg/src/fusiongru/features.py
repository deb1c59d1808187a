"""Cue embeddings fed to the encoder: flow, box and neighbour distances.

Every function accepts either a single vector or a batch of row vectors
(leading axes are treated as batch axes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import DimensionError

NEIGHBOURS = 6
DISTANCE_SENTINEL = 80.0  # metres; pads missing neighbours


@dataclass(frozen=True)
class BoundingBox:
    """Centre/size box in normalized frame units."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_array())):
            raise ValueError(f"non-finite box {self}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box needs positive width and height, got w={self.w}, h={self.h}")

    def as_array(self):
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    @classmethod
    def from_array(cls, values):
        x, y, w, h = (float(v) for v in values)
        return cls(x, y, w, h)

    def to_pixels(self, frame_size):
        width, height = frame_size
        return np.array([self.x * width, self.y * height, self.w * width, self.h * height])


@dataclass
class AgentObservation:
    """One agent in one frame, as delivered by the (synthetic) perception stack."""

    box: BoundingBox
    object_flow: np.ndarray
    global_flow: np.ndarray
    distances: np.ndarray

    def __post_init__(self):
        self.object_flow = np.asarray(self.object_flow, dtype=np.float64)
        self.global_flow = np.asarray(self.global_flow, dtype=np.float64)
        self.distances = np.asarray(self.distances, dtype=np.float64)
        if self.object_flow.shape != self.global_flow.shape or self.object_flow.ndim != 1:
            raise DimensionError(
                f"object flow {self.object_flow.shape} and global flow {self.global_flow.shape} must be equal-length vectors"
            )
        if self.distances.shape != (NEIGHBOURS,):
            raise DimensionError(f"distance vector must have length {NEIGHBOURS}, got {self.distances.shape}")
        if np.any(self.distances < 0) or np.any(np.diff(self.distances) < 0):
            raise ValueError("distances must be nonnegative and sorted ascending")


@dataclass
class EmbeddedCues:
    """Per-frame encoder inputs: flow (2d), box (d) and distance (k) features."""

    flow: nx.Tensor
    box: nx.Tensor
    dist: nx.Tensor


def pad_distances(values, count=NEIGHBOURS, sentinel=DISTANCE_SENTINEL):
    """Sort ``values`` ascending, cap at ``sentinel`` and pad to ``count``."""
    values = np.minimum(np.sort(np.asarray(values, dtype=np.float64)), sentinel)[:count]
    return np.concatenate([values, np.full(count - len(values), sentinel)])


def fuse_flow(object_flow, global_flow):
    """Concatenate object-level and frame-level flow features, object first."""
    object_flow, global_flow = nx.as_tensor(object_flow), nx.as_tensor(global_flow)
    if object_flow.shape != global_flow.shape:
        raise DimensionError(f"flow features differ in shape: {object_flow.shape} vs {global_flow.shape}")
    return nx.concat([object_flow, global_flow], axis=-1)


def project_flow(fused, params):
    return nx.linear(fused, params["flow_proj.W"], params["flow_proj.b"])


def embed_box(box, params):
    if isinstance(box, BoundingBox):
        box = box.as_array()
    box = nx.as_tensor(box)
    if not np.all(np.isfinite(box.data)):
        raise ValueError("embed_box: non-finite box coordinates")
    return nx.linear(box, params["box_embed.W"], params["box_embed.b"])


def embed_distance(distances, params):
    distances = nx.as_tensor(distances)
    if np.any(distances.data < 0):
        raise ValueError("embed_distance: negative distance")
    return nx.linear(distances, params["dist_embed.W"], params["dist_embed.b"])


def embed_cues(box, object_flow, global_flow, distances, params):
    return EmbeddedCues(
        flow=project_flow(fuse_flow(object_flow, global_flow), params),
        box=embed_box(box, params),
        dist=embed_distance(distances, params),
    )


def feature_shapes(D, d, k):
    """Parameter shapes owned by this module."""
    return {
        "flow_proj.W": (2 * d, 2 * D),
        "flow_proj.b": (2 * d,),
        "box_embed.W": (d, 4),
        "box_embed.b": (d,),
        "dist_embed.W": (k, NEIGHBOURS),
        "dist_embed.b": (k,),
    }
