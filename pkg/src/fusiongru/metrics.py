"""Displacement and overlap metrics for forecast boxes.

Boxes are centre/size ``[x, y, w, h]``. Functions here work on plain numpy
arrays; callers convert normalized boxes to pixels with :func:`to_pixels`
first.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class MetricReport:
    ade: float
    fde: float
    aiou: float
    fiou: float
    horizon_seconds: float
    samples: int = 0

    def as_dict(self):
        return asdict(self)


def to_pixels(boxes, frame_size):
    """Scale normalized boxes (..., 4) by frame width/height per axis."""
    width, height = frame_size
    return np.asarray(boxes, dtype=np.float64) * np.array([width, height, width, height], dtype=np.float64)


def ade(pred_centers, truth_centers):
    pred_centers = np.asarray(pred_centers, dtype=np.float64)
    truth_centers = np.asarray(truth_centers, dtype=np.float64)
    if pred_centers.shape != truth_centers.shape:
        raise ValueError(f"trajectory shapes differ: {pred_centers.shape} vs {truth_centers.shape}")
    if pred_centers.shape[0] == 0:
        raise ValueError("ade of an empty trajectory")
    return float(np.linalg.norm(pred_centers - truth_centers, axis=-1).mean())


def fde(pred_final, truth_final):
    return float(np.linalg.norm(np.asarray(pred_final, dtype=np.float64) - np.asarray(truth_final, dtype=np.float64)))


def box_iou(a, b):
    """Vectorized IoU over the last axis; zero where either box is degenerate."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ax0, ax1 = a[..., 0] - a[..., 2] / 2, a[..., 0] + a[..., 2] / 2
    ay0, ay1 = a[..., 1] - a[..., 3] / 2, a[..., 1] + a[..., 3] / 2
    bx0, bx1 = b[..., 0] - b[..., 2] / 2, b[..., 0] + b[..., 2] / 2
    by0, by1 = b[..., 1] - b[..., 3] / 2, b[..., 1] + b[..., 3] / 2
    iw = np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0.0, None)
    ih = np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0.0, None)
    inter = iw * ih
    # areas from the same corners as the intersection, so identical boxes give exactly 1
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    valid = (a[..., 2] > 0) & (a[..., 3] > 0) & (b[..., 2] > 0) & (b[..., 3] > 0)
    union = np.where(valid, area_a + area_b - inter, 1.0)
    return np.where(valid, np.clip(inter / union, 0.0, 1.0), 0.0)


def _coords(box):
    if hasattr(box, "as_array"):
        return box.as_array()
    return np.asarray(box, dtype=np.float64)


def iou(a, b):
    a, b = _coords(a), _coords(b)
    for box in (a, b):
        if box[2] <= 0 or box[3] <= 0:
            raise ValueError(f"iou needs positive width and height, got {box.tolist()}")
    return float(box_iou(a, b))


def aiou_fiou(pred, truth):
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"box sequences differ in shape: {pred.shape} vs {truth.shape}")
    overlaps = box_iou(pred, truth)
    return float(overlaps.mean()), float(overlaps[-1])


def horizon_report(pred_px, truth_px, steps, horizon_seconds):
    """Sample-averaged metrics over the first ``steps`` horizon steps.

    ``pred_px`` and ``truth_px`` are pixel boxes of shape (S, N, 4).
    """
    pred_px = np.asarray(pred_px)[:, :steps]
    truth_px = np.asarray(truth_px)[:, :steps]
    dist = np.linalg.norm(pred_px[..., :2] - truth_px[..., :2], axis=-1)  # (S, steps)
    overlaps = box_iou(pred_px, truth_px)
    return MetricReport(
        ade=float(dist.mean()),
        fde=float(dist[:, -1].mean()),
        aiou=float(overlaps.mean()),
        fiou=float(overlaps[:, -1].mean()),
        horizon_seconds=float(horizon_seconds),
        samples=int(pred_px.shape[0]),
    )


def per_step_displacement(pred_px, truth_px):
    """Mean centre error at each horizon step, shape (N,)."""
    pred_px, truth_px = np.asarray(pred_px), np.asarray(truth_px)
    return np.linalg.norm(pred_px[..., :2] - truth_px[..., :2], axis=-1).mean(axis=0)
