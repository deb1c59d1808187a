"""Training objective: smooth L1 on final and intermediary boxes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx

DEFAULT_LAMBDA = 0.3


def smooth_l1(pred, truth):
    """Scalar smooth L1 (Huber with unit knee)."""
    r = abs(float(pred) - float(truth))
    return 0.5 * r * r if r < 1.0 else r - 0.5


@dataclass
class LossReport:
    final_term: float
    intermediary_term: float
    total: float
    lam: float
    value: nx.Tensor = field(repr=False, compare=False, default=None)


def _term(boxes, truth):
    per_coord = nx.smooth_l1(boxes, truth)
    agents = int(np.prod(per_coord.shape[:-2])) if per_coord.ndim > 2 else 1
    # mean over the 4 coordinates and over agents, summed over horizon steps
    return nx.sum_(per_coord) * (1.0 / (4.0 * agents))


def total_loss(pred, truth, lam=DEFAULT_LAMBDA):
    """Loss on final boxes plus ``lam`` times the loss on intermediary boxes.

    ``truth`` has the same (..., N, 4) shape as the predictions. The returned
    report carries the differentiable total in ``value``.
    """
    truth = nx.as_tensor(truth)
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    if pred.final.shape != truth.shape or pred.intermediary.shape != truth.shape:
        raise ValueError(
            f"prediction shapes {pred.final.shape}/{pred.intermediary.shape} do not match truth {truth.shape}"
        )
    final_term = _term(pred.final, truth)
    inter_term = _term(pred.intermediary, truth)
    total = final_term + inter_term * float(lam)
    return LossReport(
        final_term=final_term.item(),
        intermediary_term=inter_term.item(),
        total=total.item(),
        lam=float(lam),
        value=total,
    )
