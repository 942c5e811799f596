from typing import Sequence, Tuple

import numpy as np

from saakit.errors import ShapeError
from saakit.model import PseudoLabel
from saakit.network import cross_entropy_rows


def pseudo_label(p_weak, threshold: float) -> PseudoLabel:
    """
    Hard pseudo-label from a weak-view prediction. argmax takes the lowest index on ties, the
    mask accepts confidence >= threshold.
    """
    p_weak = np.asarray(p_weak)
    label = int(np.argmax(p_weak))
    confidence = float(p_weak[label])
    return PseudoLabel(label, confidence, confidence >= threshold)


def pseudo_labels(weak_probs: np.ndarray, threshold: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Batched pseudo_label: returns (labels, accepted mask).
    """
    # compared in float64 like pseudo_label
    weak_probs = np.asarray(weak_probs, dtype=np.float64)
    labels = np.argmax(weak_probs, axis=1)
    confidence = weak_probs[np.arange(len(labels)), labels]
    return labels, confidence >= threshold


def unsup_loss(weak_preds: Sequence, strong_preds: Sequence, threshold: float) -> Tuple[float, np.ndarray, float]:
    """
    Masked consistency loss, mean over the whole unlabeled batch (masked samples count as 0).

    :return: (loss, raw per-sample losses without the mask, mask rate)
    """
    weak = np.asarray(weak_preds, dtype=np.float64)
    strong = np.asarray(strong_preds, dtype=np.float64)
    if weak.shape != strong.shape:
        raise ShapeError(f'weak predictions {weak.shape} and strong predictions {strong.shape} differ')
    if len(weak) == 0:
        return 0.0, np.zeros(0), 0.0

    labels, mask = pseudo_labels(weak, threshold)
    raws = cross_entropy_rows(labels, strong)
    loss = float((raws * mask).sum() / len(raws))
    return loss, raws, float(mask.sum()) / len(mask)


def sup_loss(preds: Sequence, labels: Sequence[int]) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(preds) != len(labels):
        raise ShapeError(f'{len(preds)} predictions for {len(labels)} labels')
    if len(preds) == 0:
        return 0.0

    return float(cross_entropy_rows(labels, preds).mean())


def total_loss(sup: float, unsup: float, lambda_u: float) -> float:
    return sup + lambda_u * unsup
