"""Mask similarity metrics and the max-overlap translation search.

Conventions for the ratio metrics, with prediction Y and ground truth G:
precision = |G & Y| / |Y|, recall = |G & Y| / |G|, dice = 2|G & Y| / (|Y| + |G|).
If both masks are empty all three are 1.0; if exactly one is empty, a metric
whose denominator is zero is 0.0.
"""
from __future__ import annotations

import numpy as np
from scipy import signal

from .volume import require_binary


def _counts(pred: np.ndarray, truth: np.ndarray) -> tuple[int, int, int]:
    pred = require_binary(pred, "pred")
    truth = require_binary(truth, "truth")
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs truth {truth.shape}")
    inter = int(np.count_nonzero(pred & truth))
    return inter, int(np.count_nonzero(pred)), int(np.count_nonzero(truth))


def precision(pred: np.ndarray, truth: np.ndarray) -> float:
    inter, n_pred, n_truth = _counts(pred, truth)
    if n_pred == 0:
        return 1.0 if n_truth == 0 else 0.0
    return inter / n_pred


def recall(pred: np.ndarray, truth: np.ndarray) -> float:
    inter, n_pred, n_truth = _counts(pred, truth)
    if n_truth == 0:
        return 1.0 if n_pred == 0 else 0.0
    return inter / n_truth


def dice(pred: np.ndarray, truth: np.ndarray) -> float:
    inter, n_pred, n_truth = _counts(pred, truth)
    if n_pred + n_truth == 0:
        return 1.0
    return 2.0 * inter / (n_pred + n_truth)


def _bbox_crop(mask: np.ndarray) -> np.ndarray | None:
    nz = np.nonzero(mask)
    if nz[0].size == 0:
        return None
    lo = [int(ax.min()) for ax in nz]
    hi = [int(ax.max()) + 1 for ax in nz]
    return mask[lo[0]:hi[0], lo[1]:hi[1]]

def omia(pred: np.ndarray, truth: np.ndarray) -> int:
    """Largest overlap count achievable by integer-translating the prediction.

    The prediction is conceptually zero-padded to the truth frame and slid
    over every integer (dx, dy); pixels shifted outside the frame drop out.
    Because offsets are unbounded the result depends only on the nonzero
    content, so it is computed as the peak of the cross-correlation of the
    two content bounding boxes. The prediction must not be larger than the
    truth along either axis.
    """
    pred = require_binary(pred, "pred")
    truth = require_binary(truth, "truth")
    if pred.ndim != 2 or truth.ndim != 2:
        raise ValueError("omia expects 2D masks")
    if pred.shape[0] > truth.shape[0] or pred.shape[1] > truth.shape[1]:
        raise ValueError(f"pred {pred.shape} exceeds truth {truth.shape}; pad the truth, not the pred")
    a = _bbox_crop(truth)
    b = _bbox_crop(pred)
    if a is None or b is None:
        return 0
    corr = signal.correlate(a.astype(np.float64), b.astype(np.float64), mode="full")
    return int(np.rint(corr.max()))
