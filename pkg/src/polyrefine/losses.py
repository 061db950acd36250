"""Training objectives for the mask network and the contour refiner.

All losses take and return autodiff tensors so gradients reach the network
weights.  Contour losses expect unit-canvas coordinates (points divided by
the crop width/height).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PRED_EPS = 1e-7


def alpha_c(gt_mask: np.ndarray) -> float:
    """Background-to-foreground pixel count ratio used as the class weight."""
    fg = np.asarray(gt_mask).astype(bool)
    n_f = int(fg.sum())
    if n_f == 0:
        raise ValueError("alpha_c requires at least one foreground pixel")
    return float(fg.size - n_f) / n_f


def focal_loss_map(pred: Tensor, gt: np.ndarray, alpha: float, gamma: float) -> Tensor:
    """Per-pixel class-weighted binary focal loss map.

    loss = -(alpha * y * (1-p)^g * log p + (1-y) * p^g * log(1-p)); the
    negation turns the log-likelihood into a minimizable loss.  Predictions
    are clamped to [1e-7, 1 - 1e-7] to bound the log terms.
    """
    gt = np.asarray(gt).astype(np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth {gt.shape}")
    p = ad.clamp(pred, PRED_EPS, 1.0 - PRED_EPS)
    one_minus_p = 1.0 - p
    pos = ad.log(p) if gamma == 0 else ad.hadamard(ad.power(one_minus_p, gamma), ad.log(p))
    neg = ad.log(one_minus_p) if gamma == 0 else ad.hadamard(ad.power(p, gamma), ad.log(one_minus_p))
    return -ad.add(ad.hadamard(pos, alpha * gt), ad.hadamard(neg, 1.0 - gt))


def fm_weighted_loss(loss_map: Tensor, psi: np.ndarray) -> Tensor:
    """Mean of the (1 + psi)-weighted loss map (boundary pixels count double)."""
    psi = np.asarray(psi, dtype=np.float64)
    if loss_map.shape != psi.shape:
        raise ValueError(f"loss map shape {loss_map.shape} != weight map {psi.shape}")
    return ad.tmean(ad.hadamard(loss_map, 1.0 + psi))


def pairwise_distances(a: Tensor, b: Tensor) -> Tensor:
    """Euclidean distance matrix between two (N, 2) point sets."""
    na, nb = a.shape[0], b.shape[0]
    diff = ad.add(ad.reshape(a, na, 1, 2), -ad.reshape(b, 1, nb, 2))
    return ad.sqrt(ad.tsum(ad.hadamard(diff, diff), axis=2))


def hausdorff_loss(gt_points: Tensor, pred_points: Tensor) -> Tensor:
    """Symmetric sum-of-minima contour loss.

    0.5 * (sum of per-gt-point minimum distances to the prediction + sum of
    per-predicted-point minimum distances to the ground truth).  Minimum
    ties route their subgradient to the first minimizer.
    """
    gt_points, pred_points = ad._lift(gt_points), ad._lift(pred_points)
    if gt_points.data.size == 0 or pred_points.data.size == 0:
        raise ValueError("hausdorff_loss requires two non-empty point sets")
    d = pairwise_distances(gt_points, pred_points)
    e1 = ad.amin(d, axis=1)
    e2 = ad.amin(d, axis=0)
    return 0.5 * (ad.tsum(e1) + ad.tsum(e2))


def joint_loss(l_c: Tensor, l_fm: Tensor, lam: float) -> Tensor:
    """Fine-tuning objective: contour loss plus lam-weighted mask loss."""
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    return ad.add(l_c, lam * ad._lift(l_fm))


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Categorical cross-entropy of a logits vector against a class index."""
    logits = ad._lift(logits)
    n = logits.data.shape[0]
    if not 0 <= label < n:
        raise ValueError(f"label {label} out of range for {n} classes")
    probs = ad.softmax(logits)
    onehot = np.zeros(n)
    onehot[label] = 1.0
    return -ad.tsum(ad.hadamard(ad.log(ad.clamp(probs, PRED_EPS, 1.0)), onehot))
