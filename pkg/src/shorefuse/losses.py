"""Training objective: cross-entropy + Dice + contour-position loss.

The contour term has two forms. :func:`contour_distance_sampled` is the literal
estimator (mean distance from points sampled on the predicted contour to the
ground-truth polyline) and is used for evaluation. :func:`contour_loss` is the
differentiable surrogate used for training:

    L_con = beta * sum_e D(e) * b(e) * a(e) / (sum_e b(e) * a(e) + eps) / diag

where ``e`` ranges over the edges between 4-adjacent pixels, ``b(e)`` is the
absolute water-probability difference across the edge (the anisotropic total
variation split per edge) and ``D(e)`` is the Euclidean distance from the edge
midpoint to the ground-truth contour polyline. A boundary running at angle
theta crosses |cos theta| + |sin theta| edges per unit length, so
``a(e) = |g| / (|g_row| + |g_col|)``, with ``g`` the Sobel gradient of the
probability map, turns edge counts back into arc length. For a hard prediction
``b`` is 1 exactly on the predicted contour vertices and the surrogate is the
length-weighted mean contour distance divided by the image diagonal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import ModelConfig
from .contours import ContourPolyline, check_binary, edge_distances, polyline_distance
from .errors import ValidationError

DICE_SMOOTH = 1.0
CONTOUR_EPS = 1e-6
_GRAD_EPS = 1e-12
_SOBEL_ROW = torch.tensor([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]])


@dataclass
class LossBreakdown:
    l_ce: torch.Tensor
    l_dice: torch.Tensor
    l_con: torch.Tensor
    total: torch.Tensor
    empty_contours: int = 0

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("l_ce", "l_dice", "l_con", "total")}


def _batched(t: torch.Tensor, dims: int) -> torch.Tensor:
    return t if t.dim() == dims else t.unsqueeze(0)


def cross_entropy(logits: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean per-pixel two-class cross-entropy; logits (N, 2, H, W) or (2, H, W)."""
    logits = _batched(logits, 4)
    mask = _batched(torch.as_tensor(mask), 3)
    if logits.shape[1] != 2 or logits.shape[0] != mask.shape[0] or logits.shape[2:] != mask.shape[1:]:
        raise ValidationError(f"logits {tuple(logits.shape)} do not match mask {tuple(mask.shape)}")
    log_p = torch.log_softmax(logits, dim=1)
    picked = torch.gather(log_p, 1, mask.long().unsqueeze(1))
    return -picked.mean()


def dice_loss(prob: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """1 - (2|P.M| + 1) / (|P| + |M| + 1), averaged over the batch."""
    prob = _batched(torch.as_tensor(prob), 3)
    mask = _batched(torch.as_tensor(mask), 3).to(prob.dtype)
    if prob.shape != mask.shape:
        raise ValidationError(f"probabilities {tuple(prob.shape)} do not match mask {tuple(mask.shape)}")
    if prob.min() < 0 or prob.max() > 1:
        raise ValidationError("probabilities must lie in [0, 1]")
    inter = (prob * mask).sum(dim=(1, 2))
    denom = prob.sum(dim=(1, 2)) + mask.sum(dim=(1, 2))
    return (1 - (2 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)).mean()


# ------------------------------------------------------------- contour terms


def contour_distance_sampled(
    pred: ContourPolyline,
    gt: ContourPolyline,
    n_c: int = 128,
    rng_seed: int = 0,
    symmetric: bool = False,
) -> float:
    """Mean distance (pixels) from ``n_c`` arc-length-uniform samples on ``pred`` to ``gt``.

    Returns ``nan`` when either contour is empty; callers decide what that means.
    """
    if n_c < 1:
        raise ValidationError("n_c must be >= 1")
    if pred.empty or gt.empty:
        return float("nan")
    rng = np.random.default_rng(rng_seed)
    d = polyline_distance(pred.sample(n_c, rng), gt).mean()
    if symmetric:
        d = 0.5 * (d + polyline_distance(gt.sample(n_c, rng), pred).mean())
    return float(d)


@dataclass(frozen=True, eq=False)
class EdgeDistance:
    """Distances from edge midpoints to the ground-truth contour.

    ``vertical`` is (H-1, W) for edges between rows r and r+1; ``horizontal``
    is (H, W-1) for edges between columns c and c+1. ``None`` fields mean the
    ground truth has no contour. Distances are in pixels.
    """

    vertical: np.ndarray | None
    horizontal: np.ndarray | None
    shape: tuple[int, int]

    @property
    def empty(self) -> bool:
        return self.vertical is None

    @property
    def diag(self) -> float:
        return math.hypot(*self.shape)


def edge_distance(gt_mask: np.ndarray) -> EdgeDistance:
    m = check_binary(gt_mask, "gt_mask")
    fields = edge_distances(m)
    if fields is None:
        return EdgeDistance(None, None, m.shape)
    return EdgeDistance(fields[0], fields[1], m.shape)


def _length_weights(p: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Arc-length correction a(e) on vertical and horizontal edges; values in [1/sqrt(2), 1]."""
    kernel = _SOBEL_ROW.to(p.dtype)
    padded = F.pad(p[None, None], (1, 1, 1, 1), mode="replicate")
    g_row = F.conv2d(padded, kernel[None, None])[0, 0]
    g_col = F.conv2d(padded, kernel.T[None, None])[0, 0]

    def factor(gr: torch.Tensor, gc: torch.Tensor) -> torch.Tensor:
        return torch.sqrt(gr**2 + gc**2 + _GRAD_EPS) / (gr.abs() + gc.abs() + math.sqrt(_GRAD_EPS))

    a_v = factor(0.5 * (g_row[1:, :] + g_row[:-1, :]), 0.5 * (g_col[1:, :] + g_col[:-1, :]))
    a_h = factor(0.5 * (g_row[:, 1:] + g_row[:, :-1]), 0.5 * (g_col[:, 1:] + g_col[:, :-1]))
    return a_v, a_h


def contour_loss(
    prob: torch.Tensor,
    gt: np.ndarray | EdgeDistance | Sequence[EdgeDistance],
    beta: float = 1.0,
) -> torch.Tensor:
    """Differentiable contour-position term, averaged over the batch.

    ``gt`` is a binary mask, or precomputed :class:`EdgeDistance` fields (one
    per batch item). Items whose ground truth or prediction has no boundary
    contribute zero.
    """
    if not beta > 0:
        raise ValidationError("beta must be > 0")
    prob = _batched(torch.as_tensor(prob), 3)
    if isinstance(gt, EdgeDistance):
        fields = [gt]
    elif isinstance(gt, np.ndarray) or torch.is_tensor(gt):
        arr = np.asarray(gt)
        fields = [edge_distance(m) for m in (arr if arr.ndim == 3 else arr[None])]
    else:
        fields = list(gt)
    if len(fields) != prob.shape[0]:
        raise ValidationError("need one ground-truth field per batch item")
    terms = []
    for p, fd in zip(prob, fields):
        if tuple(p.shape) != tuple(fd.shape):
            raise ValidationError(f"probabilities {tuple(p.shape)} do not match ground truth {fd.shape}")
        if fd.empty:
            terms.append(p.sum() * 0.0)
            continue
        a_v, a_h = _length_weights(p)
        b_v = (p[1:, :] - p[:-1, :]).abs() * a_v
        b_h = (p[:, 1:] - p[:, :-1]).abs() * a_h
        d_v = torch.as_tensor(fd.vertical, dtype=p.dtype)
        d_h = torch.as_tensor(fd.horizontal, dtype=p.dtype)
        weighted = (d_v * b_v).sum() + (d_h * b_h).sum()
        mass = b_v.sum() + b_h.sum()
        terms.append(beta * weighted / (mass + CONTOUR_EPS) / fd.diag)
    return torch.stack(terms).mean()


def water_probability(logits: torch.Tensor) -> torch.Tensor:
    return torch.softmax(_batched(logits, 4), dim=1)[:, 1]


def total_loss(
    logits: torch.Tensor,
    gt_mask: torch.Tensor | np.ndarray,
    config: ModelConfig,
    fields: Sequence[EdgeDistance] | None = None,
) -> LossBreakdown:
    logits = _batched(logits, 4)
    mask = _batched(torch.as_tensor(np.asarray(gt_mask)) if not torch.is_tensor(gt_mask) else gt_mask, 3)
    l_ce = cross_entropy(logits, mask)
    prob = water_probability(logits)
    l_dice = dice_loss(prob, mask)
    empty = 0
    if config.use_contour_loss:
        if fields is None:
            fields = [edge_distance(m) for m in mask.cpu().numpy()]
        empty = sum(f.empty for f in fields)
        l_con = contour_loss(prob, fields, config.beta)
    else:
        l_con = torch.zeros((), dtype=logits.dtype)
    return LossBreakdown(l_ce, l_dice, l_con, l_ce + l_dice + l_con, empty)
