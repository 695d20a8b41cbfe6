import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from shorefuse.config import ModelConfig
from shorefuse.contours import ContourPolyline, crossing_points, mask_to_contour
from shorefuse.errors import ValidationError
from shorefuse.losses import (
    contour_distance_sampled,
    contour_loss,
    cross_entropy,
    dice_loss,
    edge_distance,
    total_loss,
    water_probability,
)

DIAG_224 = 224 * math.sqrt(2)
# 1 - 1/201 and 1 - 101/201 for 100-pixel sets with smoothing 1.
DICE_DISJOINT = 0.9950248756218906
DICE_HALF = 0.4975124378109453


def rows_mask(shape, first_water_row):
    m = np.zeros(shape, np.uint8)
    m[first_water_row:] = 1
    return m


def blob(seed, shape=(64, 64), sigma=5.0, noise=0.0, other=None):
    g = np.random.default_rng(seed)
    f = ndimage.gaussian_filter(g.normal(size=shape), sigma)
    if noise:
        h = ndimage.gaussian_filter(g.normal(size=shape), sigma)
        f = f + noise * h * f.std() / h.std()
    return (f > 0).astype(np.uint8)


# ------------------------------------------------------------ cross-entropy


def test_ce_tied_logits_is_ln2():
    for m in (np.zeros((1, 5, 5)), np.ones((1, 5, 5))):
        assert cross_entropy(torch.zeros(1, 2, 5, 5), torch.from_numpy(m)).item() == pytest.approx(math.log(2), abs=1e-6)


def test_ce_confident_limit():
    mask = torch.from_numpy(rows_mask((6, 6), 3))[None]
    logits = torch.stack([(1 - mask) * 50.0, mask * 50.0], 1).float()
    assert cross_entropy(logits, mask).item() < 1e-12


def test_ce_per_pixel_oracle(rng):
    logits = rng.normal(size=(2, 4, 4)) * 3
    mask = rng.integers(0, 2, (4, 4))
    ref = 0.0
    for r in range(4):
        for c in range(4):
            z = logits[:, r, c]
            ref += -(z[mask[r, c]] - math.log(math.exp(z[0]) + math.exp(z[1])))
    got = cross_entropy(torch.from_numpy(logits), torch.from_numpy(mask)).item()
    assert got == pytest.approx(ref / 16, rel=1e-6)


def test_ce_shape_mismatch():
    with pytest.raises(ValidationError):
        cross_entropy(torch.zeros(1, 2, 4, 4), torch.zeros(1, 4, 5))


# -------------------------------------------------------------------- dice


def _sets():
    a = np.zeros((20, 20))
    a[:10, :10] = 1
    b = np.zeros((20, 20))
    b[10:, 10:] = 1
    c = np.zeros((20, 20))
    c[5:15, :10] = 1
    return a, b, c


def test_dice_identical_disjoint_half():
    a, b, c = (torch.from_numpy(x) for x in _sets())
    assert dice_loss(a, a).item() == 0.0
    assert dice_loss(a, b).item() == pytest.approx(DICE_DISJOINT, abs=1e-12)
    assert dice_loss(c, a).item() == pytest.approx(DICE_HALF, abs=1e-12)


def test_dice_range_checked():
    with pytest.raises(ValidationError):
        dice_loss(torch.full((3, 3), 1.5), torch.zeros(3, 3))


# ---------------------------------------------------------- sampled distance


def test_sampled_distance_parallel_lines():
    pred = mask_to_contour(rows_mask((30, 40), 13))
    gt = mask_to_contour(rows_mask((30, 40), 11))
    for n in (1, 7, 128):
        assert contour_distance_sampled(pred, gt, n, 0) == pytest.approx(2.0, abs=1e-12)
    assert contour_distance_sampled(gt, gt, 50, 1) == 0.0


def test_sampled_distance_empty_is_nan():
    c = mask_to_contour(rows_mask((10, 10), 5))
    assert math.isnan(contour_distance_sampled(ContourPolyline(), c))
    with pytest.raises(ValidationError):
        contour_distance_sampled(c, c, 0)


def _arc_weighted_vertex_mean(pred_mask, gt_mask):
    """Exhaustive oracle: every predicted contour vertex, weighted by its share of arc length,
    against every ground-truth contour vertex by a full pairwise scan."""
    gv = crossing_points(gt_mask)
    total = weight = 0.0
    for path in mask_to_contour(pred_mask).paths:
        seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
        w = np.zeros(len(path))
        w[:-1] += seg / 2
        w[1:] += seg / 2
        d = np.sqrt(((path[:, None] - gv[None]) ** 2).sum(-1)).min(1)
        total += (w * d).sum()
        weight += w.sum()
    return total / weight


def _shore(g, shape=(96, 96)):
    h, w = shape
    c = ndimage.gaussian_filter1d(g.normal(size=w), 8)
    c = c / np.abs(c).max() * g.uniform(5, 20) + g.uniform(35, 60)
    return (np.arange(h)[:, None] >= c[None, :]).astype(np.uint8)


@pytest.mark.parametrize("seed", range(5))
def test_sampled_distance_against_exhaustive_scan(seed):
    g = np.random.default_rng(seed)
    gt, pred = _shore(g), _shore(g)
    est = contour_distance_sampled(mask_to_contour(pred), mask_to_contour(gt), 10_000, seed)
    assert est == pytest.approx(_arc_weighted_vertex_mean(pred, gt), rel=0.02)


def test_symmetric_mode():
    a = mask_to_contour(rows_mask((20, 20), 10))
    b = mask_to_contour(rows_mask((20, 20), 13))
    assert contour_distance_sampled(a, b, 32, 0, symmetric=True) == pytest.approx(3.0)


# ------------------------------------------------------------- contour loss


def _hard(mask):
    return torch.from_numpy(mask.astype(np.float64))


def test_parallel_line_value():
    gt = rows_mask((224, 224), 10)
    pred = rows_mask((224, 224), 12)
    got = contour_loss(_hard(pred), gt, beta=1.0).item()
    assert abs(got - 2 / DIAG_224) < 1e-9
    assert contour_loss(_hard(pred), gt, beta=0.5).item() == pytest.approx(1 / DIAG_224, abs=1e-9)


def test_identical_masks_zero():
    m = blob(3)
    assert contour_loss(_hard(m), m).item() == 0.0


def test_no_boundary_contributes_zero():
    gt = rows_mask((32, 32), 10)
    assert contour_loss(torch.full((32, 32), 0.3, dtype=torch.float64), gt).item() == 0.0
    assert contour_loss(_hard(gt), np.ones((32, 32), np.uint8)).item() == 0.0


def test_linear_in_offset():
    gt = rows_mask((224, 224), 100)
    vals = [contour_loss(_hard(rows_mask((224, 224), 100 + k)), gt).item() for k in range(1, 6)]
    slopes = np.diff(vals)
    assert np.all(slopes > 0)
    assert np.allclose(slopes, 1 / DIAG_224, rtol=0.01)


def test_translation_consistent():
    gt, pred = blob(5, (48, 48)), blob(5, (48, 48), noise=0.5)
    pad = lambda m, dy, dx: np.pad(m, ((8 + dy, 8 - dy), (8 + dx, 8 - dx)))
    base = contour_loss(_hard(pad(pred, 0, 0)), pad(gt, 0, 0)).item()
    moved = contour_loss(_hard(pad(pred, 3, -5)), pad(gt, 3, -5)).item()
    assert moved == pytest.approx(base, rel=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_hard_surrogate_tracks_estimator(seed):
    gt = blob(seed, (96, 96), 6.0)
    pred = blob(seed, (96, 96), 6.0, noise=0.6)
    if mask_to_contour(pred).empty or mask_to_contour(gt).empty:
        pytest.skip("degenerate draw")
    sur = contour_loss(_hard(pred), gt).item() * math.hypot(96, 96)
    est = contour_distance_sampled(mask_to_contour(pred), mask_to_contour(gt), 10_000, seed)
    assert sur == pytest.approx(est, rel=0.03)


def test_contour_loss_gradient_matches_finite_differences():
    g = np.random.default_rng(0)
    gt = rows_mask((12, 12), 6)
    field = edge_distance(gt)
    logits = torch.from_numpy(ndimage.gaussian_filter(g.normal(size=(12, 12)), 1.5) * 4 + np.linspace(-3, 3, 12)[:, None])
    p = torch.sigmoid(logits).requires_grad_(True)
    (grad,) = torch.autograd.grad(contour_loss(p, field), p)
    num = torch.zeros_like(p)
    for i in range(12):
        for j in range(12):
            d = torch.zeros_like(p)
            d[i, j] = 1e-6
            num[i, j] = (contour_loss(p.detach() + d, field) - contour_loss(p.detach() - d, field)) / 2e-6
    assert ((grad - num).norm() / num.norm()).item() < 1e-3


def test_contour_loss_validation():
    with pytest.raises(ValidationError):
        contour_loss(torch.zeros(4, 4), np.zeros((4, 4), np.uint8), beta=0)
    with pytest.raises(ValidationError):
        contour_loss(torch.zeros(4, 4), np.zeros((5, 4), np.uint8))


# -------------------------------------------------------------- total loss


def test_total_is_sum_of_terms(rng):
    cfg = ModelConfig.tiny()
    logits = torch.from_numpy(rng.normal(size=(2, 2, 16, 16)))
    mask = np.stack([rows_mask((16, 16), 7), blob(2, (16, 16), 2.0)])
    out = total_loss(logits, mask, cfg)
    p = water_probability(logits)
    ce = cross_entropy(logits, torch.from_numpy(mask))
    dl = dice_loss(p, torch.from_numpy(mask))
    lc = contour_loss(p, mask, cfg.beta)
    assert abs(out.total.item() - (ce + dl + lc).item()) < 1e-9
    assert abs(out.total.item() - (out.l_ce + out.l_dice + out.l_con).item()) < 1e-9
    assert all(v >= 0 for v in out.as_floats().values())


def test_perfect_prediction():
    cfg = ModelConfig.tiny()
    mask = rows_mask((16, 16), 9)[None]
    m = torch.from_numpy(mask).double()
    logits = torch.stack([(1 - m) * 40, m * 40], 1)
    out = total_loss(logits, mask, cfg)
    assert out.l_dice.item() < 1e-12
    assert out.l_con.item() < 1e-12
    assert out.total.item() == pytest.approx(out.l_ce.item(), abs=1e-12)


def test_contour_switch_off_exact():
    cfg = ModelConfig.tiny(use_contour_loss=False)
    logits = torch.randn(1, 2, 8, 8)
    out = total_loss(logits, rows_mask((8, 8), 4)[None], cfg)
    assert out.l_con.item() == 0.0
    assert out.total.item() == (out.l_ce + out.l_dice).item()


def test_total_loss_gradient_matches_finite_differences():
    cfg = ModelConfig.tiny()
    g = np.random.default_rng(1)
    mask = rows_mask((10, 10), 5)[None]
    logits = torch.from_numpy(g.normal(size=(1, 2, 10, 10))).requires_grad_(True)
    (grad,) = torch.autograd.grad(total_loss(logits, mask, cfg).total, logits)
    num = torch.zeros_like(logits)
    flat = num.view(-1)
    base = logits.detach().clone()
    for i in range(flat.numel()):
        d = torch.zeros_like(base).view(-1)
        d[i] = 1e-6
        d = d.view_as(base)
        flat[i] = (total_loss(base + d, mask, cfg).total - total_loss(base - d, mask, cfg).total) / 2e-6
    assert ((grad - num).norm() / num.norm()).item() < 1e-3


@given(st.integers(0, 10_000))
@settings(max_examples=20, deadline=None)
def test_terms_non_negative_and_finite(seed):
    g = np.random.default_rng(seed)
    logits = torch.from_numpy(g.normal(size=(1, 2, 12, 12)) * g.uniform(0.1, 20))
    mask = (g.uniform(size=(1, 12, 12)) < g.uniform()).astype(np.uint8)
    out = total_loss(logits, mask, ModelConfig.tiny())
    vals = out.as_floats()
    assert all(math.isfinite(v) and v >= 0 for v in vals.values())
