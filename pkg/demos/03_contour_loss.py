"""The contour term: mean distance from the predicted shoreline to the true one.

Prints the loss for shorelines offset by 1 to 5 rows (linear in the offset) and
compares the differentiable surrogate with the sampling estimator on random
blobs.

    python demos/03_contour_loss.py
"""
import math

import numpy as np
import torch
from scipy import ndimage

from shorefuse.contours import mask_to_contour
from shorefuse.losses import contour_distance_sampled, contour_loss


def rows(shape, first):
    m = np.zeros(shape, np.uint8)
    m[first:] = 1
    return m


gt = rows((224, 224), 100)
diag = math.hypot(224, 224)
for k in range(1, 6):
    val = contour_loss(torch.from_numpy(rows((224, 224), 100 + k).astype(np.float64)), gt).item()
    print(f"offset {k} rows: loss {val:.6f}  x diagonal = {val * diag:.3f} px")

print()
g = np.random.default_rng(0)
for seed in range(6):
    f = ndimage.gaussian_filter(g.normal(size=(96, 96)), 6)
    noise = ndimage.gaussian_filter(g.normal(size=(96, 96)), 6)
    truth = (f > 0).astype(np.uint8)
    pred = (f + 0.6 * noise * f.std() / noise.std() > 0).astype(np.uint8)
    sur = contour_loss(torch.from_numpy(pred.astype(np.float64)), truth).item() * math.hypot(96, 96)
    est = contour_distance_sampled(mask_to_contour(pred), mask_to_contour(truth), 10_000, seed)
    print(f"blob {seed}: surrogate {sur:6.3f} px   sampled {est:6.3f} px   diff {100 * (sur - est) / est:+.2f}%")
