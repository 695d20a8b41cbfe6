"""Shoreline contours on the half-pixel grid and distances to them.

Pixel ``(r, c)`` has its centre at coordinate ``(r, c)``. A contour vertex sits
at the midpoint between two 4-adjacent pixels of different label, so every
vertex has exactly one half-integer coordinate. Consecutive vertices are
joined by marching squares, giving segments of length 1 or sqrt(2)/2.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage import measure

from .errors import ValidationError

# Longest segment marching squares can emit between half-pixel vertices.
MAX_SEGMENT = 1.0


def check_binary(mask: np.ndarray, name: str = "mask") -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {mask.shape}")
    if mask.dtype != bool and not np.isin(mask, (0, 1)).all():
        raise ValidationError(f"{name} must be binary (0/1)")
    return mask.astype(bool)


@dataclass(frozen=True, eq=False)
class ContourPolyline:
    """One or more ordered (row, col) paths; closed paths repeat their first point."""

    paths: tuple[np.ndarray, ...] = ()
    shape: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        paths = tuple(np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in self.paths)
        for p in paths:
            if len(p) < 2:
                raise ValidationError("every contour path needs at least 2 points")
            if self.shape is not None:
                h, w = self.shape
                if p.min() < 0 or p[:, 0].max() > h - 1 or p[:, 1].max() > w - 1:
                    raise ValidationError("contour point outside image bounds")
        object.__setattr__(self, "paths", paths)

    @property
    def empty(self) -> bool:
        return not self.paths

    @property
    def points(self) -> np.ndarray:
        if self.empty:
            return np.zeros((0, 2))
        return np.concatenate(self.paths)

    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Start and end points of every segment, each shaped (n, 2)."""
        if self.empty:
            return np.zeros((0, 2)), np.zeros((0, 2))
        starts = np.concatenate([p[:-1] for p in self.paths])
        ends = np.concatenate([p[1:] for p in self.paths])
        return starts, ends

    @property
    def length(self) -> float:
        a, b = self.segments()
        return float(np.linalg.norm(b - a, axis=1).sum())

    def sample(self, n: int, rng: np.random.Generator, stratified: bool = True) -> np.ndarray:
        """Draw ``n`` points uniformly by arc length.

        Stratified mode splits the total length into ``n`` equal pieces and draws
        one uniform point in each, which keeps every point uniform while
        removing most of the sampling variance.
        """
        a, b = self.segments()
        seg_len = np.linalg.norm(b - a, axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        if stratified:
            u = (np.arange(n) + rng.uniform(size=n)) / n * cum[-1]
        else:
            u = rng.uniform(0.0, cum[-1], size=n)
        idx = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(seg_len) - 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            t = np.where(seg_len[idx] > 0, (u - cum[idx]) / seg_len[idx], 0.0)
        return a[idx] + t[:, None] * (b[idx] - a[idx])


def mask_to_contour(mask: np.ndarray) -> ContourPolyline:
    """Boundary polyline(s) between water (1) and background (0)."""
    m = check_binary(mask)
    if m.all() or not m.any():
        return ContourPolyline((), m.shape)
    paths = measure.find_contours(m.astype(np.float64), 0.5)
    return ContourPolyline(tuple(p for p in paths if len(p) >= 2), m.shape)


def crossing_points(mask: np.ndarray) -> np.ndarray:
    """All contour vertices: midpoints of 4-adjacent water/background pixel pairs."""
    m = check_binary(mask)
    rv, cv = np.nonzero(m[1:, :] != m[:-1, :])
    rh, ch = np.nonzero(m[:, 1:] != m[:, :-1])
    return np.concatenate(
        [np.stack([rv + 0.5, cv.astype(float)], 1), np.stack([rh.astype(float), ch + 0.5], 1)]
    )


def crossing_distance_grid(mask: np.ndarray) -> np.ndarray | None:
    """Exact Euclidean distance to the nearest contour vertex on the doubled grid.

    Returns a (2H-1, 2W-1) array where entry ``(i, j)`` is the distance from image
    point ``(i/2, j/2)``; ``None`` when the mask has no contour.
    """
    m = check_binary(mask)
    h, w = m.shape
    grid = np.ones((2 * h - 1, 2 * w - 1), dtype=bool)
    vert = m[1:, :] != m[:-1, :]
    horiz = m[:, 1:] != m[:, :-1]
    if not (vert.any() or horiz.any()):
        return None
    grid[1::2, ::2][vert] = False
    grid[::2, 1::2][horiz] = False
    return ndimage.distance_transform_edt(grid) * 0.5


def polyline_distance(points: np.ndarray, contour: ContourPolyline, chunk: int = 2_000_000) -> np.ndarray:
    """Exact Euclidean distance from each query point to the nearest contour segment."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    a, b = contour.segments()
    if len(a) == 0:
        raise ValidationError("distance to an empty contour is undefined")
    ab = b - a
    ab2 = np.maximum((ab**2).sum(1), 1e-300)
    out = np.empty(len(points))
    step = max(1, chunk // len(a))
    for lo in range(0, len(points), step):
        q = points[lo : lo + step, None, :]
        t = np.clip(((q - a) * ab).sum(-1) / ab2, 0.0, 1.0)
        closest = a + t[..., None] * ab
        out[lo : lo + step] = np.sqrt(((q - closest) ** 2).sum(-1).min(1))
    return out


def within_distance(mask: np.ndarray, radius: float) -> np.ndarray:
    """Pixels whose centre lies within ``radius`` of the mask's contour polyline.

    The vertex distance bounds the polyline distance from both sides, so only
    pixels in a thin annulus need the exact segment computation.
    """
    m = check_binary(mask)
    grid = crossing_distance_grid(m)
    if grid is None:
        return np.zeros(m.shape, dtype=bool)
    d_vertex = grid[::2, ::2]
    inside = d_vertex <= radius
    lower = np.sqrt(np.maximum(d_vertex**2 - (MAX_SEGMENT / 2) ** 2, 0.0))
    unsure = ~inside & (lower <= radius)
    if unsure.any():
        rr, cc = np.nonzero(unsure)
        exact = polyline_distance(np.stack([rr, cc], 1).astype(float), mask_to_contour(m))
        inside[rr, cc] = exact <= radius
    return inside


def edge_distances(mask: np.ndarray, refine_below: float = 6.0) -> tuple[np.ndarray, np.ndarray] | None:
    """Distance from every pixel-edge midpoint to the contour polyline of ``mask``.

    Returns ``(vertical, horizontal)`` shaped (H-1, W) and (H, W-1), or ``None``
    without a contour. Midpoints closer than ``refine_below`` get the exact
    segment distance; beyond that the vertex distance is used, whose relative
    excess is at most 1/(8 d^2) (under 0.35% at the default radius).
    """
    m = check_binary(mask)
    grid = crossing_distance_grid(m)
    if grid is None:
        return None
    vertical = grid[1::2, ::2].copy()
    horizontal = grid[::2, 1::2].copy()
    contour = mask_to_contour(m)
    a, b = contour.segments()
    mids = 0.5 * (a + b)
    tree = cKDTree(mids)
    for arr, offset in ((vertical, (0.5, 0.0)), (horizontal, (0.0, 0.5))):
        rr, cc = np.nonzero(arr < refine_below)
        if len(rr) == 0:
            continue
        q = np.stack([rr + offset[0], cc + offset[1]], 1)
        k = min(16, len(mids))
        dk, ik = tree.query(q, k=k)
        dk = dk.reshape(len(q), k)
        ik = ik.reshape(len(q), k)
        sa, sb = a[ik], b[ik]
        ab = sb - sa
        t = np.clip(((q[:, None] - sa) * ab).sum(-1) / np.maximum((ab**2).sum(-1), 1e-300), 0, 1)
        best = np.sqrt(((q[:, None] - sa - t[..., None] * ab) ** 2).sum(-1)).min(1)
        # The nearest segment's midpoint lies within (its distance + MAX_SEGMENT/2).
        unsure = (dk[:, -1] <= best + MAX_SEGMENT / 2) & (k < len(mids))
        if unsure.any():
            best[unsure] = polyline_distance(q[unsure], contour)
        arr[rr, cc] = best
    return vertical, horizontal
