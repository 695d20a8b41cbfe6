"""Full-image and selected-zone MIoU, contour distance, and per-sequence reports."""
from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import ModelConfig
from .contours import check_binary, mask_to_contour, within_distance
from .data import Frame, FrameSequence
from .errors import ValidationError
from .losses import contour_distance_sampled

# Nearshore band of 32 px at the native 480-row resolution, scaled with image height.
NATIVE_BAND_PX = 32
NATIVE_ROWS = 480


def default_band_px(resolution: tuple[int, int]) -> int:
    return int(round(NATIVE_BAND_PX * resolution[0] / NATIVE_ROWS))


@dataclass(frozen=True, eq=False)
class SelectedZone:
    mask: np.ndarray
    band_width_px: int
    mode: str = "symmetric"


def build_selected_zone(gt_mask: np.ndarray, band_width_px: int, mode: str = "symmetric") -> SelectedZone:
    """Ground-truth water plus the pixels within ``band_width_px`` of its shoreline.

    ``mode="below"`` instead keeps, per column, everything from ``band_width_px``
    rows above the first water pixel downwards.
    """
    gt = check_binary(gt_mask, "gt_mask")
    if band_width_px < 0:
        raise ValidationError("band_width_px must be >= 0")
    if gt.all() or not gt.any():
        # No shoreline to cut along: the whole frame is scored.
        return SelectedZone(np.ones_like(gt), int(band_width_px), mode)
    if mode == "symmetric":
        zone = gt | within_distance(gt, band_width_px)
    elif mode == "below":
        h = gt.shape[0]
        first = np.where(gt.any(axis=0), gt.argmax(axis=0), h)
        rows = np.arange(h)[:, None]
        zone = (rows >= first[None, :] - band_width_px) & (first[None, :] < h) | gt
    else:
        raise ValidationError(f"unknown zone mode {mode!r}")
    return SelectedZone(zone, int(band_width_px), mode)


def class_ious(pred: np.ndarray, gt: np.ndarray, zone: np.ndarray | None = None) -> tuple[float, float]:
    """(background IoU, water IoU) restricted to ``zone``; an absent class scores 1."""
    pred = check_binary(pred, "pred")
    gt = check_binary(gt, "gt")
    if pred.shape != gt.shape or (zone is not None and np.shape(zone) != gt.shape):
        raise ValidationError(f"shape mismatch: pred {pred.shape}, gt {gt.shape}")
    sel = np.ones_like(gt) if zone is None else np.asarray(zone, dtype=bool)
    out = []
    for cls in (False, True):
        p = (pred == cls) & sel
        g = (gt == cls) & sel
        union = np.count_nonzero(p | g)
        out.append(1.0 if union == 0 else np.count_nonzero(p & g) / union)
    return out[0], out[1]


def miou(pred: np.ndarray, gt: np.ndarray, zone: SelectedZone | np.ndarray | None = None) -> float:
    if isinstance(zone, SelectedZone):
        zone = zone.mask
    return float(np.mean(class_ious(pred, gt, zone)))


# ------------------------------------------------------------------- reports


@dataclass
class EvalReport:
    per_sequence: dict[str, dict] = field(default_factory=dict)
    condition: dict = field(default_factory=lambda: {"direction": "forward", "drop_rate": "0"})
    metadata: dict = field(default_factory=dict)
    frames: dict[str, list[dict]] = field(default_factory=dict)

    @property
    def aggregate(self) -> dict:
        keys = ("miou_full", "miou_selected", "mean_contour_distance_px")
        out = {}
        for k in keys:
            vals = [s[k] for s in self.per_sequence.values() if s.get(k) is not None]
            out[k] = float(np.mean(vals)) if vals else None
        return out

    def add(self, sequence_id: str, summary: dict, frames: list[dict]) -> None:
        self.per_sequence[sequence_id] = summary
        self.frames[sequence_id] = frames

    def to_dict(self) -> dict:
        return {
            "per_sequence": self.per_sequence,
            "aggregate": self.aggregate,
            "condition": self.condition,
            "metadata": self.metadata,
        }

    def write(self, path: str | Path, csv_path: str | Path | None = None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        if csv_path is not None:
            with open(csv_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["sequence_id", "frame_index", "miou_full", "miou_selected", "contour_dist_px"])
                for seq_id, rows in self.frames.items():
                    for r in rows:
                        dist = "" if r["contour_dist_px"] is None else f"{r['contour_dist_px']:.6f}"
                        writer.writerow(
                            [seq_id, r["frame_index"], f"{r['miou_full']:.6f}", f"{r['miou_selected']:.6f}", dist]
                        )

    @classmethod
    def read(cls, path: str | Path) -> "EvalReport":
        raw = json.loads(Path(path).read_text())
        return cls(raw["per_sequence"], raw["condition"], raw.get("metadata", {}))


# --------------------------------------------------------------- evaluation

Predictor = Callable[[Frame, Sequence[Frame]], np.ndarray]


def frame_seed(global_seed: int, sequence_id: str, index: int) -> int:
    return int(np.random.SeedSequence([global_seed, zlib.crc32(sequence_id.encode()), index]).generate_state(1)[0])


def frame_metrics(pred: np.ndarray, gt: np.ndarray, band_px: int, n_c: int, seed: int, zone_mode: str = "symmetric") -> dict:
    zone = build_selected_zone(gt, band_px, zone_mode)
    dist = contour_distance_sampled(mask_to_contour(pred), mask_to_contour(gt), n_c, seed)
    return {
        "miou_full": miou(pred, gt),
        "miou_selected": miou(pred, gt, zone),
        "contour_dist_px": None if math.isnan(dist) else dist,
    }


def _model_predictions(model, sequence: FrameSequence, targets, picks, config: ModelConfig, batch: int = 8):
    from .fusion import frames_to_batch

    dtype = next(model.parameters()).dtype
    preds = {}
    model.eval()
    for lo in range(0, len(targets), batch):
        chunk = targets[lo : lo + batch]
        cur = frames_to_batch([sequence.frames[i] for i in chunk], config.input_size, dtype)
        prev = deltas = None
        if not config.image_only:
            prev = torch.stack(
                [frames_to_batch([sequence.frames[j] for j in picks[i]], config.input_size, dtype) for i in chunk]
            )
            deltas = torch.tensor(
                [[sequence.frames[i].timestamp - sequence.frames[j].timestamp for j in picks[i]] for i in chunk]
            )
        with torch.no_grad():
            logits = model(cur, prev, deltas)
            if tuple(logits.shape[2:]) != sequence.resolution:
                logits = F.interpolate(logits, size=sequence.resolution, mode="bilinear", align_corners=False)
        water = (logits[:, 1] > logits[:, 0]).numpy().astype(np.uint8)
        for i, m in zip(chunk, water):
            preds[i] = m
    return preds


def evaluate_sequence(
    model,
    sequence: FrameSequence,
    config: ModelConfig,
    band_px: int | None = None,
    seed: int = 0,
    pick_mode: str = "random_k_of_m",
    zone_mode: str = "symmetric",
) -> tuple[dict, list[dict]]:
    """Score every frame after the first ``n_prev_pool`` context frames.

    ``model`` is a :class:`~shorefuse.fusion.FreeSpaceNet` or any callable
    ``(current_frame, previous_frames) -> binary mask``. Returns the summary
    entry and the per-frame rows.
    """
    from .harness import pick_frames

    band = default_band_px(sequence.resolution) if band_px is None else band_px
    targets, skipped = [], 0
    picks = {}
    for i in range(config.n_prev_pool, len(sequence)):
        if sequence.frames[i].mask is None:
            skipped += 1
            continue
        targets.append(i)
        rng = np.random.default_rng(frame_seed(seed, sequence.id, i))
        picks[i] = pick_frames(i, config.n_prev_pool, config.n_prev_pick, pick_mode, rng).indices

    if isinstance(model, torch.nn.Module):
        preds = _model_predictions(model, sequence, targets, picks, config)
    else:
        preds = {i: np.asarray(model(sequence.frames[i], [sequence.frames[j] for j in picks[i]])) for i in targets}

    rows = []
    for i in targets:
        m = frame_metrics(preds[i], sequence.frames[i].mask, band, config.n_c, frame_seed(seed, sequence.id, i), zone_mode)
        rows.append({"frame_index": i, **m})
    dists = [r["contour_dist_px"] for r in rows if r["contour_dist_px"] is not None]
    summary = {
        "miou_full": float(np.mean([r["miou_full"] for r in rows])) if rows else None,
        "miou_selected": float(np.mean([r["miou_selected"] for r in rows])) if rows else None,
        "mean_contour_distance_px": float(np.mean(dists)) if dists else None,
        "n_frames": len(rows),
        "skipped_unlabeled": skipped,
        "empty_contour_frames": len(rows) - len(dists),
    }
    return summary, rows


def evaluate(
    model,
    sequences: Sequence[FrameSequence],
    config: ModelConfig,
    band_px: int | None = None,
    seed: int = 0,
    condition: dict | None = None,
    pick_mode: str = "random_k_of_m",
    zone_mode: str = "symmetric",
) -> EvalReport:
    report = EvalReport(
        condition=condition or {"direction": "forward", "drop_rate": "0"},
        metadata={
            "band_width_px": band_px if band_px is not None else "auto (32 px per 480 rows)",
            "zone_mode": zone_mode,
            "threshold": 0.5,
            "attention_heads": config.attention_heads,
            "attention_orientation": config.attention_orientation,
            "n_c": config.n_c,
            "seed": seed,
            "pick_mode": pick_mode,
            "image_only": config.image_only,
        },
    )
    for seq in sequences:
        summary, rows = evaluate_sequence(model, seq, config, band_px, seed, pick_mode, zone_mode)
        report.add(seq.id, summary, rows)
    return report
