"""Frames, sequences, on-disk layout and dataset splitting.

Sequence directory layout::

    <seq>/manifest.json      {"id", "split", "frame_count", "resolution", "fps", "timestamps"}
    <seq>/frames/%06d.png    8-bit RGB, file stem is the timestamp
    <seq>/masks/%06d.png     8-bit grayscale, 0 = background, 255 = water

A dataset root holds ``dataset.json`` with ``{"sequences": [{"id", "path", "split"}, ...]}``.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .errors import ConfigError, FormatError, OrderingError, ValidationError

SPLITS = ("train", "val", "test")
MANIFEST = "manifest.json"
DATASET_INDEX = "dataset.json"


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Frame:
    """One video frame: float RGB image in [0, 1] plus optional binary water mask."""

    image: np.ndarray
    timestamp: int
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        image = np.asarray(self.image)
        if image.ndim != 3 or image.shape[2] != 3:
            raise ValidationError(f"frame {self.timestamp}: image must be HxWx3, got {image.shape}")
        image = image.astype(np.float32, copy=False)
        if not np.all(np.isfinite(image)) or image.min(initial=0) < 0 or image.max(initial=0) > 1:
            raise ValidationError(f"frame {self.timestamp}: image values must lie in [0, 1]")
        if int(self.timestamp) != self.timestamp or self.timestamp < 0:
            raise ValidationError(f"timestamp must be a non-negative integer, got {self.timestamp}")
        object.__setattr__(self, "timestamp", int(self.timestamp))
        object.__setattr__(self, "image", _frozen(image))
        if self.mask is not None:
            mask = np.asarray(self.mask)
            if mask.shape != image.shape[:2]:
                raise ValidationError(
                    f"frame {self.timestamp}: mask shape {mask.shape} does not match "
                    f"image shape {image.shape[:2]}"
                )
            if not np.isin(mask, (0, 1)).all():
                raise ValidationError(f"frame {self.timestamp}: mask values must be 0 or 1")
            object.__setattr__(self, "mask", _frozen(mask.astype(np.uint8)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape[:2]

    def with_timestamp(self, timestamp: int) -> "Frame":
        return Frame(self.image, timestamp, self.mask)


@dataclass(frozen=True, eq=False)
class FrameSequence:
    id: str
    frames: tuple[Frame, ...]
    split: str = "train"
    fps: float = 30.0

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if self.split not in SPLITS:
            raise ValidationError(f"sequence {self.id}: split must be one of {SPLITS}")
        stamps = [f.timestamp for f in frames]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise OrderingError(f"sequence {self.id}: timestamps must be strictly increasing")
        if len({f.shape for f in frames}) > 1:
            raise ValidationError(f"sequence {self.id}: frames have mixed resolutions")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.frames[0].shape if self.frames else (0, 0)

    @property
    def timestamps(self) -> list[int]:
        return [f.timestamp for f in self.frames]

    def replace(self, **changes) -> "FrameSequence":
        return dataclasses.replace(self, **changes)


# --------------------------------------------------------------------------- I/O


def _to_u8(array: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(array, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def _save_png(path: Path, array: np.ndarray) -> None:
    # PIL writes no timestamps into PNG, so identical arrays give identical bytes.
    Image.fromarray(array).save(path, format="PNG", optimize=False, compress_level=6)


def save_sequence(sequence: FrameSequence, path: str | Path, extra: dict | None = None) -> Path:
    """Write ``sequence`` in the directory layout; returns the directory."""
    root = Path(path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    labeled = all(f.mask is not None for f in sequence.frames)
    if labeled:
        (root / "masks").mkdir(exist_ok=True)
    for frame in sequence.frames:
        name = f"{frame.timestamp:06d}.png"
        _save_png(root / "frames" / name, _to_u8(frame.image))
        if labeled:
            _save_png(root / "masks" / name, (frame.mask * 255).astype(np.uint8))
    h, w = sequence.resolution
    manifest = {
        "id": sequence.id,
        "split": sequence.split,
        "frame_count": len(sequence),
        "resolution": [int(h), int(w)],
        "fps": sequence.fps,
        "timestamps": sequence.timestamps,
        "labeled": labeled,
    }
    if extra:
        manifest.update(extra)
    (root / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return root


def read_manifest(path: str | Path) -> dict:
    manifest_path = Path(path) / MANIFEST
    if not manifest_path.is_file():
        raise FormatError(f"no {MANIFEST} in {path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from exc
    for key in ("id", "split", "frame_count", "resolution"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: missing key {key!r}")
    return manifest


def load_sequence(path: str | Path) -> FrameSequence:
    root = Path(path)
    manifest = read_manifest(root)
    frame_files = sorted((root / "frames").glob("*.png"))
    if "timestamps" in manifest:
        stamps = [int(t) for t in manifest["timestamps"]]
    else:
        stamps = [int(p.stem) for p in frame_files]
    if len(stamps) != manifest["frame_count"]:
        raise FormatError(
            f"{root}: manifest declares {manifest['frame_count']} frames, found {len(stamps)}"
        )
    frames = []
    for stamp in sorted(stamps):
        name = f"{stamp:06d}.png"
        image_path = root / "frames" / name
        if not image_path.is_file():
            raise FormatError(f"{root}: missing frame file {name}")
        image = np.asarray(Image.open(image_path).convert("RGB"), dtype=np.float32) / 255.0
        mask = None
        mask_path = root / "masks" / name
        if mask_path.is_file():
            raw = np.asarray(Image.open(mask_path).convert("L"))
            if not np.isin(raw, (0, 255)).all():
                raise ValidationError(f"{root}: frame {stamp}: mask pixels must be 0 or 255")
            mask = (raw == 255).astype(np.uint8)
            if mask.shape != image.shape[:2]:
                raise ValidationError(
                    f"{root}: frame {stamp}: mask shape {mask.shape} does not match "
                    f"image shape {image.shape[:2]}"
                )
        frames.append(Frame(image, stamp, mask))
    sequence = FrameSequence(
        id=str(manifest["id"]),
        frames=tuple(frames),
        split=manifest["split"],
        fps=float(manifest.get("fps", 30.0)),
    )
    if frames and list(sequence.resolution) != list(manifest["resolution"]):
        raise ValidationError(
            f"{root}: frames are {sequence.resolution}, manifest says {manifest['resolution']}"
        )
    return sequence


def write_dataset_index(root: str | Path, sequences: Iterable[FrameSequence], dirs: Iterable[str]) -> Path:
    root = Path(root)
    entries = [
        {"id": seq.id, "path": str(d), "split": seq.split} for seq, d in zip(sequences, dirs)
    ]
    index = root / DATASET_INDEX
    index.write_text(json.dumps({"sequences": entries}, indent=2, sort_keys=True) + "\n")
    return index


def load_dataset(root: str | Path, splits: Sequence[str] | None = None) -> list[FrameSequence]:
    """Load every sequence listed in ``root/dataset.json`` (optionally filtered by split)."""
    root = Path(root)
    index = root / DATASET_INDEX
    if not index.is_file():
        raise FormatError(f"no {DATASET_INDEX} in {root}")
    entries = json.loads(index.read_text())["sequences"]
    out = []
    for entry in entries:
        if splits is not None and entry["split"] not in splits:
            continue
        seq = load_sequence(root / entry["path"])
        if seq.split != entry["split"]:
            seq = seq.replace(split=entry["split"])
        out.append(seq)
    return out


# ------------------------------------------------------------------ splitting


def split_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of ``n`` items to buckets proportional to ``ratios``."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios < 0) or not ratios.sum() > 0:
        raise ConfigError(f"ratios must be three non-negative numbers with positive sum, got {ratios}")
    ratios = ratios / ratios.sum()
    nonzero = int(np.count_nonzero(ratios))
    if n < nonzero:
        raise ConfigError(f"{n} sequences cannot fill {nonzero} non-empty splits")
    ideal = ratios * n
    counts = np.floor(ideal).astype(int)
    order = np.argsort(-(ideal - counts), kind="stable")
    for i in order[: n - counts.sum()]:
        counts[i] += 1
    # Every requested split gets at least one sequence, taken from the largest bucket.
    for i in np.flatnonzero((ratios > 0) & (counts == 0)):
        donor = int(np.argmax(counts))
        counts[donor] -= 1
        counts[i] += 1
    return counts.tolist()


def split_dataset(
    sequences: Sequence[FrameSequence], ratios: Sequence[float] = (6, 2, 2), seed: int = 0
) -> list[FrameSequence]:
    """Assign every sequence to exactly one split; input order is preserved in the output."""
    counts = split_counts(len(sequences), ratios)
    order = np.random.default_rng(seed).permutation(len(sequences))
    labels = [None] * len(sequences)
    pos = 0
    for split, count in zip(SPLITS, counts):
        for idx in order[pos : pos + count]:
            labels[idx] = split
        pos += count
    return [seq.replace(split=label) for seq, label in zip(sequences, labels)]


# ------------------------------------------------------------------- resizing


def resize_image(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of an HxWx3 float image (half-pixel centres)."""
    if tuple(image.shape[:2]) == tuple(size):
        return np.asarray(image, dtype=np.float32)
    import torch
    import torch.nn.functional as F

    t = torch.from_numpy(np.array(image, dtype=np.float32)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=tuple(size), mode="bilinear", align_corners=False)
    return out[0].permute(1, 2, 0).clamp(0, 1).numpy()


def resize_mask(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize sampling source pixels at destination pixel centres."""
    h, w = mask.shape
    rows = np.minimum(((np.arange(size[0]) + 0.5) * h / size[0]).astype(int), h - 1)
    cols = np.minimum(((np.arange(size[1]) + 0.5) * w / size[1]).astype(int), w - 1)
    return np.asarray(mask)[rows[:, None], cols[None, :]]


def resize_frame(frame: Frame, size: tuple[int, int]) -> Frame:
    mask = None if frame.mask is None else resize_mask(frame.mask, size)
    return Frame(resize_image(frame.image, size), frame.timestamp, mask)
