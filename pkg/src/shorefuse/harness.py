"""Frame picking, training loop, robustness transforms and the ablation driver."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .data import FrameSequence, resize_mask
from .errors import ContextError, NumericError, ValidationError
from .evaluation import EvalReport, evaluate
from .fusion import FreeSpaceNet, frames_to_batch, save_checkpoint
from .losses import EdgeDistance, edge_distance, total_loss

# --------------------------------------------------------------- frame picks


@dataclass(frozen=True)
class FramePick:
    indices: tuple[int, ...]
    mode: str


def pick_frames(current_index: int, pool: int, k: int, mode: str = "random_k_of_m", rng=None) -> FramePick:
    """Choose ``k`` of the ``pool`` frames immediately before ``current_index``.

    Indices come back most recent first.
    """
    if k > pool or k < 0 or pool < 1:
        raise ValidationError(f"cannot pick {k} of {pool} previous frames")
    if current_index < pool:
        raise ContextError(f"frame {current_index} has fewer than {pool} predecessors; it is context only")
    if mode == "fixed_last_k" or k == pool:
        offsets = np.arange(1, k + 1)
    elif mode == "random_k_of_m":
        if rng is None:
            raise ValidationError("random_k_of_m needs a random generator")
        offsets = np.sort(rng.choice(pool, size=k, replace=False)) + 1
    else:
        raise ValidationError(f"unknown pick mode {mode!r}")
    return FramePick(tuple(int(current_index - o) for o in offsets), mode)


# ------------------------------------------------------- robustness conditions


@dataclass(frozen=True)
class RobustnessCondition:
    direction: str = "forward"
    drop_rate: Fraction = Fraction(0)
    random_drops: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "drop_rate", Fraction(self.drop_rate))
        if self.direction not in ("forward", "backward"):
            raise ValidationError(f"direction must be forward or backward, got {self.direction!r}")
        if not 0 <= self.drop_rate < 1:
            raise ValidationError("drop_rate must lie in [0, 1)")

    @property
    def name(self) -> str:
        return f"{self.direction}/{self.drop_rate}"

    def to_dict(self) -> dict:
        out = {"direction": self.direction, "drop_rate": str(self.drop_rate)}
        if self.random_drops:
            out.update(random_drops=True, seed=self.seed)
        return out


TABLE_CONDITIONS = tuple(
    RobustnessCondition(d, Fraction(r)) for d in ("forward", "backward") for r in (0, Fraction(1, 7))
)


def dropped_positions(n: int, rate: Fraction) -> list[int]:
    """0-based indices removed by the periodic pattern (1-based positions 7, 14, ... at 1/7)."""
    return [p - 1 for p in range(1, n + 1) if math.floor(p * rate) > math.floor((p - 1) * rate)]


def apply_condition(sequence: FrameSequence, cond: RobustnessCondition) -> FrameSequence:
    """Drop frames, then optionally reverse playback with fresh timestamps 0..n-1."""
    if cond.drop_rate == 0 and cond.direction == "forward":
        return sequence
    frames = list(sequence.frames)
    if cond.drop_rate > 0:
        if cond.random_drops:
            rng = np.random.default_rng(cond.seed)
            keep = rng.uniform(size=len(frames)) >= float(cond.drop_rate)
            frames = [f for f, k in zip(frames, keep) if k]
        else:
            gone = set(dropped_positions(len(frames), cond.drop_rate))
            frames = [f for i, f in enumerate(frames) if i not in gone]
    if cond.direction == "backward":
        frames = [f.with_timestamp(t) for t, f in enumerate(reversed(frames))]
    return sequence.replace(frames=tuple(frames))


# ------------------------------------------------------------------ training


@dataclass
class TrainResult:
    model: FreeSpaceNet
    log: list[dict]
    checkpoint: Path | None = None


class _Cache:
    """Frame tensors, masks and contour fields at model resolution, built on first use."""

    def __init__(self, sequences: Sequence[FrameSequence], config: ModelConfig):
        self.sequences = list(sequences)
        self.size = config.input_size
        self.images: dict[int, torch.Tensor] = {}
        self.masks: dict[tuple[int, int], np.ndarray] = {}
        self.fields: dict[tuple[int, int], EdgeDistance] = {}

    def image(self, s: int) -> torch.Tensor:
        if s not in self.images:
            self.images[s] = frames_to_batch(self.sequences[s].frames, self.size)
        return self.images[s]

    def mask(self, s: int, i: int) -> np.ndarray:
        if (s, i) not in self.masks:
            m = self.sequences[s].frames[i].mask
            self.masks[s, i] = m if m.shape == tuple(self.size) else resize_mask(m, self.size)
        return self.masks[s, i]

    def field(self, s: int, i: int) -> EdgeDistance:
        if (s, i) not in self.fields:
            self.fields[s, i] = edge_distance(self.mask(s, i))
        return self.fields[s, i]


def training_samples(sequences: Sequence[FrameSequence], pool: int) -> list[tuple[int, int]]:
    """(sequence, frame) pairs that may carry a loss term: labelled and past the context frames."""
    return [
        (s, i)
        for s, seq in enumerate(sequences)
        for i in range(pool, len(seq))
        if seq.frames[i].mask is not None
    ]


def _lr_factor(schedule: str, iterations: int):
    if schedule == "cosine":
        return lambda it: 0.5 * (1.0 + math.cos(math.pi * it / max(iterations, 1)))
    return lambda it: 1.0


def train(
    sequences: Sequence[FrameSequence],
    model_config: ModelConfig,
    train_config: TrainConfig,
    out: str | Path | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Mini-batch SGD on the combined loss; deterministic given ``train_config.seed``."""
    train_seqs = [s for s in sequences if s.split == "train"] or list(sequences)
    samples = training_samples(train_seqs, model_config.n_prev_pool)
    if not samples:
        raise ValidationError("no labelled training frames beyond the context window")

    torch.manual_seed(train_config.seed)
    torch.use_deterministic_algorithms(True)
    model = FreeSpaceNet(model_config)
    model.train()
    rng = np.random.default_rng(train_config.seed)
    opt = torch.optim.SGD(
        model.parameters(),
        lr=train_config.learning_rate,
        momentum=train_config.momentum,
        weight_decay=train_config.weight_decay,
    )
    factor = _lr_factor(train_config.lr_schedule, train_config.iterations)
    cache = _Cache(train_seqs, model_config)
    log = []
    for it in range(train_config.iterations):
        for group in opt.param_groups:
            group["lr"] = train_config.learning_rate * factor(it)
        chosen = rng.integers(len(samples), size=train_config.batch_size)
        items = [samples[c] for c in chosen]
        cur = torch.stack([cache.image(s)[i] for s, i in items])
        prev = deltas = None
        if not model_config.image_only:
            picks = [
                pick_frames(i, model_config.n_prev_pool, model_config.n_prev_pick, train_config.pick_mode, rng).indices
                for _, i in items
            ]
            prev = torch.stack([cache.image(s)[list(p)] for (s, _), p in zip(items, picks)])
            stamps = [train_seqs[s].timestamps for s, _ in items]
            deltas = torch.tensor([[ts[i] - ts[j] for j in p] for ts, (_, i), p in zip(stamps, items, picks)])
        masks = torch.from_numpy(np.stack([cache.mask(s, i) for s, i in items]))
        fields = [cache.field(s, i) for s, i in items] if model_config.use_contour_loss else None

        where = ", ".join(f"{train_seqs[s].id}[{i}]" for s, i in items)
        try:
            logits = model(cur, prev, deltas)
        except ValidationError as exc:
            # Frames were validated on load, so a non-finite activation here means the weights diverged.
            raise NumericError(f"non-finite activations at iteration {it} (batch: {where}): {exc}") from exc
        losses = total_loss(logits, masks, model_config, fields)
        if not torch.isfinite(losses.total):
            raise NumericError(f"non-finite loss at iteration {it} (batch: {where})")
        opt.zero_grad()
        losses.total.backward()
        opt.step()
        if not all(torch.isfinite(q).all() for q in model.parameters()):
            raise NumericError(f"non-finite parameters after iteration {it} (batch: {where})")
        entry = {"iteration": it, **losses.as_floats(), "lr": opt.param_groups[0]["lr"]}
        entry["empty_contours"] = losses.empty_contours
        log.append(entry)

    model.eval()
    result = TrainResult(model, log)
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        with open(log_path, "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    if out is not None:
        meta = {
            "train_config": train_config.to_dict(),
            "train_sequences": [s.id for s in train_seqs],
            "final_loss": log[-1]["total"] if log else None,
        }
        result.checkpoint = save_checkpoint(model, out, meta)
    return result


# ------------------------------------------------------------------ ablation

ABLATIONS = {
    "All": {},
    "Without TPE": {"use_tpe": False},
    "Without MAN": {"use_man": False},
    "Without DCN": {"use_dcn": False},
    "Without L_con": {"use_contour_loss": False},
}


@dataclass
class AblationTable:
    rows: list[dict] = field(default_factory=list)
    reports: dict[str, list[EvalReport]] = field(default_factory=dict)

    def row(self, name: str) -> dict:
        for r in self.rows:
            if r["config"] == name:
                return r
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"rows": self.rows}

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def run_ablation(
    train_sequences: Sequence[FrameSequence],
    test_sequences: Sequence[FrameSequence],
    base_config: ModelConfig,
    train_config: TrainConfig,
    seeds: Sequence[int] = (0,),
    variants: dict[str, dict] | None = None,
    band_px: int | None = None,
) -> AblationTable:
    """Train and score each variant under every seed; rows hold the median over seeds."""
    variants = ABLATIONS if variants is None else variants
    table = AblationTable()
    for name, switches in variants.items():
        config = base_config.replace(**switches)
        reports, params = [], None
        for seed in seeds:
            result = train(train_sequences, config, train_config.replace(seed=seed))
            params = result.model.parameter_count()
            reports.append(evaluate(result.model, test_sequences, config, band_px, seed=seed))
        sel = [r.aggregate["miou_selected"] for r in reports]
        full = [r.aggregate["miou_full"] for r in reports]
        table.rows.append(
            {
                "config": name,
                "miou_selected": float(np.median(sel)),
                "miou_full": float(np.median(full)),
                "miou_selected_per_seed": sel,
                "miou_full_per_seed": full,
                "parameter_count": params,
                "seeds": list(seeds),
            }
        )
        table.reports[name] = reports
    return table


# ---------------------------------------------------------------- robustness


def run_robustness(
    model: FreeSpaceNet,
    sequences: Sequence[FrameSequence],
    config: ModelConfig | None = None,
    band_px: int | None = None,
    seed: int = 0,
    conditions: Sequence[RobustnessCondition] = TABLE_CONDITIONS,
) -> dict[str, EvalReport]:
    """One report per condition, each covering every sequence."""
    config = config or model.config
    out = {}
    for cond in conditions:
        transformed = [apply_condition(s, cond) for s in sequences]
        out[cond.name] = evaluate(model, transformed, config, band_px, seed=seed, condition=cond.to_dict())
    return out


def robustness_table(reports: dict[str, EvalReport]) -> list[dict]:
    """Flatten to rows of (sequence, condition, metrics)."""
    rows = []
    for name, report in reports.items():
        for seq_id, summary in report.per_sequence.items():
            rows.append({"sequence_id": seq_id, "condition": name, **summary})
    return rows
