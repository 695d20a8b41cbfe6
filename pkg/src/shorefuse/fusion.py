"""Cross-attention fusion, spatial attention, decoder, full model and checkpoints."""
from __future__ import annotations

import io
import json
import math
import zipfile
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .alignment import FeatureMap, PreFusion, build_encoder, encode_frames
from .config import ModelConfig
from .data import Frame, resize_frame
from .errors import FormatError, ValidationError

CHECKPOINT_FORMAT = "shorefuse-checkpoint/1"


class CrossAttention(nn.Module):
    """Multi-head attention where queries and keys/values come from different frames.

    With the default orientation, queries are projected from the current
    features and keys/values from the aligned previous features. The current
    features are added back as a residual.
    """

    def __init__(self, channels: int, heads: int, orientation: str = "current_queries_previous"):
        super().__init__()
        if channels % heads:
            raise ValidationError(f"{heads} heads do not divide {channels} channels")
        self.heads = heads
        self.head_dim = channels // heads
        self.orientation = orientation
        self.q = nn.Linear(channels, channels, bias=False)
        self.k = nn.Linear(channels, channels, bias=False)
        self.v = nn.Linear(channels, channels, bias=False)
        self.out = nn.Linear(channels, channels, bias=False)

    def forward(self, f_x: torch.Tensor, f_pre: torch.Tensor, return_weights: bool = False):
        if f_x.shape != f_pre.shape:
            raise ValidationError(f"cross attention inputs differ: {tuple(f_x.shape)} vs {tuple(f_pre.shape)}")
        n, c, h, w = f_x.shape
        cur = f_x.flatten(2).transpose(1, 2)
        prev = f_pre.flatten(2).transpose(1, 2)
        query_src, kv_src = (cur, prev) if self.orientation == "current_queries_previous" else (prev, cur)

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(n, -1, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q(query_src)), split(self.k(kv_src)), split(self.v(kv_src))
        weights = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.head_dim), dim=-1)
        mixed = (weights @ v).transpose(1, 2).reshape(n, h * w, c)
        attended = self.out(mixed).transpose(1, 2).reshape(n, c, h, w)
        out = f_x + attended
        return (out, weights) if return_weights else out


class SpatialAttention(nn.Module):
    """Gate every position by sigmoid(conv([channel mean, channel max]))."""

    def __init__(self, kernel_size: int = 7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def gate(self, x: torch.Tensor) -> torch.Tensor:
        pooled = torch.cat([x.mean(dim=1, keepdim=True), x.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(pooled))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(x).all():
            raise ValidationError("spatial attention input has non-finite values")
        return x * self.gate(x)


def _upsample_factors(stride: int) -> tuple[int, int]:
    first = 2 ** math.ceil(math.log2(stride) / 2) if stride > 1 else 1
    return first, stride // first


class Decoder(nn.Module):
    """Two conv/ReLU blocks with bilinear upsampling, then a 1x1 two-class head.

    The 1x1 head runs before the last upsampling; both are linear per pixel so
    the order does not change the result, only the cost.
    """

    def __init__(self, channels: int, hidden: int, stride: int):
        super().__init__()
        self.block1 = nn.Conv2d(channels, hidden, 3, padding=1)
        self.block2 = nn.Conv2d(hidden, hidden, 3, padding=1)
        self.head = nn.Conv2d(hidden, 2, 1)
        self.factors = _upsample_factors(stride)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        up1, up2 = self.factors
        x = F.relu(self.block1(x))
        if up1 > 1:
            x = F.interpolate(x, scale_factor=up1, mode="bilinear", align_corners=False)
        x = F.relu(self.block2(x))
        x = self.head(x)
        if up2 > 1:
            x = F.interpolate(x, scale_factor=up2, mode="bilinear", align_corners=False)
        return x


class FreeSpaceNet(nn.Module):
    """Encoder -> previous-frame alignment -> fusion -> spatial attention -> decoder."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        c = config.feature_channels
        self.encoder = build_encoder(config)
        self.prefusion = PreFusion(config)
        self.attention = (
            nn.ModuleList(
                CrossAttention(c, config.attention_heads, config.attention_orientation)
                for _ in range(config.attention_depth)
            )
            if config.use_man
            else None
        )
        self.spatial = SpatialAttention()
        self.decoder = Decoder(c, config.decoder_channels, config.stride)

    def features(
        self,
        current: torch.Tensor,
        previous: torch.Tensor | None = None,
        deltas: torch.Tensor | None = None,
    ) -> dict[str, torch.Tensor]:
        """All intermediate tensors for a batch.

        ``current`` is (N, 3, H, W); ``previous`` is (N, P, 3, H, W) or ``None``
        for the image-only path, in which case F_pre is the zero map.
        """
        n = current.shape[0]
        f_x = encode_frames(self.encoder, current, self.config)
        if previous is None or previous.shape[1] == 0:
            f_pre = torch.zeros_like(f_x)
        else:
            p = previous.shape[1]
            if previous.shape[0] != n or deltas is None or deltas.shape != (n, p):
                raise ValidationError("previous frames and intervals must be (N, P, ...) and (N, P)")
            prev_feats = encode_frames(self.encoder, previous.reshape(n * p, *previous.shape[2:]), self.config)
            f_pre = self.prefusion(prev_feats.view(n, p, *f_x.shape[1:]), deltas)
        if self.attention is None:
            fused = f_x + f_pre
        else:
            fused = f_x
            for block in self.attention:
                fused = block(fused, f_pre)
        enhanced = self.spatial(fused)
        return {"f_x": f_x, "f_pre": f_pre, "fused": fused, "enhanced": enhanced, "logits": self.decoder(enhanced)}

    def forward(self, current, previous=None, deltas=None) -> torch.Tensor:
        return self.features(current, previous, deltas)["logits"]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def cross_attend(f_x: FeatureMap, f_pre: FeatureMap, module: CrossAttention) -> FeatureMap:
    return FeatureMap(module(f_x.data[None], f_pre.data[None])[0], f_x.source_timestamp)


def spatial_attend(fused: FeatureMap, module: SpatialAttention) -> FeatureMap:
    return FeatureMap(module(fused.data[None])[0], fused.source_timestamp)


def decode(fused: FeatureMap, module: Decoder) -> torch.Tensor:
    """Logits (2, H, W) for one feature map."""
    return module(fused.data[None])[0]


def frames_to_batch(
    frames: Sequence[Frame], size: tuple[int, int], dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    arrays = [resize_frame(f, size).image if f.shape != tuple(size) else f.image for f in frames]
    return torch.from_numpy(np.stack(arrays)).permute(0, 3, 1, 2).to(dtype)


def forward(current: Frame, previous: Sequence[Frame], config: ModelConfig, model: FreeSpaceNet) -> np.ndarray:
    """Logits (H, W, 2) at ``config.input_size`` for one current frame and its picked history."""
    if previous and len(previous) != config.n_prev_pick:
        raise ValidationError(f"expected {config.n_prev_pick} previous frames, got {len(previous)}")
    dtype = next(model.parameters()).dtype
    cur = frames_to_batch([current], config.input_size, dtype)
    prev = deltas = None
    if previous:
        prev = frames_to_batch(previous, config.input_size, dtype)[None]
        deltas = torch.tensor([[current.timestamp - f.timestamp for f in previous]])
    with torch.no_grad():
        logits = model(cur, prev, deltas)
    return logits[0].permute(1, 2, 0).numpy()


# --------------------------------------------------------------- checkpoints

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def _zip_write(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_FIXED_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, payload)


def save_checkpoint(model: FreeSpaceNet, path: str | Path, metadata: dict | None = None) -> Path:
    """Write parameters (``.npy`` entries keyed by dotted path) and config JSON into one zip.

    Entry timestamps are fixed so identical parameters always give identical bytes.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model.config.to_dict(),
        "metadata": metadata or {},
    }
    with zipfile.ZipFile(path, "w") as zf:
        _zip_write(zf, "header.json", json.dumps(header, indent=2, sort_keys=True).encode())
        for name, tensor in sorted(model.state_dict().items()):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, tensor.detach().cpu().numpy(), allow_pickle=False)
            _zip_write(zf, f"params/{name}.npy", buf.getvalue())
    return path


def load_checkpoint(path: str | Path) -> tuple[FreeSpaceNet, dict]:
    """Rebuild the model stored at ``path``; returns (model in eval mode, metadata)."""
    path = Path(path)
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise FormatError(f"{path}: not a checkpoint archive ({exc})") from exc
    with zf:
        header = json.loads(zf.read("header.json"))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise FormatError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
        config = ModelConfig.from_dict(header["model_config"])
        model = FreeSpaceNet(config)
        state = {}
        for name in zf.namelist():
            if name.startswith("params/"):
                key = name[len("params/") : -len(".npy")]
                state[key] = torch.from_numpy(np.lib.format.read_array(io.BytesIO(zf.read(name))))
    model.load_state_dict(state)
    model.eval()
    return model, header.get("metadata", {})
