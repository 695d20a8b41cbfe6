"""Previous-frame alignment: frame encoders, interval gating and deformable convolution.

Tensors are channel-first (N, C, H, W) throughout. The aligned previous-frame
summary is

    F_pre = sum_j  align(Y_j) * gate(t_now - t_j)

where ``align`` is a deformable (or, when ablated, plain) K x K convolution and
``gate`` is a per-channel sigmoid of a learned projection of a sinusoidal
embedding of the frame interval.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ModelConfig
from .errors import OrderingError, ValidationError


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Feature grid of one frame, stored channel-first as (C, h, w)."""

    data: torch.Tensor
    source_timestamp: int

    def __post_init__(self) -> None:
        if self.data.dim() != 3:
            raise ValidationError(f"FeatureMap data must be (C, h, w), got {tuple(self.data.shape)}")
        if not torch.isfinite(self.data).all():
            raise ValidationError(f"FeatureMap from frame {self.source_timestamp} has non-finite values")


# ------------------------------------------------------------------- encoders


def _groups(channels: int) -> int:
    # Group norm keeps train and eval behaviour identical, unlike batch statistics.
    return math.gcd(channels, 4)


class TinyEncoder(nn.Module):
    """Stride-2 conv/ReLU stages reaching ``feature_channels`` at input/stride resolution."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        n_stages = int(round(math.log2(config.stride)))
        layers: list[nn.Module] = []
        if n_stages == 0:
            layers += [nn.Conv2d(3, config.feature_channels, 3, padding=1), nn.ReLU()]
        inner = list(config.encoder_widths[: n_stages - 1]) if n_stages else []
        while len(inner) < n_stages - 1:
            inner.append(inner[-1] if inner else 8)
        c_in = 3
        for c_out in (inner + [config.feature_channels])[:n_stages]:
            layers += [
                nn.Conv2d(c_in, c_out, 3, stride=2, padding=1),
                nn.GroupNorm(_groups(c_out), c_out),
                nn.ReLU(),
                nn.Conv2d(c_out, c_out, 3, padding=1),
                nn.GroupNorm(_groups(c_out), c_out),
                nn.ReLU(),
            ]
            c_in = c_out
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


class MobileNetEncoder(nn.Module):
    """MobileNetV2 inverted-residual trunk up to the 320-channel block, kept at stride 16."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        from torchvision.models import mobilenet_v2

        trunk = mobilenet_v2(weights=None).features[:18]
        # Block 14 opens the stride-32 stage; run it at stride 1 for a 14x14 grid at 224 input.
        trunk[14].conv[1][0].stride = (1, 1)
        self.trunk = trunk
        self.project = (
            nn.Identity() if config.feature_channels == 320 else nn.Conv2d(320, config.feature_channels, 1)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.project(self.trunk(x))


def build_encoder(config: ModelConfig) -> nn.Module:
    if config.encoder == "tiny":
        return TinyEncoder(config)
    return MobileNetEncoder(config)


def encode_frames(encoder: nn.Module, images: torch.Tensor, config: ModelConfig) -> torch.Tensor:
    """Encode a (N, 3, H, W) batch; raises on a resolution the config does not declare."""
    if images.dim() != 4 or images.shape[1] != 3 or tuple(images.shape[2:]) != config.input_size:
        raise ValidationError(
            f"encoder expects (N, 3, {config.input_size[0]}, {config.input_size[1]}), "
            f"got {tuple(images.shape)}"
        )
    return encoder(images)


def encode_frame(frame, encoder: nn.Module, config: ModelConfig) -> FeatureMap:
    """Features of a single :class:`~shorefuse.data.Frame` at the model's input size."""
    image = torch.from_numpy(frame.image.copy()).permute(2, 0, 1)[None]
    dtype = next(encoder.parameters()).dtype
    with torch.no_grad():
        data = encode_frames(encoder, image.to(dtype), config)[0]
    return FeatureMap(data, frame.timestamp)


# -------------------------------------------------------------- temporal gate


def sinusoidal_embedding(delta_t: torch.Tensor, dim: int, base: float = 10000.0) -> torch.Tensor:
    """Alternating sin/cos of ``delta_t`` over log-spaced wavelengths; (N,) -> (N, dim)."""
    delta_t = delta_t.to(torch.get_default_dtype() if not delta_t.is_floating_point() else delta_t.dtype)
    half = torch.arange(0, dim, 2, dtype=delta_t.dtype, device=delta_t.device)
    freq = torch.exp(-math.log(base) * half / dim)
    angles = delta_t[:, None] * freq[None, :]
    emb = torch.zeros(delta_t.shape[0], dim, dtype=delta_t.dtype, device=delta_t.device)
    emb[:, 0::2] = torch.sin(angles)
    emb[:, 1::2] = torch.cos(angles[:, : dim // 2])
    return emb


class TemporalGate(nn.Module):
    """Per-channel gate in (0, 1) from a frame interval."""

    def __init__(self, channels: int, embed_dim: int | None = None):
        super().__init__()
        self.embed_dim = embed_dim or channels
        self.proj = nn.Linear(self.embed_dim, channels)

    def forward(self, delta_t: torch.Tensor) -> torch.Tensor:
        if (delta_t < 1).any():
            raise ValidationError(f"frame interval must be >= 1, got {delta_t.min().item()}")
        emb = sinusoidal_embedding(delta_t.to(self.proj.weight.dtype), self.embed_dim)
        return torch.sigmoid(self.proj(emb))


def temporal_gate(delta_t: int, gate: TemporalGate) -> torch.Tensor:
    """Gate vector of shape (C,) for a single interval."""
    if int(delta_t) != delta_t or delta_t < 1:
        raise ValidationError(f"delta_t must be a positive integer, got {delta_t}")
    return gate(torch.tensor([int(delta_t)]))[0]


# ------------------------------------------------------ deformable convolution


def deform_conv2d(
    x: torch.Tensor,
    offsets: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor | None = None,
) -> torch.Tensor:
    """Stride-1, 'same'-padded deformable convolution with bilinear sampling.

    ``offsets`` is (N, 2*K*K, H, W); channels ``2k`` and ``2k+1`` hold the row and
    column displacement of kernel tap ``k = i*K + j``. Samples outside the input
    read as zero.
    """
    n, c, h, w = x.shape
    c_out, c_in, kh, kw = weight.shape
    if c_in != c or kh != kw:
        raise ValidationError("weight must be (C_out, C_in, K, K) matching the input channels")
    k = kh
    taps = k * k
    if offsets.shape != (n, 2 * taps, h, w):
        raise ValidationError(f"offsets must be {(n, 2 * taps, h, w)}, got {tuple(offsets.shape)}")
    pad = k // 2
    dtype, device = x.dtype, x.device
    ki = torch.arange(k, device=device, dtype=dtype).repeat_interleave(k) - pad
    kj = torch.arange(k, device=device, dtype=dtype).repeat(k) - pad
    rows = torch.arange(h, device=device, dtype=dtype)
    cols = torch.arange(w, device=device, dtype=dtype)
    off = offsets.view(n, taps, 2, h, w)
    py = rows.view(1, 1, h, 1) + ki.view(1, taps, 1, 1) + off[:, :, 0]
    px = cols.view(1, 1, 1, w) + kj.view(1, taps, 1, 1) + off[:, :, 1]

    y0 = torch.floor(py)
    x0 = torch.floor(px)
    fy = py - y0
    fx = px - x0
    flat = x.reshape(n, c, h * w)
    sampled = x.new_zeros(n, c, taps, h, w)
    for dy, dx, wgt in (
        (0, 0, (1 - fy) * (1 - fx)),
        (0, 1, (1 - fy) * fx),
        (1, 0, fy * (1 - fx)),
        (1, 1, fy * fx),
    ):
        yy = y0 + dy
        xx = x0 + dx
        valid = (yy >= 0) & (yy <= h - 1) & (xx >= 0) & (xx <= w - 1)
        idx = (yy.clamp(0, h - 1) * w + xx.clamp(0, w - 1)).long().view(n, 1, -1).expand(n, c, -1)
        vals = torch.gather(flat, 2, idx).view(n, c, taps, h, w)
        sampled = sampled + vals * (wgt * valid.to(dtype)).unsqueeze(1)
    out = torch.einsum("nckhw,ock->nohw", sampled, weight.reshape(c_out, c, taps))
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out


class DeformConv2d(nn.Module):
    """K x K deformable convolution (offsets only) with a zero-initialised offset branch."""

    def __init__(self, channels: int, kernel_size: int = 3):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, kernel_size, padding=kernel_size // 2)
        self.offset = nn.Conv2d(channels, 2 * kernel_size * kernel_size, kernel_size, padding=kernel_size // 2)
        nn.init.zeros_(self.offset.weight)
        nn.init.zeros_(self.offset.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(x).all():
            raise ValidationError("deformable convolution input has non-finite values")
        return deform_conv2d(x, self.offset(x), self.conv.weight, self.conv.bias)


def deformable_conv(features: FeatureMap, module: DeformConv2d) -> FeatureMap:
    return FeatureMap(module(features.data[None])[0], features.source_timestamp)


# ------------------------------------------------------------------ pre-fusion


class PreFusion(nn.Module):
    """Sum of aligned, interval-gated previous-frame features."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c, k = config.feature_channels, config.kernel_size
        self.channels = c
        self.align = DeformConv2d(c, k) if config.use_dcn else nn.Conv2d(c, c, k, padding=k // 2)
        self.gate = TemporalGate(c) if config.use_tpe else None

    def gates(self, deltas: torch.Tensor, dtype: torch.dtype) -> torch.Tensor:
        """(N, P) intervals -> (N, P, C) gates; all-ones when gating is ablated."""
        n, p = deltas.shape
        c = self.channels
        if self.gate is None:
            return torch.ones(n, p, c, dtype=dtype, device=deltas.device)
        return self.gate(deltas.reshape(-1)).view(n, p, c).to(dtype)

    def forward(self, previous: torch.Tensor, deltas: torch.Tensor) -> torch.Tensor:
        """``previous`` is (N, P, C, h, w) with P >= 1, ``deltas`` (N, P) positive intervals."""
        n, p, c, h, w = previous.shape
        if p == 0:
            raise ValidationError("pre-fusion needs at least one previous frame")
        if (deltas < 1).any():
            raise OrderingError("previous frames must precede the current frame")
        aligned = self.align(previous.reshape(n * p, c, h, w)).view(n, p, c, h, w)
        g = self.gates(deltas, previous.dtype)
        return (aligned * g[..., None, None]).sum(dim=1)


def prefuse(previous: Sequence[FeatureMap], current_timestamp: int, module: PreFusion) -> FeatureMap:
    """Single-sample convenience wrapper over :class:`PreFusion`."""
    if not previous:
        raise ValidationError("prefuse needs a non-empty list of previous feature maps")
    for fm in previous:
        if fm.source_timestamp >= current_timestamp:
            raise OrderingError(
                f"previous frame {fm.source_timestamp} is not before current frame {current_timestamp}"
            )
    stack = torch.stack([fm.data for fm in previous])[None]
    deltas = torch.tensor([[current_timestamp - fm.source_timestamp for fm in previous]])
    return FeatureMap(module(stack, deltas)[0], current_timestamp)
