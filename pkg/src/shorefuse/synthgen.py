"""Procedural waterway video with exact water masks.

Each frame is rendered in *scene* coordinates on a canvas padded by a margin,
then warped into the image by a rigid camera-shake transform (bilinear). The
mask is not warped: it is evaluated analytically by mapping every image pixel
centre back into the scene and testing it against the shoreline curve.

Shore content is stored in shoreline-relative coordinates ``(height above the
shoreline, column)``, so the water reflection is an exact vertical mirror about
the shoreline even when the shoreline is curved.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.interpolate import CubicSpline

from .data import Frame, FrameSequence, save_sequence, split_dataset, write_dataset_index
from .errors import ConfigError, GenerationError

REFLECTION_FADE_PX = 40.0
REFLECTION_ATTENUATION = 0.85
SKY_HEIGHT = 256  # rows of shore/sky texture above the shoreline


@dataclass(frozen=True)
class Jitter:
    max_shift_px: float = 6.0
    max_rot_deg: float = 1.0
    temporal_correlation: float = 0.8


@dataclass(frozen=True)
class Shoreline:
    """First water row at evenly spaced columns, plus a slow vertical sway.

    ``row(col, t) = spline(control_rows)(col) + drift_px * sin(2*pi*t / drift_period)``
    """

    control_rows: tuple[float, ...] = (112.0, 112.0)
    drift_px: float = 0.0
    drift_period: float = 120.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "control_rows", tuple(float(r) for r in self.control_rows))
        if len(self.control_rows) < 2:
            raise ConfigError("shoreline needs at least two control rows")


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_frames: int = 60
    resolution: tuple[int, int] = (224, 224)
    shoreline: Shoreline = field(default_factory=Shoreline)
    reflection_strength: float = 0.85
    texture_amplitude: float = 0.6
    flicker_amplitude: float = 0.0
    jitter: Jitter = field(default_factory=Jitter)
    brightness: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        if isinstance(self.shoreline, dict):
            object.__setattr__(self, "shoreline", Shoreline(**self.shoreline))
        if isinstance(self.jitter, dict):
            object.__setattr__(self, "jitter", Jitter(**self.jitter))
        if self.n_frames < 1:
            raise ConfigError("n_frames must be >= 1")
        if min(self.resolution) < 8:
            raise ConfigError("resolution too small")
        for name in ("reflection_strength", "texture_amplitude", "flicker_amplitude"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 <= self.jitter.temporal_correlation < 1.0:
            raise ConfigError("jitter.temporal_correlation must lie in [0, 1)")
        if self.jitter.max_shift_px < 0 or self.jitter.max_rot_deg < 0:
            raise ConfigError("jitter amplitudes must be non-negative")
        if not 0.0 < self.brightness <= 1.0:
            raise ConfigError("brightness must lie in (0, 1]")

    @property
    def margin(self) -> int:
        h, w = self.resolution
        half_diag = 0.5 * math.hypot(h, w)
        reach = self.jitter.max_shift_px * math.sqrt(2) + math.radians(self.jitter.max_rot_deg) * half_diag
        return int(math.ceil(reach)) + 2

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["resolution"] = list(self.resolution)
        d["shoreline"]["control_rows"] = list(self.shoreline.control_rows)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["shoreline"] = Shoreline(**d["shoreline"])
        d["jitter"] = Jitter(**d["jitter"])
        return cls(**d)


@dataclass(frozen=True)
class JitterTrace:
    """Per-frame camera shake and the innovations that produced it.

    ``shift[t] = rho * shift[t-1] + shift_innovation[t]`` (same for rotation),
    with ``shift[-1] = 0``.
    """

    rho: float
    shift: np.ndarray  # (n, 2) row/col pixels
    rot_deg: np.ndarray  # (n,)
    shift_innovation: np.ndarray
    rot_innovation: np.ndarray

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "frames": [
                {
                    "t": t,
                    "shift": self.shift[t].tolist(),
                    "rot_deg": float(self.rot_deg[t]),
                    "shift_innovation": self.shift_innovation[t].tolist(),
                    "rot_innovation": float(self.rot_innovation[t]),
                }
                for t in range(len(self.rot_deg))
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JitterTrace":
        fr = d["frames"]
        return cls(
            rho=d["rho"],
            shift=np.array([f["shift"] for f in fr], dtype=np.float64).reshape(-1, 2),
            rot_deg=np.array([f["rot_deg"] for f in fr], dtype=np.float64),
            shift_innovation=np.array([f["shift_innovation"] for f in fr], dtype=np.float64).reshape(-1, 2),
            rot_innovation=np.array([f["rot_innovation"] for f in fr], dtype=np.float64),
        )


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("jitter", "scene", "waves", "noise", "flicker")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def _ar1(rng: np.random.Generator, n: int, dims: int, bound: float, rho: float):
    """Bounded AR(1): innovations are Gaussian, clipped so that |state| <= bound."""
    state = np.zeros((n, dims))
    innov = np.zeros((n, dims))
    sigma = 0.5 * bound * math.sqrt(1.0 - rho**2)
    prev = np.zeros(dims)
    for t in range(n):
        raw = rng.normal(0.0, 1.0, dims) * sigma
        eps = np.clip(raw, -bound - rho * prev, bound - rho * prev)
        cur = rho * prev + eps
        state[t], innov[t] = cur, eps
        prev = cur
    return state, innov


def jitter_trace(spec: SceneSpec) -> JitterTrace:
    rng = _streams(spec.seed)["jitter"]
    j = spec.jitter
    shift, shift_eps = _ar1(rng, spec.n_frames, 2, j.max_shift_px, j.temporal_correlation)
    rot, rot_eps = _ar1(rng, spec.n_frames, 1, j.max_rot_deg, j.temporal_correlation)
    return JitterTrace(j.temporal_correlation, shift, rot[:, 0], shift_eps, rot_eps[:, 0])


def shoreline_rows(spec: SceneSpec, cols: np.ndarray, t: int) -> np.ndarray:
    """First-water-row position of the shoreline at (scene) columns ``cols``, frame ``t``."""
    sh = spec.shoreline
    w = spec.resolution[1]
    knots = np.linspace(0.0, w - 1.0, len(sh.control_rows))
    if len(set(sh.control_rows)) == 1:
        base = np.full(np.shape(cols), sh.control_rows[0])
    else:
        base = CubicSpline(knots, sh.control_rows, bc_type="natural")(cols)
    return base + sh.drift_px * math.sin(2.0 * math.pi * t / sh.drift_period)


def _axis(spec: SceneSpec, cols: np.ndarray, t: int) -> np.ndarray:
    # Mirror axis sits half a pixel above the first water row.
    return shoreline_rows(spec, cols, t) - 0.5


def scene_to_image(spec: SceneSpec, trace: JitterTrace, t: int, rows, cols):
    h, w = spec.resolution
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    th = math.radians(trace.rot_deg[t])
    c, s = math.cos(th), math.sin(th)
    dy, dx = rows - cy, cols - cx
    return cy + c * dy - s * dx + trace.shift[t, 0], cx + s * dy + c * dx + trace.shift[t, 1]


def image_to_scene(spec: SceneSpec, trace: JitterTrace, t: int, rows, cols):
    h, w = spec.resolution
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    th = math.radians(trace.rot_deg[t])
    c, s = math.cos(th), math.sin(th)
    dy, dx = rows - cy - trace.shift[t, 0], cols - cx - trace.shift[t, 1]
    return cy + c * dy + s * dx, cx - s * dy + c * dx


def analytic_mask(spec: SceneSpec, trace: JitterTrace, t: int) -> np.ndarray:
    h, w = spec.resolution
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    sy, sx = image_to_scene(spec, trace, t, rr, cc)
    return (sy > _axis(spec, sx, t)).astype(np.uint8)


class _Scene:
    """Static per-sequence content: shore texture and wave parameters."""

    def __init__(self, spec: SceneSpec, streams: dict[str, np.random.Generator]):
        self.spec = spec
        m = spec.margin
        h, w = spec.resolution
        rng = streams["scene"]
        self.cols = np.arange(-m, w + m, dtype=np.float64)
        ncols = len(self.cols)
        # Shore objects: column blocks of random colour and height above the shoreline.
        heights = np.zeros(ncols)
        colors = np.zeros((ncols, 3))
        x = 0
        while x < ncols:
            width = int(rng.integers(6, 28))
            heights[x : x + width] = rng.uniform(18, 70)
            colors[x : x + width] = rng.uniform([0.15, 0.2, 0.1], [0.55, 0.5, 0.4])
            x += width
        heights = ndimage.uniform_filter1d(heights, 3)
        grain = ndimage.gaussian_filter(rng.normal(size=(SKY_HEIGHT, ncols)), 1.2)
        grain /= grain.std() + 1e-12
        u = np.arange(SKY_HEIGHT, dtype=np.float64)[:, None]
        sky_top = np.array([0.45, 0.65, 0.9])
        sky_horizon = np.array([0.85, 0.88, 0.92])
        mix = np.clip(u / 120.0, 0, 1)[..., None]
        sky = sky_horizon * (1 - mix) + sky_top * mix
        objects = colors[None] * (1.0 + 0.35 * grain[..., None])
        edge = np.clip(heights[None] - u + 0.5, 0.0, 1.0)[..., None]
        # texture[u, col, ch]: content at height u above the shoreline.
        self.texture = np.clip(edge * objects + (1 - edge) * sky, 0.0, 1.0)
        self.water_color = np.array([0.12, 0.25, 0.32])
        wr = streams["waves"]
        n_waves = 6
        angles = wr.normal(math.pi / 2, 0.35, n_waves)
        lengths = wr.uniform(5.0, 18.0, n_waves)
        k = 2 * math.pi / lengths
        self.wave_k = np.stack([k * np.sin(angles), k * np.cos(angles)], 1)
        self.wave_omega = wr.uniform(0.6, 1.4, n_waves) * np.sign(wr.normal(size=n_waves))
        self.wave_phase = wr.uniform(0, 2 * math.pi, n_waves)
        self.wave_amp = wr.uniform(0.5, 1.0, n_waves) / n_waves

    def shore(self, u: np.ndarray, col_index: np.ndarray) -> np.ndarray:
        coords_u = np.clip(u, 0, SKY_HEIGHT - 1)
        out = np.empty(u.shape + (3,))
        for ch in range(3):
            out[..., ch] = ndimage.map_coordinates(
                self.texture[..., ch], [coords_u, col_index], order=1, mode="nearest"
            )
        return out

    def waves(self, rows: np.ndarray, cols: np.ndarray, t: int) -> np.ndarray:
        field_ = np.zeros(rows.shape)
        for (ky, kx), om, ph, a in zip(self.wave_k, self.wave_omega, self.wave_phase, self.wave_amp):
            field_ += a * np.sin(ky * rows + kx * cols - om * t + ph)
        return field_


def _render_canvas(scene: _Scene, t: int, noise_rng, flicker: float) -> np.ndarray:
    spec = scene.spec
    m = spec.margin
    h, w = spec.resolution
    rows = np.arange(-m, h + m, dtype=np.float64)[:, None] * np.ones((1, len(scene.cols)))
    cols = np.ones((len(rows), 1)) * scene.cols[None, :]
    col_index = cols + m
    axis = _axis(spec, scene.cols, t)[None, :]
    above = rows <= axis
    height = np.abs(axis - rows)

    tex_amp = spec.texture_amplitude
    shore_u = np.where(above, height, 0.0)
    ripple_u = np.zeros_like(rows)
    ripple_c = np.zeros_like(rows)
    if tex_amp > 0:
        ripple_u = 1.5 * tex_amp * np.sin(0.35 * rows + 0.9 * t + 0.05 * cols)
        ripple_c = 2.0 * tex_amp * np.sin(0.21 * rows - 1.1 * t + 0.03 * cols)
    refl_u = np.where(above, 0.0, np.maximum(height + ripple_u, 0.0))
    sample_u = np.where(above, shore_u, refl_u)
    sample_c = np.where(above, col_index, col_index + ripple_c)
    content = scene.shore(sample_u, sample_c)

    depth = np.where(above, 0.0, height)
    water = scene.water_color[None, None, :] * (1.0 + 0.4 * np.exp(-depth / 60.0))[..., None]
    if tex_amp > 0:
        wave = scene.waves(rows, cols, t)
        grain = noise_rng.normal(0.0, 1.0, rows.shape)
        water = water + (tex_amp * (0.22 * wave + 0.05 * grain))[..., None]
    weight = spec.reflection_strength * np.exp(-depth / REFLECTION_FADE_PX)
    water = (1 - weight[..., None]) * water + weight[..., None] * REFLECTION_ATTENUATION * content
    canvas = np.where(above[..., None], content, water)
    canvas = canvas * spec.brightness * (1.0 + flicker)
    return np.clip(canvas, 0.0, 1.0)


def _warp(canvas: np.ndarray, spec: SceneSpec, trace: JitterTrace, t: int) -> np.ndarray:
    h, w = spec.resolution
    m = spec.margin
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    sy, sx = image_to_scene(spec, trace, t, rr, cc)
    out = np.empty((h, w, 3))
    for ch in range(3):
        out[..., ch] = ndimage.map_coordinates(canvas[..., ch], [sy + m, sx + m], order=1, mode="nearest")
    return out


def _check_bounds(spec: SceneSpec, t: int) -> None:
    h, w = spec.resolution
    m = spec.margin
    cols = np.arange(-m, w + m, dtype=np.float64)
    rows = shoreline_rows(spec, cols, t)
    if rows.min() < m or rows.max() > h - 1 - m:
        raise GenerationError(
            f"frame {t}: shoreline rows [{rows.min():.1f}, {rows.max():.1f}] leave the "
            f"image once the {m}px jitter margin is reserved",
            frame_index=t,
        )


def generate_sequence(spec: SceneSpec, sequence_id: str = "synthetic", split: str = "train") -> FrameSequence:
    """Render ``spec`` into an annotated sequence; output depends only on ``spec``."""
    streams = _streams(spec.seed)
    trace = jitter_trace(spec)
    scene = _Scene(spec, streams)
    flicker = spec.flicker_amplitude * streams["flicker"].uniform(-1.0, 1.0, spec.n_frames)
    frames = []
    for t in range(spec.n_frames):
        _check_bounds(spec, t)
        canvas = _render_canvas(scene, t, streams["noise"], float(flicker[t]))
        image = _warp(canvas, spec, trace, t)
        # Quantise here so that in-memory frames equal what a PNG round trip gives back.
        image = np.rint(np.clip(image, 0, 1) * 255.0) / 255.0
        frames.append(Frame(image.astype(np.float32), t, analytic_mask(spec, trace, t)))
    return FrameSequence(sequence_id, tuple(frames), split=split)


# ------------------------------------------------------------------ benchmark

LIGHTING = {
    "day": dict(brightness=1.0, flicker_amplitude=0.0),
    "dim": dict(brightness=0.45, flicker_amplitude=0.0),
    "flicker": dict(brightness=0.85, flicker_amplitude=0.3),
}
JITTER = {
    "low": Jitter(max_shift_px=2.0, max_rot_deg=0.3, temporal_correlation=0.8),
    "high": Jitter(max_shift_px=6.0, max_rot_deg=1.0, temporal_correlation=0.8),
}
SHORES = ("straight", "curved")


def benchmark_conditions(n: int = 10, jitter_levels: Sequence[str] = ("low", "high")) -> list[tuple[str, str, str]]:
    """Cycle through lighting x jitter x shoreline so every level appears."""
    lights = list(LIGHTING)
    return [
        (lights[i % 3], jitter_levels[i % len(jitter_levels)], SHORES[(i // 2) % 2]) for i in range(n)
    ]


def benchmark_spec(
    seed: int,
    index: int,
    condition: tuple[str, str, str],
    n_frames: int = 60,
    resolution: tuple[int, int] = (224, 224),
    reflection_strength: float = 0.85,
    texture_amplitude: float = 0.6,
) -> SceneSpec:
    lighting, jitter, shore = condition
    seq_seed = int(np.random.SeedSequence([seed, index]).generate_state(1)[0])
    rng = np.random.default_rng(seq_seed)
    h, w = resolution
    base = rng.uniform(0.42, 0.58) * h
    if shore == "straight":
        tilt = rng.uniform(-0.08, 0.08) * h
        control = (base - tilt, base + tilt)
    else:
        control = tuple(base + rng.uniform(-0.1, 0.1, 5) * h)
    shoreline = Shoreline(control, drift_px=rng.uniform(2.0, 6.0), drift_period=rng.uniform(80, 160))
    return SceneSpec(
        seed=seq_seed,
        n_frames=n_frames,
        resolution=resolution,
        shoreline=shoreline,
        reflection_strength=reflection_strength,
        texture_amplitude=texture_amplitude,
        jitter=JITTER[jitter],
        **LIGHTING[lighting],
    )


def write_sequence(sequence: FrameSequence, spec: SceneSpec, out: Path, name: str) -> Path:
    seq_dir = save_sequence(sequence, out / name, extra={"scene": spec.to_dict()})
    trace = jitter_trace(spec)
    (seq_dir / "jitter_trace.json").write_text(json.dumps(trace.to_dict(), indent=1) + "\n")
    return seq_dir


def generate_benchmark(
    seed: int,
    out: str | Path,
    n_sequences: int = 10,
    n_frames: int = 60,
    resolution: tuple[int, int] = (224, 224),
    jitter_levels: Sequence[str] = ("low", "high"),
    ratios: Sequence[float] = (6, 2, 2),
    **scene_overrides,
) -> Path:
    """Write ``n_sequences`` sequences plus ``dataset.json`` under ``out``; returns the index path."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create benchmark directory {out}: {exc}") from exc
    conditions = benchmark_conditions(n_sequences, jitter_levels)
    specs = [
        benchmark_spec(seed, i, cond, n_frames, resolution, **scene_overrides)
        for i, cond in enumerate(conditions)
    ]
    # Splits are decided on lightweight stubs so sequences can be rendered one at a time.
    stubs = [FrameSequence(f"seq{i:02d}_{'_'.join(c)}", ()) for i, c in enumerate(conditions)]
    stubs = split_dataset(stubs, ratios, seed)
    names = []
    for spec, stub in zip(specs, stubs):
        sequence = generate_sequence(spec, stub.id, stub.split)
        write_sequence(sequence, spec, out, stub.id)
        names.append(stub.id)
    return write_dataset_index(out, stubs, names)
