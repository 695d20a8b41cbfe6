import hashlib
import json
import math

import numpy as np
import pytest
from skimage.draw import polygon as fill_polygon

from shorefuse.data import load_dataset, load_sequence
from shorefuse.errors import ConfigError, GenerationError
from shorefuse.synthgen import (
    Jitter,
    JitterTrace,
    SceneSpec,
    Shoreline,
    _axis,
    analytic_mask,
    benchmark_spec,
    generate_benchmark,
    generate_sequence,
    image_to_scene,
    jitter_trace,
    scene_to_image,
)

QUIET = dict(reflection_strength=0.0, texture_amplitude=0.0, flicker_amplitude=0.0,
             jitter=Jitter(0.0, 0.0, 0.8))


def small_spec(**kw):
    base = dict(seed=3, n_frames=6, resolution=(64, 80),
                shoreline=Shoreline((30.0, 36.0, 28.0), drift_px=2.0, drift_period=20.0),
                jitter=Jitter(3.0, 0.8, 0.8))
    base.update(kw)
    return SceneSpec(**base)


def test_static_scene_is_static():
    spec = SceneSpec(seed=1, n_frames=4, shoreline=Shoreline((112.0, 112.0)), **QUIET)
    seq = generate_sequence(spec)
    first = seq.frames[0]
    for f in seq.frames[1:]:
        assert np.array_equal(f.image, first.image)
    assert not first.mask[:112].any() and first.mask[112:].all()


def test_same_spec_same_bytes(tmp_path):
    from shorefuse.synthgen import write_sequence

    spec = small_spec()
    for name in ("a", "b"):
        write_sequence(generate_sequence(spec, "s"), spec, tmp_path, name)
    for kind in ("frames", "masks"):
        for p in sorted((tmp_path / "a" / kind).iterdir()):
            assert p.read_bytes() == (tmp_path / "b" / kind / p.name).read_bytes()


def test_scene_transform_round_trip(rng):
    spec = small_spec()
    trace = jitter_trace(spec)
    r, c = rng.uniform(0, 60, 50), rng.uniform(0, 70, 50)
    for t in range(spec.n_frames):
        rr, cc = image_to_scene(spec, trace, t, *scene_to_image(spec, trace, t, r, c))
        assert np.allclose(rr, r) and np.allclose(cc, c)


def _polygon_mask(spec, trace, t, upsample=8):
    """Rasterise the water polygon after pushing the shoreline through the camera transform."""
    h, w = spec.resolution
    m = spec.margin + 4
    cols = np.linspace(-m, w - 1 + m, 4 * (w + 2 * m))
    rows = _axis(spec, cols, t)
    bottom = h - 1 + 2 * m
    poly_r = np.concatenate([rows, [bottom, bottom]])
    poly_c = np.concatenate([cols, [cols[-1], cols[0]]])
    ir, ic = scene_to_image(spec, trace, t, poly_r, poly_c)
    # Sub-sample each pixel and take the majority, which approximates centre-point inclusion.
    big = np.zeros((h * upsample, w * upsample), bool)
    rr, cc = fill_polygon((ir + 0.5) * upsample - 0.5, (ic + 0.5) * upsample - 0.5, big.shape)
    big[rr, cc] = True
    centre = upsample // 2
    return big[centre::upsample, centre::upsample]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_mask_matches_transformed_shoreline(seed):
    spec = small_spec(seed=seed, n_frames=5)
    seq = generate_sequence(spec)
    trace = jitter_trace(spec)
    for t, f in enumerate(seq.frames):
        ref = _polygon_mask(spec, trace, t)
        got = f.mask.astype(bool)
        inter = np.count_nonzero(ref & got)
        union = np.count_nonzero(ref | got)
        assert inter / union >= 0.995
        assert np.array_equal(got, analytic_mask(spec, trace, t).astype(bool))


def test_jitter_is_exact_ar1():
    spec = small_spec(n_frames=40)
    tr = jitter_trace(spec)
    prev_s, prev_r = np.zeros(2), 0.0
    for t in range(spec.n_frames):
        assert np.array_equal(tr.shift[t], tr.rho * prev_s + tr.shift_innovation[t])
        assert tr.rot_deg[t] == tr.rho * prev_r + tr.rot_innovation[t]
        prev_s, prev_r = tr.shift[t], tr.rot_deg[t]
    assert np.abs(tr.shift).max() <= spec.jitter.max_shift_px
    assert np.abs(tr.rot_deg).max() <= spec.jitter.max_rot_deg
    again = JitterTrace.from_dict(json.loads(json.dumps(tr.to_dict())))
    assert np.array_equal(again.shift, tr.shift) and np.array_equal(again.rot_innovation, tr.rot_innovation)


def test_jitter_is_temporally_correlated():
    spec = small_spec(n_frames=400, jitter=Jitter(6.0, 1.0, 0.8))
    s = jitter_trace(spec).shift[:, 0]
    lag1 = np.corrcoef(s[:-1], s[1:])[0, 1]
    assert 0.6 < lag1 < 0.95


def test_reflection_mirrors_the_shore():
    spec = SceneSpec(seed=4, n_frames=1, resolution=(128, 128), shoreline=Shoreline((64.0, 64.0)),
                     reflection_strength=1.0, texture_amplitude=0.0, flicker_amplitude=0.0,
                     jitter=Jitter(0.0, 0.0, 0.8))
    img = generate_sequence(spec).frames[0].image.mean(axis=2)
    band = 12
    shore = img[64 - band : 64][::-1]  # rows 63, 62, ... mirror onto 64, 65, ...
    water = img[64 : 64 + band]
    r = np.corrcoef(shore.ravel(), water.ravel())[0, 1]
    assert r > 0.9


def test_time_varying_water_static_shore():
    spec = SceneSpec(seed=5, n_frames=3, resolution=(96, 96), shoreline=Shoreline((48.0, 48.0)),
                     reflection_strength=0.5, texture_amplitude=0.6, jitter=Jitter(0.0, 0.0, 0.8))
    seq = generate_sequence(spec)
    a, b = seq.frames[0].image, seq.frames[1].image
    assert np.array_equal(a[:40], b[:40])
    assert not np.array_equal(a[60:], b[60:])


def test_shoreline_outside_margin_is_a_generation_error():
    spec = small_spec(shoreline=Shoreline((2.0, 2.0)))
    with pytest.raises(GenerationError) as err:
        generate_sequence(spec)
    assert err.value.frame_index == 0


@pytest.mark.parametrize("kw", [dict(n_frames=0), dict(reflection_strength=1.5), dict(brightness=0.0),
                                dict(jitter=Jitter(1.0, 1.0, 1.0))])
def test_spec_validation(kw):
    with pytest.raises(ConfigError):
        small_spec(**kw)


def test_spec_dict_round_trip():
    spec = benchmark_spec(0, 3, ("dim", "high", "curved"))
    assert SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def _tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_benchmark_layout_and_determinism(tmp_path):
    kw = dict(n_sequences=10, n_frames=2, resolution=(64, 64))
    generate_benchmark(0, tmp_path / "a", **kw)
    generate_benchmark(0, tmp_path / "b", **kw)
    generate_benchmark(1, tmp_path / "c", **kw)
    index = json.loads((tmp_path / "a" / "dataset.json").read_text())
    splits = [e["split"] for e in index["sequences"]]
    assert len(splits) == 10
    assert (splits.count("train"), splits.count("val"), splits.count("test")) == (6, 2, 2)
    assert _tree_hash(tmp_path / "a") == _tree_hash(tmp_path / "b")
    assert _tree_hash(tmp_path / "a") != _tree_hash(tmp_path / "c")
    seq_dir = tmp_path / "a" / index["sequences"][0]["path"]
    assert (seq_dir / "jitter_trace.json").is_file()
    assert len(load_dataset(tmp_path / "a")) == 10
    # In-memory frames equal their PNG round trip.
    spec = SceneSpec.from_dict(json.loads((seq_dir / "manifest.json").read_text())["scene"])
    mem = generate_sequence(spec)
    disk = load_sequence(seq_dir)
    assert all(np.array_equal(a.image, b.image) for a, b in zip(mem.frames, disk.frames))
