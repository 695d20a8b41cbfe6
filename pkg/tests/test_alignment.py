import numpy as np
import pytest
import torch
import torch.nn.functional as F

from shorefuse.alignment import (
    DeformConv2d,
    FeatureMap,
    PreFusion,
    TemporalGate,
    build_encoder,
    deform_conv2d,
    deformable_conv,
    encode_frame,
    encode_frames,
    prefuse,
    sinusoidal_embedding,
    temporal_gate,
)
from shorefuse.config import ModelConfig
from shorefuse.errors import OrderingError, ValidationError

from conftest import make_sequence
from oracles import deform_conv_loops


def test_backbone_geometry():
    enc = build_encoder(ModelConfig())
    out = encode_frames(enc.eval(), torch.zeros(1, 3, 224, 224), ModelConfig())
    assert tuple(out.shape) == (1, 320, 14, 14)


@pytest.mark.parametrize("size", [64, 224])
def test_tiny_encoder_geometry(size):
    cfg = ModelConfig.tiny(input_size=(size, size), feature_grid=(size // 16, size // 16))
    out = encode_frames(build_encoder(cfg), torch.rand(2, 3, size, size), cfg)
    assert tuple(out.shape) == (2, 32, size // 16, size // 16)


def test_wrong_resolution_rejected(tiny_config):
    with pytest.raises(ValidationError):
        encode_frames(build_encoder(tiny_config), torch.zeros(1, 3, 64, 64), tiny_config)


def test_zero_image_zero_bias_gives_zero_features(tiny_config):
    enc = build_encoder(tiny_config)
    for m in enc.modules():
        if getattr(m, "bias", None) is not None:
            torch.nn.init.zeros_(m.bias)
    out = encode_frames(enc, torch.zeros(1, 3, 56, 56), tiny_config)
    assert torch.count_nonzero(out) == 0


def test_identical_frames_identical_features(tiny_config):
    enc = build_encoder(tiny_config)
    f = make_sequence(1, shape=(56, 56)).frames[0]
    a, b = encode_frame(f, enc, tiny_config), encode_frame(f, enc, tiny_config)
    assert torch.equal(a.data, b.data) and a.source_timestamp == 0


def test_feature_map_rejects_non_finite():
    with pytest.raises(ValidationError):
        FeatureMap(torch.full((2, 3, 3), float("nan")), 0)


# ------------------------------------------------------------------- gate


def test_zero_gate_is_one_half():
    gate = TemporalGate(16)
    torch.nn.init.zeros_(gate.proj.weight)
    torch.nn.init.zeros_(gate.proj.bias)
    for dt in (1, 2, 7, 30):
        assert torch.equal(temporal_gate(dt, gate), torch.full((16,), 0.5))


def test_gate_depends_on_interval():
    for seed in range(5):
        torch.manual_seed(seed)
        gate = TemporalGate(32)
        assert not torch.equal(temporal_gate(1, gate), temporal_gate(3, gate))


def test_gate_range():
    gate = TemporalGate(64)
    g = gate(torch.arange(1, 33))
    assert (g > 0).all() and (g < 1).all()


@pytest.mark.parametrize("bad", [0, -2, 1.5])
def test_gate_rejects_bad_interval(bad):
    with pytest.raises(ValidationError):
        temporal_gate(bad, TemporalGate(4))


def test_sinusoidal_embedding_layout():
    e = sinusoidal_embedding(torch.tensor([0.0, 2.0]), 6)
    assert torch.allclose(e[0], torch.tensor([0.0, 1.0, 0.0, 1.0, 0.0, 1.0]))
    assert torch.isclose(e[1, 0], torch.sin(torch.tensor(2.0)))


# ------------------------------------------------------ deformable convolution


def test_zero_offsets_equal_standard_convolution():
    g = torch.Generator().manual_seed(0)
    worst = 0.0
    for _ in range(100):
        x = torch.randn(1, 4, 6, 7, generator=g)
        w = torch.randn(5, 4, 3, 3, generator=g)
        b = torch.randn(5, generator=g)
        out = deform_conv2d(x, torch.zeros(1, 18, 6, 7), w, b)
        worst = max(worst, (out - F.conv2d(x, w, b, padding=1)).abs().max().item())
    assert worst < 1e-5


def test_random_offsets_match_loop_oracle():
    rng = np.random.default_rng(0)
    for trial in range(5):
        x = rng.normal(size=(2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        off = rng.uniform(-2.5, 2.5, size=(18, 5, 5))
        got = deform_conv2d(torch.from_numpy(x)[None], torch.from_numpy(off)[None],
                            torch.from_numpy(w), torch.from_numpy(b))[0].numpy()
        ref = deform_conv_loops(x, off, w, b)
        assert np.max(np.abs(got - ref) / np.maximum(np.abs(ref), 1e-12)) < 1e-6


def test_constant_input_any_offsets_interior():
    x = torch.full((1, 3, 9, 9), 0.7, dtype=torch.float64)
    w = torch.randn(2, 3, 3, 3, dtype=torch.float64)
    off = torch.rand(1, 18, 9, 9, dtype=torch.float64) - 0.5
    out = deform_conv2d(x, off, w)
    ref = F.conv2d(x, w, padding=1)
    assert torch.allclose(out[..., 2:-2, 2:-2], ref[..., 2:-2, 2:-2], atol=1e-12)


def test_offset_branch_starts_at_zero():
    m = DeformConv2d(4)
    x = torch.randn(1, 4, 5, 5)
    assert torch.count_nonzero(m.offset(x)) == 0
    assert torch.allclose(m(x), m.conv(x), atol=1e-6)


def test_deformable_conv_rejects_non_finite():
    x = torch.zeros(1, 4, 3, 3)
    x[0, 0, 0, 0] = float("inf")
    with pytest.raises(ValidationError):
        DeformConv2d(4)(x)


def test_deformable_conv_wrapper():
    m = DeformConv2d(4)
    fm = FeatureMap(torch.randn(4, 5, 5), 3)
    out = deformable_conv(fm, m)
    assert out.source_timestamp == 3 and torch.allclose(out.data, m(fm.data[None])[0])


def test_offsets_shape_checked():
    with pytest.raises(ValidationError):
        deform_conv2d(torch.zeros(1, 2, 4, 4), torch.zeros(1, 9, 4, 4), torch.zeros(2, 2, 3, 3))


# ------------------------------------------------------------------ prefuse


def _pre(tiny_config, **kw):
    cfg = tiny_config.replace(**kw)
    return cfg, PreFusion(cfg).double()


def test_prefuse_one_frame_zero_gate(tiny_config):
    cfg, m = _pre(tiny_config)
    torch.nn.init.zeros_(m.gate.proj.weight)
    torch.nn.init.zeros_(m.gate.proj.bias)
    y = FeatureMap(torch.randn(8, 7, 7, dtype=torch.float64), 5)
    out = prefuse([y], 6, m)
    assert torch.allclose(out.data, 0.5 * m.align.conv(y.data[None])[0], atol=1e-12)
    assert out.source_timestamp == 6


def test_prefuse_two_identical_frames_without_gate(tiny_config):
    cfg, m = _pre(tiny_config, use_tpe=False)
    data = torch.randn(8, 7, 7, dtype=torch.float64)
    out = prefuse([FeatureMap(data, 3), FeatureMap(data, 1)], 4, m)
    assert torch.allclose(out.data, 2 * m.align.conv(data[None])[0], atol=1e-12)


def test_prefuse_term_by_term(tiny_config):
    cfg, m = _pre(tiny_config)
    with torch.no_grad():
        m.align.offset.weight.normal_(0, 0.3)
    ys = [FeatureMap(torch.randn(8, 7, 7, dtype=torch.float64), t) for t in (7, 5)]
    out = prefuse(ys, 9, m).data
    ref = sum(m.align(y.data[None])[0] * temporal_gate(9 - y.source_timestamp, m.gate)[:, None, None] for y in ys)
    assert torch.max((out - ref).abs() / ref.abs().clamp_min(1e-12)) < 1e-6


def test_prefuse_errors(tiny_config):
    cfg, m = _pre(tiny_config)
    with pytest.raises(ValidationError):
        prefuse([], 3, m)
    with pytest.raises(OrderingError):
        prefuse([FeatureMap(torch.zeros(8, 7, 7, dtype=torch.float64), 3)], 3, m)


def test_prefuse_shape_independent_of_count(tiny_config):
    cfg, m = _pre(tiny_config)
    shapes = {tuple(prefuse([FeatureMap(torch.randn(8, 7, 7, dtype=torch.float64), t) for t in range(n)], 10, m).data.shape)
              for n in (1, 2, 4)}
    assert shapes == {(8, 7, 7)}


def test_ablation_switches_only_touch_their_part(tiny_config):
    torch.manual_seed(0)
    full = PreFusion(tiny_config)
    torch.manual_seed(0)
    no_gate = PreFusion(tiny_config.replace(use_tpe=False))
    assert no_gate.gate is None
    assert torch.equal(no_gate.gates(torch.tensor([[1, 2]]), torch.float32), torch.ones(1, 2, 8))
    assert torch.equal(full.align.conv.weight, no_gate.align.conv.weight)
    plain = PreFusion(tiny_config.replace(use_dcn=False))
    assert isinstance(plain.align, torch.nn.Conv2d)
    assert sum(p.numel() for p in plain.parameters()) < sum(p.numel() for p in full.parameters())


def test_prefuse_gradients_match_finite_differences(tiny_config):
    cfg, m = _pre(tiny_config)
    with torch.no_grad():
        m.align.offset.weight.normal_(0, 0.05)
        m.align.offset.bias.uniform_(0.1, 0.4)  # keep sample points off the integer grid
    prev = torch.randn(1, 2, 8, 4, 4, dtype=torch.float64, requires_grad=True)
    deltas = torch.tensor([[1, 3]])
    params = [prev] + list(m.parameters())
    assert torch.autograd.gradcheck(lambda x, *ps: m(x, deltas).sum(), (prev,) , eps=1e-6, atol=1e-6, rtol=1e-3)
    # Parameter gradients: compare autograd against central differences directly.
    m.zero_grad()
    m(prev, deltas).sum().backward()
    for p in m.parameters():
        analytic = p.grad.detach().clone()
        numeric = torch.zeros_like(p)
        flat, nflat = p.data.view(-1), numeric.view(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            with torch.no_grad():
                flat[i] = old + 1e-6
                fp = m(prev, deltas).sum().item()
                flat[i] = old - 1e-6
                fm = m(prev, deltas).sum().item()
                flat[i] = old
            nflat[i] = (fp - fm) / 2e-6
        rel = (analytic - numeric).norm() / max(numeric.norm().item(), 1e-12)
        assert rel < 1e-3
