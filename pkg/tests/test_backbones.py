import dataclasses

import numpy as np
import pytest

from fusionnet import ops
from fusionnet.backbones import VARIANTS, Backbone, BackboneSpec, build_backbone, n_parameters
from fusionnet.gradcheck import model_checks
from fusionnet.nn import Conv2d
from fusionnet.tensor import ShapeError, Tensor

SMALL = dict(channels=(4, 4, 8, 8, 8), gabor={"n_freq": 2, "n_orient": 2, "kernel_size": 5})


def _x(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape))


def test_full_scale_shapes():
    net = build_backbone("CNN5", seed=0)
    net.eval()
    x = _x((4, 3, 256, 256))
    fmaps = net.feature_maps(x)
    assert fmaps.shape == (4, 128, 8, 8)
    feats, logits = net(x)
    assert feats.shape == (4, 128) and logits.shape == (4, 2)


def test_desk_scale_gap_is_identity_on_1x1():
    net = build_backbone("CNN5", channels=(8, 8, 8, 8, 8), seed=1)
    x = _x((2, 3, 32, 32))
    fmaps = net.feature_maps(x)
    assert fmaps.shape[2:] == (1, 1)
    assert np.array_equal(net.features(x).data, fmaps.data[:, :, 0, 0])


@pytest.mark.parametrize("kind", sorted(VARIANTS))
@pytest.mark.parametrize("size", [32, 64])
def test_build_time_shapes_match_runtime(kind, size):
    spec = BackboneSpec(kind=kind, seed=2, **SMALL)
    net = Backbone(spec)
    shapes = spec.stage_shapes(size, size)
    assert shapes[-1] == (size // 32, size // 32)
    assert net.feature_maps(_x((2, 3, size, size))).shape == (2, 8) + shapes[-1]


def test_build_time_shapes_256():
    spec = BackboneSpec(kind="DGCNN")
    assert spec.stage_shapes(256, 256) == [(128, 128), (64, 64), (32, 32), (16, 16), (8, 8)]


def test_indivisible_input_rejected_at_build_time():
    with pytest.raises(ShapeError, match="divisible"):
        BackboneSpec().stage_shapes(48, 48)


def test_alpha_schedule_consumed():
    assert BackboneSpec(kind="DGCNN").alphas == (1.0, 0.8, 0.6, 0.4, 0.2)
    assert BackboneSpec(kind="MPCNN5").alphas == (1.0, 0.8, 0.6, 0.4, 0.2)
    assert BackboneSpec(kind="CNN5").alphas == (1.0,) * 5


def test_variant_component_toggles():
    on = {k: sum(v.values()) for k, v in VARIANTS.items()}
    assert on == {"CNN5": 0, "MPCNN5": 1, "GCNN5": 1, "DCNN5": 1, "DGCNN": 3}


@pytest.mark.parametrize("k", [3, 5, 7, 9])
def test_gabor_layer_has_160_parameters(k):
    net = build_backbone("DGCNN", gabor={"n_freq": 5, "n_orient": 8, "kernel_size": k})
    assert n_parameters(net.gabor) == 160
    assert net.norms[0].weight.size == 40
    assert net.convs[0].weight.shape[1] == 40


def test_forward_bit_identical():
    a = build_backbone("DGCNN", seed=3, **SMALL)
    b = build_backbone("DGCNN", seed=3, **SMALL)
    x = _x((2, 3, 32, 32), seed=4)
    fa, la = a(x)
    fb, lb = b(x)
    assert np.array_equal(fa.data, fb.data) and np.array_equal(la.data, lb.data)


def test_dgcnn_reduces_to_cnn5_plus_base_branch():
    """Gabor swapped for a fixed conv, alpha forced to 1 and auxiliary dilated
    branches zeroed: the DGCNN runs exactly the CNN5 op sequence followed by
    the base-rate conv -> ReLU."""
    dg = build_backbone("DGCNN", seed=5, **SMALL)
    spec = BackboneSpec(kind="CNN5", seed=6, channels=(4, 4, 8, 8, 8))
    cnn = Backbone(spec)
    dg.gabor = Conv2d(3, 4, 3, rng=np.random.default_rng(7))
    dg.spec = dataclasses.replace(dg.spec, kind="GCNN5")  # keeps the first-layer slot, drops MixPool
    assert dg.spec.alphas == (1.0,) * 5
    cnn.convs[0].weight.data[:] = dg.gabor.weight.data
    cnn.convs[0].bias.data[:] = dg.gabor.bias.data
    for src, dst in zip(dg.convs, cnn.convs[1:]):
        dst.weight.data[:] = src.weight.data
        dst.bias.data[:] = src.bias.data
    for br in dg.dilated.branches[1:]:
        br.weight.data[:] = 0.0
        br.bias.data[:] = 0.0
    x = _x((3, 3, 32, 32), seed=8)
    base = dg.dilated.branches[0]
    expect = ops.relu(base(cnn.feature_maps(x))).data
    assert np.array_equal(dg.feature_maps(x).data, expect)


def test_dcnn5_with_zero_aux_matches_cnn5_composition():
    d = build_backbone("DCNN5", seed=9, **SMALL)
    c = build_backbone("CNN5", seed=9, **SMALL)
    for br in d.dilated.branches[1:]:
        br.weight.data[:] = 0.0
    x = _x((2, 3, 32, 32), seed=10)
    expect = ops.relu(d.dilated.branches[0](c.feature_maps(x))).data
    assert np.array_equal(d.feature_maps(x).data, expect)


@pytest.mark.parametrize("kind", sorted(VARIANTS))
def test_no_dead_parameters(kind):
    net = build_backbone(kind, seed=11, **SMALL)
    x = _x((4, 3, 32, 32), seed=12)
    loss = ops.weighted_cross_entropy(net(x)[1], [0, 1, 1, 0], [3.0, 1.0])
    loss.backward()
    for name, p in net.named_parameters():
        assert p.grad is not None and np.any(p.grad != 0), name


def test_wrong_input_channels_rejected():
    with pytest.raises(ShapeError):
        build_backbone("CNN5", **SMALL).feature_maps(_x((1, 2, 32, 32)))


def test_spec_round_trip_and_strictness():
    spec = BackboneSpec(kind="GCNN5", seed=4, **SMALL)
    again = BackboneSpec.from_dict(spec.to_dict())
    assert again.to_dict() == spec.to_dict()
    with pytest.raises(ValueError):
        BackboneSpec.from_dict({**spec.to_dict(), "colour": "red"})
    with pytest.raises(ValueError):
        BackboneSpec(kind="VGG")
    with pytest.raises(ValueError):
        BackboneSpec(channels=(8, 8, 8))


def test_headless_backbone_returns_no_logits():
    net = build_backbone("CNN5", with_head=False, **SMALL)
    feats, logits = net(_x((2, 3, 32, 32)))
    assert logits is None and feats.shape == (2, 8)


def test_tiny_dgcnn_gradcheck():
    res = model_checks(seed=0)[0]
    assert res.passed, res.line()
