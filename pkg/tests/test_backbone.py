import numpy as np
import pytest
import torch

from farseg.backbone import FPN, LEVELS, TinyResNet, build_backbone, extract_features, scene_pool
from farseg.errors import ConfigError, DimensionError


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


def test_feature_sizes_896():
    bb = TinyResNet().eval()
    with torch.no_grad():
        feats = extract_features(bb, torch.zeros(1, 3, 896, 896))
    assert [tuple(feats[i].shape[-2:]) for i in LEVELS] == [(224, 224), (112, 112), (56, 56), (28, 28)]


def test_minimal_input_gives_1x1_c5():
    feats = extract_features(TinyResNet().eval(), torch.randn(2, 3, 32, 32))
    assert feats[5].shape[-2:] == (1, 1)


def test_rectangular_input_c3_shape():
    feats = extract_features(TinyResNet((16, 32, 64, 128)), torch.randn(2, 3, 64, 96))
    assert feats[3].shape == (2, 32, 8, 12)
    widths = [feats[i].shape[1] for i in LEVELS]
    assert widths == sorted(widths)


@pytest.mark.parametrize("shape,axis", [((1, 3, 48, 64), "height"), ((1, 3, 64, 80), "width")])
def test_rejects_non_divisible(shape, axis):
    with pytest.raises(DimensionError, match=axis):
        extract_features(TinyResNet(), torch.zeros(shape))


def test_unknown_preset():
    with pytest.raises(ConfigError):
        build_backbone("xception")


def test_resnet50_channels():
    bb = build_backbone("resnet50").eval()
    with torch.no_grad():
        feats = bb(torch.zeros(1, 3, 64, 64))
    assert [feats[i].shape[1] for i in LEVELS] == [256, 512, 1024, 2048]
    assert [feats[i].shape[-1] for i in LEVELS] == [16, 8, 4, 2]


def _identity_fpn(d):
    fpn = FPN([d] * 4, d)
    with torch.no_grad():
        for conv in fpn.lateral.values():
            conv.weight.copy_(torch.eye(d)[:, :, None, None])
            conv.bias.zero_()
    return fpn


def _features(d=4, size=8, fill=None):
    return {i: (torch.randn(1, d, size >> (i - 2), size >> (i - 2)) if fill is None
                else torch.full((1, d, size >> (i - 2), size >> (i - 2)), fill)) for i in LEVELS}


def test_fpn_constant_propagates_through_zero_lateral():
    fpn = _identity_fpn(4)
    feats = _features(fill=0.0)
    feats[5] = torch.full_like(feats[5], 2.5)
    with torch.no_grad():
        p = fpn(feats)
    assert torch.equal(p[4], torch.full_like(p[4], 2.5))


def test_fpn_zero_in_zero_out():
    fpn = FPN([8, 16, 32, 64], 16)
    with torch.no_grad():
        for conv in fpn.lateral.values():
            conv.bias.zero_()
        p = fpn({i: torch.zeros(1, c, 16 >> (i - 2), 16 >> (i - 2)) for i, c in zip(LEVELS, [8, 16, 32, 64])})
    assert all(torch.count_nonzero(p[i]) == 0 for i in LEVELS)


def test_fpn_p2_matches_pixel_loop():
    fpn = FPN([3, 5, 6, 7], 4)
    chans = dict(zip(LEVELS, [3, 5, 6, 7]))
    feats = {i: torch.randn(1, chans[i], 16 >> (i - 2), 16 >> (i - 2)) for i in LEVELS}
    with torch.no_grad():
        p = fpn(feats)
    w = fpn.lateral["2"].weight.detach()[:, :, 0, 0].numpy()
    b = fpn.lateral["2"].bias.detach().numpy()
    c2, p3 = feats[2][0].numpy(), p[3][0].numpy()
    expected = np.zeros((4, 16, 16))
    for o in range(4):
        for y in range(16):
            for x in range(16):
                acc = b[o]
                for c in range(3):
                    acc += w[o, c] * c2[c, y, x]
                expected[o, y, x] = acc + p3[o, y // 2, x // 2]
    np.testing.assert_allclose(p[2][0].numpy(), expected, atol=1e-5)


def test_fpn_output_channels_and_strides():
    bb = TinyResNet()
    fpn = FPN(bb.channels, 24)
    p = fpn(bb(torch.randn(1, 3, 64, 96)))
    for i in LEVELS:
        assert p[i].shape == (1, 24, 64 // 2 ** i, 96 // 2 ** i)


def test_topdown_locality():
    fpn = FPN([4] * 4, 4)
    feats = _features(size=16)
    with torch.no_grad():
        base = fpn(feats)
        bumped = dict(feats)
        bumped[5] = feats[5] + 0.1
        changed5 = fpn(bumped)
        bumped = dict(feats)
        bumped[2] = feats[2] + 0.1
        changed2 = fpn(bumped)
    assert all(not torch.allclose(base[i], changed5[i]) for i in LEVELS)
    assert not torch.allclose(base[2], changed2[2])
    assert all(torch.equal(base[i], changed2[i]) for i in (3, 4, 5))


def test_scene_pool_values():
    assert torch.equal(scene_pool(torch.full((1, 3, 2, 2), 3.5)), torch.full((1, 3), 3.5))
    c5 = torch.tensor([[[[1.0, 2.0], [3.0, 4.0]]]])
    assert scene_pool(c5).item() == 2.5


def test_scene_pool_per_image_and_permutation_invariant():
    c5 = torch.randn(2, 6, 3, 3, dtype=torch.float64)
    pooled = scene_pool(c5)
    assert not torch.allclose(pooled[0], pooled[1])
    torch.testing.assert_close(pooled[1], scene_pool(c5[1:])[0])
    perm = torch.randperm(9)
    shuffled = c5.flatten(2)[:, :, perm].reshape(c5.shape)
    torch.testing.assert_close(scene_pool(shuffled), pooled)
