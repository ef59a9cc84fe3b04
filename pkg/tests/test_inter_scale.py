import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scaleformer import inter_scale as inter
from scaleformer.autodiff import Tensor, precision
from scaleformer.autodiff.gradcheck import check_coordinates
from scaleformer.errors import ConfigError, ContractError, ShapeError

TOL = 1e-4


def ladder_features(batch=2, channels=3, coarse=(2, 2), scales=4, seed=0):
    rng = np.random.default_rng(seed)
    gh, gw = coarse
    return [
        Tensor(rng.standard_normal((batch, channels, gh * 2**k, gw * 2**k)), requires_grad=True)
        for k in reversed(range(scales))
    ]


def make_block(widths, channels=8, heads=2, seed=0):
    with precision(np.float64):
        return inter.InterScaleBlock(
            inter.InterScaleConfig(stages=list(range(3, 3 + len(widths))), channels=channels, heads=heads, mlp_ratio=2.0),
            widths,
            np.random.default_rng(seed),
        )


def test_sequence_length_four_scales():
    assert inter.sequence_length(4) == 85
    feats = ladder_features()
    assert inter.fuse_all(feats).shape == (2 * 4, 85, 3)
    assert inter.scale_fusion(inter.patch_match(feats)[0]).shape == (2, 85, 3)


def test_patch_match_geometry():
    feats = ladder_features(batch=1, coarse=(2, 3), scales=3)
    groups = inter.patch_match(feats)
    assert len(groups) == 6
    g = groups[4]  # row 1, col 1
    assert g.position == (1, 1)
    assert [p.shape[2:] for p in g.patches] == [(4, 4), (2, 2), (1, 1)]
    np.testing.assert_array_equal(g.patches[0].data, feats[0].data[:, :, 4:8, 4:8])
    np.testing.assert_array_equal(g.patches[2].data, feats[2].data[:, :, 1:2, 1:2])


def test_fusion_division_roundtrip_bit_exact():
    feats = ladder_features(coarse=(2, 3))
    _, sides = inter.ladder(feats)
    for g in inter.patch_match(feats):
        back = inter.scale_division(inter.scale_fusion(g), sides)
        for a, b in zip(back, g.patches):
            assert np.array_equal(a.data, b.data)


def test_match_revert_roundtrip_bit_exact():
    feats = ladder_features(coarse=(3, 2), scales=3)
    for a, b in zip(inter.patch_revert(inter.patch_match(feats)), feats):
        assert np.array_equal(a.data, b.data)


def test_batched_roundtrip_bit_exact():
    feats = ladder_features(coarse=(2, 3))
    grid, sides = inter.ladder(feats)
    for a, b in zip(inter.divide_all(inter.fuse_all(feats), 2, grid, sides), feats):
        assert np.array_equal(a.data, b.data)


def test_batched_path_matches_per_group_path():
    feats = ladder_features(coarse=(2, 2), seed=3)
    seq = inter.fuse_all(feats).data
    for g in inter.patch_match(feats):
        fused = inter.scale_fusion(g).data
        for b in range(2):
            assert np.array_equal(seq[b * 4 + g.index], fused[b])


def test_token_order_fine_to_coarse_row_major():
    feats = ladder_features(batch=1, channels=1, coarse=(1, 1), scales=2)
    seq = inter.fuse_all(feats).data[0, :, 0]
    np.testing.assert_array_equal(seq[:4], feats[0].data[0, 0].ravel())
    assert seq[4] == feats[1].data[0, 0, 0, 0]


def test_division_rejects_wrong_length():
    with pytest.raises(ContractError):
        inter.scale_division(Tensor(np.zeros((1, 84, 3))), [8, 4, 2, 1])


def test_revert_rejects_incomplete_partition():
    groups = inter.patch_match(ladder_features())
    with pytest.raises(ContractError):
        inter.patch_revert(groups[:3])
    with pytest.raises(ContractError):
        inter.patch_revert(groups + groups[:1])


def test_ladder_rejects_non_dyadic():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        inter.ladder([Tensor(rng.standard_normal((1, 2, 8, 8))), Tensor(rng.standard_normal((1, 2, 3, 3)))])
    with pytest.raises(ShapeError):
        inter.ladder([Tensor(rng.standard_normal((1, 2, 4, 4))), Tensor(rng.standard_normal((1, 3, 2, 2)))])


def test_identity_transform_pipeline_is_identity():
    feats = ladder_features(coarse=(2, 2))
    grid, sides = inter.ladder(feats)
    out = inter.divide_all(inter.fuse_all(feats), 2, grid, sides)
    for a, b in zip(out, feats):
        assert np.abs(a.data - b.data).max() <= 1e-6


def identity_weights(block):
    """1x1 maps to the identity, attention/MLP output layers to zero."""
    for conv in list(block.to_common) + list(block.from_common):
        w = conv.weight.data
        w[:] = 0
        w[np.arange(w.shape[0]), np.arange(w.shape[0]), 0, 0] = 1
        conv.bias.data[:] = 0
    for t in block.blocks:
        for lin in (t.attn.o, t.mlp.fc2):
            lin.weight.data[:] = 0
            lin.bias.data[:] = 0


def test_identity_weight_block_is_identity():
    block = make_block([8, 8, 8, 8])
    identity_weights(block)
    feats = ladder_features(channels=8, seed=4)
    for a, b in zip(block(feats), feats):
        assert np.abs(a.data - b.data).max() <= 1e-6


def test_block_matches_per_group_reference():
    block = make_block([4, 6, 8, 8], seed=2)
    rng = np.random.default_rng(5)
    feats = [Tensor(rng.standard_normal((2, c, 2 * 2**k, 2 * 2**k))) for c, k in zip([4, 6, 8, 8], [3, 2, 1, 0])]
    got = block(feats)
    common = inter.regularize_channels(feats, block.to_common)
    groups = inter.patch_match(common)
    _, sides = inter.ladder(common)
    for g in groups:
        g.patches = inter.scale_division(block.transform(inter.scale_fusion(g)), sides)
    ref = inter.regularize_channels(inter.patch_revert(groups), block.from_common)
    for a, b in zip(got, ref):
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_cross_group_independence(seed):
    block = make_block([4, 4, 4, 4], channels=4, seed=1)
    feats = ladder_features(batch=1, channels=4, seed=seed)
    base = [f.data.copy() for f in block(feats)]
    rng = np.random.default_rng(seed + 1)
    gy, gx = (int(v) for v in rng.integers(0, 2, size=2))
    sides = [8, 4, 2, 1]
    for f, s in zip(feats, sides):
        f.data[:, :, gy * s : (gy + 1) * s, gx * s : (gx + 1) * s] += rng.standard_normal((1, 4, s, s))
    out = block(feats)
    for o, b, s in zip(out, base, sides):
        changed = np.abs(o.data - b) > 0
        inside = np.zeros_like(changed)
        inside[:, :, gy * s : (gy + 1) * s, gx * s : (gx + 1) * s] = True
        assert not (changed & ~inside).any()
        assert changed[inside].any()


def test_inter_transformer_permutation_equivariance():
    with precision(np.float64):
        t = inter.InterScaleTransformer(8, 2, 2.0, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 85, 8))
    out = t(Tensor(x)).data
    worst = 0.0
    for _ in range(20):
        perm = rng.permutation(85)
        worst = max(worst, np.abs(t(Tensor(x[:, perm])).data - out[:, perm]).max())
    assert worst < 1e-5


def test_config_validation():
    inter.InterScaleConfig([4, 5, 6]).validate([1, 2, 3, 4, 5, 6], [3, 4, 5, 6])
    with pytest.raises(ConfigError):
        inter.InterScaleConfig([3, 4, 5]).validate([1, 2, 3, 4, 5, 6], [3, 4, 5, 6])
    with pytest.raises(ConfigError):
        inter.InterScaleConfig([3, 4, 5, 6]).validate([1, 2, 3, 4, 5, 6], [4, 5, 6])
    with pytest.raises(ConfigError):
        inter.InterScaleConfig([4, 6]).validate([1, 2, 3, 4, 5, 6], [3, 4, 5, 6])
    with pytest.raises(ConfigError):
        inter.InterScaleConfig(channels=30, heads=4).validate([1, 2, 3, 4, 5, 6], [3, 4, 5, 6])


def test_block_rejects_wrong_scale_count():
    block = make_block([4, 4])
    with pytest.raises(ConfigError):
        block(ladder_features(channels=4, scales=3))


def weighted(outs, seed=99):
    rng = np.random.default_rng(seed)
    total = None
    for o in outs:
        term = (o * Tensor(rng.standard_normal(o.shape))).sum()
        total = term if total is None else total + term
    return total


def test_inter_transformer_gradients():
    with precision(np.float64):
        t = inter.InterScaleTransformer(4, 2, 2.0, np.random.default_rng(3))
    x = Tensor(np.random.default_rng(4).standard_normal((2, 21, 4)), requires_grad=True)
    errors = check_coordinates(lambda: weighted([t(x)]), {"x": x, **dict(t.named_parameters())}, max_coords=10)
    assert max(errors.values()) < TOL, errors


def test_inter_block_gradients():
    block = make_block([3, 4, 4], channels=4, seed=5)
    rng = np.random.default_rng(6)
    feats = [Tensor(rng.standard_normal((1, c, s, s)), requires_grad=True) for c, s in zip([3, 4, 4], [8, 4, 2])]
    tensors = {f"f{i}": f for i, f in enumerate(feats)}
    tensors.update(dict(block.named_parameters()))
    errors = check_coordinates(lambda: weighted(block(feats)), tensors, max_coords=8)
    assert max(errors.values()) < TOL, errors
