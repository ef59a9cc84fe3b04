import numpy as np
import pytest

from scaleformer.autodiff import Tensor, precision
from scaleformer.autodiff.gradcheck import check_coordinates
from scaleformer.backbone import DecoderStage, EncoderStage, PatchEmbedDown, ResidualBlock, SegmentationHead
from scaleformer.errors import ConfigError, ShapeError
from scaleformer.intra_scale import IntraScaleBranch, IntraScaleConfig, IntraScaleStage, TransformerBlock
from scaleformer.attention import MsaParams

TOL = 1e-4


def rand(shape, seed=0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape), requires_grad=True)


def weighted(out, seed=99):
    return (out * Tensor(np.random.default_rng(seed).standard_normal(out.shape))).sum()


def grad_errors(module, *inputs, max_coords=10):
    tensors = {f"in{i}": x for i, x in enumerate(inputs)}
    tensors.update(dict(module.named_parameters()))
    return check_coordinates(lambda: weighted(module(*inputs)), tensors, max_coords=max_coords)


def rng(seed=0):
    return np.random.default_rng(seed)


# residual blocks -----------------------------------------------------------------------


def test_residual_identity_shortcut():
    with precision(np.float64):
        b = ResidualBlock(4, 4, rng())
    assert b.proj is None
    x = rand((2, 4, 4, 4))
    assert b.shortcut(x) is x
    # Zeroing the last BN scale and shift leaves ReLU(x).
    b.bn2.weight.data[:] = 0
    b.bn2.bias.data[:] = 0
    np.testing.assert_allclose(b(x).data, np.maximum(x.data, 0))


def test_residual_projection_when_widths_differ():
    with precision(np.float64):
        b = ResidualBlock(4, 6, rng())
    assert b.proj.weight.shape == (6, 4, 1, 1)
    assert b(rand((2, 4, 4, 4))).shape == (2, 6, 4, 4)


@pytest.mark.parametrize("cin,cout", [(3, 3), (3, 4)])
def test_residual_gradients(cin, cout):
    with precision(np.float64):
        b = ResidualBlock(cin, cout, rng(1))
    errors = grad_errors(b, rand((2, cin, 4, 4), seed=2))
    assert max(errors.values()) < TOL, errors


def test_residual_eval_mode_uses_running_stats():
    with precision(np.float64):
        b = ResidualBlock(3, 3, rng())
    x = rand((4, 3, 4, 4))
    b(x)
    b.eval()
    single = b(Tensor(x.data[:1])).data
    batch = b(x).data[:1]
    np.testing.assert_allclose(single, batch, atol=1e-12)


# encoder / decoder -----------------------------------------------------------------------


def test_encoder_stage_halves():
    with precision(np.float64):
        s = EncoderStage(4, 8, 2, rng())
    assert s(rand((1, 4, 8, 8))).shape == (1, 8, 4, 4)
    with pytest.raises(ConfigError):
        s(rand((1, 4, 5, 5)))
    with pytest.raises(ConfigError):
        EncoderStage(4, 8, 0, rng())


def test_patch_embed_down():
    with precision(np.float64):
        d = PatchEmbedDown(4, 8, rng())
    y = d(rand((2, 4, 8, 8)))
    assert y.shape == (2, 8, 4, 4)
    assert (y.data >= 0).all()
    with pytest.raises(ConfigError):
        d(rand((2, 4, 7, 7)))


def test_patch_embed_gradients():
    with precision(np.float64):
        d = PatchEmbedDown(3, 4, rng(3))
    errors = grad_errors(d, rand((2, 3, 4, 4), seed=4))
    assert max(errors.values()) < TOL, errors


def test_decoder_stage_shapes_and_errors():
    with precision(np.float64):
        dec = DecoderStage(8, 4, 6, rng())
    assert dec(rand((2, 8, 2, 2)), rand((2, 4, 4, 4))).shape == (2, 6, 4, 4)
    with pytest.raises(ShapeError):
        dec(rand((2, 8, 2, 2)), rand((2, 4, 6, 6)))


def test_decoder_gradients():
    with precision(np.float64):
        dec = DecoderStage(3, 2, 3, rng(5))
    errors = grad_errors(dec, rand((2, 3, 2, 2), seed=6), rand((2, 2, 4, 4), seed=7))
    assert max(errors.values()) < TOL, errors


def test_head_is_pointwise():
    with precision(np.float64):
        h = SegmentationHead(4, 3, rng())
    x = rand((1, 4, 3, 3))
    y = h(x).data
    ref = np.einsum("oc,chw->ohw", h.conv.weight.data[:, :, 0, 0], x.data[0]) + h.conv.bias.data[:, None, None]
    np.testing.assert_allclose(y[0], ref, atol=1e-12)


# intra-scale ------------------------------------------------------------------------------


def test_intra_config_validation():
    IntraScaleConfig([3, 4, 5]).validate(5)
    for stages, deepest in [([3, 5], 5), ([3, 4], 5), ([1, 2], 2), ([4, 3], 4)]:
        with pytest.raises(ConfigError):
            IntraScaleConfig(stages).validate(deepest)
    with pytest.raises(ConfigError):
        IntraScaleConfig(input_mode="both_ways").validate(6)
    with pytest.raises(ConfigError):
        IntraScaleConfig(variant="local").validate(6)


def test_intra_branch_shapes():
    cfg = IntraScaleConfig([2, 3, 4], heads=2, mlp_ratio=2.0)
    widths = {1: 4, 2: 4, 3: 8, 4: 8}
    with precision(np.float64):
        br = IntraScaleBranch(cfg, widths, rng())
    feats = {1: rand((2, 4, 16, 16)), 2: rand((2, 4, 8, 8)), 3: rand((2, 8, 4, 4)), 4: rand((2, 8, 2, 2))}
    outs = br(feats)
    assert [o.shape for o in outs] == [(2, 4, 8, 8), (2, 8, 4, 4), (2, 8, 2, 2)]
    assert not hasattr(br.stages[0], "down")


@pytest.mark.parametrize("mode", ["cnn", "pretrans"])
def test_intra_input_modes(mode):
    cfg = IntraScaleConfig([2, 3], heads=2, mlp_ratio=2.0, input_mode=mode)
    with precision(np.float64):
        br = IntraScaleBranch(cfg, {1: 4, 2: 4, 3: 8}, rng())
    feats = {2: rand((1, 4, 4, 4)), 3: rand((1, 8, 2, 2), seed=1)}
    base = br(feats)[1].data
    # "cnn" ignores the previous transformer output; "pretrans" ignores the CNN feature.
    if mode == "cnn":
        feats[2] = rand((1, 4, 4, 4), seed=5)
    else:
        feats[3] = rand((1, 8, 2, 2), seed=5)
    np.testing.assert_allclose(br(feats)[1].data, base, atol=1e-12)


def test_intra_stage_uses_both_inputs():
    cfg = IntraScaleConfig([2, 3], heads=2, mlp_ratio=2.0)
    with precision(np.float64):
        stage = IntraScaleStage(8, 4, cfg, rng())
    x_cnn, prev = rand((1, 8, 2, 2)), rand((1, 4, 4, 4), seed=1)
    a = stage(x_cnn, prev).data
    assert not np.allclose(stage(rand((1, 8, 2, 2), seed=2), prev).data, a)
    assert not np.allclose(stage(x_cnn, rand((1, 4, 4, 4), seed=3)).data, a)
    with pytest.raises(ShapeError):
        stage(rand((1, 8, 4, 4)), prev)


@pytest.mark.parametrize("variant", ["dualaxis", "original", "spatial_reduction", "axial"])
def test_transformer_block_gradients(variant):
    with precision(np.float64):
        blk = TransformerBlock(MsaParams(4, 2, variant, 2), 2.0, rng(8))
    errors = grad_errors(blk, rand((2, 4, 4, 4), seed=9), max_coords=8)
    assert max(errors.values()) < TOL, errors


def test_intra_stage_gradients():
    cfg = IntraScaleConfig([2, 3], heads=2, mlp_ratio=2.0)
    with precision(np.float64):
        stage = IntraScaleStage(4, 4, cfg, rng(10))
    errors = grad_errors(stage, rand((2, 4, 4, 4), seed=11), rand((2, 4, 8, 8), seed=12), max_coords=8)
    assert max(errors.values()) < TOL, errors
