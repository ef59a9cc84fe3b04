"""Convolutional encoder/decoder pieces of the U-shaped network."""

from __future__ import annotations

import numpy as np

from scaleformer.autodiff import Tensor, concat, ops
from scaleformer.errors import ConfigError, ShapeError
from scaleformer.nn import BatchNorm2d, Conv2d, ConvBNReLU, Module, ModuleList


class ResidualBlock(Module):
    """Basic ResNet block: ReLU(BN(conv(ReLU(BN(conv(x))))) + shortcut(x))."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv2d(in_channels, out_channels, 3, rng, bias=False)
        self.bn1 = BatchNorm2d(out_channels)
        self.conv2 = Conv2d(out_channels, out_channels, 3, rng, bias=False)
        self.bn2 = BatchNorm2d(out_channels)
        if in_channels != out_channels:
            self.proj = Conv2d(in_channels, out_channels, 1, rng, bias=False)
            self.proj_bn = BatchNorm2d(out_channels)
        else:
            self.proj = None

    def shortcut(self, x: Tensor) -> Tensor:
        if self.proj is None:
            return x
        return self.proj_bn(self.proj(x))

    def forward(self, x: Tensor) -> Tensor:
        y = ops.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return ops.relu(y + self.shortcut(x))


class EncoderStage(Module):
    """Stride-2 conv-BN-ReLU downsampling followed by residual blocks."""

    def __init__(self, in_channels: int, out_channels: int, blocks: int, rng: np.random.Generator):
        super().__init__()
        if blocks < 1:
            raise ConfigError("an encoder stage needs at least one residual block")
        self.down = ConvBNReLU(in_channels, in_channels, rng, stride=2)
        self.blocks = ModuleList(
            ResidualBlock(in_channels if i == 0 else out_channels, out_channels, rng) for i in range(blocks)
        )

    def forward(self, x: Tensor) -> Tensor:
        H, W = x.shape[2:]
        if H < 2 or W < 2 or H % 2 or W % 2:
            raise ConfigError(f"cannot halve a {H}x{W} feature map")
        x = self.down(x)
        for block in self.blocks:
            x = block(x)
        return x


class PatchEmbedDown(Module):
    """Stride-2 3x3 conv + BN + ReLU between consecutive transformer stages."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 3, rng, stride=2, bias=False)
        self.bn = BatchNorm2d(out_channels)

    def forward(self, x: Tensor) -> Tensor:
        H, W = x.shape[2:]
        if H % 2 or W % 2:
            raise ConfigError(f"patch embedding needs even spatial size, got {H}x{W}")
        return ops.relu(self.bn(self.conv(x)))


class DecoderStage(Module):
    """Nearest x2 upsample, concat the skip feature, two conv-BN-ReLU layers."""

    def __init__(self, deep_channels: int, skip_channels: int, out_channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = ConvBNReLU(deep_channels + skip_channels, out_channels, rng)
        self.conv2 = ConvBNReLU(out_channels, out_channels, rng)

    def forward(self, deep: Tensor, skip: Tensor) -> Tensor:
        if skip.shape[0] != deep.shape[0] or skip.shape[2:] != (2 * deep.shape[2], 2 * deep.shape[3]):
            raise ShapeError(f"skip {skip.shape} is not twice the spatial size of {deep.shape}")
        x = concat([ops.upsample_nearest2x(deep), skip], axis=1)
        return self.conv2(self.conv1(x))


class SegmentationHead(Module):
    def __init__(self, in_channels: int, num_classes: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(in_channels, num_classes, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)
