"""Per-stage transformer branch coupled to the CNN encoder.

The first active stage transforms its CNN feature directly. Every later stage
concatenates its CNN feature with the patch-embedded (stride-2) output of the
previous transformer stage, restores the stage width with a 1x1 conv, and
transforms the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scaleformer.attention import AttentionVariant, EnhancedMLP, MsaParams, build_msa
from scaleformer.autodiff import Tensor, concat
from scaleformer.backbone import PatchEmbedDown
from scaleformer.errors import ConfigError, ShapeError
from scaleformer.nn import Conv2d, LayerNorm, Module, ModuleList

INPUT_MODES = ("both", "cnn", "pretrans")


@dataclass
class IntraScaleConfig:
    active_stages: list[int] = field(default_factory=lambda: [3, 4, 5, 6])
    heads: int = 4
    depth: int = 1
    mlp_ratio: float = 4.0
    dw_kernel: int = 3
    variant: str = "dualaxis"
    reduction_ratio: int = 2
    # "cnn": CNN feature only; "pretrans": previous transformer only.
    input_mode: str = "both"

    def validate(self, deepest_stage: int) -> None:
        stages = list(self.active_stages)
        if not stages:
            return
        if stages != list(range(stages[0], stages[0] + len(stages))):
            raise ConfigError(f"intra-scale stages must be contiguous and ascending, got {stages}")
        if stages[-1] != deepest_stage:
            raise ConfigError(f"intra-scale stages must end at the deepest stage {deepest_stage}, got {stages}")
        if stages[0] < 2:
            raise ConfigError("stage 1 (the stem) cannot carry an intra-scale transformer")
        if self.depth < 1:
            raise ConfigError("intra-scale depth must be >= 1")
        if self.input_mode not in INPUT_MODES:
            raise ConfigError(f"input_mode must be one of {INPUT_MODES}, got {self.input_mode!r}")
        AttentionVariant.parse(self.variant)


class TransformerBlock(Module):
    """Pre-norm residual block: x + MSA(LN(x)), then + EnhancedMLP(LN(x))."""

    def __init__(self, params: MsaParams, mlp_ratio: float, rng: np.random.Generator):
        super().__init__()
        c = params.channels
        self.norm1 = LayerNorm(c, axis=1)
        self.attn = build_msa(params, rng)
        self.norm2 = LayerNorm(c, axis=1)
        self.mlp = EnhancedMLP(c, mlp_ratio, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class TransformerStack(Module):
    def __init__(self, params: MsaParams, depth: int, mlp_ratio: float, rng: np.random.Generator):
        super().__init__()
        self.blocks = ModuleList(TransformerBlock(params, mlp_ratio, rng) for _ in range(depth))

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class IntraScaleStage(Module):
    def __init__(self, width: int, prev_width: int | None, cfg: IntraScaleConfig, rng: np.random.Generator):
        super().__init__()
        self.first = prev_width is None
        self.mode = cfg.input_mode
        if not self.first and self.mode != "cnn":
            self.down = PatchEmbedDown(prev_width, width, rng)
        if not self.first and self.mode == "both":
            self.fuse = Conv2d(2 * width, width, 1, rng)
        params = MsaParams(width, cfg.heads, cfg.variant, cfg.reduction_ratio, cfg.dw_kernel)
        self.trans = TransformerStack(params, cfg.depth, cfg.mlp_ratio, rng)

    def forward(self, x_cnn: Tensor, prev: Tensor | None) -> Tensor:
        if self.first or self.mode == "cnn":
            return self.trans(x_cnn)
        embedded = self.down(prev)
        if self.mode == "pretrans":
            return self.trans(embedded)
        if embedded.shape != x_cnn.shape:
            raise ShapeError(f"CNN feature {x_cnn.shape} and embedded transformer feature {embedded.shape} disagree")
        return self.trans(self.fuse(concat([x_cnn, embedded], axis=1)))


class IntraScaleBranch(Module):
    def __init__(self, cfg: IntraScaleConfig, widths: dict[int, int], rng: np.random.Generator):
        super().__init__()
        cfg.validate(max(widths))
        self.active_stages = list(cfg.active_stages)
        self.stages = ModuleList()
        prev = None
        for s in self.active_stages:
            self.stages.append(IntraScaleStage(widths[s], prev, cfg, rng))
            prev = widths[s]

    def forward(self, cnn_features: dict[int, Tensor]) -> list[Tensor]:
        outputs: list[Tensor] = []
        prev = None
        for s, stage in zip(self.active_stages, self.stages):
            prev = stage(cnn_features[s], prev)
            outputs.append(prev)
        return outputs

