"""Full network: CNN encoder, intra-scale branch, inter-scale block, decoder."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from scaleformer.autodiff import Tensor, concat, default_dtype
from scaleformer.backbone import DecoderStage, EncoderStage, SegmentationHead
from scaleformer.errors import ConfigError, ShapeError
from scaleformer.inter_scale import InterScaleBlock, InterScaleConfig
from scaleformer.intra_scale import IntraScaleBranch, IntraScaleConfig
from scaleformer.nn import ConvBNReLU, Module, ModuleList


@dataclass
class ModelConfig:
    input_size: int = 64
    in_channels: int = 1
    num_classes: int = 3
    stem_channels: int = 16
    # Widths and residual block counts for encoder stages 2..S.
    channels: list[int] = field(default_factory=lambda: [16, 16, 32, 64, 128])
    blocks: list[int] = field(default_factory=lambda: [2, 2, 2, 2, 2])
    intra_stages: list[int] = field(default_factory=lambda: [3, 4, 5, 6])
    intra_heads: int = 4
    intra_depth: int = 1
    intra_mlp_ratio: float = 4.0
    intra_variant: str = "dualaxis"
    intra_input: str = "both"
    dw_kernel: int = 3
    sr_ratio: int = 2
    use_inter: bool = True
    inter_stages: list[int] = field(default_factory=lambda: [3, 4, 5, 6])
    inter_channels: int = 32
    inter_heads: int = 4
    inter_mlp_ratio: float = 4.0
    inter_depth: int = 1
    seed: int = 0
    precision: str = "float32"

    @property
    def num_stages(self) -> int:
        return len(self.channels) + 1

    def stage_size(self, stage: int) -> int:
        return self.input_size >> (stage - 1)

    def stage_width(self, stage: int) -> int:
        return self.stem_channels if stage == 1 else self.channels[stage - 2]

    def intra_config(self) -> IntraScaleConfig:
        return IntraScaleConfig(
            active_stages=list(self.intra_stages),
            heads=self.intra_heads,
            depth=self.intra_depth,
            mlp_ratio=self.intra_mlp_ratio,
            dw_kernel=self.dw_kernel,
            variant=self.intra_variant,
            reduction_ratio=self.sr_ratio,
            input_mode=self.intra_input,
        )

    def inter_config(self) -> InterScaleConfig:
        return InterScaleConfig(
            stages=list(self.inter_stages),
            channels=self.inter_channels,
            heads=self.inter_heads,
            mlp_ratio=self.inter_mlp_ratio,
            depth=self.inter_depth,
        )

    def validate(self) -> None:
        n = self.input_size
        if n < 1 or n & (n - 1):
            raise ConfigError(f"input_size must be a power of two, got {n}")
        if len(self.blocks) != len(self.channels):
            raise ConfigError("channels and blocks must list one entry per encoder stage")
        if self.stage_size(self.num_stages) < 2:
            raise ConfigError(
                f"input_size {n} too small for {self.num_stages} stages (deepest map would be under 2x2)"
            )
        if self.num_classes < 1 or self.in_channels < 1:
            raise ConfigError("num_classes and in_channels must be positive")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        self.intra_config().validate(self.num_stages)
        if self.use_inter:
            self.inter_config().validate(list(range(1, self.num_stages + 1)), list(self.intra_stages))
        for s in self.intra_stages:
            if self.stage_width(s) % self.intra_heads:
                raise ConfigError(f"stage {s} width {self.stage_width(s)} not divisible by {self.intra_heads} heads")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown model config keys: {unknown}")
        return cls(**values)


MODEL_PRESETS: dict[str, dict] = {
    "desk": {},
    # Full ResNet-34 widths; stage 2 stands for the stem, hence its single block.
    # 256 rather than 224 keeps the input a power of two.
    "resnet34": {
        "input_size": 256,
        "stem_channels": 64,
        "channels": [64, 64, 128, 256, 512],
        "blocks": [1, 3, 4, 6, 3],
        "inter_channels": 64,
        "intra_heads": 8,
    },
}


class ScaleFormer(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        S = cfg.num_stages
        self.stem = ConvBNReLU(cfg.in_channels, cfg.stem_channels, rng)
        self.encoder = ModuleList(
            EncoderStage(cfg.stage_width(s - 1), cfg.stage_width(s), cfg.blocks[s - 2], rng) for s in range(2, S + 1)
        )
        widths = {s: cfg.stage_width(s) for s in range(1, S + 1)}
        self.intra = IntraScaleBranch(cfg.intra_config(), widths, rng) if cfg.intra_stages else None
        self.inter = (
            InterScaleBlock(cfg.inter_config(), [widths[s] for s in cfg.inter_stages], rng) if cfg.use_inter else None
        )
        transformer = set(cfg.intra_stages)
        skip = {s: widths[s] * (2 if s in transformer else 1) for s in widths}
        self.decoder = ModuleList()
        deep = skip[S]
        for s in range(S - 1, 0, -1):
            self.decoder.append(DecoderStage(deep, skip[s], widths[s], rng))
            deep = widths[s]
        self.head = SegmentationHead(widths[1], cfg.num_classes, rng)
        self.features: dict[str, dict[int, Tensor]] | None = None
        # Parameters are drawn in float64 then cast once, so both precisions share values.
        if np.dtype(cfg.precision) != default_dtype():
            self.astype(cfg.precision)

    def encode(self, x: Tensor) -> dict[int, Tensor]:
        feats = {1: self.stem(x)}
        for s, stage in enumerate(self.encoder, start=2):
            feats[s] = stage(feats[s - 1])
        return feats

    def forward(self, x: Tensor, keep_features: bool = False) -> Tensor:
        cfg = self.cfg
        if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[2:] != (cfg.input_size, cfg.input_size):
            raise ShapeError(
                f"expected input (B, {cfg.in_channels}, {cfg.input_size}, {cfg.input_size}), got {x.shape}"
            )
        cnn = self.encode(x)
        trans: dict[int, Tensor] = {}
        if self.intra is not None:
            trans = dict(zip(cfg.intra_stages, self.intra(cnn)))
        inter: dict[int, Tensor] = {}
        if self.inter is not None:
            inter = dict(zip(cfg.inter_stages, self.inter([trans[s] for s in cfg.inter_stages])))
            trans = {**trans, **inter}
        skips = {s: concat([trans[s], f], axis=1) if s in trans else f for s, f in cnn.items()}
        S = cfg.num_stages
        deep = skips[S]
        decoded = {S: deep}
        for s, stage in zip(range(S - 1, 0, -1), self.decoder):
            deep = stage(deep, skips[s])
            decoded[s] = deep
        logits = self.head(deep)
        if keep_features:
            self.features = {"cnn": cnn, "trans": trans, "inter": inter, "decoder": decoded}
        return logits


def scaleformer_forward(image: Tensor, model: ScaleFormer) -> Tensor:
    return model(image)


def build_model(cfg: ModelConfig) -> ScaleFormer:
    return ScaleFormer(cfg)
