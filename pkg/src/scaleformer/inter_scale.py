"""Spatial-aware inter-scale transformer.

Scales are ordered fine to coarse and form a dyadic ladder: each scale is
exactly twice the spatial size of the next. Every coarsest-scale position j
defines a patch group: the aligned 2^k x 2^k block at the scale k steps finer.
A group's patches are flattened (row-major) and concatenated fine to coarse
into one token sequence, transformed by a standard pre-norm transformer
block, split back and written to their original positions.

Two equivalent code paths exist. ``patch_match`` / ``scale_fusion`` /
``scale_division`` / ``patch_revert`` work on explicit :class:`PatchGroup`
objects, one group at a time. ``fuse_all`` / ``divide_all`` do the same
rearrangement for every group at once with reshapes, which is what
:class:`InterScaleBlock` uses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scaleformer.attention import MLP, TokenAttention
from scaleformer.autodiff import Tensor, concat, split
from scaleformer.errors import ConfigError, ContractError, ShapeError
from scaleformer.nn import Conv2d, LayerNorm, Module, ModuleList


@dataclass
class InterScaleConfig:
    stages: list[int] = field(default_factory=lambda: [3, 4, 5, 6])
    channels: int = 32
    heads: int = 4
    mlp_ratio: float = 4.0
    depth: int = 1

    def validate(self, encoder_stages: list[int], transformer_stages: list[int]) -> None:
        stages = list(self.stages)
        if not stages:
            raise ConfigError("inter-scale block needs at least one stage")
        if stages != list(range(stages[0], stages[0] + len(stages))) or stages[-1] != max(encoder_stages):
            raise ConfigError(f"inter-scale stages must be a contiguous suffix of the encoder stages, got {stages}")
        missing = sorted(set(stages) - set(transformer_stages))
        if missing:
            raise ConfigError(f"inter-scale stages {missing} carry no intra-scale transformer")
        if self.channels % self.heads:
            raise ConfigError(f"inter channels {self.channels} not divisible by heads {self.heads}")
        if self.depth < 1:
            raise ConfigError("inter-scale depth must be >= 1")


@dataclass
class PatchGroup:
    index: int
    position: tuple[int, int]
    patches: list[Tensor]  # fine -> coarse, each (B, C, s, s)


def ladder(features: list[Tensor]) -> tuple[tuple[int, int], list[int]]:
    """Coarse grid size and per-scale patch side; validates the dyadic ladder."""
    if not features:
        raise ConfigError("no scales given")
    C = features[0].shape[1]
    for a, b in zip(features, features[1:]):
        if a.shape[2] != 2 * b.shape[2] or a.shape[3] != 2 * b.shape[3]:
            raise ConfigError(f"scales {a.shape[2:]} -> {b.shape[2:]} are not a x2 ladder")
    for f in features:
        if f.shape[1] != C or f.shape[0] != features[0].shape[0]:
            raise ShapeError("all scales must share batch size and channel width")
    n = len(features)
    grid = (features[-1].shape[2], features[-1].shape[3])
    return grid, [2 ** (n - 1 - i) for i in range(n)]


def sequence_length(num_scales: int) -> int:
    return sum(4**k for k in range(num_scales))


# per-group path -------------------------------------------------------------


def patch_match(features: list[Tensor]) -> list[PatchGroup]:
    (gh, gw), sides = ladder(features)
    groups = []
    for gy in range(gh):
        for gx in range(gw):
            patches = [f[:, :, gy * s : (gy + 1) * s, gx * s : (gx + 1) * s] for f, s in zip(features, sides)]
            groups.append(PatchGroup(gy * gw + gx, (gy, gx), patches))
    return groups


def _flatten(patch: Tensor) -> Tensor:
    B, C, h, w = patch.shape
    return patch.transpose(0, 2, 3, 1).reshape(B, h * w, C)


def scale_fusion(group: PatchGroup) -> Tensor:
    """(B, sum of s*s, C) token sequence for one group."""
    C = group.patches[0].shape[1]
    if any(p.shape[1] != C for p in group.patches):
        raise ShapeError("patches in a group must share the channel width")
    return concat([_flatten(p) for p in group.patches], axis=1)


def scale_division(seq: Tensor, sides: list[int]) -> list[Tensor]:
    expected = sum(s * s for s in sides)
    if seq.ndim != 3 or seq.shape[1] != expected:
        raise ContractError(f"sequence of shape {seq.shape} does not match fusion length {expected}")
    B, _, C = seq.shape
    pieces = split(seq, [s * s for s in sides], axis=1)
    return [p.reshape(B, s, s, C).transpose(0, 3, 1, 2) for p, s in zip(pieces, sides)]


def patch_revert(groups: list[PatchGroup]) -> list[Tensor]:
    if not groups:
        raise ContractError("no patch groups to revert")
    gh = max(g.position[0] for g in groups) + 1
    gw = max(g.position[1] for g in groups) + 1
    by_pos = {}
    for g in groups:
        if g.position in by_pos:
            raise ContractError(f"duplicate patch group at {g.position}")
        by_pos[g.position] = g
    if len(by_pos) != gh * gw:
        raise ContractError(f"patch groups cover {len(by_pos)} of {gh * gw} grid positions")
    ordered = [by_pos[(y, x)] for y in range(gh) for x in range(gw)]
    out = []
    for i in range(len(ordered[0].patches)):
        patches = [g.patches[i] for g in ordered]
        B, C, s, _ = patches[0].shape
        stacked = concat([p.reshape(B, 1, C, s, s) for p in patches], axis=1)
        grid = stacked.reshape(B, gh, gw, C, s, s).transpose(0, 3, 1, 4, 2, 5)
        out.append(grid.reshape(B, C, gh * s, gw * s))
    return out


# batched path ----------------------------------------------------------------


def fuse_all(features: list[Tensor]) -> Tensor:
    """All groups' sequences stacked as (B * G, L, C), batch-major then group row-major."""
    (gh, gw), sides = ladder(features)
    B, C = features[0].shape[:2]
    parts = []
    for f, s in zip(features, sides):
        t = f.reshape(B, C, gh, s, gw, s).transpose(0, 2, 4, 3, 5, 1)
        parts.append(t.reshape(B * gh * gw, s * s, C))
    return concat(parts, axis=1)


def divide_all(seq: Tensor, batch: int, grid: tuple[int, int], sides: list[int]) -> list[Tensor]:
    gh, gw = grid
    expected = sum(s * s for s in sides)
    if seq.shape[0] != batch * gh * gw or seq.shape[1] != expected:
        raise ContractError(f"sequence batch of shape {seq.shape} does not match the group layout")
    C = seq.shape[2]
    out = []
    for piece, s in zip(split(seq, [s * s for s in sides], axis=1), sides):
        t = piece.reshape(batch, gh, gw, s, s, C).transpose(0, 5, 1, 3, 2, 4)
        out.append(t.reshape(batch, C, gh * s, gw * s))
    return out


# transformer -------------------------------------------------------------------


class InterScaleTransformer(Module):
    """x + MSA(LN(x)), then + MLP(LN(x)); full attention, no positional encoding."""

    def __init__(self, channels: int, heads: int, mlp_ratio: float, rng: np.random.Generator):
        super().__init__()
        self.norm1 = LayerNorm(channels)
        self.attn = TokenAttention(channels, heads, rng)
        self.norm2 = LayerNorm(channels)
        self.mlp = MLP(channels, mlp_ratio, rng)

    def forward(self, seq: Tensor) -> Tensor:
        seq = seq + self.attn(self.norm1(seq))
        return seq + self.mlp(self.norm2(seq))


class InterScaleBlock(Module):
    """Channel regularization, grouped fusion, transformer, division, inverse maps."""

    def __init__(self, cfg: InterScaleConfig, widths: list[int], rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        self.to_common = ModuleList(Conv2d(w, c, 1, rng) for w in widths)
        self.blocks = ModuleList(InterScaleTransformer(c, cfg.heads, cfg.mlp_ratio, rng) for _ in range(cfg.depth))
        self.from_common = ModuleList(Conv2d(c, w, 1, rng) for w in widths)

    def transform(self, seq: Tensor) -> Tensor:
        for block in self.blocks:
            seq = block(seq)
        return seq

    def forward(self, features: list[Tensor]) -> list[Tensor]:
        """``features`` are fine -> coarse; returns the same shapes."""
        if len(features) != len(self.to_common):
            raise ConfigError(f"expected {len(self.to_common)} scales, got {len(features)}")
        common = regularize_channels(features, self.to_common)
        grid, sides = ladder(common)
        seq = self.transform(fuse_all(common))
        return regularize_channels(divide_all(seq, common[0].shape[0], grid, sides), self.from_common)


def regularize_channels(features: list[Tensor], convs: ModuleList) -> list[Tensor]:
    return [conv(f) for conv, f in zip(convs, features)]
