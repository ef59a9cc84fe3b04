"""Multi-head self-attention kernels over (B, C, H, W) feature maps.

Four variants share one projection layout (query/key/value/output linear
maps over channels):

* ``OriginalMSA`` - full attention over all H*W positions.
* ``SpatialReductionMSA`` - keys and values come from a stride-R convolution
  of the input, so scores are HW x HW/R^2.
* ``AxialMSA`` - two consecutive attention layers, along rows then columns.
* ``DualAxisMSA`` - one layer: directional depth-wise convs on Q and K,
  average pooling to H x C and W x C summaries, an H x H row attention
  applied to V viewed as H x (W*d) and a W x W column attention applied
  from the right to the result viewed as (H*d) x W.

Matrix products that form scores or aggregate values run under the
``"attention"`` MAC scope; every projection or convolution runs under
``"projection"``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from scaleformer.autodiff import Tensor, mac_scope, matmul, ops
from scaleformer.errors import ConfigError
from scaleformer.nn import Conv2d, Linear, Module

ATTENTION = "attention"
PROJECTION = "projection"


class AttentionVariant(str, enum.Enum):
    ORIGINAL = "original"
    SPATIAL_REDUCTION = "spatial_reduction"
    AXIAL = "axial"
    DUAL_AXIS = "dualaxis"

    @classmethod
    def parse(cls, name) -> "AttentionVariant":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"sr": "spatial_reduction", "spatialreduction": "spatial_reduction", "dual_axis": "dualaxis"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            choices = ", ".join(v.value for v in cls)
            raise ConfigError(f"unknown attention variant {name!r} (choose from {choices})") from None


@dataclass(frozen=True)
class MsaParams:
    channels: int
    heads: int = 4
    variant: AttentionVariant = AttentionVariant.DUAL_AXIS
    reduction_ratio: int = 1
    dw_kernel: int = 3

    def __post_init__(self):
        object.__setattr__(self, "variant", AttentionVariant.parse(self.variant))
        if self.channels < 1 or self.heads < 1:
            raise ConfigError("channels and heads must be positive")
        if self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by heads {self.heads}")
        if self.reduction_ratio < 1:
            raise ConfigError("reduction ratio must be >= 1")
        if self.dw_kernel < 1 or self.dw_kernel % 2 == 0:
            raise ConfigError(f"depth-wise kernel must be odd and positive, got {self.dw_kernel}")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads


def to_tokens(x: Tensor) -> Tensor:
    """(B, C, H, W) -> (B, H*W, C), row-major positions."""
    B, C, H, W = x.shape
    return x.transpose(0, 2, 3, 1).reshape(B, H * W, C)


def from_tokens(t: Tensor, H: int, W: int) -> Tensor:
    B, _, C = t.shape
    return t.reshape(B, H, W, C).transpose(0, 3, 1, 2)


def _split_heads(t: Tensor, heads: int) -> Tensor:
    N, L, C = t.shape
    return t.reshape(N, L, heads, C // heads).transpose(0, 2, 1, 3)


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> tuple[Tensor, Tensor]:
    """softmax(QK^T / sqrt(d)) V per head on (N, L, C) token tensors."""
    N, L, C = q.shape
    d = C // heads
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    with mac_scope(ATTENTION):
        scores = matmul(qh, kh.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d))
        attn = ops.softmax(scores, axis=-1)
        out = matmul(attn, vh)
    return out.transpose(0, 2, 1, 3).reshape(N, L, C), attn


class TokenAttention(Module):
    """Standard MSA on a token sequence; the building block of three variants."""

    def __init__(self, channels: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if channels % heads:
            raise ConfigError(f"channels {channels} not divisible by heads {heads}")
        self.heads = heads
        self.q = Linear(channels, channels, rng)
        self.k = Linear(channels, channels, rng)
        self.v = Linear(channels, channels, rng)
        self.o = Linear(channels, channels, rng)
        self.last_attention: np.ndarray | None = None

    def forward(self, tokens: Tensor, context: Tensor | None = None) -> Tensor:
        context = tokens if context is None else context
        with mac_scope(PROJECTION):
            q, k, v = self.q(tokens), self.k(context), self.v(context)
        out, attn = multihead_attention(q, k, v, self.heads)
        self.last_attention = attn.data
        with mac_scope(PROJECTION):
            return self.o(out)


class OriginalMSA(Module):
    def __init__(self, params: MsaParams, rng: np.random.Generator):
        super().__init__()
        self.params = params
        self.attn = TokenAttention(params.channels, params.heads, rng)

    def forward(self, x: Tensor) -> Tensor:
        _, _, H, W = x.shape
        return from_tokens(self.attn(to_tokens(x)), H, W)

    @property
    def attention_maps(self) -> list[np.ndarray]:
        return [self.attn.last_attention]


class SpatialReductionMSA(Module):
    def __init__(self, params: MsaParams, rng: np.random.Generator):
        super().__init__()
        self.params = params
        self.ratio = params.reduction_ratio
        self.attn = TokenAttention(params.channels, params.heads, rng)
        c = params.channels
        if self.ratio > 1:
            self.reduce = Conv2d(c, c, self.ratio, rng, stride=self.ratio, padding=0)

    def forward(self, x: Tensor) -> Tensor:
        _, _, H, W = x.shape
        if H % self.ratio or W % self.ratio:
            raise ConfigError(f"reduction ratio {self.ratio} does not divide {H}x{W}")
        context = x
        if self.ratio > 1:
            with mac_scope(PROJECTION):
                context = self.reduce(x)
        return from_tokens(self.attn(to_tokens(x), to_tokens(context)), H, W)

    @property
    def attention_maps(self) -> list[np.ndarray]:
        return [self.attn.last_attention]


class AxialMSA(Module):
    def __init__(self, params: MsaParams, rng: np.random.Generator):
        super().__init__()
        self.params = params
        self.row = TokenAttention(params.channels, params.heads, rng)
        self.col = TokenAttention(params.channels, params.heads, rng)

    def forward(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        rows = x.transpose(0, 2, 3, 1).reshape(B * H, W, C)
        rows = self.row(rows).reshape(B, H, W, C)
        cols = rows.transpose(0, 2, 1, 3).reshape(B * W, H, C)
        cols = self.col(cols).reshape(B, W, H, C)
        return cols.transpose(0, 3, 2, 1)

    @property
    def attention_maps(self) -> list[np.ndarray]:
        return [self.row.last_attention, self.col.last_attention]


class DualAxisMSA(Module):
    def __init__(self, params: MsaParams, rng: np.random.Generator):
        super().__init__()
        self.params = params
        c, k = params.channels, params.dw_kernel
        self.heads = params.heads
        self.q = Linear(c, c, rng)
        self.k = Linear(c, c, rng)
        self.v = Linear(c, c, rng)
        # Horizontal kernels feed the row summaries, vertical ones the column summaries.
        self.q_row = Conv2d(c, c, (1, k), rng, groups=c, bias=False)
        self.k_row = Conv2d(c, c, (1, k), rng, groups=c, bias=False)
        self.q_col = Conv2d(c, c, (k, 1), rng, groups=c, bias=False)
        self.k_col = Conv2d(c, c, (k, 1), rng, groups=c, bias=False)
        self.o = Linear(c, c, rng)
        self.row_attention: np.ndarray | None = None
        self.col_attention: np.ndarray | None = None

    def forward(self, x: Tensor) -> Tensor:
        B, C, H, W = x.shape
        h = self.heads
        d = C // h
        scale = 1.0 / math.sqrt(d)
        pixels = x.transpose(0, 2, 3, 1)
        with mac_scope(PROJECTION):
            q = self.q(pixels).transpose(0, 3, 1, 2)
            k = self.k(pixels).transpose(0, 3, 1, 2)
            v = self.v(pixels)
            q_row, k_row = self.q_row(q), self.k_row(k)
            q_col, k_col = self.q_col(q), self.k_col(k)

        # (B, C, H) and (B, C, W) summaries, split into heads.
        q_rp = ops.avg_pool_axis(q_row, "width").reshape(B, h, d, H).transpose(0, 1, 3, 2)
        k_rp = ops.avg_pool_axis(k_row, "width").reshape(B, h, d, H)
        q_cp = ops.avg_pool_axis(q_col, "height").reshape(B, h, d, W).transpose(0, 1, 3, 2)
        k_cp = ops.avg_pool_axis(k_col, "height").reshape(B, h, d, W)
        v = v.reshape(B, H, W, h, d).transpose(0, 3, 1, 2, 4).reshape(B, h, H, W * d)

        with mac_scope(ATTENTION):
            a_row = ops.softmax(matmul(q_rp, k_rp) * scale, axis=-1)
            a_col = ops.softmax(matmul(q_cp, k_cp) * scale, axis=-1)
            out = matmul(a_row, v)
            out = out.reshape(B, h, H, W, d).transpose(0, 1, 2, 4, 3).reshape(B, h, H * d, W)
            out = matmul(out, a_col)
        self.row_attention, self.col_attention = a_row.data, a_col.data

        out = out.reshape(B, h, H, d, W).transpose(0, 2, 4, 1, 3).reshape(B, H, W, C)
        with mac_scope(PROJECTION):
            out = self.o(out)
        return out.transpose(0, 3, 1, 2)

    @property
    def attention_maps(self) -> list[np.ndarray]:
        return [self.row_attention, self.col_attention]


_VARIANTS = {
    AttentionVariant.ORIGINAL: OriginalMSA,
    AttentionVariant.SPATIAL_REDUCTION: SpatialReductionMSA,
    AttentionVariant.AXIAL: AxialMSA,
    AttentionVariant.DUAL_AXIS: DualAxisMSA,
}


def build_msa(params: MsaParams, rng: np.random.Generator) -> Module:
    return _VARIANTS[params.variant](params, rng)


class EnhancedMLP(Module):
    """Expand, add a depth-wise 3x3 residual, GELU, project back."""

    def __init__(self, channels: int, hidden_ratio: float, rng: np.random.Generator):
        super().__init__()
        if hidden_ratio <= 0:
            raise ConfigError("hidden_ratio must be positive")
        hidden = max(1, int(round(channels * hidden_ratio)))
        self.fc1 = Linear(channels, hidden, rng)
        self.dw = Conv2d(hidden, hidden, 3, rng, groups=hidden)
        self.fc2 = Linear(hidden, channels, rng)

    def forward(self, x: Tensor) -> Tensor:
        y = self.fc1(x.transpose(0, 2, 3, 1)).transpose(0, 3, 1, 2)
        y = ops.gelu(y + self.dw(y))
        return self.fc2(y.transpose(0, 2, 3, 1)).transpose(0, 3, 1, 2)


class MLP(Module):
    """Two-layer token MLP with GELU."""

    def __init__(self, channels: int, hidden_ratio: float, rng: np.random.Generator):
        super().__init__()
        hidden = max(1, int(round(channels * hidden_ratio)))
        self.fc1 = Linear(channels, hidden, rng)
        self.fc2 = Linear(hidden, channels, rng)

    def forward(self, tokens: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(tokens)))
