"""Primitive computational blocks: cells, residual/modulation blocks,
channel attention, sub-pixel shuffle, and bicubic resampling.

All blocks are pure functions of (input, parameters) with 3x3 convolutions
using zero padding 1, stride 1, so spatial size is preserved.
"""

from __future__ import annotations

import math
from functools import lru_cache

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, ContractError

DEFAULT_SLOPE = 0.1


class Cell(nn.Module):
    """3x3 convolution followed by a LeakyReLU: the atomic block."""

    def __init__(self, in_channels: int, out_channels: int, slope: float = DEFAULT_SLOPE):
        super().__init__()
        if not 0.0 < slope < 1.0:
            raise ConfigError(f"LeakyReLU slope must lie in (0, 1), got {slope}")
        self.in_channels = in_channels
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.act = nn.LeakyReLU(slope, inplace=True)

    def forward(self, x):
        if x.shape[-3] != self.in_channels:
            raise ContractError(
                f"cell expects {self.in_channels} input channels, "
                f"got input of shape {tuple(x.shape)}"
            )
        return self.act(self.conv(x))


class ResidualBlock(nn.Module):
    """conv3x3 -> LeakyReLU -> conv3x3 with a skip connection (channel-preserving)."""

    def __init__(self, channels: int, slope: float = DEFAULT_SLOPE):
        super().__init__()
        self.channels = channels
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.act = nn.LeakyReLU(slope, inplace=True)

    def forward(self, x):
        if x.shape[-3] != self.channels:
            raise ContractError(
                f"residual block expects {self.channels} channels, "
                f"got input of shape {tuple(x.shape)}"
            )
        return x + self.conv2(self.act(self.conv1(x)))


class ChannelAttention(nn.Module):
    """Squeeze (global average pool) -> reduce -> ReLU -> expand -> sigmoid -> scale."""

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        if reduction < 1 or channels % reduction != 0:
            raise ConfigError(
                f"attention reduction {reduction} must divide channel count {channels}"
            )
        hidden = channels // reduction
        self.reduce = nn.Conv2d(channels, hidden, 1)
        self.expand = nn.Conv2d(hidden, channels, 1)

    def gate(self, x):
        """Per-channel scale in (0, 1), shape [..., C, 1, 1]."""
        pooled = x.mean(dim=(-2, -1), keepdim=True)
        return torch.sigmoid(self.expand(F.relu(self.reduce(pooled))))

    def forward(self, x):
        return x * self.gate(x)


class ModulationBlock(nn.Module):
    """1x1 conv -> LeakyReLU -> 3x3 conv -> LeakyReLU -> channel attention.

    The attention stage is omitted entirely (identity, no parameters) when
    ``attention`` is false.
    """

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        slope: float = DEFAULT_SLOPE,
        reduction: int = 3,
        attention: bool = True,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.compress = nn.Conv2d(in_channels, out_channels, 1)
        self.conv = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.act = nn.LeakyReLU(slope, inplace=True)
        self.attention = ChannelAttention(out_channels, reduction) if attention else None

    def forward(self, x):
        if x.shape[-3] != self.in_channels:
            raise ContractError(
                f"modulation block expects {self.in_channels} input channels, "
                f"got input of shape {tuple(x.shape)}"
            )
        y = self.act(self.conv(self.act(self.compress(x))))
        return self.attention(y) if self.attention is not None else y


def pixel_shuffle(x, upscale: int):
    """Rearrange [.., r^2*C, H, W] into [.., C, r*H, r*W] (pure permutation)."""
    if upscale < 1:
        raise ConfigError(f"upscale factor must be >= 1, got {upscale}")
    if x.shape[-3] % (upscale * upscale) != 0:
        raise ConfigError(
            f"channel count {x.shape[-3]} not divisible by {upscale}^2"
        )
    return F.pixel_shuffle(x, upscale)


def _cubic_weight(t: float, a: float = -0.5) -> float:
    at = abs(t)
    if at <= 1.0:
        return (a + 2.0) * at**3 - (a + 3.0) * at**2 + 1.0
    if at < 2.0:
        return a * (at**3 - 5.0 * at**2 + 8.0 * at - 4.0)
    return 0.0


@lru_cache(maxsize=64)
def _resize_matrix(n_in: int, n_out: int, scale: float) -> torch.Tensor:
    """Dense [n_out, n_in] bicubic interpolation matrix (float64).

    Half-pixel-aligned sample centers; out-of-range taps are clamped to the
    edge (replication).  Rows are normalized so constants are preserved.
    """
    m = torch.zeros(n_out, n_in, dtype=torch.float64)
    for o in range(n_out):
        center = (o + 0.5) / scale - 0.5
        base = math.floor(center)
        for tap in range(base - 1, base + 3):
            weight = _cubic_weight(center - tap)
            m[o, min(max(tap, 0), n_in - 1)] += weight
    m /= m.sum(dim=1, keepdim=True)
    return m


def bicubic_resize(x, scale: float):
    """Separable bicubic resize of the last two dims (kernel a = -0.5).

    Used as the reconstruction baseline at scale 4; general positive factors
    are supported for tooling.
    """
    if scale <= 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    h, w = x.shape[-2], x.shape[-1]
    oh, ow = max(1, round(h * scale)), max(1, round(w * scale))
    mh = _resize_matrix(h, oh, scale).to(dtype=x.dtype, device=x.device)
    mw = _resize_matrix(w, ow, scale).to(dtype=x.dtype, device=x.device)
    return torch.matmul(torch.matmul(mh, x), mw.transpose(0, 1))
