"""Attention supplement: densely connected modulation blocks plus residual
refinement, widening the information-gathering range after aggregation.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .blocks import Cell, ModulationBlock, ResidualBlock, DEFAULT_SLOPE
from .config import AblationSpec, ModelConfig
from .errors import ConfigError


class AttentionSupplement(nn.Module):
    """Two densely wired modulation blocks, a fusing cell, and a residual tail.

    f1 = mb1(x); f2 = mb2(cat(x, f1)); out = res(fuse(cat(x, f1, f2))).
    """

    def __init__(
        self,
        width: int,
        slope: float = DEFAULT_SLOPE,
        reduction: int = 3,
        attention: bool = True,
        resblocks: int = 3,
    ):
        super().__init__()
        self.mb1 = ModulationBlock(width, width, slope, reduction, attention)
        self.mb2 = ModulationBlock(2 * width, width, slope, reduction, attention)
        self.fuse = Cell(3 * width, width, slope)
        self.refine = nn.Sequential(*[ResidualBlock(width, slope) for _ in range(resblocks)])

    def forward(self, x):
        f1 = self.mb1(x)
        f2 = self.mb2(torch.cat((x, f1), dim=1))
        return self.refine(self.fuse(torch.cat((x, f1, f2), dim=1)))


class ResidualChain(nn.Module):
    """Plain chain of residual blocks; the supplement's ablation substitute."""

    def __init__(self, width: int, depth: int, slope: float = DEFAULT_SLOPE):
        super().__init__()
        if depth < 1:
            raise ConfigError(f"residual chain depth must be >= 1, got {depth}")
        self.chain = nn.Sequential(*[ResidualBlock(width, slope) for _ in range(depth)])

    def forward(self, x):
        return self.chain(x)


def build_supplement(cfg: ModelConfig, spec: AblationSpec) -> nn.Module:
    if spec.asm_mode == "substitute":
        return ResidualChain(cfg.width, cfg.substitute_depth, cfg.slope)
    return AttentionSupplement(
        cfg.width,
        cfg.slope,
        cfg.attention_reduction,
        attention=(spec.asm_mode != "no_attention"),
        resblocks=cfg.supplement_resblocks,
    )
