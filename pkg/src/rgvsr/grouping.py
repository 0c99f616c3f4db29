"""Temporal grouping attention: split each frame triple into a reference
group (center frame alone, for stability) and a fusion group (all three
frames), with a temporal attention stage on the fusion path.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import torch
import torch.nn as nn

from .blocks import Cell, DEFAULT_SLOPE
from .errors import ConfigError, ContractError


class GroupFeatures(NamedTuple):
    """Outputs of the grouping module; fields are None when the producing
    branch is disabled."""

    ref: Optional[torch.Tensor]      # [B, C, H, W] reference-group feature
    fus: Optional[torch.Tensor]      # [B, C, H, W] final fusion-group feature
    fus_pre: torch.Tensor            # [B, C, H, W] fusion feature before attention
    att_raw: Optional[torch.Tensor]  # [B, C, H, W] attention cell output
    att: Optional[torch.Tensor]      # [B, C-3, H, W] attention-weighted feature
    weights: Optional[torch.Tensor]  # [B, 3, H, W] per-pixel temporal weights


def slot_attention(att_raw):
    """Split channels into 3 temporal slots, softmax the leading channel of
    each slot across slots (per pixel), and scale the slot's remaining
    channels by its weight map.

    att_raw: [B, C, H, W] with C divisible by 3.
    Returns (features [B, C-3, H, W], weights [B, 3, H, W]).
    """
    b, c, h, w = att_raw.shape
    if c % 3 != 0:
        raise ConfigError(f"temporal attention needs channels divisible by 3, got {c}")
    slots = att_raw.view(b, 3, c // 3, h, w)
    weights = torch.softmax(slots[:, :, 0], dim=1)
    feats = slots[:, :, 1:] * weights.unsqueeze(2)
    return feats.reshape(b, c - 3, h, w), weights


class TemporalAttention(nn.Module):
    """One cell produces the raw attention feature; slot softmax weights it."""

    def __init__(self, width: int, slope: float = DEFAULT_SLOPE):
        super().__init__()
        if width % 3 != 0:
            raise ConfigError(f"width must be divisible by 3, got {width}")
        self.cell = Cell(width, width, slope)

    def forward(self, fus_pre):
        att_raw = self.cell(fus_pre)
        att, weights = slot_attention(att_raw)
        return att_raw, att, weights


def _chain(widths, slope):
    cells = [Cell(ci, co, slope) for ci, co in zip(widths[:-1], widths[1:])]
    return nn.Sequential(*cells)


class TemporalGroupAttention(nn.Module):
    """Grouping module applied to each frame triple.

    The reference branch sees only the center frame (four chained cells);
    the fusion branch sees all three frames concatenated in time order
    (four chained cells), optionally refined by temporal attention, then
    compressed back to ``width`` by one cell.
    """

    def __init__(
        self,
        width: int,
        slope: float = DEFAULT_SLOPE,
        reference_group: bool = True,
        tam: bool = True,
    ):
        super().__init__()
        if width % 3 != 0:
            raise ConfigError(f"width must be divisible by 3, got {width}")
        self.width = width
        self.reference = _chain([3, width, width, width, width], slope) if reference_group else None
        self.fusion = _chain([9, width, width, width, width], slope)
        self.attention = TemporalAttention(width, slope) if tam else None
        # with attention: concat of fus_pre (W) and att (W-3) -> W
        fuse_in = 2 * width - 3 if tam else width
        self.fuse = Cell(fuse_in, width, slope)

    def forward(self, triple) -> GroupFeatures:
        """triple: [B, 3, 3, H, W] frames in time order (prev, ref, next)."""
        if triple.dim() != 5 or triple.shape[1] != 3 or triple.shape[2] != 3:
            raise ContractError(
                f"expected a frame triple of shape [B, 3, 3, H, W], got {tuple(triple.shape)}"
            )
        b, _, _, h, w = triple.shape
        ref = self.reference(triple[:, 1]) if self.reference is not None else None
        fus_pre = self.fusion(triple.reshape(b, 9, h, w))
        if self.attention is not None:
            att_raw, att, weights = self.attention(fus_pre)
            fus = self.fuse(torch.cat((fus_pre, att), dim=1))
        else:
            att_raw = att = weights = None
            fus = self.fuse(fus_pre)
        return GroupFeatures(ref=ref, fus=fus, fus_pre=fus_pre,
                             att_raw=att_raw, att=att, weights=weights)
