"""Progressive decoder from 1/16-scale aligned features to a full-resolution alpha matte."""
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import kinks
from .errors import ShapeError
from .fbam import group_count


@dataclass(frozen=True)
class DecoderConfig:
    """``head_channels`` is the width of the optional full-resolution conv shortcut
    that the head consumes (``conv_branch`` ablation); the head itself is one 3x3 conv."""

    stage_channels: tuple[int, int, int] = (128, 64, 32)
    head_channels: int = 32

    def __post_init__(self):
        if len(self.stage_channels) != 3:
            raise ValueError("decoder has exactly 3 stages")
        if min(self.stage_channels) < 1 or self.head_channels < 1:
            raise ValueError("channel counts must be positive")


def up2(x: torch.Tensor) -> torch.Tensor:
    return F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)


class ResidualUnit(nn.Module):
    """out = skip(h) + GN(Conv2(ReLU(GN(Conv1(h))))) with 3x3 convs."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.norm1 = nn.GroupNorm(group_count(cout), cout, eps=1e-5)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.norm2 = nn.GroupNorm(group_count(cout), cout, eps=1e-5)
        self.skip = nn.Identity() if cin == cout else nn.Conv2d(cin, cout, 1)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        r = kinks.relu(self.norm1(self.conv1(h)))
        return self.skip(h) + self.norm2(self.conv2(r))


class Decoder(nn.Module):
    """Three 2x stages plus a 2x head.

    Stage 1 merges the upsampled, adapted backbone features; stage 3 merges the
    adapted upsampler features (when ``hires_dim`` is set). Merges concatenate
    and apply a 1x1 conv. ``extra_head_channels`` admits a full-resolution
    side branch concatenated right before the head conv.
    """

    def __init__(self, feat_dim: int, cfg: DecoderConfig, hires_dim: int | None = None,
                 extra_head_channels: int = 0):
        super().__init__()
        c1, c2, c3 = cfg.stage_channels
        self.cfg = cfg
        self.stage1 = ResidualUnit(feat_dim, c1)
        self.skip1 = ResidualUnit(feat_dim, c1)
        self.merge1 = nn.Conv2d(2 * c1, c1, 1)
        self.stage2 = ResidualUnit(c1, c2)
        self.stage3 = ResidualUnit(c2, c3)
        self.hires_dim = hires_dim
        if hires_dim is not None:
            self.skip3 = ResidualUnit(hires_dim, c3)
            self.merge3 = nn.Conv2d(2 * c3, c3, 1)
        self.head = nn.Conv2d(c3 + extra_head_channels, 1, 3, padding=1)

    def stage_features(self, aligned, backbone_feat, hires_feat=None):
        """Stage outputs at 1/8, 1/4 and 1/2 scale."""
        if backbone_feat.shape != aligned.shape:
            raise ShapeError(
                f"backbone skip {tuple(backbone_feat.shape)} != aligned {tuple(aligned.shape)}")
        h, w = aligned.shape[-2:]
        x1 = self.merge1(torch.cat([self.stage1(up2(aligned)), self.skip1(up2(backbone_feat))], 1))
        x2 = self.stage2(up2(x1))
        x3 = self.stage3(up2(x2))
        if self.hires_dim is not None:
            if hires_feat is None:
                raise ShapeError("decoder was built with an upsampler skip but got none")
            expected = (8 * h, 8 * w)
            if tuple(hires_feat.shape[-2:]) != expected:
                raise ShapeError(
                    f"upsampler features must be {expected[0]}x{expected[1]}, "
                    f"got {hires_feat.shape[-2]}x{hires_feat.shape[-1]}")
            x3 = self.merge3(torch.cat([x3, self.skip3(hires_feat)], 1))
        return [x1, x2, x3]

    def head_logits(self, x3, extra=None):
        x = up2(x3)
        if extra is not None:
            x = torch.cat([x, extra], 1)
        return self.head(x)

    def forward(self, aligned, backbone_feat, hires_feat=None, extra=None):
        x3 = self.stage_features(aligned, backbone_feat, hires_feat)[-1]
        return torch.sigmoid(self.head_logits(x3, extra))
