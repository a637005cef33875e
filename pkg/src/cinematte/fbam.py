"""Foreground-background alignment: image tokens cross-attend to background tokens."""
from dataclasses import dataclass

import torch
import torch.nn as nn

from . import kinks
from .attention import Mlp, MultiHeadAttention, init_transformer_weights
from .backbone import TokenGrid
from .errors import ShapeError


@dataclass(frozen=True)
class FbamConfig:
    num_layers: int = 2
    dim: int = 64
    num_heads: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.dim % self.num_heads:
            raise ValueError(f"dim {self.dim} not divisible by num_heads {self.num_heads}")


def group_count(channels: int) -> int:
    """min(8, C), reduced until it divides C."""
    g = min(8, channels)
    while channels % g:
        g -= 1
    return g


class Adapter(nn.Module):
    """ReLU(GroupNorm(pointwise conv)) over the token grid; one instance serves both streams."""

    def __init__(self, dim: int):
        super().__init__()
        self.proj = nn.Linear(dim, dim)
        self.norm = nn.GroupNorm(group_count(dim), dim, eps=1e-5)

    def forward(self, grid: TokenGrid) -> TokenGrid:
        if grid.dim != self.proj.in_features:
            raise ShapeError(f"adapter expects {self.proj.in_features} channels, got {grid.dim}")
        x = self.proj(grid.tokens)                       # (B, N, D)
        x = self.norm(x.transpose(1, 2)).transpose(1, 2)  # GN over channels-in-group x tokens
        return grid.with_tokens(kinks.relu(x))


class FbamLayer(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm_sa = nn.LayerNorm(dim, eps=1e-5)
        self.self_attn = MultiHeadAttention(dim, num_heads)
        self.norm_q = nn.LayerNorm(dim, eps=1e-5)
        self.norm_kv = nn.LayerNorm(dim, eps=1e-5)
        self.cross_attn = MultiHeadAttention(dim, num_heads)
        self.norm_mlp = nn.LayerNorm(dim, eps=1e-5)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x: torch.Tensor, x_bg0: torch.Tensor) -> torch.Tensor:
        if x.shape != x_bg0.shape:
            raise ShapeError(f"image stream {tuple(x.shape)} vs background {tuple(x_bg0.shape)}")
        x = x + self.self_attn(self.norm_sa(x))
        x = x + self.cross_attn(self.norm_q(x), self.norm_kv(x_bg0))
        return x + self.mlp(self.norm_mlp(x))


class FBAM(nn.Module):
    def __init__(self, cfg: FbamConfig):
        super().__init__()
        self.cfg = cfg
        self.adapter = Adapter(cfg.dim)
        self.layers = nn.ModuleList(
            FbamLayer(cfg.dim, cfg.num_heads, cfg.mlp_ratio) for _ in range(cfg.num_layers))
        init_transformer_weights(self)
        # the adapter is a pointwise conv ahead of GroupNorm; fan-in scaling keeps its
        # pre-norm variance well away from the GN epsilon
        self.adapter.proj.reset_parameters()

    def forward(self, x_img: TokenGrid, x_bg: TokenGrid) -> torch.Tensor:
        """Returns the aligned (B, D, grid_h, grid_w) feature map."""
        if (x_img.grid_h, x_img.grid_w) != (x_bg.grid_h, x_bg.grid_w):
            raise ShapeError("image and background token grids differ")
        xi = self.adapter(x_img)
        xb0 = self.adapter(x_bg).tokens
        x = xi.tokens
        for layer in self.layers:
            # background stays at its adapted layer-0 state
            x = layer(x, xb0)
        return xi.with_tokens(x).to_map()
