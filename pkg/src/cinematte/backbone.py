"""Patch-token ViT encoder, shared between the input frame and the background plate."""
from dataclasses import dataclass

import torch
import torch.nn as nn

from .attention import Mlp, MultiHeadAttention, init_transformer_weights
from .errors import NumericError, ShapeError


@dataclass(frozen=True)
class ViTConfig:
    patch_size: int = 16
    embed_dim: int = 64
    depth: int = 4
    num_heads: int = 4
    mlp_ratio: float = 4.0
    frozen: bool = True
    in_chans: int = 3

    def __post_init__(self):
        if self.patch_size < 1:
            raise ValueError("patch_size must be >= 1")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.embed_dim % self.num_heads:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        if self.embed_dim % 4:
            # 2-D sinusoidal encoding splits channels into (sin, cos) x (row, col)
            raise ValueError("embed_dim must be a multiple of 4")


@dataclass
class TokenGrid:
    """Tokens of shape (B, N, D) laid out row-major on a grid_h x grid_w grid."""

    tokens: torch.Tensor
    grid_h: int
    grid_w: int

    def __post_init__(self):
        if self.tokens.dim() != 3:
            raise ShapeError(f"tokens must be (B, N, D), got {tuple(self.tokens.shape)}")
        if self.tokens.shape[1] != self.grid_h * self.grid_w:
            raise ShapeError(
                f"{self.tokens.shape[1]} tokens do not fill a {self.grid_h}x{self.grid_w} grid")

    @property
    def dim(self) -> int:
        return self.tokens.shape[-1]

    def with_tokens(self, tokens: torch.Tensor) -> "TokenGrid":
        return TokenGrid(tokens, self.grid_h, self.grid_w)

    def to_map(self) -> torch.Tensor:
        """Reshape to a (B, D, grid_h, grid_w) feature map."""
        b, _, d = self.tokens.shape
        return self.tokens.transpose(1, 2).reshape(b, d, self.grid_h, self.grid_w)

    @classmethod
    def from_map(cls, fmap: torch.Tensor) -> "TokenGrid":
        b, d, h, w = fmap.shape
        return cls(fmap.reshape(b, d, h * w).transpose(1, 2), h, w)


def extract_patches(image: torch.Tensor, patch_size: int) -> tuple[torch.Tensor, int, int]:
    """Split (B, C, H, W) into row-major flattened (P, P, C) patches.

    Returns the (B, N, P*P*C) patch matrix and the grid size.
    """
    b, c, h, w = image.shape
    p = patch_size
    for axis, size in (("height", h), ("width", w)):
        if size % p:
            raise ShapeError(f"image {axis} {size} is not divisible by patch size {p}")
    gh, gw = h // p, w // p
    x = image.reshape(b, c, gh, p, gw, p).permute(0, 2, 4, 3, 5, 1)
    return x.reshape(b, gh * gw, p * p * c), gh, gw


def sincos_pos_embed(grid_h: int, grid_w: int, dim: int) -> torch.Tensor:
    """Fixed 2-D sinusoidal encoding, (N, dim): first half encodes rows, second half columns."""
    quarter = dim // 4
    omega = 1.0 / 10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter)
    rows, cols = torch.meshgrid(
        torch.arange(grid_h, dtype=torch.float64),
        torch.arange(grid_w, dtype=torch.float64),
        indexing="ij",
    )
    parts = []
    for pos in (rows.reshape(-1), cols.reshape(-1)):
        angle = pos[:, None] * omega[None, :]
        parts += [torch.sin(angle), torch.cos(angle)]
    return torch.cat(parts, dim=1)


class Block(nn.Module):
    """Pre-norm transformer block: x + MHSA(LN(x)), then + MLP(LN(.))."""

    def __init__(self, dim: int, num_heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-5)
        self.attn = MultiHeadAttention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-5)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class ViTBackbone(nn.Module):
    """Seeded-random ViT encoder. Frozen by default; call ``load_pretrained`` for real weights."""

    def __init__(self, cfg: ViTConfig):
        super().__init__()
        self.cfg = cfg
        p = cfg.patch_size
        self.patch_embed = nn.Linear(p * p * cfg.in_chans, cfg.embed_dim)
        self.blocks = nn.ModuleList(
            Block(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio) for _ in range(cfg.depth))
        init_transformer_weights(self)
        # patch projection keeps the default fan-in scaling so image content survives
        self.patch_embed.reset_parameters()
        self.set_frozen(cfg.frozen)

    def set_frozen(self, frozen: bool) -> None:
        for prm in self.parameters():
            prm.requires_grad_(not frozen)

    def patchify(self, image: torch.Tensor) -> TokenGrid:
        if image.shape[1] != self.cfg.in_chans:
            raise ShapeError(f"expected {self.cfg.in_chans} input channels, got {image.shape[1]}")
        patches, gh, gw = extract_patches(image, self.cfg.patch_size)
        pos = sincos_pos_embed(gh, gw, self.cfg.embed_dim).to(patches.dtype)
        return TokenGrid(self.patch_embed(patches) + pos, gh, gw)

    def encode(self, grid: TokenGrid) -> TokenGrid:
        if grid.dim != self.cfg.embed_dim:
            raise ShapeError(f"token dim {grid.dim} != embed_dim {self.cfg.embed_dim}")
        x = grid.tokens
        for i, blk in enumerate(self.blocks):
            x = blk(x)
            if not torch.isfinite(x).all():
                raise NumericError(f"non-finite activations after backbone layer {i}", layer=i)
        return grid.with_tokens(x)

    def forward(self, image: torch.Tensor) -> TokenGrid:
        return self.encode(self.patchify(image))

    def load_pretrained(self, path) -> None:
        state = torch.load(path, map_location="cpu", weights_only=True)
        self.load_state_dict(state, strict=True)
        self.set_frozen(self.cfg.frozen)


def gram_loss(student, teacher) -> torch.Tensor:
    """Squared Frobenius distance between patch Gram matrices, summed over the batch."""
    xs = student.tokens if isinstance(student, TokenGrid) else torch.as_tensor(student)
    xt = teacher.tokens if isinstance(teacher, TokenGrid) else torch.as_tensor(teacher)
    if xs.shape != xt.shape:
        raise ShapeError(f"student {tuple(xs.shape)} and teacher {tuple(xt.shape)} differ")
    diff = xs @ xs.transpose(-2, -1) - xt @ xt.transpose(-2, -1)
    return (diff ** 2).sum()


def num_tokens(height: int, width: int, patch_size: int) -> int:
    return (height * width) // (patch_size * patch_size)

