"""Image-guided attention upsampler for low-resolution backbone features.

Queries come from the guidance image pooled to the output grid, keys from the
guidance pooled to the backbone grid and modulated by the backbone features,
and values are the backbone features themselves. Every output vector is
therefore a convex combination of backbone vectors.
"""
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import kinks
from .errors import NumericError, ShapeError


@dataclass(frozen=True)
class UpsamplerConfig:
    internal_dim: int = 32
    upsample_factor: int = 8
    window: int | None = None
    query_chunk: int = 16384  # query rows per attention block; bounds peak memory only

    def __post_init__(self):
        if self.upsample_factor < 1:
            raise ValueError("upsample_factor must be >= 1")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be >= 1")


def _encoder(cin: int, d: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, d, 3, padding=1), kinks.ReLU(), nn.Conv2d(d, d, 1))


def attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, chunk: int | None = None) -> torch.Tensor:
    """Single-head softmax attention over (B, Nq, d), (B, Nk, d), (B, Nk, C).

    Query rows are independent, so chunking them changes memory, not results.
    """
    scale = 1.0 / math.sqrt(q.shape[-1])
    if chunk is None or q.shape[1] <= chunk:
        return torch.softmax(q @ k.transpose(1, 2) * scale, dim=-1) @ v
    outs = [torch.softmax(qc @ k.transpose(1, 2) * scale, dim=-1) @ v
            for qc in q.split(chunk, dim=1)]
    return torch.cat(outs, dim=1)


def _flat(x: torch.Tensor) -> torch.Tensor:
    return x.flatten(2).transpose(1, 2)


class FeatureUpsampler(nn.Module):
    def __init__(self, feat_dim: int, cfg: UpsamplerConfig, in_chans: int = 3):
        super().__init__()
        d = cfg.internal_dim
        self.cfg = cfg
        self.feat_dim = feat_dim
        self.guidance = _encoder(in_chans, d)
        self.enc_q = _encoder(d, d)
        self.enc_k = _encoder(d, d)
        self.proj = nn.Conv2d(feat_dim, 2 * d, 1)

    def encode_guidance(self, image: torch.Tensor) -> torch.Tensor:
        return self.guidance(image)

    def make_queries(self, g: torch.Tensor, out_h: int, out_w: int) -> torch.Tensor:
        if out_h > g.shape[-2] or out_w > g.shape[-1]:
            raise ShapeError(
                f"query grid {out_h}x{out_w} exceeds guidance {g.shape[-2]}x{g.shape[-1]}")
        return F.adaptive_avg_pool2d(self.enc_q(g), (out_h, out_w))

    def modulation(self, f_lr: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        gamma, beta = self.proj(f_lr).chunk(2, dim=1)
        return gamma, beta

    def make_keys(self, g: torch.Tensor, f_lr: torch.Tensor) -> torch.Tensor:
        if f_lr.shape[1] != self.feat_dim:
            raise ShapeError(f"expected {self.feat_dim}-channel features, got {f_lr.shape[1]}")
        hb, wb = f_lr.shape[-2:]
        if hb > g.shape[-2] or wb > g.shape[-1]:
            raise ShapeError("backbone grid larger than guidance")
        k_pre = F.adaptive_avg_pool2d(self.enc_k(g), (hb, wb))
        gamma, beta = self.modulation(f_lr)
        return gamma * k_pre + beta

    def output_size(self, f_lr: torch.Tensor) -> tuple[int, int]:
        f = self.cfg.upsample_factor
        return f_lr.shape[-2] * f, f_lr.shape[-1] * f

    def forward(self, f_lr: torch.Tensor, image: torch.Tensor,
                out_size: tuple[int, int] | None = None) -> torch.Tensor:
        if not torch.isfinite(f_lr).all():
            raise NumericError("backbone features contain non-finite values")
        out_h, out_w = out_size or self.output_size(f_lr)
        g = self.encode_guidance(image)
        q = self.make_queries(g, out_h, out_w)
        k = self.make_keys(g, f_lr)
        if self.cfg.window is None:
            y = attend(_flat(q), _flat(k), _flat(f_lr), self.cfg.query_chunk)
            return y.transpose(1, 2).reshape(f_lr.shape[0], -1, out_h, out_w)
        return windowed_attention(q, k, f_lr, self.cfg.window)

    def attention_entries(self, grid_h: int, grid_w: int) -> int:
        """Number of query-key scores computed for a grid_h x grid_w backbone grid."""
        f = self.cfg.upsample_factor
        if self.cfg.window is None:
            return (grid_h * f) * (grid_w * f) * grid_h * grid_w
        return sum(nq * nk for nq, nk in window_sizes(grid_h * f, grid_w * f, grid_h, grid_w,
                                                      self.cfg.window))


def _window_layout(out_h, out_w, hb, wb, m):
    if out_h % hb or out_w % wb:
        raise ShapeError(
            f"windowed attention needs the output {out_h}x{out_w} to be a multiple of the "
            f"key grid {hb}x{wb}")
    mh, mw = min(m, hb), min(m, wb)
    nh, nw = -(-hb // mh), -(-wb // mw)
    return mh, mw, nh, nw, out_h // hb, out_w // wb


def window_sizes(out_h, out_w, hb, wb, m):
    """(queries, keys) per window, in window order; cropped query padding excluded."""
    mh, mw, nh, nw, fh, fw = _window_layout(out_h, out_w, hb, wb, m)
    sizes = []
    for i in range(nh):
        rows = min(mh * fh, out_h - i * mh * fh)
        for j in range(nw):
            cols = min(mw * fw, out_w - j * mw * fw)
            sizes.append((rows * cols, mh * mw))
    return sizes


def _to_windows(x, n_h, n_w, wh, ww):
    b, c = x.shape[:2]
    x = x.reshape(b, c, n_h, wh, n_w, ww).permute(0, 2, 4, 3, 5, 1)
    return x.reshape(b * n_h * n_w, wh * ww, c)


def windowed_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, m: int) -> torch.Tensor:
    """Attention restricted to non-overlapping m x m key windows and their query blocks.

    Key grids that do not tile are edge-padded; m is clipped to the key grid so a
    window covering every key reduces to global attention.
    """
    b, _, out_h, out_w = q.shape
    hb, wb = k.shape[-2:]
    mh, mw, nh, nw, fh, fw = _window_layout(out_h, out_w, hb, wb, m)
    pad_k = (0, nw * mw - wb, 0, nh * mh - hb)
    pad_q = (0, nw * mw * fw - out_w, 0, nh * mh * fh - out_h)
    if any(pad_k):
        k = F.pad(k, pad_k, mode="replicate")
        v = F.pad(v, pad_k, mode="replicate")
        q = F.pad(q, pad_q, mode="replicate")
    qw = _to_windows(q, nh, nw, mh * fh, mw * fw)
    kw = _to_windows(k, nh, nw, mh, mw)
    vw = _to_windows(v, nh, nw, mh, mw)
    y = attend(qw, kw, vw)
    c = v.shape[1]
    y = y.reshape(b, nh, nw, mh * fh, mw * fw, c).permute(0, 5, 1, 3, 2, 4)
    y = y.reshape(b, c, nh * mh * fh, nw * mw * fw)
    return y[:, :, :out_h, :out_w]
