"""Matting training objective and ground-truth trimap derivation."""
import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from . import kinks
from .errors import ShapeError

BG, UNKNOWN, FG = 0, 128, 255
EPS_FG = EPS_BG = 1.0 / 255
LAPLACIAN_LEVELS = 5


def disk_element(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy ** 2 + xx ** 2) <= r * r


def scaled_radius(radius: float, reference_res: int, res: int) -> int:
    """Carry a pixel radius defined at ``reference_res`` over to ``res``."""
    return int(round(radius * res / reference_res))


def derive_trimap(alpha_gt, erode_radius: int) -> np.ndarray:
    """uint8 trimap: FG/BG are the eroded near-opaque/near-transparent sets, the rest UNKNOWN.

    Pixels outside the image count as neither, so regions touching the border erode too.
    """
    if erode_radius < 0:
        raise ValueError(f"erode radius must be >= 0, got {erode_radius}")
    a = np.asarray(alpha_gt, dtype=np.float64)
    if a.ndim == 3:
        a = a[..., 0]
    se = disk_element(erode_radius)
    fg = ndimage.binary_erosion(a >= 1 - EPS_FG, structure=se, border_value=0)
    bg = ndimage.binary_erosion(a <= EPS_BG, structure=se, border_value=0)
    tri = np.full(a.shape, UNKNOWN, dtype=np.uint8)
    tri[fg] = FG
    tri[bg] = BG
    return tri


def _pair(pred, gt):
    pred = torch.as_tensor(pred)
    gt = torch.as_tensor(gt, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {tuple(pred.shape)} vs gt {tuple(gt.shape)}")
    return pred, gt


def _region_mean(x, mask):
    n = mask.sum()
    if n == 0:
        return x.sum() * 0
    return (x * mask).sum() / n


def separate_l1(pred, gt, trimap) -> torch.Tensor:
    """Mean |pred - gt| over UNKNOWN plus mean over the known (FG + BG) pixels."""
    pred, gt = _pair(pred, gt)
    tri = torch.as_tensor(np.asarray(trimap))
    if tri.shape[-2:] != pred.shape[-2:]:
        raise ShapeError(f"trimap {tuple(tri.shape)} vs alpha {tuple(pred.shape)}")
    unknown = (tri == UNKNOWN).to(pred.dtype).expand_as(pred)
    err = kinks.absolute(pred - gt)
    return _region_mean(err, unknown) + _region_mean(err, 1 - unknown)


_GAUSS_1D = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0]) / 16


def reflect_index(n: int, pad: int) -> torch.Tensor:
    """Source indices for mirror padding (edge not repeated), valid for any n >= 1."""
    i = torch.arange(-pad, n + pad)
    if n == 1:
        return torch.zeros_like(i)
    period = 2 * (n - 1)
    i = i % period
    return torch.where(i < n, i, period - i)


def _blur(x: torch.Tensor) -> torch.Tensor:
    """Separable [1,4,6,4,1]/16 Gaussian with reflect padding, per channel."""
    c, h, w = x.shape[1:]
    k = _GAUSS_1D.to(x.dtype)
    x = x.index_select(-2, reflect_index(h, 2)).index_select(-1, reflect_index(w, 2))
    x = F.conv2d(x, k.view(1, 1, 1, 5).expand(c, 1, 1, 5).contiguous(), groups=c)
    return F.conv2d(x, k.view(1, 1, 5, 1).expand(c, 1, 5, 1).contiguous(), groups=c)


def _pyr_down(x):
    return _blur(x)[..., ::2, ::2]


def _pyr_up(x):
    b, c, h, w = x.shape
    up = x.new_zeros(b, c, 2 * h, 2 * w)
    up[..., ::2, ::2] = x
    return 4 * _blur(up)


def laplacian_pyramid(x: torch.Tensor, levels: int = LAPLACIAN_LEVELS) -> list[torch.Tensor]:
    """levels-1 band-pass residuals followed by the coarsest Gaussian level."""
    h, w = x.shape[-2:]
    div = 2 ** (levels - 1)
    if h % div or w % div:
        raise ShapeError(f"{levels}-level Laplacian pyramid needs dims divisible by {div}, "
                         f"got {h}x{w}")
    pyr = []
    cur = x
    for _ in range(levels - 1):
        down = _pyr_down(cur)
        pyr.append(cur - _pyr_up(down))
        cur = down
    pyr.append(cur)
    return pyr


def laplacian_loss(pred, gt, levels: int = LAPLACIAN_LEVELS) -> torch.Tensor:
    """Sum over levels k = 1..levels of 2^(k-1) * mean |L_k(pred) - L_k(gt)|."""
    pred, gt = _pair(pred, gt)
    if pred.dim() == 2:
        pred, gt = pred[None, None], gt[None, None]
    total = pred.new_zeros(())
    for k, (lp, lg) in enumerate(zip(laplacian_pyramid(pred, levels), laplacian_pyramid(gt, levels))):
        total = total + 2 ** k * kinks.absolute(lp - lg).mean()
    return total


def _forward_diff(x):
    dx = torch.cat([x[..., :, 1:] - x[..., :, :-1], torch.zeros_like(x[..., :, :1])], dim=-1)
    dy = torch.cat([x[..., 1:, :] - x[..., :-1, :], torch.zeros_like(x[..., :1, :])], dim=-2)
    return dx, dy


def gradient_penalty(pred, gt) -> torch.Tensor:
    """mean |dx pred - dx gt| + mean |dy pred - dy gt|, forward differences, zero at the far edge."""
    pred, gt = _pair(pred, gt)
    pdx, pdy = _forward_diff(pred)
    gdx, gdy = _forward_diff(gt)
    return kinks.absolute(pdx - gdx).mean() + kinks.absolute(pdy - gdy).mean()


def total_loss(pred, gt, trimap, weights=(1.0, 1.0, 1.0), levels: int = LAPLACIAN_LEVELS) -> torch.Tensor:
    """Weighted sum of separate L1, Laplacian and gradient terms; unit weights by default."""
    w_l1, w_lap, w_gp = weights
    return (w_l1 * separate_l1(pred, gt, trimap) + w_lap * laplacian_loss(pred, gt, levels)
            + w_gp * gradient_penalty(pred, gt))
