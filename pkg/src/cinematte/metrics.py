"""Matting error metrics, evaluation-time trimaps/masks, and report assembly."""
import csv
import json
from dataclasses import asdict, dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .errors import ShapeError
from .losses import derive_trimap, scaled_radius

# Output scalings; reported numbers are raw metric x scale.
SCALE = {"mad": 1e3, "mse": 1e3, "grad": 1e-3, "conn": 1e-3, "dtssd": 1e2}
GRAD_SIGMA = 1.4
CONN_STEP = 0.1
EVAL_RES = 1024
EVAL_TRIMAP_EROSION = 25
EVAL_MASK_THRESHOLD = 0.95
EVAL_MASK_KERNEL = 7


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"pred {pred.shape} vs gt {gt.shape}")
    return np.squeeze(pred), np.squeeze(gt)


def mad(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(np.abs(pred - gt).mean() * SCALE["mad"])


def mse(pred, gt) -> float:
    pred, gt = _pair(pred, gt)
    return float(((pred - gt) ** 2).mean() * SCALE["mse"])


def _gauss(x, sigma):
    return np.exp(-x ** 2 / (2 * sigma ** 2)) / (sigma * np.sqrt(2 * np.pi))


def gauss_derivative_kernels(sigma: float = GRAD_SIGMA, epsilon: float = 1e-2):
    """Unit-L2 first-derivative-of-Gaussian filters (d/dx, d/dy)."""
    half = int(np.ceil(sigma * np.sqrt(-2 * np.log(np.sqrt(2 * np.pi) * sigma * epsilon))))
    t = np.arange(-half, half + 1, dtype=np.float64)
    # rows vary along y, columns along x
    kx = _gauss(t, sigma)[:, None] * (-t * _gauss(t, sigma) / sigma ** 2)[None, :]
    kx /= np.sqrt((kx ** 2).sum())
    return kx, kx.T.copy()


def gauss_gradient(img, sigma: float = GRAD_SIGMA):
    kx, ky = gauss_derivative_kernels(sigma)
    img = np.asarray(img, dtype=np.float64)
    return (ndimage.correlate(img, kx, mode="nearest"),
            ndimage.correlate(img, ky, mode="nearest"))


def grad_metric(pred, gt, sigma: float = GRAD_SIGMA) -> float:
    """Sum over pixels of the squared norm of the Gaussian-gradient difference."""
    pred, gt = _pair(pred, gt)
    gx, gy = gauss_gradient(pred - gt, sigma)
    return float((gx ** 2 + gy ** 2).sum() * SCALE["grad"])


def _largest_component(mask):
    labels, n = ndimage.label(mask)  # default structure is 4-connected
    if n == 0:
        return np.zeros_like(mask)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (np.argmax(sizes) + 1)


def connectivity_levels(pred, gt, step: float = CONN_STEP) -> np.ndarray:
    """Per-pixel threshold at which the pixel first leaves the largest shared component."""
    n = int(round(1 / step))
    # exact i / n; linspace gives 0.30000000000000004, which excludes alpha == 0.3
    steps = np.arange(n + 1) / n
    level = np.full(gt.shape, -1.0)
    for i in range(1, len(steps)):
        omega = _largest_component((gt >= steps[i]) & (pred >= steps[i]))
        flag = (level == -1) & ~omega
        level[flag] = steps[i - 1]
    level[level == -1] = 1.0
    return level


def conn_metric(pred, gt, step: float = CONN_STEP) -> float:
    pred, gt = _pair(pred, gt)
    level = connectivity_levels(pred, gt, step)
    d_pred, d_gt = pred - level, gt - level
    phi_pred = 1 - d_pred * (d_pred >= 0.15)
    phi_gt = 1 - d_gt * (d_gt >= 0.15)
    return float(np.abs(phi_pred - phi_gt).sum() * SCALE["conn"])


def dtssd(pred_seq, gt_seq) -> float:
    if len(pred_seq) != len(gt_seq):
        raise ShapeError(f"sequence lengths differ: {len(pred_seq)} vs {len(gt_seq)}")
    if len(pred_seq) < 2:
        raise ShapeError("dtSSD needs at least 2 frames")
    p = np.stack([np.squeeze(np.asarray(a, dtype=np.float64)) for a in pred_seq])
    g = np.stack([np.squeeze(np.asarray(a, dtype=np.float64)) for a in gt_seq])
    if p.shape != g.shape:
        raise ShapeError(f"frame shapes differ: {p.shape[1:]} vs {g.shape[1:]}")
    d = np.diff(p, axis=0) - np.diff(g, axis=0)
    return float(np.sqrt((d ** 2).mean()) * SCALE["dtssd"])


def gen_eval_trimap(alpha_gt, erosion: int = EVAL_TRIMAP_EROSION, res: int | None = None):
    """Evaluation trimap; ``erosion`` is specified at EVAL_RES and rescaled to ``res``."""
    a = np.squeeze(np.asarray(alpha_gt, dtype=np.float64))
    res = a.shape[0] if res is None else res
    return derive_trimap(a, scaled_radius(erosion, EVAL_RES, res))


def ellipse_element(size: int = EVAL_MASK_KERNEL) -> np.ndarray:
    return cv2.getStructuringElement(cv2.MORPH_ELLIPSE, (size, size)).astype(bool)


def gen_eval_mask(alpha_gt, threshold: float = EVAL_MASK_THRESHOLD,
                  kernel: int = EVAL_MASK_KERNEL) -> np.ndarray:
    a = np.squeeze(np.asarray(alpha_gt, dtype=np.float64))
    return ndimage.binary_erosion(a > threshold, structure=ellipse_element(kernel), border_value=0)


def resize_alpha(alpha, res: int) -> np.ndarray:
    a = np.squeeze(np.asarray(alpha, dtype=np.float64))
    if a.shape == (res, res):
        return a
    return np.clip(cv2.resize(a, (res, res), interpolation=cv2.INTER_LINEAR), 0.0, 1.0)


@dataclass
class MetricsReport:
    per_sample: list = field(default_factory=list)
    per_sequence: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def add(self, sample_id, pred, gt) -> dict:
        row = {"id": str(sample_id), "mad": mad(pred, gt), "mse": mse(pred, gt),
               "grad": grad_metric(pred, gt), "conn": conn_metric(pred, gt)}
        self.per_sample.append(row)
        return row

    def add_sequence(self, seq_id, pred_seq, gt_seq) -> dict:
        row = {"id": str(seq_id), "dtssd": dtssd(pred_seq, gt_seq)}
        self.per_sequence.append(row)
        return row

    def finalize(self) -> "MetricsReport":
        agg = {}
        if self.per_sample:
            for key in ("mad", "mse", "grad", "conn"):
                agg[key] = float(np.mean([r[key] for r in self.per_sample]))
        if self.per_sequence:
            agg["dtssd"] = float(np.mean([r["dtssd"] for r in self.per_sequence]))
        self.aggregates = agg
        return self

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["id", "mad", "mse", "grad", "conn"])
            writer.writeheader()
            for row in self.per_sample:
                writer.writerow({k: row[k] for k in writer.fieldnames})

    def summary(self) -> dict:
        return {"aggregates": self.aggregates, "per_sequence": self.per_sequence,
                "provenance": self.provenance, "count": len(self.per_sample)}

    def write_summary(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_pairs(pairs, res: int | None = EVAL_RES, provenance: dict | None = None) -> MetricsReport:
    """Score (id, pred, gt) triples, resizing both mattes to res x res first."""
    report = MetricsReport(provenance=dict(provenance or {}))
    for sample_id, pred, gt in pairs:
        if res is not None:
            pred, gt = resize_alpha(pred, res), resize_alpha(gt, res)
        report.add(sample_id, pred, gt)
    return report.finalize()
