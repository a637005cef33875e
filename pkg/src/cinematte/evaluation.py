"""Inference, dataset evaluation and the background-shift stress protocol."""
import hashlib
import json

import numpy as np
import torch

from .datagen import SHIFT_LEVELS, ImageSample, ShiftSpec, draw_shift, sample_seed, shift_background
from .errors import ShapeError
from .metrics import MetricsReport, evaluate_pairs
from .model import Checkpoint, CineMatte
from .training import to_tensor


def _model(obj) -> CineMatte:
    return obj.model if isinstance(obj, Checkpoint) else obj


def config_hash(model: CineMatte) -> str:
    blob = json.dumps(model.cfg.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@torch.no_grad()
def infer(image, background, checkpoint) -> np.ndarray:
    """H x W alpha in [0, 1] for an H x W x 3 frame and its background plate. No trimap involved."""
    model = _model(checkpoint)
    dtype = next(model.parameters()).dtype
    h, w = np.shape(image)[:2]
    p = model.cfg.patch_size
    if h % p or w % p:
        raise ShapeError(f"input {h}x{w} must have both sides divisible by {p}")
    x = to_tensor(image, dtype)
    b = None if background is None else to_tensor(background, dtype)
    was_training = model.training
    model.eval()
    alpha = model(x, b)[0, 0].to(torch.float64).numpy()
    model.train(was_training)
    return alpha


def evaluate(checkpoint, samples, res: int | None = None, provenance: dict | None = None,
             background_fn=None) -> MetricsReport:
    """Run inference on (id, ImageSample) pairs and score against their ground truth.

    ``background_fn(index, sample)`` may replace the background fed to the model;
    the ground truth is never altered.
    """
    model = _model(checkpoint)
    pairs = []
    for i, (sample_id, s) in enumerate(samples):
        bg = s.background if background_fn is None else background_fn(i, s)
        pairs.append((sample_id, infer(s.image, bg, model), s.alpha))
    prov = {"config_hash": config_hash(model), "seed": model.cfg.seed}
    prov.update(provenance or {})
    return evaluate_pairs(pairs, res=res, provenance=prov)


def _as_pairs(dataset):
    items = list(dataset)
    if items and isinstance(items[0], ImageSample):
        return [(f"{i:04d}", s) for i, s in enumerate(items)]
    return items


def stress_shift(checkpoint, dataset, levels=SHIFT_LEVELS, seed: int = 0,
                 res: int | None = None) -> list[MetricsReport]:
    """One report per shift level; only the model's background input is warped.

    The warp for sample i at level k is drawn with ``sample_seed(seed + k, i)``,
    and every drawn (angle, scale, shear) is recorded in the report provenance.
    """
    pairs = _as_pairs(dataset)
    reports = []
    for k, level in enumerate(levels):
        level_seed = seed + k
        draws = {}

        def shifted(i, s, level=level, level_seed=level_seed, draws=draws):
            spec = level.with_seed(sample_seed(level_seed, i))
            draws[pairs[i][0]] = {"seed": spec.seed, "angle_scale_shear": list(draw_shift(spec))}
            return shift_background(s.background, spec)

        prov = {"shift_level": level.name, "shift": level.describe(), "level_seed": level_seed,
                "angle_range": list(level.angle_range), "scale_range": list(level.scale_range),
                "shear_range": list(level.shear_range)}
        report = evaluate(checkpoint, pairs, res=res, provenance=prov, background_fn=shifted)
        report.provenance["draws"] = draws
        reports.append(report)
    return reports


def parse_levels(text: str | None) -> list[ShiftSpec]:
    """``None``/"table" for the three standard levels, else a JSON list of
    {"angle": [lo, hi], "scale": [lo, hi], "shear": [lo, hi], "name": ...}."""
    if text is None or text == "table":
        return list(SHIFT_LEVELS)
    specs = []
    for i, d in enumerate(json.loads(text)):
        specs.append(ShiftSpec(tuple(d.get("angle", (0, 0))), tuple(d.get("scale", (1, 1))),
                               tuple(d.get("shear", (0, 0))), name=d.get("name", f"level{i}")))
    return specs
