"""Single-threaded training loop with a frozen backbone and split learning rates."""
import json
import logging
from collections.abc import Callable, Sequence
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .datagen import ImageSample, make_rng, procedural_texture
from .losses import (LAPLACIAN_LEVELS, derive_trimap, gradient_penalty, laplacian_loss,
                     scaled_radius, separate_l1)
from .model import Checkpoint, CineMatte, TrainConfig, build_model

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, last_good: Checkpoint):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.last_good = last_good


def to_tensor(img, dtype=torch.float32) -> torch.Tensor:
    """H x W (x C) array in [0, 1] -> (1, C, H, W) tensor."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    return torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1)))[None].to(dtype)


def batch_tensors(samples: Sequence[ImageSample], cfg: TrainConfig):
    dtype = cfg.torch_dtype
    radius = scaled_radius(cfg.trimap_radius, cfg.trimap_reference_res, cfg.resolution)
    image = torch.cat([to_tensor(s.image, dtype) for s in samples])
    bg = torch.cat([to_tensor(s.background, dtype) for s in samples])
    alpha = torch.cat([to_tensor(s.alpha, dtype) for s in samples])
    trimap = torch.from_numpy(np.stack([derive_trimap(s.alpha, radius) for s in samples]))[:, None]
    return image, bg, alpha, trimap


def loss_terms(pred, gt, trimap, weights=(1.0, 1.0, 1.0), levels: int = LAPLACIAN_LEVELS
               ) -> dict[str, torch.Tensor]:
    terms = {"separate_l1": separate_l1(pred, gt, trimap),
             "laplacian": laplacian_loss(pred, gt, levels),
             "gradient": gradient_penalty(pred, gt)}
    terms["total"] = sum(w * t for w, t in zip(weights, terms.values()))
    return terms


def as_source(data) -> Callable[[int], ImageSample]:
    """Accept a callable ``index -> ImageSample`` or a sequence (cycled)."""
    if callable(data):
        return data
    samples = list(data)
    if not samples:
        raise ValueError("empty data source")
    return lambda i: samples[i % len(samples)]


def _append(path, record):
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")


def _snapshot(model, cfg, step, opt, history):
    return Checkpoint(model, cfg, step, opt.state_dict() if opt else None,
                      torch.get_rng_state(), list(history))


def train(cfg: TrainConfig, data_source, model: CineMatte | None = None,
          log_path=None, out_dir=None) -> Checkpoint:
    """Minimize the matting loss with Adam; returns the final checkpoint.

    Samples are drawn as ``source(step * batch_size + j)``. The frozen backbone
    is never handed to the optimizer; a zero ``lr_upsampler`` leaves the
    upsampler out as well. Loss records go to ``log_path`` as JSON lines.
    """
    source = as_source(data_source)
    model = build_model(cfg) if model is None else model
    torch.manual_seed(cfg.seed)
    if cfg.upsampler_warmup_steps and model.upsampler is not None:
        warm_start_upsampler(model, cfg, cfg.upsampler_warmup_steps)
    opt = torch.optim.Adam(model.parameter_groups())
    history = []
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        log_path = log_path or Path(out_dir) / "loss.jsonl"
    model.train()
    for step in range(cfg.steps):
        samples = [source(step * cfg.batch_size + j) for j in range(cfg.batch_size)]
        image, bg, alpha, trimap = batch_tensors(samples, cfg)
        pred = model(image, bg)
        terms = loss_terms(pred, alpha, trimap, cfg.loss_weights, cfg.laplacian_levels)
        if not torch.isfinite(terms["total"]):
            # parameters are still those of the last finite step
            raise TrainingDiverged(step, _snapshot(model, cfg, step, opt, history))
        opt.zero_grad(set_to_none=True)
        terms["total"].backward()
        opt.step()
        record = {"step": step, **{k: float(v.detach()) for k, v in terms.items()}}
        history.append(record["total"])
        if log_path is not None and step % cfg.log_every == 0:
            _append(log_path, record)
        if step % 100 == 0:
            log.info("step %d loss %.5f", step, record["total"])
    model.eval()
    ckpt = _snapshot(model, cfg, cfg.steps, opt, history)
    if cfg.upsampler_warmup_steps:
        ckpt.notes["upsampler_init"] = "feature-reconstruction warm start (no ImageNet weights)"
    if out_dir is not None:
        ckpt.save(Path(out_dir) / "checkpoint.pt")
    return ckpt


def warm_start_upsampler(model: CineMatte, cfg: TrainConfig, steps: int, lr: float = 1e-3) -> list[float]:
    """Pre-train the upsampler alone to reconstruct images from their own downsampled version.

    Stand-in for pretrained upsampler weights: values are the image pooled to the
    token grid, targets the image pooled to the upsampler output grid.
    """
    ups = model.upsampler
    dtype = cfg.torch_dtype
    res = cfg.resolution
    grid = res // cfg.patch_size
    probe = torch.nn.Conv2d(3, cfg.embed_dim, 1).to(dtype)
    readout = torch.nn.Conv2d(cfg.embed_dim, 3, 1).to(dtype)
    params = list(ups.parameters()) + list(probe.parameters()) + list(readout.parameters())
    opt = torch.optim.Adam(params, lr=lr)
    losses = []
    for step in range(steps):
        rng = make_rng(cfg.seed, 7, step)
        img = to_tensor(procedural_texture(rng, res, res, waves=6), dtype)
        low = F.adaptive_avg_pool2d(img, (grid, grid))
        out_hw = ups.output_size(low)
        target = F.adaptive_avg_pool2d(img, out_hw)
        pred = readout(ups(probe(low), img))
        loss = (pred - target).abs().mean()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return losses
