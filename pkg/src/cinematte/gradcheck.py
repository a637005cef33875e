"""Central finite-difference checks of autograd gradients for sampled parameters."""
from dataclasses import dataclass

import numpy as np
import torch

from .kinks import frozen_pattern


@dataclass
class GradRecord:
    module: str
    name: str
    index: int
    analytic: float
    numeric: float
    flips: int = 0  # ReLU / |x| sign changes between theta and theta +- h

    @property
    def rel_err(self) -> float:
        return relative_error(self.analytic, self.numeric)


def relative_error(a: float, b: float, floor: float = 1e-6) -> float:
    """|a - b| / max(|a|, |b|, floor); the floor keeps near-zero gradients from dividing by ~0."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def sample_parameters(named_params, count: int, rng: np.random.Generator):
    """``count`` (name, param, flat index) picks spread over all entries of the given parameters."""
    named = [(n, p) for n, p in named_params]
    sizes = np.array([p.numel() for _, p in named])
    flat = rng.choice(sizes.sum(), size=min(count, sizes.sum()), replace=False)
    bounds = np.cumsum(sizes)
    picks = []
    for f in np.sort(flat):
        k = int(np.searchsorted(bounds, f, side="right"))
        start = bounds[k - 1] if k else 0
        picks.append((named[k][0], named[k][1], int(f - start)))
    return picks


def check_gradients(model: torch.nn.Module, loss_fn, groups: dict, per_module: int = 20,
                    h: float = 1e-3, seed: int = 0, freeze_kinks: bool = True) -> list[GradRecord]:
    """Compare d loss / d theta from autograd with (L(theta+h) - L(theta-h)) / 2h.

    ``groups`` maps a module label to the submodule whose parameters are sampled;
    frozen parameters get gradients enabled for the duration of the check.

    With ``freeze_kinks`` the ReLU masks and |x| signs seen at theta are replayed
    at theta +- h, so the difference quotient stays on the smooth piece that
    contains theta. A network this size has thousands of such kinks and an
    h = 1e-3 step in an early layer almost always crosses a few of them.
    """
    rng = np.random.default_rng(seed)
    params = list(model.parameters())
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(True)
    try:
        model.zero_grad(set_to_none=True)
        loss_fn().backward()
        records = []
        for label, mod in groups.items():
            for name, prm, idx in sample_parameters(mod.named_parameters(), per_module, rng):
                analytic = float(prm.grad.reshape(-1)[idx])
                flat = prm.data.view(-1)
                orig = flat[idx].item()
                with torch.no_grad(), frozen_pattern() as pattern:
                    loss_fn()
                    if freeze_kinks:
                        pattern.replay()
                    flat[idx] = orig + h
                    up = float(loss_fn())
                    pattern.pos = 0
                    flat[idx] = orig - h
                    down = float(loss_fn())
                    flat[idx] = orig
                records.append(GradRecord(label, name, idx, analytic, (up - down) / (2 * h),
                                          pattern.flips))
        return records
    finally:
        for p, f in zip(params, flags):
            p.requires_grad_(f)
        model.zero_grad(set_to_none=True)
