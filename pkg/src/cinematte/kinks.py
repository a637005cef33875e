"""ReLU and |x| with an optionally frozen activation pattern.

Outside ``frozen_pattern()`` these are plain ``torch.relu`` / ``torch.abs``. Inside,
the first forward pass records every ReLU mask and |x| sign, and later passes
replay them, so a finite-difference step evaluates the same smooth piece of a
piecewise-linear network instead of straddling a kink.
"""
import contextlib
import threading

import torch
import torch.nn as nn

_local = threading.local()


class Pattern:
    def __init__(self):
        self.masks: list[torch.Tensor] = []
        self.replaying = False
        self.pos = 0
        self.flips = 0  # sign changes seen while replaying

    def replay(self) -> None:
        self.replaying = True
        self.pos = 0

    def __call__(self, current: torch.Tensor) -> torch.Tensor:
        if not self.replaying:
            self.masks.append(current)
            return current
        stored = self.masks[self.pos]
        self.pos += 1
        self.flips += int((stored != current).sum())
        return stored


@contextlib.contextmanager
def frozen_pattern():
    prev = getattr(_local, "pattern", None)
    _local.pattern = Pattern()
    try:
        yield _local.pattern
    finally:
        _local.pattern = prev


def relu(x: torch.Tensor) -> torch.Tensor:
    pattern = getattr(_local, "pattern", None)
    if pattern is None:
        return torch.relu(x)
    return x * pattern((x > 0).to(x.dtype))


def absolute(x: torch.Tensor) -> torch.Tensor:
    pattern = getattr(_local, "pattern", None)
    if pattern is None:
        return x.abs()
    return x * pattern(torch.sign(x).detach())


class ReLU(nn.Module):
    def forward(self, x):
        return relu(x)
