"""
Background-shift stress test
============================

Train briefly, then warp only the background plate at each shift level and
score against the untouched ground truth.
"""
import torch

from cinematte.datagen import SHIFT_LEVELS, synth_sample
from cinematte.evaluation import stress_shift
from cinematte.model import TrainConfig
from cinematte.training import train

torch.set_num_threads(1)
cfg = TrainConfig.toy(steps=300, seed=1)
data = [synth_sample("disk", 64, seed=i) for i in range(4)]
ckpt = train(cfg, data)

for level, report in zip(SHIFT_LEVELS, stress_shift(ckpt, data, SHIFT_LEVELS, seed=0, res=None)):
    agg = "  ".join(f"{k}={v:.3f}" for k, v in report.aggregates.items())
    print(f"{level.name:7s} {level.describe():60s} {agg}")
