"""
Overfitting one sample
======================

Loss on a single toy sample should fall by well over 90%. Pass a step count to
shorten the run (default 2000, about a minute on one CPU thread).
"""
import sys

import torch

from cinematte.datagen import synth_sample
from cinematte.evaluation import infer
from cinematte.metrics import mad
from cinematte.model import TrainConfig
from cinematte.training import train

torch.set_num_threads(1)
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
cfg = TrainConfig.toy(steps=steps, seed=6)
s = synth_sample("disk", cfg.resolution, seed=6)

ckpt = train(cfg, [s])
h = ckpt.history
print(f"loss {h[0]:.4f} -> {h[-1]:.4f} ({100 * (1 - h[-1] / h[0]):.1f}% drop over {steps} steps)")
for step in range(0, steps, max(1, steps // 8)):
    print(f"  step {step:5d}  {h[step]:.4f}")
print("MAD x1e3 on the training sample:", round(mad(infer(s.image, s.background, ckpt), s.alpha), 3))
