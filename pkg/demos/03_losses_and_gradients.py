"""
Losses and a finite-difference gradient check
=============================================
"""
import numpy as np
import torch

from cinematte.datagen import synth_sample
from cinematte.gradcheck import check_gradients
from cinematte.losses import UNKNOWN, derive_trimap
from cinematte.model import TrainConfig, build_model
from cinematte.training import batch_tensors, loss_terms

s = synth_sample("disk", 64, seed=0)
tri = derive_trimap(s.alpha, 2)
print("trimap: unknown fraction", (tri == UNKNOWN).mean().round(3))

cfg = TrainConfig.toy(dtype="float64")
model = build_model(cfg)
image, bg, alpha, trimap = batch_tensors([s], cfg)
with torch.no_grad():
    terms = loss_terms(model(image, bg), alpha, trimap)
print({k: round(v.item(), 5) for k, v in terms.items()})

# central differences on 20 random parameters per module; ReLU masks and |x|
# signs are frozen at theta so the probe never steps across a kink
for p in model.backbone.parameters():
    p.requires_grad_(True)
records = check_gradients(model, lambda: loss_terms(model(image, bg), alpha, trimap)["total"],
                          model.module_groups(), per_module=20)
for name in model.module_groups():
    errs = [r.rel_err for r in records if r.module == name]
    print(f"{name:10s} worst rel err {max(errs):.2e} over {len(errs)} params")
