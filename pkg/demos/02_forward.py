"""
One forward pass, shape by shape
================================

The toy model keeps the full-scale resolution bookkeeping: 64 px input, 16 px
patches, a 4x4 token grid, an 8x upsampled feature map and a 64x64 alpha.
"""
import torch

from cinematte.datagen import synth_sample
from cinematte.model import TrainConfig, build_model, parameter_counts
from cinematte.training import to_tensor

cfg = TrainConfig.toy()
model = build_model(cfg)
print("parameters:", parameter_counts(model))

s = synth_sample("disk", cfg.resolution, seed=0)
image, bg = to_tensor(s.image), to_tensor(s.background)

with torch.no_grad():
    out = model.forward_features(image, bg)

print("frame tokens     ", tuple(out["tokens"].tokens.shape), "grid", out["tokens"].grid_h, out["tokens"].grid_w)
print("background tokens", tuple(out["bg_tokens"].tokens.shape))
print("aligned map      ", tuple(out["aligned"].shape))
print("upsampled map    ", tuple(out["hires"].shape))
for i, st in enumerate(out["stages"]):
    print(f"decoder stage {i}  ", tuple(st.shape))
print("alpha            ", tuple(out["alpha"].shape), "in", float(out["alpha"].min()), float(out["alpha"].max()))

# the background ablation never looks at the plate
base = build_model(cfg.replace(ablation="baseline"))
with torch.no_grad():
    same = torch.equal(base(image, bg), base(image, torch.rand_like(bg)))
print("baseline ignores background:", same)
