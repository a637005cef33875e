"""
Synthetic matting data
======================

Analytic scenes with exact alpha, distractors baked into the background plate,
augmentation, and the background-shift levels used for stress tests.
"""
import numpy as np

from cinematte import datagen as D

# a soft disk over a procedural texture; alpha has a closed form
s = D.synth_sample("disk", 64, seed=0)
print("disk:", s.image.shape, "alpha range", s.alpha.min(), s.alpha.max())
print("shape params:", {k: np.round(v, 2).tolist() for k, v in s.meta["shape"].items()})

# compositing inverts cleanly wherever fg and bg differ
a = (s.image - s.background) / np.where(np.abs(s.foreground - s.background) > 1e-3,
                                         s.foreground - s.background, np.nan)
print("alpha recovered from I, F, B: max err", np.nanmax(np.abs(a - s.alpha[..., None])))

# distractors live in the plate, so the model sees them as background
d = D.synth_sample("distractor", 64, seed=1, distractors=2)
print("distractor placements:", d.meta["distractors"])

# augmentation: same warp for fg and alpha, independent draw for the background
aug = D.augment(s, D.AugmentSpec(), seed=3)
print("augment params (fg):", {k: round(v, 3) if isinstance(v, float) else v
                               for k, v in aug.meta["augment"]["foreground"].items()})

# background shift levels
for lvl in D.SHIFT_LEVELS:
    warped = D.shift_background(s.background, lvl.with_seed(7))
    print(f"{lvl.name:7s} {lvl.describe():60s} mean |diff| {np.abs(warped - s.background).mean():.4f}")

# sequences move the disk linearly, for temporal metrics
seq = D.synth_sequence(64, seed=2, frames=4, velocity=(1.0, 0.5))
print("sequence centers:", [np.round(f.meta["shape"]["center"], 2).tolist() for f in seq])
