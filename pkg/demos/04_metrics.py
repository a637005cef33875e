"""
Matting metrics on small hand-made cases
========================================
"""
import numpy as np

from cinematte import metrics as M

pred = np.array([[1, 0], [0.5, 0.25]])
gt = np.array([[1, 0], [0, 0]], dtype=float)
print("MAD", M.mad(pred, gt), "MSE", M.mse(pred, gt))

# a floating fragment costs connectivity but is invisible to an offset
gt = np.zeros((16, 16))
gt[3:11, 3:11] = 1
frag = gt.copy()
frag[13:15, 13:15] = 1
print("Conn with fragment", M.conn_metric(frag, gt))
print("Grad of a constant offset", M.grad_metric(gt + 0.2, gt))
print("Grad with fragment", M.grad_metric(frag, gt))

# temporal: a pixel that jumps 0 -> 1 while gt stays put
print("dtSSD", M.dtssd([np.zeros((1, 1)), np.ones((1, 1))], [np.zeros((1, 1))] * 2))

# evaluation trimap and mask at toy scale
print("eval trimap radius at 64 px:", M.scaled_radius(M.EVAL_TRIMAP_EROSION, M.EVAL_RES, 64))
print("eval mask pixels:", int(M.gen_eval_mask(gt).sum()), "of", int(gt.sum()))
