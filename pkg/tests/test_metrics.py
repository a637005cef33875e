import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles as O
from cinematte import metrics as M
from cinematte.errors import ShapeError
from cinematte.losses import BG, FG, UNKNOWN

PRED = np.array([[1, 0], [0.5, 0.25]])
GT = np.array([[1, 0], [0, 0]], dtype=float)


def test_mad_mse_examples():
    assert M.mad(PRED, GT) == 187.5
    assert M.mse(PRED, GT) == 78.125
    assert M.mad(GT, GT) == M.mse(GT, GT) == 0.0


def test_dtssd_examples():
    assert M.dtssd([np.zeros((1, 1)), np.ones((1, 1))], [np.zeros((1, 1))] * 2) == 100.0
    a, b = np.random.default_rng(0).random((2, 4, 4))
    assert M.dtssd([a] * 3, [b] * 3) == 0.0
    with pytest.raises(ShapeError):
        M.dtssd([a], [a])
    with pytest.raises(ShapeError):
        M.dtssd([a, a], [a, a, a])
    with pytest.raises(ShapeError):
        M.dtssd([a, a], [a[:3], a[:3]])


def test_shape_mismatch_rejected():
    for fn in (M.mad, M.mse, M.grad_metric, M.conn_metric):
        with pytest.raises(ShapeError):
            fn(np.zeros((4, 4)), np.zeros((4, 5)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_symmetry_offset_and_bounds(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((8, 8)), r.random((8, 8))
    assert M.mad(a, b) == M.mad(b, a) and M.mse(a, b) == M.mse(b, a)
    assert abs(M.grad_metric(a, b) - M.grad_metric(b, a)) < 1e-12
    assert M.mse(a, b) <= M.mad(a, b)
    assert M.grad_metric(a + 0.1, a) < 1e-15
    seq_a, seq_b = list(r.random((3, 4, 4))), list(r.random((3, 4, 4)))
    assert abs(M.dtssd(seq_a, seq_b) - M.dtssd(seq_b, seq_a)) < 1e-12
    for v in (M.mad(a, b), M.mse(a, b), M.grad_metric(a, b), M.conn_metric(a, b)):
        assert v > 0


def test_grad_impulse_matches_convolution_oracle():
    d = np.zeros((9, 9))
    d[4, 4] = 1.0
    assert M.gauss_derivative_kernels()[0].shape == (9, 9)
    assert abs(M.grad_metric(d, np.zeros((9, 9))) - O.grad_metric(d, np.zeros((9, 9)))) < 1e-9
    off = np.zeros((9, 9))
    off[1, 7] = 0.6
    assert abs(M.grad_metric(off, np.zeros((9, 9))) - O.grad_metric(off, np.zeros((9, 9)))) < 1e-9


def test_conn_detached_pixel_oracle():
    gt = np.zeros((8, 8))
    gt[2:6, 2:6] = 1
    pred = gt.copy()
    pred[0, 7] = 1  # detached opaque pixel
    got = M.conn_metric(pred, gt)
    assert got > 0
    assert abs(got - O.conn_metric(pred, gt)) < 1e-9
    assert M.conn_metric(gt, gt) == 0.0


def test_conn_fragment_only_in_pred():
    gt = np.zeros((8, 8))
    gt[1:5, 1:5] = 1
    frag = gt.copy()
    frag[6:8, 6:8] = 0.8
    assert M.conn_metric(frag, gt) > 0
    assert M.conn_metric(gt, gt) == 0


def test_connectivity_levels_exact_thresholds():
    # a pixel at exactly 0.3 survives the 0.3 threshold
    gt = np.full((3, 3), 0.3)
    assert (M.connectivity_levels(gt, gt) == 0.3).all()


def test_eval_trimap_annulus_width():
    # toy 64 px: 25 px at 1024 scales to 2 px (rounded to nearest)
    yy, xx = np.mgrid[0:64, 0:64] + 0.5
    d = np.hypot(yy - 32, xx - 32)
    disk = (d <= 16).astype(float)
    tri = M.gen_eval_trimap(disk, res=64)
    radius = 2
    assert np.array_equal(tri == FG, O.erode(disk >= 1, radius))
    assert np.array_equal(tri == BG, O.erode(disk <= 0, radius))
    # away from the frame, whose ring erodes too, UNKNOWN is the 2 * radius band
    inner = np.zeros((64, 64), bool)
    inner[radius:-radius, radius:-radius] = True
    unknown = (tri == UNKNOWN) & inner
    assert d[unknown].min() >= 16 - radius - 1 and d[unknown].max() <= 16 + radius + 1
    # radius 0 leaves only the soft pixels unknown
    soft = np.clip(17 - d, 0, 1)
    assert np.array_equal(M.gen_eval_trimap(soft, erosion=0) == UNKNOWN,
                          (soft > 1 / 255) & (soft < 1 - 1 / 255))


def test_eval_mask():
    assert not M.gen_eval_mask(np.zeros((16, 16))).any()
    a = np.zeros((20, 20))
    a[4:16, 5:17] = 1
    el = M.ellipse_element(7)
    assert el.shape == (7, 7) and el[3].all() and not el[0, 0]
    assert np.array_equal(M.gen_eval_mask(a), O.erode_with(a > 0.95, el))
    assert np.array_equal(np.argwhere(M.gen_eval_mask(a))[[0, -1]], [[7, 8], [12, 13]])
    a[a == 1] = 0.95  # strict threshold
    assert not M.gen_eval_mask(a).any()


def test_report_aggregates_and_files(tmp_path):
    r = np.random.default_rng(3)
    pairs = [(f"s{i}", r.random((8, 8)), r.random((8, 8))) for i in range(4)]
    rep = M.evaluate_pairs(pairs, res=None, provenance={"seed": 1})
    for key in ("mad", "mse", "grad", "conn"):
        assert abs(rep.aggregates[key] - np.mean([row[key] for row in rep.per_sample])) < 1e-9
        assert all(row[key] >= 0 for row in rep.per_sample)
    rep.add_sequence("seq", [p for _, p, _ in pairs], [g for _, _, g in pairs])
    rep.finalize()
    assert rep.aggregates["dtssd"] == rep.per_sequence[0]["dtssd"]
    rep.write_csv(tmp_path / "r.csv")
    rep.write_summary(tmp_path / "r.json")
    with open(tmp_path / "r.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["id", "mad", "mse", "grad", "conn"] and len(rows) == 5
    summary = json.loads((tmp_path / "r.json").read_text())
    assert summary["provenance"] == {"seed": 1} and summary["count"] == 4


def test_evaluate_pairs_resizes():
    a = np.zeros((16, 16))
    a[4:12, 4:12] = 1
    rep = M.evaluate_pairs([("x", a, a)], res=32)
    assert rep.aggregates["mad"] == 0.0
    assert M.resize_alpha(a, 32).shape == (32, 32)
