import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from farseg.errors import DataError
from farseg.metrics import ConfusionMatrix, foreground_ratio, iou_per_class, mean_iou


def test_perfect_prediction_is_diagonal():
    gt = np.array([[0, 1], [2, 1]])
    cm = ConfusionMatrix(3).accumulate(gt, gt)
    assert np.count_nonzero(cm.counts - np.diag(np.diag(cm.counts))) == 0
    assert np.all(iou_per_class(cm) == 1.0)
    assert mean_iou(cm) == 1.0


def test_hand_counted_example():
    cm = ConfusionMatrix(2).accumulate(np.array([1, 0, 0, 0]), np.array([1, 1, 0, 0]))
    iou = cm.iou_per_class()
    assert abs(iou[1] - 0.5) < 1e-12 and abs(iou[0] - 2 / 3) < 1e-12
    assert abs(cm.mean_iou() - (0.5 + 2 / 3) / 2) < 1e-12
    assert abs(cm.mean_iou() - 0.5833) < 1e-4


def test_absent_class_undefined_and_excluded():
    cm = ConfusionMatrix(3).accumulate(np.array([0, 1]), np.array([0, 1]))
    assert np.isnan(cm.iou_per_class()[2])
    assert cm.mean_iou() == 1.0
    assert cm.report()["undefined_classes"] == ["2"]


def test_ignored_pixels_skipped():
    cm = ConfusionMatrix(3)
    cm.accumulate(np.array([1, 2]), np.array([255, 255]))
    assert cm.total == 0
    with pytest.raises(DataError):
        cm.mean_iou()


def test_shape_mismatch():
    with pytest.raises(DataError):
        ConfusionMatrix(2).accumulate(np.zeros(3), np.zeros(4))


def test_merge_equals_sequential():
    rng = np.random.default_rng(0)
    a = [rng.integers(0, 4, (8, 8)) for _ in range(4)]
    seq = ConfusionMatrix(4)
    for i in range(0, 4, 2):
        seq.accumulate(a[i], a[i + 1])
    m = ConfusionMatrix(4).accumulate(a[0], a[1]).merge(ConfusionMatrix(4).accumulate(a[2], a[3]))
    np.testing.assert_array_equal(seq.counts, m.counts)
    assert (ConfusionMatrix(4).accumulate(a[0], a[1]) + ConfusionMatrix(4)).total == 64


def test_background_exclusion():
    cm = ConfusionMatrix(3).accumulate(np.array([0, 0, 1, 2]), np.array([0, 0, 1, 1]))
    iou = cm.iou_per_class()
    assert cm.mean_iou(include_background=False) == pytest.approx(np.mean(iou[1:]))
    assert cm.mean_iou(include_background=True) == pytest.approx(np.mean(iou))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10 ** 6), k=st.integers(2, 6))
def test_iou_bounds_and_permutation_invariance(seed, k):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, k, 50)
    pred = np.where(rng.random(50) < 0.6, gt, rng.integers(0, k, 50))
    cm = ConfusionMatrix(k).accumulate(pred, gt)
    iou = cm.iou_per_class()
    defined = iou[~np.isnan(iou)]
    assert ((defined >= 0) & (defined <= 1)).all()
    perm = rng.permutation(k)
    cm2 = ConfusionMatrix(k).accumulate(perm[pred], perm[gt])
    assert cm2.mean_iou() == pytest.approx(cm.mean_iou(), abs=1e-12)


def test_table2_background_inclusion_arithmetic():
    # FarSeg per-category IoUs from the iSAID val comparison table, and its reported mIoU
    per_class = [65.38, 61.80, 77.73, 86.35, 62.08, 56.70, 36.70, 60.59, 46.34, 35.82, 51.21, 71.35, 72.53,
                 82.03, 53.91]
    reported = 63.71
    fg_mean = sum(per_class) / 15
    assert round(fg_mean, 2) == 61.37
    assert fg_mean < reported
    implied_background = reported * 16 - sum(per_class)
    assert 90 < implied_background <= 100


def test_foreground_ratio():
    assert foreground_ratio([np.zeros((4, 4))])["aggregate"] == 0
    assert foreground_ratio([np.ones((4, 4))])["aggregate"] == 1
    mixed = np.array([[0, 1], [255, 2]])
    r = foreground_ratio([mixed, np.zeros((2, 2))])
    assert r["per_image"] == [2 / 3, 0.0] and r["aggregate"] == 2 / 7


def test_report_contents():
    cm = ConfusionMatrix(3).accumulate(np.array([0, 1, 1, 2]), np.array([0, 1, 2, 2]))
    rep = cm.report()
    assert set(rep) >= {"iou", "miou", "miou_foreground", "pixels", "foreground_ratio"}
    assert rep["pixels"] == 4 and rep["foreground_ratio"] == 0.75
