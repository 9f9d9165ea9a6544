import numpy as np
import pytest

from travmap import EVAL_CLASSES, UNKNOWN
from travmap.metrics import (
    ConfusionMatrix,
    accumulate,
    macc,
    metrics_csv_rows,
    miou,
    summary_table,
)


def brute_force_metrics(pred, gt):
    """Independent per-cell set computation of mIoU and mAcc."""
    pred, gt = np.asarray(pred).ravel(), np.asarray(gt).ravel()
    keep = gt != UNKNOWN
    pred, gt = pred[keep], gt[keep]
    ious, accs = [], []
    for c in range(EVAL_CLASSES):
        tp = int(((gt == c) & (pred == c)).sum())
        fp = int(((gt != c) & (pred == c)).sum())
        fn = int(((gt == c) & (pred != c)).sum())
        if tp + fp + fn > 0:
            ious.append(tp / (tp + fp + fn))
        if tp + fp > 0:
            accs.append(tp / (tp + fp))
    return (
        float(np.mean(ious)) if ious else float("nan"),
        float(np.mean(accs)) if accs else float("nan"),
    )


class TestAccumulate:
    def test_perfect_prediction_diagonal(self):
        rng = np.random.default_rng(0)
        gt = rng.integers(0, 4, size=(8, 8))
        cm = ConfusionMatrix().add(gt, gt)
        assert cm.rejected == 0
        assert (np.diagonal(cm.counts[:, :4]) == np.bincount(gt.ravel(), minlength=4)).all()
        assert cm.counts.sum() == 64

    def test_all_unknown_gt_rejected(self):
        gt = np.full((5, 5), UNKNOWN)
        pred = np.zeros((5, 5), dtype=int)
        cm = ConfusionMatrix().add(pred, gt)
        assert cm.rejected == 25
        assert cm.counts.sum() == 0

    def test_predicted_unknown_counts_as_miss(self):
        gt = np.full((3, 3), 2)
        pred = np.full((3, 3), UNKNOWN)
        cm = ConfusionMatrix().add(pred, gt)
        assert cm.fn()[2] == 9
        assert cm.tp().sum() == 0
        assert cm.fp().sum() == 0

    def test_hand_built_3x3(self):
        gt = np.array([[0, 0, 1], [1, 2, 3], [4, 4, 3]])
        pred = np.array([[0, 1, 1], [1, 3, 3], [0, 2, 4]])
        cm = ConfusionMatrix().add(pred, gt)
        # per-cell enumeration oracle: the two gt==4 cells are rejected
        assert cm.rejected == 2
        assert cm.counts[0, 0] == 1  # (0,0)
        assert cm.counts[0, 1] == 1  # (0,1) predicted 1
        assert cm.counts[1, 1] == 2
        assert cm.counts[2, 3] == 1
        assert cm.counts[3, 3] == 1
        assert cm.counts[3, 4] == 1  # predicted unknown on gt 3
        assert cm.total == 7

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            ConfusionMatrix().add(np.zeros((2, 2)), np.zeros((3, 3)))

    def test_additive(self):
        rng = np.random.default_rng(1)
        pairs = [
            (rng.integers(0, 5, (6, 6)), rng.integers(0, 5, (6, 6))) for _ in range(2)
        ]
        separate = [ConfusionMatrix().add(p, g) for p, g in pairs]
        combined = ConfusionMatrix()
        for p, g in pairs:
            combined.add(p, g)
        merged = separate[0] + separate[1]
        np.testing.assert_array_equal(combined.counts, merged.counts)
        assert combined.rejected == merged.rejected

    def test_mask(self):
        gt = np.zeros((4, 4), dtype=int)
        pred = np.zeros((4, 4), dtype=int)
        mask = np.zeros((4, 4), dtype=bool)
        mask[0] = True
        cm = ConfusionMatrix().add(pred, gt, mask)
        assert cm.total == 4


class TestMetrics:
    def test_perfect_prediction(self):
        rng = np.random.default_rng(2)
        gt = rng.integers(0, 4, (16, 16))
        cm = ConfusionMatrix().add(gt, gt)
        assert miou(cm) == 1.0
        assert macc(cm) == 1.0

    def test_fully_disjoint(self):
        gt = np.zeros((4, 4), dtype=int)
        pred = np.ones((4, 4), dtype=int)
        cm = ConfusionMatrix().add(pred, gt)
        assert miou(cm) == 0.0

    def test_always_predicted_never_true_contributes_zero(self):
        gt = np.zeros((4, 4), dtype=int)
        pred = np.full((4, 4), 3)
        cm = ConfusionMatrix().add(pred, gt)
        # class 3: tp 0, fp 16 -> contributes 0 to the mAcc mean
        assert macc(cm) == 0.0

    def test_random_pairs_match_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            gt = rng.integers(0, 5, (16, 16))
            pred = rng.integers(0, 5, (16, 16))
            cm = ConfusionMatrix().add(pred, gt)
            want_iou, want_acc = brute_force_metrics(pred, gt)
            assert miou(cm) == pytest.approx(want_iou, abs=0, rel=0) or (
                np.isnan(want_iou) and np.isnan(miou(cm))
            )
            assert macc(cm) == pytest.approx(want_acc, abs=0, rel=0) or (
                np.isnan(want_acc) and np.isnan(macc(cm))
            )

    def test_exact_rational_example(self):
        # counts chosen so the means are exact binary fractions
        gt = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        pred = np.array([0, 0, 1, 1, 1, 1, 0, 0])
        cm = ConfusionMatrix().add(pred, gt)
        # both classes: tp 2, fp 2, fn 2 -> iou 1/3 each; acc 1/2 each
        assert miou(cm) == pytest.approx(1 / 3, abs=1e-15)
        assert macc(cm) == 0.5

    def test_empty_matrix_nan_with_warning(self):
        cm = ConfusionMatrix()
        with pytest.warns(UserWarning):
            assert np.isnan(miou(cm))
        with pytest.warns(UserWarning):
            assert np.isnan(macc(cm))

    def test_relabeling_permutation_invariance(self):
        rng = np.random.default_rng(4)
        gt = rng.integers(0, 4, (12, 12))
        pred = rng.integers(0, 4, (12, 12))
        cm = ConfusionMatrix().add(pred, gt)
        perm = np.array([2, 3, 1, 0])
        cm2 = ConfusionMatrix().add(perm[pred], perm[gt])
        assert miou(cm) == pytest.approx(miou(cm2), abs=1e-12)
        assert macc(cm) == pytest.approx(macc(cm2), abs=1e-12)

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            cm = ConfusionMatrix().add(rng.integers(0, 5, (8, 8)), rng.integers(0, 4, (8, 8)))
            assert 0.0 <= miou(cm) <= 1.0
            assert 0.0 <= macc(cm) <= 1.0


class TestReporting:
    def test_csv_rows(self):
        gt = np.array([[0, 1], [2, 3]])
        cm = ConfusionMatrix().add(gt, gt)
        rows = metrics_csv_rows(cm)
        assert [r[0] for r in rows] == ["free", "low-cost", "medium-cost", "lethal"]
        assert all(r[1] == 1 and r[2] == 0 and r[3] == 0 and r[4] == 1.0 for r in rows)

    def test_summary_table_contains_classes(self):
        gt = np.array([[0, 1], [2, 3]])
        table = summary_table(ConfusionMatrix().add(gt, gt))
        for name in ("free", "low-cost", "medium-cost", "lethal", "mIoU"):
            assert name in table

    def test_accumulate_function(self):
        cm = ConfusionMatrix()
        out = accumulate(cm, np.zeros((2, 2), int), np.zeros((2, 2), int))
        assert out is cm
        assert cm.total == 4
