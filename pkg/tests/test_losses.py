"""Tests for the task losses, the total loss and the loss report."""

import math

import pytest
import torch

from uwkit.exceptions import ShapeError
from uwkit.modeling.losses import (
    LossReport,
    classification_loss,
    mask_targets,
    rpn_loss,
    s_iou_target,
    segmentation_loss,
    smooth_l1,
    total_loss,
)


class TestTaskLosses:
    def test_classification_margin_ten(self):
        logits = torch.tensor([[10.0, 0.0, 0.0], [0.0, 0.0, 10.0]])
        assert float(classification_loss(logits, torch.tensor([0, 2]))) < 1e-4

    def test_classification_empty(self):
        assert float(classification_loss(torch.zeros(0, 3), torch.zeros(0, dtype=torch.int64))) == 0.0

    def test_smooth_l1_exact_zero(self):
        deltas = torch.randn(7, 4)
        assert float(smooth_l1(deltas, deltas.clone())) == 0.0

    def test_smooth_l1_quadratic_and_linear(self):
        pred = torch.tensor([[0.5, 0.0, 0.0, 0.0], [3.0, 0.0, 0.0, 0.0]])
        # 0.5·0.5² and 3 − 0.5, averaged over the two boxes
        assert float(smooth_l1(pred, torch.zeros(2, 4))) == pytest.approx((0.125 + 2.5) / 2)

    def test_rpn_loss_without_positives(self):
        loss = rpn_loss(torch.tensor([-5.0, -5.0]), torch.zeros(2), torch.zeros(0, 4), torch.zeros(0, 4))
        assert float(loss) == pytest.approx(math.log1p(math.exp(-5.0)), rel=1e-6)

    def test_segmentation_two_by_two(self):
        logits = torch.tensor([[[10.0, -10.0], [-10.0, 10.0]]])
        target = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]])
        assert float(segmentation_loss(logits, target)) < 1e-4
        assert float(segmentation_loss(logits, target, iou_pred=torch.tensor([1.0]))) < 1e-4

    def test_segmentation_shape_mismatch(self):
        with pytest.raises(ShapeError):
            segmentation_loss(torch.zeros(1, 2, 2), torch.zeros(1, 3, 3))

    def test_mask_targets_area_resize(self):
        gt = torch.zeros(1, 8, 8, dtype=torch.bool)
        gt[0, :4, :4] = True
        out = mask_targets(gt, (2, 2))
        assert out.tolist() == [[[1.0, 0.0], [0.0, 0.0]]]


class TestSIoU:
    def test_identical(self):
        mask = torch.zeros(4, 4, dtype=torch.bool)
        mask[1:3, 1:3] = True
        assert float(s_iou_target(mask, mask)) == 1.0

    def test_disjoint(self):
        a = torch.zeros(4, 4, dtype=torch.bool)
        b = torch.zeros(4, 4, dtype=torch.bool)
        a[0, 0] = True
        b[3, 3] = True
        assert float(s_iou_target(a, b)) == 0.0

    def test_half_overlap(self):
        a = torch.zeros(2, 4, dtype=torch.bool)
        b = torch.zeros(2, 4, dtype=torch.bool)
        a[:, 0:2] = True
        b[:, 1:3] = True
        assert float(s_iou_target(a, b)) == pytest.approx(1 / 3)

    def test_both_empty(self):
        empty = torch.zeros(3, 3, dtype=torch.bool)
        assert float(s_iou_target(empty, empty)) == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            s_iou_target(torch.zeros(2, 2), torch.zeros(3, 3))


class TestTotalLoss:
    def test_no_distillation(self):
        assert total_loss(1.0, 0.0) == 1.0

    def test_arithmetic(self):
        assert total_loss(0.5, 50000.0, 2e-5) == pytest.approx(1.5, abs=1e-12)

    def test_report_identities(self):
        report = LossReport.from_tensors(
            torch.tensor(0.25), torch.tensor(0.125), torch.tensor(0.5),
            distill_loss=torch.tensor(3.0), distill_per_layer=[1.0, 2.0], alpha=0.5,
        )
        assert report.l_task == report.l_cls + report.l_rpn + report.l_seg
        assert report.l_total == report.l_task + report.alpha * report.l_mgukd
        assert report.l_mgukd == 3.0
        assert float(report.loss) == pytest.approx(report.l_total)
        assert report.is_finite()
        record = report.as_record(7)
        assert record["step"] == 7
        assert record["l_mgukd_per_layer"] == [1.0, 2.0]

    def test_report_flags_nan(self):
        report = LossReport.from_tensors(torch.tensor(float("nan")), torch.tensor(0.0), torch.tensor(0.0))
        assert not report.is_finite()
