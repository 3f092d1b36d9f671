"""COCO-protocol average precision for boxes and masks.

Ground truth is a COCO annotation document, predictions a COCO results
list. Matching is greedy in descending score, precision is made monotone
and sampled at 101 recall points, and size-restricted AP ignores (never
penalizes) detections matched to ground truth outside the size range.
IoUs come from ``pycocotools.mask``.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np
from pycocotools import mask as mask_utils

from uwkit.exceptions import ParseError
from uwkit.models.service_dataclasses import EvalResult

logger = logging.getLogger(__name__)

IouType = Literal["bbox", "segm"]

IOU_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_THRESHOLDS = np.round(np.linspace(0.0, 1.0, 101), 2)
MAX_DETECTIONS = 100
SMALL_AREA = 32 ** 2
LARGE_AREA = 96 ** 2
AREA_RANGES: dict[str, tuple[float, float]] = {
    "all": (0.0, float("inf")),
    "small": (0.0, SMALL_AREA),
    "medium": (SMALL_AREA, LARGE_AREA),
    "large": (LARGE_AREA, float("inf")),
}


@dataclass
class ImageEvaluation:
    """Matching outcome for one (image, category) at every IoU threshold."""
    scores: np.ndarray        # (D,)
    matched: np.ndarray       # (T, D) bool
    ignored: np.ndarray       # (T, D) bool
    num_gt: int               # non-ignored ground truth


def _in_range(area: float, area_range: tuple[float, float]) -> bool:
    lo, hi = area_range
    return lo <= area < hi


def _area(record: dict[str, Any], iou_type: IouType) -> float:
    """Size used for the area ranges: box w·h for bbox, the annotated or RLE mask area for segm."""
    if iou_type == "bbox" and "bbox" in record:
        _, _, w, h = record["bbox"]
        return float(w * h)
    if "area" in record:
        return float(record["area"])
    return float(mask_utils.area(_rle(record["segmentation"])))


def _rle(segmentation: dict[str, Any]) -> dict[str, Any]:
    if not isinstance(segmentation, dict):
        raise ParseError("mask evaluation needs RLE segmentations; rasterize polygons first")
    counts = segmentation["counts"]
    if isinstance(counts, list):
        h, w = segmentation["size"]
        return mask_utils.frPyObjects(segmentation, h, w)
    return {"size": segmentation["size"], "counts": counts.encode("ascii") if isinstance(counts, str) else counts}


def compute_iou(detections: list[dict], ground_truth: list[dict], iou_type: IouType) -> np.ndarray:
    """(D, G) IoU; crowd ground truth uses intersection over detection area."""
    if not detections or not ground_truth:
        return np.zeros((len(detections), len(ground_truth)))
    iscrowd = [int(g.get("iscrowd", 0)) for g in ground_truth]
    if iou_type == "segm":
        d = [_rle(r["segmentation"]) for r in detections]
        g = [_rle(r["segmentation"]) for r in ground_truth]
    else:
        d = [list(map(float, r["bbox"])) for r in detections]
        g = [list(map(float, r["bbox"])) for r in ground_truth]
    return np.asarray(mask_utils.iou(d, g, iscrowd), dtype=np.float64).reshape(len(d), len(g))


def evaluate_image(detections: list[dict], ground_truth: list[dict], iou_type: IouType,
                   area_range: tuple[float, float] = AREA_RANGES["all"],
                   iou_thresholds: np.ndarray = IOU_THRESHOLDS,
                   max_detections: int = MAX_DETECTIONS) -> ImageEvaluation | None:
    if not detections and not ground_truth:
        return None

    gt_ignore = np.array([
        bool(g.get("ignore", 0) or g.get("iscrowd", 0)) or not _in_range(_area(g, iou_type), area_range)
        for g in ground_truth
    ], dtype=bool)
    gt_order = np.argsort(gt_ignore, kind="mergesort")
    ground_truth = [ground_truth[i] for i in gt_order]
    gt_ignore = gt_ignore[gt_order]
    iscrowd = [bool(g.get("iscrowd", 0)) for g in ground_truth]

    dt_order = np.argsort([-float(d["score"]) for d in detections], kind="mergesort")[:max_detections]
    detections = [detections[i] for i in dt_order]
    ious = compute_iou(detections, ground_truth, iou_type)

    T, G, D = len(iou_thresholds), len(ground_truth), len(detections)
    gt_matched = np.zeros((T, G), dtype=bool)
    dt_matched = np.zeros((T, D), dtype=bool)
    dt_ignore = np.zeros((T, D), dtype=bool)
    if G and D:
        for t_index, threshold in enumerate(iou_thresholds):
            for d_index in range(D):
                best = min(float(threshold), 1 - 1e-10)
                match = -1
                for g_index in range(G):
                    if gt_matched[t_index, g_index] and not iscrowd[g_index]:
                        continue
                    # ground truth is sorted ignore-last; a regular match beats any ignored one
                    if match > -1 and not gt_ignore[match] and gt_ignore[g_index]:
                        break
                    if ious[d_index, g_index] < best:
                        continue
                    best = ious[d_index, g_index]
                    match = g_index
                if match == -1:
                    continue
                dt_ignore[t_index, d_index] = gt_ignore[match]
                dt_matched[t_index, d_index] = True
                gt_matched[t_index, match] = True

    out_of_range = np.array([not _in_range(_area(d, iou_type), area_range) for d in detections], dtype=bool)
    dt_ignore |= ~dt_matched & out_of_range[None, :]
    return ImageEvaluation(
        scores=np.array([float(d["score"]) for d in detections]),
        matched=dt_matched,
        ignored=dt_ignore,
        num_gt=int((~gt_ignore).sum()),
    )


def precision_at_recall(evaluations: list[ImageEvaluation], num_thresholds: int,
                        recall_thresholds: np.ndarray = RECALL_THRESHOLDS,
                        max_detections: int = MAX_DETECTIONS) -> np.ndarray | None:
    """(T, R) interpolated precision for one category, or None without ground truth."""
    num_gt = sum(e.num_gt for e in evaluations)
    if num_gt == 0:
        return None
    precision = np.zeros((num_thresholds, len(recall_thresholds)))
    if not evaluations:
        return precision
    scores = np.concatenate([e.scores[:max_detections] for e in evaluations])
    order = np.argsort(-scores, kind="mergesort")
    matched = np.concatenate([e.matched[:, :max_detections] for e in evaluations], axis=1)[:, order]
    ignored = np.concatenate([e.ignored[:, :max_detections] for e in evaluations], axis=1)[:, order]

    tp = np.cumsum(matched & ~ignored, axis=1, dtype=np.float64)
    fp = np.cumsum(~matched & ~ignored, axis=1, dtype=np.float64)
    for t in range(num_thresholds):
        counted = tp[t] + fp[t]
        recall = tp[t] / num_gt
        prec = np.divide(tp[t], counted, out=np.zeros_like(counted), where=counted > 0)
        envelope = np.maximum.accumulate(prec[::-1])[::-1] if len(prec) else prec
        index = np.searchsorted(recall, recall_thresholds, side="left")
        valid = index < len(envelope)
        precision[t, valid] = envelope[index[valid]]
    return precision


def _group(records: list[dict]) -> dict[tuple[int, int], list[dict]]:
    grouped: dict[tuple[int, int], list[dict]] = defaultdict(list)
    for r in records:
        grouped[int(r["image_id"]), int(r["category_id"])].append(r)
    return grouped


class CocoEvaluator:
    """Evaluate a results list against an annotation document.

    Precision tables are computed once per (IoU type, area range) and cached.
    """

    def __init__(self, ground_truth: dict[str, Any], results: list[dict[str, Any]],
                 iou_thresholds: np.ndarray = IOU_THRESHOLDS, max_detections: int = MAX_DETECTIONS):
        if not isinstance(ground_truth, dict) or "annotations" not in ground_truth:
            raise ParseError("ground truth must be a COCO document with an 'annotations' array")
        self.image_ids = sorted({int(img["id"]) for img in ground_truth.get("images", [])}
                                | {int(a["image_id"]) for a in ground_truth["annotations"]})
        self.category_ids = sorted({int(c["id"]) for c in ground_truth.get("categories", [])}
                                   | {int(a["category_id"]) for a in ground_truth["annotations"]})
        known = set(self.image_ids)
        unknown = {int(r["image_id"]) for r in results} - known
        if unknown:
            raise ParseError(f"results reference images missing from the ground truth: {sorted(unknown)[:5]}")
        self.iou_thresholds = np.asarray(iou_thresholds, dtype=np.float64)
        self.max_detections = max_detections
        self._gts = _group(ground_truth["annotations"])
        self._dts = _group(results)
        self._cache: dict[tuple[str, str], np.ndarray] = {}

    def precision(self, iou_type: IouType, area: str = "all") -> np.ndarray:
        """(T, R, K) precision; NaN for categories without ground truth in range."""
        key = (iou_type, area)
        if key not in self._cache:
            area_range = AREA_RANGES[area]
            table = np.full((len(self.iou_thresholds), len(RECALL_THRESHOLDS), len(self.category_ids)), np.nan)
            for k, cat in enumerate(self.category_ids):
                evaluations = []
                for img in self.image_ids:
                    e = evaluate_image(self._dts.get((img, cat), []), self._gts.get((img, cat), []), iou_type,
                                       area_range, self.iou_thresholds, self.max_detections)
                    if e is not None:
                        evaluations.append(e)
                p = precision_at_recall(evaluations, len(self.iou_thresholds), max_detections=self.max_detections)
                if p is not None:
                    table[:, :, k] = p
            self._cache[key] = table
        return self._cache[key]

    def average_precision(self, iou_type: IouType, iou_threshold: float | None = None, area: str = "all") -> float:
        """Mean precision over categories (and thresholds when none is given); NaN if nothing is defined."""
        table = self.precision(iou_type, area)
        if iou_threshold is not None:
            hits = np.flatnonzero(np.isclose(self.iou_thresholds, iou_threshold))
            if not len(hits):
                raise ValueError(f"IoU threshold {iou_threshold} is not among {self.iou_thresholds.tolist()}")
            table = table[hits[0]:hits[0] + 1]
        if np.isnan(table).all():
            return float("nan")
        return float(np.nanmean(table))

    def summarize(self) -> EvalResult:
        ap = self.average_precision
        return EvalResult(
            bbox_map=ap("bbox"),
            bbox_ap50=ap("bbox", 0.5),
            bbox_ap75=ap("bbox", 0.75),
            segm_map=ap("segm"),
            segm_ap50=ap("segm", 0.5),
            segm_ap75=ap("segm", 0.75),
            segm_aps=ap("segm", area="small"),
            segm_apm=ap("segm", area="medium"),
            segm_apl=ap("segm", area="large"),
            num_images=len(self.image_ids),
        )


def compute_ap(predictions: list[dict[str, Any]], ground_truth: dict[str, Any], iou_type: IouType = "segm",
               iou_thresholds: np.ndarray | list[float] = IOU_THRESHOLDS, area_range: str = "all") -> float:
    """AP averaged over ``iou_thresholds`` and categories; NaN when no ground truth is in range."""
    evaluator = CocoEvaluator(ground_truth, predictions, iou_thresholds=np.asarray(iou_thresholds, dtype=np.float64))
    return evaluator.average_precision(iou_type, area=area_range)


def evaluate_results(ground_truth: dict[str, Any], results: list[dict[str, Any]]) -> EvalResult:
    evaluator = CocoEvaluator(ground_truth, results)
    summary = evaluator.summarize()
    logger.info(
        f"Evaluated {len(results)} detections on {summary.num_images} images: "
        f"mAP^b={summary.bbox_map:.4f} mAP^s={summary.segm_map:.4f}"
    )
    return summary


def ground_truth_as_results(ground_truth: dict[str, Any], score: float = 1.0) -> list[dict[str, Any]]:
    """Every non-crowd annotation as a detection with a fixed score."""
    return [
        {
            "image_id": a["image_id"],
            "category_id": a["category_id"],
            "bbox": list(a["bbox"]),
            "segmentation": a["segmentation"],
            "score": score,
        }
        for a in ground_truth["annotations"]
        if not a.get("iscrowd", 0)
    ]


def detections_to_results(image_id: int, boxes: np.ndarray, labels: np.ndarray, scores: np.ndarray,
                          masks: np.ndarray, category_ids: list[int]) -> list[dict[str, Any]]:
    """COCO results for one image: xyxy boxes become xywh, masks compressed RLE."""
    results = []
    for box, label, score, mask in zip(boxes, labels, scores, masks):
        x1, y1, x2, y2 = (float(v) for v in box)
        rle = mask_utils.encode(np.asfortranarray(np.asarray(mask, dtype=np.uint8)))
        results.append({
            "image_id": int(image_id),
            "category_id": int(category_ids[int(label)]),
            "bbox": [x1, y1, x2 - x1, y2 - y1],
            "score": float(score),
            "segmentation": {"size": [int(s) for s in rle["size"]], "counts": rle["counts"].decode("ascii")},
            "area": float(mask_utils.area(rle)),
        })
    return results
