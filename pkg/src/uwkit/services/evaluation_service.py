"""Evaluation, inference and feature-alignment measurement for trained checkpoints."""

import json
import logging
from pathlib import Path

import numpy as np
import torch

from uwkit.data.coco import to_coco_document
from uwkit.data.corpus import Corpus
from uwkit.data.dataset import UnderwaterDataset, collate
from uwkit.data.transforms import Letterbox, letterbox, unletterbox_masks
from uwkit.exceptions import ConfigError, ItemLoadError
from uwkit.metrics.coco_eval import detections_to_results, evaluate_results
from uwkit.models.scene import AnnotatedImage
from uwkit.models.service_dataclasses import Detection, EvalResult, InferResult
from uwkit.modeling.builder import build_model, count_parameters
from uwkit.modeling.encoder import tap_pairs
from uwkit.modeling.mgukd import Distiller, mgukd_loss
from uwkit.modeling.uwsam import DetectionResult, UWSAM
from uwkit.services.checkpoint_service import Checkpoint, CheckpointService
from uwkit.utils.config import CONFIG
from uwkit.utils.image_utils import load_image, render_overlay, save_image
from uwkit.utils.seeding import derive_seed

logger = logging.getLogger(__name__)

ALIGNMENT_STEPS = 100
ALIGNMENT_LR = 1e-3


def _to_original(detection: DetectionResult, box: Letterbox) -> tuple[np.ndarray, np.ndarray]:
    """Boxes and masks mapped from the model canvas back to the original image grid."""
    boxes = detection.boxes.detach().cpu().numpy().astype(np.float64) / box.scale
    boxes[:, 0::2] = boxes[:, 0::2].clip(0, box.width)
    boxes[:, 1::2] = boxes[:, 1::2].clip(0, box.height)
    masks = unletterbox_masks(detection.masks.detach().cpu().numpy(), box)
    return boxes, masks


class EvaluationService:
    """Service for checkpoint evaluation and inference."""

    @staticmethod
    def load_model(path: Path) -> tuple[UWSAM, Checkpoint]:
        checkpoint = CheckpointService.load(path)
        model = build_model(checkpoint.config, checkpoint.role, len(checkpoint.category_names))
        CheckpointService.restore(checkpoint, model)
        model.to(torch.device(CONFIG.device)).eval()
        return model, checkpoint

    @staticmethod
    def predict(model: UWSAM, items: list[AnnotatedImage], batch_size: int = 4,
                score_threshold: float | None = None) -> list[tuple[AnnotatedImage, np.ndarray, np.ndarray, DetectionResult]]:
        """Run inference on ``items``; returns per item (item, boxes, masks, raw detections) in original coordinates."""
        dataset = UnderwaterDataset(items, model.image_size)
        device = next(model.parameters()).device
        out = []
        for start in range(0, len(dataset), batch_size):
            indices = range(start, min(start + batch_size, len(dataset)))
            batch = collate([dataset.get(i) for i in indices])
            detections = model.predict(batch.images.to(device), score_threshold=score_threshold)
            for i, detection, box in zip(indices, detections, batch.letterboxes):
                boxes, masks = _to_original(detection, box)
                out.append((items[i], boxes, masks, detection))
        return out

    @staticmethod
    def results_for(model: UWSAM, items: list[AnnotatedImage], category_ids: list[int],
                    batch_size: int = 4) -> list[dict]:
        results = []
        for item, boxes, masks, detection in EvaluationService.predict(model, items, batch_size):
            results += detections_to_results(
                item.image_id, boxes, detection.labels.cpu().numpy(), detection.scores.cpu().numpy(),
                masks, category_ids,
            )
        return results

    @staticmethod
    def evaluate(checkpoint_path: Path, corpus: Corpus, items: list[AnnotatedImage] | None = None,
                 out_path: Path | None = None, batch_size: int = 4) -> EvalResult:
        """COCO bbox and mask AP of a checkpoint on ``items`` (default: the whole corpus)."""
        model, checkpoint = EvaluationService.load_model(checkpoint_path)
        if model.num_classes != corpus.num_classes:
            raise ConfigError(
                f"checkpoint predicts {model.num_classes} categories but the corpus has {corpus.num_classes}"
            )
        items = corpus.items if items is None else items
        ground_truth = to_coco_document(items, corpus.category_names, corpus.category_ids)
        results = EvaluationService.results_for(model, items, corpus.category_ids, batch_size)
        summary = evaluate_results(ground_truth, results)
        summary.num_parameters = count_parameters(model)
        summary.encoder_parameters = count_parameters(model.encoder)
        if out_path is not None:
            out_path = Path(out_path)
            out_path.parent.mkdir(parents=True, exist_ok=True)
            out_path.write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True))
            (out_path.parent / "results.json").write_text(json.dumps(results))
            logger.info(f"Wrote evaluation report to {out_path}")
        return summary

    @staticmethod
    def infer(checkpoint_path: Path, image_path: Path, out_dir: Path, score_threshold: float = 0.5) -> InferResult:
        """Detect and segment one image; writes COCO results JSON and a mask overlay PNG."""
        image_path = Path(image_path)
        try:
            image = load_image(image_path)
        except (FileNotFoundError, OSError) as e:
            raise ItemLoadError(0, str(image_path), str(e))
        model, checkpoint = EvaluationService.load_model(checkpoint_path)
        item = AnnotatedImage(image=image, instances=[], source="coco", image_id=1, file_name=image_path.name)
        canvas, box = letterbox(item, model.image_size)
        tensor = torch.from_numpy(np.ascontiguousarray(canvas.image)).permute(2, 0, 1)[None]
        detection = model.predict(tensor.to(next(model.parameters()).device), score_threshold=score_threshold)[0]
        boxes, masks = _to_original(detection, box)
        labels = detection.labels.cpu().numpy()
        scores = detection.scores.cpu().numpy()
        results = detections_to_results(1, boxes, labels, scores, masks, checkpoint.category_ids)

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        results_path = out_dir / f"{image_path.stem}_results.json"
        results_path.write_text(json.dumps(results))
        overlay_path = out_dir / f"{image_path.stem}_overlay.png"
        save_image(render_overlay(image, masks), overlay_path)

        detections = [
            Detection(
                category_id=int(r["category_id"]),
                category=checkpoint.category_names[int(label)],
                score=float(r["score"]),
                bbox=r["bbox"],
                area=int(r["area"]),
                iou_score=float(iou),
            )
            for r, label, iou in zip(results, labels, detection.iou_scores.cpu().numpy())
        ]
        logger.info(f"{len(detections)} detections above {score_threshold} in {image_path}")
        return InferResult(image=str(image_path), detections=detections, overlay_path=str(overlay_path),
                           results_path=str(results_path))

    @staticmethod
    def feature_alignment(teacher_path: Path, student_path: Path, items: list[AnnotatedImage],
                          fit_items: list[AnnotatedImage] | None = None, steps: int = ALIGNMENT_STEPS,
                          lr: float = ALIGNMENT_LR, batch_size: int = 4) -> float:
        """Mean Σ-over-taps MSE between teacher features and a reconstruction from frozen student taps.

        The reconstruction head is always a fresh unmasked MG-UKD head, seeded
        from the run seed and fitted for ``steps`` AdamW steps on ``fit_items``
        (default ``items``). The head a student was distilled with is ignored,
        so every variant of a run is scored through the same protocol.
        """
        teacher, _ = EvaluationService.load_model(teacher_path)
        student, checkpoint = EvaluationService.load_model(student_path)
        config = checkpoint.config
        distill_config = config.distill.model_copy(update={"method": "mgukd", "mask_ratio": 0.0})
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(config.seed, "alignment", "head"))
            head = Distiller(distill_config, config.student_encoder.dim, config.teacher_encoder.dim,
                             config.student_encoder.depth)
        device = next(student.parameters()).device
        head.to(device)

        def tap_batches(subset: list[AnnotatedImage]) -> list[tuple[list[torch.Tensor], list[torch.Tensor]]]:
            dataset = UnderwaterDataset(subset, student.image_size)
            batches = []
            with torch.no_grad():
                for start in range(0, len(dataset), batch_size):
                    batch = collate([dataset.get(i) for i in range(start, min(start + batch_size, len(dataset)))])
                    images = batch.images.to(device)
                    pairs = tap_pairs(teacher.encoder(images), student.encoder(images), head.tap_layers)
                    batches.append(([t for t, _ in pairs], [s for _, s in pairs]))
            return batches

        scored = tap_batches(items)
        if not scored:
            return float("nan")
        fitted = scored if fit_items is None else tap_batches(fit_items)
        if fitted:
            optimizer = torch.optim.AdamW(head.parameters(), lr=lr, weight_decay=0.0)
            head.train()
            for step in range(steps):
                targets, student_maps = fitted[step % len(fitted)]
                loss = mgukd_loss(targets, head.reconstruct(student_maps)).loss
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
        head.eval()
        with torch.no_grad():
            totals = [mgukd_loss(targets, head.reconstruct(student_maps)).total
                      for targets, student_maps in scored]
        value = float(np.mean(totals))
        logger.info(f"Feature alignment of {student_path} after {steps} fitting steps: {value:.6f}")
        return value
