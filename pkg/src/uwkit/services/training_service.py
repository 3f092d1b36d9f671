"""Training drivers: teacher pre-training on the task loss and student distillation."""

import logging
import math
from pathlib import Path

import numpy as np
import torch

from uwkit.data.corpus import Corpus, load_corpus
from uwkit.data.dataset import Batch, UnderwaterDataset, collate, split_items
from uwkit.exceptions import ConfigError, DivergenceError
from uwkit.models.schemas import RunConfig
from uwkit.models.service_dataclasses import TrainSummary
from uwkit.modeling.builder import Role, build_distiller, build_model, count_parameters
from uwkit.modeling.losses import LossReport
from uwkit.modeling.mgukd import Distiller, distill_step, freeze
from uwkit.modeling.uwsam import UWSAM
from uwkit.services.checkpoint_service import CheckpointService
from uwkit.utils.config import CONFIG
from uwkit.utils.logging import StepLogger
from uwkit.utils.seeding import derive_seed, torch_generator

logger = logging.getLogger(__name__)

LOG_FILE = "train_log.jsonl"
LAST_CHECKPOINT = "last.ckpt"


def checkpoint_name(epoch: int) -> str:
    return f"epoch_{epoch:03d}.ckpt"


class TrainingService:
    """Service for teacher and student training runs.

    Every random stream is derived from (seed, purpose, epoch or step), so a
    run resumed from a checkpoint replays the same batches, augmentations,
    proposal samples and node masks as an uninterrupted one.
    """

    def __init__(self, config: RunConfig, out_dir: Path | None = None, corpus: Corpus | None = None):
        self.config = config
        self.out_dir = Path(out_dir or config.output_dir)
        self.device = torch.device(CONFIG.device)
        self._corpus = corpus

    @property
    def corpus(self) -> Corpus:
        if self._corpus is None:
            self._corpus = load_corpus(self.config.data, self.config.seed)
        return self._corpus

    def train_teacher(self, resume: Path | None = None) -> TrainSummary:
        model = build_model(self.config, "teacher", self.corpus.num_classes)
        return self._run("teacher", model, resume=resume)

    def distill(self, teacher_checkpoint: Path, resume: Path | None = None) -> TrainSummary:
        """Train a student against a frozen teacher with ℒ_task + α·ℒ_MG-UKD."""
        distiller = build_distiller(self.config)
        teacher = self.load_teacher(teacher_checkpoint)
        student = build_model(self.config, "student", self.corpus.num_classes)
        if teacher.encoder.config.grid_size != student.encoder.config.grid_size:
            raise ConfigError(
                f"teacher grid {teacher.encoder.config.grid_size} and student grid {student.encoder.config.grid_size} must match for distillation"
            )
        return self._run("student", student, distiller=distiller, teacher=teacher, resume=resume,
                         extra={"teacher_checkpoint": str(teacher_checkpoint)})

    def load_teacher(self, path: Path) -> UWSAM:
        checkpoint = CheckpointService.load(path)
        if checkpoint.role != "teacher":
            raise ConfigError(f"{path} holds a {checkpoint.role} model, not a teacher")
        if checkpoint.config.teacher_encoder != self.config.teacher_encoder:
            raise ConfigError("teacher_encoder settings differ from the ones the teacher checkpoint was trained with")
        if len(checkpoint.category_names) != self.corpus.num_classes:
            raise ConfigError(
                f"teacher was trained on {len(checkpoint.category_names)} categories, corpus has {self.corpus.num_classes}"
            )
        teacher = build_model(checkpoint.config, "teacher", len(checkpoint.category_names))
        CheckpointService.restore(checkpoint, teacher)
        logger.info(f"Loaded frozen teacher from {path} (step {checkpoint.step})")
        return freeze(teacher).to(self.device)

    def steps_per_epoch(self, num_items: int) -> int:
        return max(1, math.ceil(num_items / self.config.optim.batch_size))

    def batch_for_step(self, dataset: UnderwaterDataset, step: int) -> Batch:
        """The batch seen at ``step`` (0-indexed); epochs are seed-derived permutations."""
        per_epoch = self.steps_per_epoch(len(dataset))
        epoch, position = divmod(step, per_epoch)
        order = np.random.default_rng(derive_seed(self.config.seed, "epoch", epoch)).permutation(len(dataset))
        size = self.config.optim.batch_size
        indices = order[position * size:(position + 1) * size]
        rng = np.random.default_rng(derive_seed(self.config.seed, "augment", step)) if self.config.augment else None
        return collate([dataset.get(int(i), rng) for i in indices])

    def _loss(self, model: UWSAM, batch: Batch, step: int, distiller: Distiller | None,
              teacher: UWSAM | None) -> LossReport:
        images = batch.images.to(self.device)
        targets = [_to_device(t, self.device) for t in batch.targets]
        sample_generator = torch_generator(self.config.seed, "proposals", step)
        if distiller is None:
            out = model.forward_train(images, targets, generator=sample_generator)
            return LossReport.from_tensors(out.l_cls, out.l_rpn, out.l_seg)
        mask_generator = torch_generator(self.config.seed, "mask", step)
        taps, distill = distill_step(images, teacher.encoder, model.encoder, distiller, generator=mask_generator)
        out = model.task_losses(taps, targets, generator=sample_generator)
        return LossReport.from_tensors(out.l_cls, out.l_rpn, out.l_seg, distill_loss=distill.loss,
                                       distill_per_layer=distill.per_layer, alpha=distill.alpha)

    def _run(self, role: Role, model: UWSAM, distiller: Distiller | None = None, teacher: UWSAM | None = None,
             resume: Path | None = None, extra: dict | None = None) -> TrainSummary:
        config = self.config
        corpus = self.corpus
        train_items, holdout = split_items(corpus.items, config.data.holdout_fraction)
        if not train_items:
            raise ConfigError("no training images: the corpus is empty or fully held out")
        dataset = UnderwaterDataset(train_items, model.image_size, corpus.num_classes)

        model.to(self.device).train()
        params = list(model.parameters())
        if distiller is not None:
            distiller.to(self.device).train()
            params += list(distiller.parameters())
        optimizer = torch.optim.AdamW(params, lr=config.optim.lr, weight_decay=config.optim.weight_decay)

        start_step, resumed_from = 0, None
        if resume is not None:
            checkpoint = CheckpointService.load(resume)
            if checkpoint.role != role:
                raise ConfigError(f"cannot resume a {role} run from a {checkpoint.role} checkpoint")
            CheckpointService.restore(checkpoint, model, distiller, optimizer, restore_rng=True)
            start_step = resumed_from = checkpoint.step
            logger.info(f"Resuming {role} training from step {start_step}")

        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / "config.json").write_text(config.model_dump_json(indent=2))
        log_path = self.out_dir / LOG_FILE
        if resume is None and log_path.exists():
            log_path.unlink()
        step_log = StepLogger(log_path, every=config.optim.log_every)

        per_epoch = self.steps_per_epoch(len(dataset))
        total_steps = config.optim.epochs * per_epoch
        if config.optim.max_steps is not None:
            total_steps = min(total_steps, config.optim.max_steps)
        logger.info(
            f"Training {role}: {len(train_items)} images ({len(holdout)} held out), "
            f"{per_epoch} steps/epoch, {total_steps} steps, "
            f"{count_parameters(model, trainable_only=True):,} trainable parameters"
        )

        last_checkpoint = self.out_dir / LAST_CHECKPOINT
        report = None
        step = start_step
        while step < total_steps:
            batch = self.batch_for_step(dataset, step)
            report = self._loss(model, batch, step, distiller, teacher)
            record = report.as_record(step + 1)
            if not report.is_finite():
                raise DivergenceError(step + 1, {k: v for k, v in record.items() if isinstance(v, float)})
            optimizer.zero_grad(set_to_none=True)
            report.loss.backward()
            optimizer.step()
            step += 1
            step_log.log(record)

            if step % per_epoch == 0 or step == total_steps:
                epoch = math.ceil(step / per_epoch)
                args = dict(model=model, config=config, role=role, step=step, epoch=epoch,
                            category_names=corpus.category_names, category_ids=corpus.category_ids,
                            distiller=distiller, optimizer=optimizer, extra=extra)
                if step % per_epoch == 0:
                    CheckpointService.save(self.out_dir / "checkpoints" / checkpoint_name(epoch), **args)
                CheckpointService.save(last_checkpoint, **args)

        final = report.l_total if report is not None else float("nan")
        return TrainSummary(
            output_dir=str(self.out_dir),
            role=role,
            steps=step,
            epochs=math.ceil(step / per_epoch),
            final_loss=final,
            checkpoint=str(last_checkpoint),
            log_path=str(log_path),
            num_parameters=count_parameters(model),
            resumed_from_step=resumed_from,
        )


def _to_device(target, device: torch.device):
    if device.type == "cpu":
        return target
    return type(target)(boxes=target.boxes.to(device), labels=target.labels.to(device), masks=target.masks.to(device))
