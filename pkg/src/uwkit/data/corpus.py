"""On-disk corpora: a directory of PNG images, one COCO document and the scene parameters.

Layout::

    <corpus>/images/000000.png ...
    <corpus>/annotations.json     COCO instances, RLE segmentations
    <corpus>/scenes.msgpack       generating SceneConfig and per-scene coefficients
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import msgpack
import numpy as np

from uwkit.data.coco import CocoLoadResult, load_coco, to_coco_document, write_document
from uwkit.data.synth import CATEGORY_NAMES, synthesize
from uwkit.exceptions import ConfigError
from uwkit.models.scene import AnnotatedImage, SceneSpec
from uwkit.models.schemas import DataConfig, SceneConfig
from uwkit.utils.config import CONFIG
from uwkit.utils.image_utils import save_image

logger = logging.getLogger(__name__)

ANNOTATIONS_FILE = "annotations.json"
IMAGES_DIR = "images"
SCENES_FILE = "scenes.msgpack"


@dataclass
class Corpus:
    items: list[AnnotatedImage]
    category_names: list[str]
    category_ids: list[int]
    source: str

    @property
    def num_classes(self) -> int:
        return len(self.category_names)


def ensure_writable(out_dir: Path, force: bool):
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise ConfigError(f"{out_dir} exists and is not empty; pass --force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)


def _scene_record(scene: SceneSpec, item: AnnotatedImage) -> dict[str, Any]:
    return {
        "image_id": item.image_id,
        "file_name": item.file_name,
        "seed": scene.seed,
        "beta_d": [float(v) for v in scene.beta_d],
        "beta_b": [float(v) for v in scene.beta_b],
        "veiling": [float(v) for v in scene.veiling],
        "depth_min": float(np.min(scene.depth)),
        "depth_max": float(np.max(scene.depth)),
        "fingerprint": scene.fingerprint(),
    }


def write_corpus(out_dir: Path, scenes: list[tuple[SceneSpec, AnnotatedImage]], config: SceneConfig,
                 seed: int, force: bool = False) -> Path:
    out_dir = Path(out_dir)
    ensure_writable(out_dir, force)
    (out_dir / IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    for _, item in scenes:
        save_image(item.image, out_dir / IMAGES_DIR / item.file_name)

    names = list(CATEGORY_NAMES[:config.num_classes])
    document = to_coco_document((item for _, item in scenes), names)
    write_document(document, out_dir / ANNOTATIONS_FILE)

    payload = {
        "seed": seed,
        "scene_config": config.model_dump(mode="json"),
        "scenes": [_scene_record(scene, item) for scene, item in scenes],
    }
    (out_dir / SCENES_FILE).write_bytes(msgpack.packb(payload, use_bin_type=True))
    logger.info(f"Wrote corpus of {len(scenes)} images to {out_dir}")
    return out_dir


def read_scene_parameters(corpus_dir: Path) -> dict[str, Any]:
    return msgpack.unpackb((Path(corpus_dir) / SCENES_FILE).read_bytes(), raw=False)


def read_corpus(corpus_dir: Path) -> CocoLoadResult:
    corpus_dir = Path(corpus_dir)
    if not (corpus_dir / ANNOTATIONS_FILE).exists():
        raise ConfigError(f"{corpus_dir} is not a corpus directory (missing {ANNOTATIONS_FILE})")
    return load_coco(corpus_dir / ANNOTATIONS_FILE, corpus_dir / IMAGES_DIR)


def _from_load_result(result: CocoLoadResult, source: str) -> Corpus:
    ids = sorted(result.category_mapping, key=result.category_mapping.get)
    return Corpus(result.images, result.category_names, ids, source)


def load_corpus(config: DataConfig, seed: int) -> Corpus:
    """Materialize the configured data source.

    ``source=coco`` reads ``annotations``/``image_root``; ``source=synthetic``
    reads ``corpus`` when set and otherwise generates ``num_images`` scenes in memory.
    """
    if config.source == "coco":
        if not config.annotations or not config.image_root:
            raise ConfigError("data.source=coco requires data.annotations and data.image_root")
        result = load_coco(CONFIG.corpus_path(config.annotations), CONFIG.corpus_path(config.image_root))
        return _from_load_result(result, "coco")

    if config.corpus:
        return _from_load_result(read_corpus(CONFIG.corpus_path(config.corpus)), "synthetic")

    scenes = synthesize(config.num_images, seed, config.scene)
    names = list(CATEGORY_NAMES[:config.scene.num_classes])
    return Corpus([item for _, item in scenes], names, [i + 1 for i in range(len(names))], "synthetic")
