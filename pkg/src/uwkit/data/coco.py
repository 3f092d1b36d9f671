"""COCO-style instance annotation I/O.

Reading accepts polygon and RLE segmentations (compressed or not); writing
always emits compressed RLE so masks survive a round trip bit-exactly.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from pycocotools import mask as mask_utils

from uwkit.exceptions import ItemLoadError, ParseError
from uwkit.models.scene import AnnotatedImage, Instance
from uwkit.utils.image_utils import load_image

logger = logging.getLogger(__name__)


@dataclass
class CocoLoadResult:
    images: list[AnnotatedImage]
    category_mapping: dict[int, int]
    category_names: list[str]
    errors: list[ItemLoadError] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len(self.category_names)


@dataclass
class CocoDocument:
    """Parsed annotation document with categories remapped to dense indices."""
    images: list[dict[str, Any]]
    annotations_by_image: dict[int, list[dict[str, Any]]]
    category_mapping: dict[int, int]
    category_names: list[str]


def encode_rle(mask: np.ndarray) -> dict[str, Any]:
    rle = mask_utils.encode(np.asfortranarray(np.asarray(mask, dtype=np.uint8)))
    return {"size": [int(s) for s in rle["size"]], "counts": rle["counts"].decode("ascii")}


def decode_segmentation(segmentation: Any, height: int, width: int) -> np.ndarray:
    """Rasterize a polygon list or RLE segmentation to a boolean mask."""
    if isinstance(segmentation, list):
        if not segmentation:
            return np.zeros((height, width), dtype=bool)
        rle = mask_utils.merge(mask_utils.frPyObjects(segmentation, height, width))
    elif isinstance(segmentation, dict) and "counts" in segmentation:
        if isinstance(segmentation["counts"], list):
            rle = mask_utils.frPyObjects(segmentation, height, width)
        else:
            counts = segmentation["counts"]
            rle = {"size": segmentation["size"], "counts": counts.encode("ascii") if isinstance(counts, str) else counts}
    else:
        raise ParseError(f"unsupported segmentation of type {type(segmentation).__name__}")
    return mask_utils.decode(rle).astype(bool)


def parse_document(document: Any) -> CocoDocument:
    if not isinstance(document, dict):
        raise ParseError("annotation document must be a JSON object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(document.get(key), list):
            raise ParseError(f"annotation document is missing the '{key}' array")

    try:
        categories = sorted(document["categories"], key=lambda c: c["id"])
        category_mapping = {int(c["id"]): index for index, c in enumerate(categories)}
        category_names = [str(c.get("name", c["id"])) for c in categories]
        images = [dict(img, id=int(img["id"])) for img in document["images"]]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"malformed image or category record: {e}")

    annotations_by_image: dict[int, list[dict[str, Any]]] = defaultdict(list)
    for ann in document["annotations"]:
        if not isinstance(ann, dict) or "image_id" not in ann or "category_id" not in ann:
            raise ParseError(f"malformed annotation record: {ann!r}")
        if int(ann["category_id"]) not in category_mapping:
            raise ParseError(f"annotation {ann.get('id')} references unknown category {ann['category_id']}")
        annotations_by_image[int(ann["image_id"])].append(ann)

    return CocoDocument(images, dict(annotations_by_image), category_mapping, category_names)


def read_document(path: Path) -> CocoDocument:
    try:
        document = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ParseError(f"{path} is not valid JSON: {e}")
    return parse_document(document)


def _instances(record: dict[str, Any], annotations: list[dict[str, Any]], document: CocoDocument,
               height: int, width: int) -> list[Instance]:
    instances = []
    for ann in annotations:
        if ann.get("iscrowd", 0):
            logger.debug(f"Skipping crowd annotation {ann.get('id')} on image {record['id']}")
            continue
        mask = decode_segmentation(ann.get("segmentation", []), height, width)
        class_id = document.category_mapping[int(ann["category_id"])]
        instance = Instance.from_mask(mask, class_id)
        if ann.get("bbox"):
            x, y, w, h = (float(v) for v in ann["bbox"])
            instance.bbox = (x, y, x + w, y + h)
        if isinstance(ann.get("segmentation"), list):
            polygons = ann["segmentation"]
            instance.polygon = list(polygons[0]) if polygons else None
        instances.append(instance)
    return instances


def iter_coco(path: Path, image_root: Path, errors: list[ItemLoadError] | None = None,
              document: CocoDocument | None = None) -> Iterator[AnnotatedImage]:
    """Stream AnnotatedImages; per-item failures are appended to ``errors``."""
    document = document or read_document(path)
    image_root = Path(image_root)
    for record in document.images:
        file_name = str(record.get("file_name", ""))
        try:
            image = load_image(image_root / file_name)
        except (FileNotFoundError, OSError) as e:
            error = ItemLoadError(record["id"], file_name, str(e))
            logger.warning(str(error))
            if errors is not None:
                errors.append(error)
            continue
        height, width = image.shape[:2]
        if (record.get("height"), record.get("width")) not in ((None, None), (height, width)):
            error = ItemLoadError(record["id"], file_name, f"image is {height}x{width}, document says "
                                  f"{record.get('height')}x{record.get('width')}")
            logger.warning(str(error))
            if errors is not None:
                errors.append(error)
            continue
        annotations = document.annotations_by_image.get(record["id"], [])
        yield AnnotatedImage(
            image=image,
            instances=_instances(record, annotations, document, height, width),
            source="coco",
            image_id=record["id"],
            file_name=file_name,
        )


def load_coco(path: Path, image_root: Path) -> CocoLoadResult:
    document = read_document(path)
    errors: list[ItemLoadError] = []
    images = list(iter_coco(path, image_root, errors=errors, document=document))
    logger.info(
        f"Loaded {len(images)} images from {path} "
        f"({len(document.category_names)} categories, {len(errors)} load errors)"
    )
    logger.info(f"Category mapping (coco id -> index): {document.category_mapping}")
    return CocoLoadResult(images, document.category_mapping, document.category_names, errors)


def to_coco_document(items: Iterable[AnnotatedImage], category_names: list[str],
                     category_ids: list[int] | None = None) -> dict[str, Any]:
    """Serialize annotated images; dense class i is written as ``category_ids[i]`` (default i + 1)."""
    category_ids = category_ids or [i + 1 for i in range(len(category_names))]
    images, annotations = [], []
    for item in items:
        images.append({
            "id": int(item.image_id),
            "file_name": item.file_name,
            "height": item.height,
            "width": item.width,
        })
        for inst in item.instances:
            x1, y1, x2, y2 = inst.bbox
            annotations.append({
                "id": len(annotations) + 1,
                "image_id": int(item.image_id),
                "category_id": int(category_ids[inst.class_id]),
                "segmentation": encode_rle(inst.mask),
                "area": inst.area,
                "bbox": [x1, y1, x2 - x1, y2 - y1],
                "iscrowd": 0,
            })
    categories = [{"id": int(cid), "name": name} for cid, name in zip(category_ids, category_names)]
    return {"images": images, "annotations": annotations, "categories": categories}


def write_document(document: dict[str, Any], path: Path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(document, sort_keys=True, separators=(",", ":")))
