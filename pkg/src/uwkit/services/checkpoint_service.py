"""Checkpoint archives: raw little-endian arrays plus a JSON manifest in one zip file.

Archive layout::

    manifest.json        format, step, epoch, role, run config, categories,
                         array table (name, file, shape, dtype), scalar optimizer state
    arrays/00000.bin     one file per array, C order, little-endian
"""

import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn as nn
from pydantic import ValidationError

from uwkit.exceptions import CheckpointError
from uwkit.models.schemas import RunConfig

logger = logging.getLogger(__name__)

FORMAT = "uwkit-checkpoint"
VERSION = 1
MANIFEST = "manifest.json"


@dataclass
class Checkpoint:
    arrays: dict[str, np.ndarray]
    step: int
    epoch: int
    role: str
    config: RunConfig
    category_names: list[str]
    category_ids: list[int]
    extra: dict[str, Any] = field(default_factory=dict)

    def section(self, prefix: str) -> dict[str, torch.Tensor]:
        """Tensors stored under ``prefix.``, with the prefix stripped."""
        start = prefix + "."
        return {k[len(start):]: torch.from_numpy(v.copy()) for k, v in self.arrays.items() if k.startswith(start)}

    def has_section(self, prefix: str) -> bool:
        return any(k.startswith(prefix + ".") for k in self.arrays)


def _to_le(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    return array.astype(array.dtype.newbyteorder("<"), copy=False)


def _tensor_array(value: torch.Tensor) -> np.ndarray:
    return value.detach().cpu().contiguous().numpy()


class CheckpointService:
    """Service for saving and restoring training state."""

    @staticmethod
    def collect(model: nn.Module, distiller: nn.Module | None = None,
                optimizer: torch.optim.Optimizer | None = None) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
        """Flatten module and optimizer state to named arrays plus JSON-able scalars."""
        arrays = {f"model.{k}": _tensor_array(v) for k, v in model.state_dict().items()}
        if distiller is not None:
            arrays.update({f"distiller.{k}": _tensor_array(v) for k, v in distiller.state_dict().items()})
        scalars: dict[str, Any] = {}
        if optimizer is not None:
            for index, state in optimizer.state_dict()["state"].items():
                for key, value in state.items():
                    if torch.is_tensor(value):
                        arrays[f"optim.{index}.{key}"] = _tensor_array(value)
                    else:
                        scalars[f"optim.{index}.{key}"] = value
        arrays["rng.torch"] = torch.get_rng_state().numpy()
        return arrays, scalars

    @staticmethod
    def save(path: Path, model: nn.Module, config: RunConfig, role: str, step: int, epoch: int,
             category_names: list[str], category_ids: list[int], distiller: nn.Module | None = None,
             optimizer: torch.optim.Optimizer | None = None, extra: dict[str, Any] | None = None) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays, scalars = CheckpointService.collect(model, distiller, optimizer)
        table = []
        tmp = path.with_suffix(path.suffix + ".tmp")
        with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as archive:
            for index, (name, array) in enumerate(arrays.items()):
                le = _to_le(array)
                file_name = f"arrays/{index:05d}.bin"
                archive.writestr(file_name, le.tobytes(order="C"))
                table.append({"name": name, "file": file_name, "shape": list(le.shape), "dtype": le.dtype.str})
            manifest = {
                "format": FORMAT,
                "version": VERSION,
                "step": step,
                "epoch": epoch,
                "role": role,
                "config": config.model_dump(mode="json"),
                "category_names": list(category_names),
                "category_ids": [int(i) for i in category_ids],
                "arrays": table,
                "optimizer_scalars": scalars,
                "extra": extra or {},
            }
            archive.writestr(MANIFEST, json.dumps(manifest, indent=2, sort_keys=True))
        tmp.replace(path)
        logger.info(f"Saved {role} checkpoint at step {step} to {path}")
        return path

    @staticmethod
    def load(path: Path) -> Checkpoint:
        path = Path(path)
        if not path.exists():
            raise CheckpointError(f"Checkpoint not found: {path}")
        try:
            with zipfile.ZipFile(path) as archive:
                manifest = json.loads(archive.read(MANIFEST))
                if manifest.get("format") != FORMAT:
                    raise CheckpointError(f"{path} is not a {FORMAT} archive")
                if manifest.get("version") != VERSION:
                    raise CheckpointError(f"{path} has version {manifest.get('version')}, expected {VERSION}")
                arrays = {}
                for entry in manifest["arrays"]:
                    data = archive.read(entry["file"])
                    array = np.frombuffer(data, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
                    arrays[entry["name"]] = array.astype(array.dtype.newbyteorder("="))
                config = RunConfig.model_validate(manifest["config"])
        except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as e:
            raise CheckpointError(f"Checkpoint {path} is incomplete or corrupt: {e}")
        except ValidationError as e:
            raise CheckpointError(f"Checkpoint {path} holds an invalid run config: {e}")
        extra = dict(manifest.get("extra", {}))
        extra["optimizer_scalars"] = manifest.get("optimizer_scalars", {})
        return Checkpoint(
            arrays=arrays,
            step=int(manifest["step"]),
            epoch=int(manifest["epoch"]),
            role=str(manifest["role"]),
            config=config,
            category_names=list(manifest["category_names"]),
            category_ids=[int(i) for i in manifest["category_ids"]],
            extra=extra,
        )

    @staticmethod
    def restore(checkpoint: Checkpoint, model: nn.Module, distiller: nn.Module | None = None,
                optimizer: torch.optim.Optimizer | None = None, restore_rng: bool = False):
        """Load parameters (strictly), optimizer state and optionally the global torch RNG."""
        try:
            model.load_state_dict(checkpoint.section("model"), strict=True)
            if distiller is not None:
                if not checkpoint.has_section("distiller"):
                    raise CheckpointError("checkpoint has no distillation head state")
                distiller.load_state_dict(checkpoint.section("distiller"), strict=True)
        except RuntimeError as e:
            raise CheckpointError(f"checkpoint does not fit the configured model: {e}")

        if optimizer is not None:
            state: dict[int, dict[str, Any]] = {}
            for name, tensor in checkpoint.section("optim").items():
                index, key = name.split(".", 1)
                state.setdefault(int(index), {})[key] = tensor
            for name, value in checkpoint.extra.get("optimizer_scalars", {}).items():
                index, key = name.removeprefix("optim.").split(".", 1)
                state.setdefault(int(index), {})[key] = value
            # param_groups come from the freshly built optimizer; only per-parameter state is restored
            fresh = optimizer.state_dict()
            fresh["state"] = state
            optimizer.load_state_dict(fresh)

        if restore_rng and "rng.torch" in checkpoint.arrays:
            torch.set_rng_state(torch.from_numpy(checkpoint.arrays["rng.torch"].copy()))
