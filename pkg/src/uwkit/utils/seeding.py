"""Seed derivation for deterministic per-item and per-step random streams."""

import hashlib

import numpy as np
import torch


def _key_entropy(key: int | str) -> int:
    if isinstance(key, str):
        return int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "little")
    return int(key)


def derive_seed(seed: int, *keys: int | str) -> int:
    """Stable 32-bit seed for the stream identified by (seed, *keys)."""
    entropy = [int(seed)] + [_key_entropy(k) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint32)[0])


def torch_generator(seed: int, *keys: int | str) -> torch.Generator:
    generator = torch.Generator()
    generator.manual_seed(derive_seed(seed, *keys))
    return generator
