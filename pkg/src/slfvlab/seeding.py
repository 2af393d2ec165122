"""Hierarchical, labelled seed keys.

A single 64-bit master seed fans out into reproducible sub-streams:
``SeedKey(42).child("environment")`` and ``SeedKey(42).child("marks")`` are
independent, and replaying the same path always yields the same stream.
Counter-based coins (:meth:`SeedKey.coins`) give one uniform per integer pair
without materialising a generator, which keeps per-event/per-lineage coins
independent of the order in which they are consumed.
"""
from __future__ import annotations

import hashlib
from functools import cached_property
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels

_MASK64 = (1 << 64) - 1


def label_to_int(label: Union[str, int]) -> int:
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError(f"integer seed labels must be non-negative, got {label}")
        return int(label) & _MASK64
    digest = hashlib.blake2b(str(label).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class SeedKey:
    master: int
    path: tuple = ()

    def __post_init__(self):
        if not 0 <= int(self.master) <= _MASK64:
            raise ValueError(f"master seed must fit in 64 unsigned bits, got {self.master}")

    def child(self, *labels: Union[str, int]) -> "SeedKey":
        return SeedKey(int(self.master), self.path + tuple(label_to_int(x) for x in labels))

    @cached_property
    def key64(self) -> int:
        h = hashlib.blake2b(digest_size=8)
        h.update(int(self.master).to_bytes(8, "little"))
        for p in self.path:
            h.update(int(p).to_bytes(8, "little"))
        return int.from_bytes(h.digest(), "little")

    def rng(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master), spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))

    def coins(self, a, b=0) -> np.ndarray:
        """Uniforms on [0, 1), one per broadcast pair ``(a, b)``."""
        return kernels.hash_uniform(self.key64, a, b)

    def __str__(self) -> str:
        return f"{self.master}:" + "/".join(f"{p:x}" for p in self.path)


SeedLike = Union[SeedKey, int, np.random.Generator]


def as_key(seed: Union[SeedKey, int]) -> SeedKey:
    if isinstance(seed, SeedKey):
        return seed
    if isinstance(seed, (int, np.integer)):
        return SeedKey(int(seed))
    raise TypeError(f"expected SeedKey or int, got {type(seed).__name__}")


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return as_key(seed).rng()
