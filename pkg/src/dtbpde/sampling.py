"""Seed derivation and point samplers.

Every random stream is keyed by ``derive_seed(run_seed, *labels)`` so that
different purposes (subspaces, per-step samples, held-out sets) never share a
stream, and a run is reproducible from its single seed.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np


def derive_seed(seed, *labels) -> int:
    key = json.dumps([int(seed), *[str(x) for x in labels]]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


@dataclass(frozen=True)
class UniformSampler:
    """Uniform points in the hypercube ``[low, high]^d``."""

    d: int
    low: float = -1.0
    high: float = 1.0

    def __call__(self, seed: int, n: int) -> np.ndarray:
        return np.random.default_rng(seed).uniform(self.low, self.high, (n, self.d))


@dataclass(frozen=True)
class GaussianSampler:
    """Isotropic Gaussian points with per-coordinate standard deviation ``std``."""

    mean: tuple
    std: float = 1.0

    @property
    def d(self) -> int:
        return len(self.mean)

    def __call__(self, seed: int, n: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return np.asarray(self.mean, dtype=np.float64) + self.std * rng.standard_normal((n, self.d))


def make_sampler(desc: dict):
    kind = desc.get("kind", "uniform")
    if kind == "uniform":
        return UniformSampler(int(desc["d"]), float(desc.get("low", -1.0)), float(desc.get("high", 1.0)))
    if kind == "gaussian":
        return GaussianSampler(tuple(float(x) for x in desc["mean"]), float(desc.get("std", 1.0)))
    raise ValueError(f"unknown sampler kind {kind!r}")
