"""Procedural grating dataset for desk-scale training."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SyntheticDataset:
    images: np.ndarray  # [N, S, S, 3] float32
    labels: np.ndarray  # [N] int64
    seed: int
    num_classes: int
    train_idx: np.ndarray
    val_idx: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def split(self, which: str):
        idx = self.train_idx if which == "train" else self.val_idx
        return self.images[idx], self.labels[idx]


def make_dataset(n: int = 2000, num_classes: int = 4, seed: int = 7, size: int = 64, noise: float = 1.5) -> SyntheticDataset:
    """Oriented sinusoidal gratings, one orientation/frequency family per class.

    Each image gets a jittered orientation and frequency, a random phase,
    random per-channel contrast and additive Gaussian noise. Every fifth
    position of a seeded permutation goes to validation (80/20 split).
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n)
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    yy = (yy / size)[None]
    xx = (xx / size)[None]
    theta = np.pi * labels / num_classes + rng.normal(0, 0.05, n)
    freq = (3.0 + 2.0 * labels) * rng.uniform(0.9, 1.1, n)
    phase = rng.uniform(0, 2 * np.pi, n)
    proj = np.cos(theta)[:, None, None] * xx + np.sin(theta)[:, None, None] * yy
    wave = np.sin(2 * np.pi * freq[:, None, None] * proj + phase[:, None, None])
    contrast = rng.uniform(0.5, 1.0, (n, 1, 1, 3))
    images = wave[..., None] * contrast + rng.normal(0, noise, (n, size, size, 3))
    perm = rng.permutation(n)
    is_val = np.zeros(n, dtype=bool)
    is_val[perm[4::5]] = True
    return SyntheticDataset(
        images.astype(np.float32),
        labels.astype(np.int64),
        seed,
        num_classes,
        np.flatnonzero(~is_val),
        np.flatnonzero(is_val),
    )
