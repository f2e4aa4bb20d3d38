"""Deterministic synthetic image dataset.

Four classes of 16x16 grayscale patterns: horizontal stripes, vertical
stripes, diagonal stripes, and concentric rings, each with a per-sample
random frequency and phase plus additive Gaussian noise. Everything is
drawn from one seeded generator, so a given seed always produces the same
tensors, independent of the per-request training seeds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

IMAGE_SIZE = 16
NUM_CLASSES = 4

_ANGLES = (0.0, math.pi / 2, math.pi / 4)  # stripe orientations for classes 0..2


@dataclass
class Dataset:
    train_x: torch.Tensor
    train_y: torch.Tensor
    test_x: torch.Tensor
    test_y: torch.Tensor


def _pattern(label: int, freq: float, phase: float) -> torch.Tensor:
    coords = torch.arange(IMAGE_SIZE, dtype=torch.float32)
    v, u = torch.meshgrid(coords, coords, indexing="ij")
    if label < 3:
        angle = _ANGLES[label]
        axis = u * math.cos(angle) + v * math.sin(angle)
        return torch.sin(2 * math.pi * freq * axis / IMAGE_SIZE + phase)
    center = (IMAGE_SIZE - 1) / 2
    radius = torch.sqrt((u - center) ** 2 + (v - center) ** 2)
    return torch.sin(2 * math.pi * freq * radius / (IMAGE_SIZE / 2) + phase)


def _split(count: int, noise: float, generator: torch.Generator):
    images = torch.empty((count, 1, IMAGE_SIZE, IMAGE_SIZE))
    labels = torch.empty(count, dtype=torch.long)
    for i in range(count):
        label = i % NUM_CLASSES
        freq = 1.0 + 2.0 * torch.rand((), generator=generator).item()
        phase = 2 * math.pi * torch.rand((), generator=generator).item()
        clean = _pattern(label, freq, phase)
        jitter = noise * torch.randn(clean.shape, generator=generator)
        images[i, 0] = clean + jitter
        labels[i] = label
    return images, labels


def make_dataset(
    *, train_size: int = 256, test_size: int = 128, noise: float = 0.3, seed: int = 0
) -> Dataset:
    generator = torch.Generator().manual_seed(seed)
    train_x, train_y = _split(train_size, noise, generator)
    test_x, test_y = _split(test_size, noise, generator)
    return Dataset(train_x, train_y, test_x, test_y)
