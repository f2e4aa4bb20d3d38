"""The conv net template and its per-request training loop.

The architecture mirrors the three-conv template the evaluator is shipped
for: three 3x3 conv/pool stages with configurable channel counts, global
average pooling, and a linear head. A structure assigns one channel count
per conv stage, so structures always have length 3 for the default widths.
"""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from .data import NUM_CLASSES, Dataset


class ConvNet(nn.Module):
    def __init__(self, channels: Sequence[int], num_classes: int = NUM_CLASSES):
        super().__init__()
        c1, c2, c3 = channels
        self.features = nn.Sequential(
            nn.Conv2d(1, c1, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(c1, c2, 3, padding=1),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(c2, c3, 3, padding=1),
            nn.ReLU(),
            nn.AdaptiveAvgPool2d(1),
        )
        self.head = nn.Linear(c3, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(x).flatten(1))


@torch.no_grad()
def _accuracy(model: nn.Module, x: torch.Tensor, y: torch.Tensor) -> float:
    model.eval()
    predictions = model(x).argmax(dim=1)
    return (predictions == y).float().mean().item()


def train_and_score(
    dataset: Dataset,
    structure: Sequence[int],
    *,
    seed: int,
    epochs: int,
    lr: float = 0.01,
    batch_size: int = 32,
) -> tuple[float, dict]:
    """Train a fresh net with the given channel counts; return test accuracy.

    All torch randomness (init and batch order) is reseeded from the request
    seed, so identical (structure, seed, epochs) requests reproduce the same
    score on CPU.
    """
    torch.manual_seed(seed)
    model = ConvNet(structure)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()
    n = dataset.train_x.shape[0]
    final_loss = 0.0
    for _ in range(epochs):
        order = torch.randperm(n)
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            optimizer.zero_grad()
            loss = loss_fn(model(dataset.train_x[batch]), dataset.train_y[batch])
            loss.backward()
            optimizer.step()
            final_loss = loss.item()
    accuracy = _accuracy(model, dataset.test_x, dataset.test_y)
    train_accuracy = _accuracy(model, dataset.train_x, dataset.train_y)
    metrics = {
        "train_accuracy": train_accuracy,
        "final_loss": final_loss,
        "epochs": epochs,
    }
    return accuracy, metrics
