"""Trainable toy fitness: a small numpy MLP on a synthetic blob dataset.

The backend mirrors the real pruning workflow at a scale where a fitness
evaluation costs milliseconds: a full-width MLP is trained once, each queried
structure inherits a random subset of the full model's weights, trains for a
few epochs, and scores held-out accuracy as its fitness. Trained weights are
kept per structure so the best structure found by a search can be fine-tuned
from where its fitness evaluation left off instead of from scratch.

The dataset places each class on a pair of antipodal Gaussian lobes with
mutually orthogonal class directions. That keeps classes linearly
unseparable (a width-1 network stays near chance) while a modest MLP
reaches high accuracy within a few epochs.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import EvaluationError, EvaluationRequest, EvaluationResult
from ..seeds import derive_seed
from ..space import SearchSpace, validate_structure

logger = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


# -- data -------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def dim(self) -> int:
        return self.train_x.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.train_y.max()) + 1


def _orthonormal_directions(
    num: int, dim: int, rng: np.random.Generator
) -> np.ndarray:
    """Gram-Schmidt over random normal vectors; rows are orthonormal."""
    if num > dim:
        raise ValueError(f"cannot fit {num} orthogonal directions in {dim} dims")
    out = np.empty((num, dim))
    made = 0
    while made < num:
        v = rng.normal(size=dim)
        for u in out[:made]:
            v -= (v @ u) * u
        norm = np.linalg.norm(v)
        if norm < 1e-6:  # pathological draw, try again
            continue
        out[made] = v / norm
        made += 1
    return out


def make_blobs(
    *,
    num_classes: int = 4,
    dim: int = 8,
    train_size: int = 512,
    test_size: int = 256,
    lobes: int = 2,
    radius: float = 3.5,
    noise: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Build the blob classification dataset.

    Each class k gets ``lobes`` Gaussian lobes of scale ``noise``. The first
    lobe sits at ``radius`` along an orthonormal class direction and the
    second (when present) at its antipode, so no single linear cut separates
    a class. Train and test sets are disjoint draws from one stream; labels
    are balanced.
    """
    if lobes < 1:
        raise ValueError("lobes must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, "blobs"))
    directions = _orthonormal_directions(num_classes, dim, rng)
    centers = np.empty((num_classes, lobes, dim))
    for k in range(num_classes):
        centers[k, 0] = radius * directions[k]
        for l in range(1, lobes):
            centers[k, l] = -centers[k, l - 1]

    def draw(size: int) -> tuple[np.ndarray, np.ndarray]:
        labels = np.arange(size) % num_classes
        lobe = rng.integers(0, lobes, size=size)
        x = centers[labels, lobe] + rng.normal(scale=noise, size=(size, dim))
        return x, labels.astype(np.int64)

    train_x, train_y = draw(train_size)
    test_x, test_y = draw(test_size)
    return Dataset(train_x, train_y, test_x, test_y)


# -- model ------------------------------------------------------------------


class ToyModel:
    """Plain-numpy MLP with ReLU hidden layers and a softmax head."""

    def __init__(
        self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]
    ) -> None:
        if len(weights) != len(biases) or not weights:
            raise ValueError("weights and biases must be equal-length, non-empty")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]

    @classmethod
    def init_random(
        cls,
        input_dim: int,
        widths: Sequence[int],
        num_classes: int,
        rng: np.random.Generator,
    ) -> "ToyModel":
        dims = [input_dim, *widths, num_classes]
        weights = []
        biases = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            scale = np.sqrt(2.0 / fan_in)
            weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def hidden_widths(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "ToyModel":
        return ToyModel(self.weights, self.biases)

    def _forward(self, x: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
        """Returns (pre-activations per layer, activations incl. input)."""
        acts = [x]
        pres = []
        a = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            z = a @ w + b
            pres.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        logits = a @ self.weights[-1] + self.biases[-1]
        pres.append(logits)
        return pres, acts

    def logits(self, x: np.ndarray) -> np.ndarray:
        pres, _ = self._forward(np.asarray(x, dtype=np.float64))
        return pres[-1]

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        """Per-class softmax probabilities, one row per sample."""
        return _softmax(self.logits(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=1)

    def accuracy(self, x: np.ndarray, y: np.ndarray) -> float:
        return float(np.mean(self.predict(x) == y))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_gradients(
    model: ToyModel, x: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean cross-entropy loss and its gradients w.r.t. weights and biases."""
    x = np.asarray(x, dtype=np.float64)
    batch = x.shape[0]
    pres, acts = model._forward(x)
    probs = _softmax(pres[-1])
    eps = 1e-12
    loss = float(-np.mean(np.log(probs[np.arange(batch), y] + eps)))

    delta = probs.copy()
    delta[np.arange(batch), y] -= 1.0
    delta /= batch

    grad_w: list[np.ndarray] = [np.empty(0)] * len(model.weights)
    grad_b: list[np.ndarray] = [np.empty(0)] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        grad_w[layer] = acts[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer].T) * (pres[layer - 1] > 0.0)
    return loss, grad_w, grad_b


def train_sgd(
    model: ToyModel,
    x: np.ndarray,
    y: np.ndarray,
    *,
    epochs: int,
    rng: np.random.Generator,
    lr: float = 0.05,
    batch_size: int = 32,
) -> list[float]:
    """Plain minibatch SGD in place; returns the mean loss per epoch.

    Raises:
        TrainingDivergedError: a batch produced a non-finite loss.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    n = x.shape[0]
    epoch_losses = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            loss, grad_w, grad_b = loss_and_gradients(model, x[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {start // batch_size}"
                )
            for w, g in zip(model.weights, grad_w):
                w -= lr * g
            for b, g in zip(model.biases, grad_b):
                b -= lr * g
            losses.append(loss)
        epoch_losses.append(float(np.mean(losses)))
    return epoch_losses


def train_full_model(
    dataset: Dataset,
    widths: Sequence[int],
    *,
    epochs: int,
    seed: int,
    lr: float = 0.05,
    batch_size: int = 32,
) -> ToyModel:
    """Train the full-width reference model the pruned copies inherit from."""
    rng_init = np.random.default_rng(derive_seed(seed, "init"))
    model = ToyModel.init_random(
        dataset.dim, tuple(widths), dataset.num_classes, rng_init
    )
    rng_train = np.random.default_rng(derive_seed(seed, "train"))
    train_sgd(
        model,
        dataset.train_x,
        dataset.train_y,
        epochs=epochs,
        rng=rng_train,
        lr=lr,
        batch_size=batch_size,
    )
    return model


def inherit_weights(
    full: ToyModel, structure: Sequence[int], rng: np.random.Generator
) -> ToyModel:
    """Build a pruned model from a random unit subset of a full model.

    For each hidden layer, a sorted random subset of units of the requested
    size is kept; incoming and outgoing weight slices follow those indices,
    so every kept parameter equals the corresponding full-model parameter.
    """
    widths = full.hidden_widths
    structure = tuple(int(v) for v in structure)
    if len(structure) != len(widths):
        raise ValueError(
            f"structure has {len(structure)} entries, model has "
            f"{len(widths)} hidden layers"
        )
    for c, w in zip(structure, widths):
        if not 1 <= c <= w:
            raise ValueError(f"channel count {c} outside [1, {w}]")

    keeps = [
        np.sort(rng.choice(w, size=c, replace=False))
        for w, c in zip(widths, structure)
    ]
    weights = []
    biases = []
    prev: Optional[np.ndarray] = None
    for layer, keep in enumerate(keeps):
        w = full.weights[layer]
        w = w[:, keep] if prev is None else w[np.ix_(prev, keep)]
        weights.append(w)
        biases.append(full.biases[layer][keep])
        prev = keep
    weights.append(full.weights[-1][prev, :])
    biases.append(full.biases[-1])
    return ToyModel(weights, biases)


# -- evaluator ---------------------------------------------------------------


class ToyTrainerEvaluator:
    """Fitness = held-out accuracy of an inherited, briefly trained MLP.

    Thread-safe; the structure -> trained-weights cache keeps the most recent
    training result for each structure so :func:`fine_tune` can warm-start.
    """

    def __init__(
        self,
        space: SearchSpace,
        dataset: Dataset,
        full_model: ToyModel,
        *,
        lr: float = 0.05,
        batch_size: int = 32,
    ) -> None:
        if len(full_model.hidden_widths) != space.dimension:
            raise ValueError(
                "full model and search space disagree on the number of layers"
            )
        self.space = space
        self.dataset = dataset
        self.full_model = full_model
        self.lr = lr
        self.batch_size = batch_size
        self._cache: dict[tuple[int, ...], ToyModel] = {}
        self._lock = threading.Lock()

    def evaluate(self, request: EvaluationRequest) -> EvaluationResult:
        if request.epochs < 1:
            raise ValueError("toy evaluation needs at least one epoch")
        structure = validate_structure(self.space, request.structure)
        rng_inherit = np.random.default_rng(derive_seed(request.seed, "inherit"))
        model = inherit_weights(self.full_model, structure, rng_inherit)
        rng_train = np.random.default_rng(derive_seed(request.seed, "train"))
        try:
            losses = train_sgd(
                model,
                self.dataset.train_x,
                self.dataset.train_y,
                epochs=request.epochs,
                rng=rng_train,
                lr=self.lr,
                batch_size=self.batch_size,
            )
        except TrainingDivergedError as exc:
            raise EvaluationError(f"structure {structure}: {exc}") from exc
        accuracy = model.accuracy(self.dataset.test_x, self.dataset.test_y)
        with self._lock:
            self._cache[structure] = model.copy()
        return EvaluationResult(
            fitness=accuracy,
            metrics={"train_loss": losses[-1], "epochs": float(request.epochs)},
        )

    def cached_model(self, structure: Sequence[int]) -> Optional[ToyModel]:
        key = tuple(int(v) for v in structure)
        with self._lock:
            model = self._cache.get(key)
        return model.copy() if model is not None else None


def fine_tune(
    structure: Sequence[int],
    cached_model: Optional[ToyModel],
    dataset: Dataset,
    *,
    epochs: int,
    seed: int,
    full_model: Optional[ToyModel] = None,
    lr: float = 0.05,
    batch_size: int = 32,
) -> tuple[ToyModel, float]:
    """Continue training a structure from its cached weights.

    With ``epochs == 0`` the cached weights are scored as they are. When no
    cached weights exist, falls back to a fresh inheritance from
    ``full_model`` (logged as a warning) so a best structure can always be
    realised.

    Returns:
        (fine-tuned model, held-out accuracy).
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if cached_model is not None:
        model = cached_model.copy()
    else:
        if full_model is None:
            raise ValueError("no cached weights and no full model to inherit from")
        logger.warning(
            "no cached weights for structure %s; inheriting fresh", tuple(structure)
        )
        rng = np.random.default_rng(derive_seed(seed, "inherit"))
        model = inherit_weights(full_model, structure, rng)
    if epochs > 0:
        rng = np.random.default_rng(derive_seed(seed, "fine-tune"))
        train_sgd(
            model,
            dataset.train_x,
            dataset.train_y,
            epochs=epochs,
            rng=rng,
            lr=lr,
            batch_size=batch_size,
        )
    return model, model.accuracy(dataset.test_x, dataset.test_y)
