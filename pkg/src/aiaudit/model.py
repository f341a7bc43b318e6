"""Adapter contract for the audited classifier and a reference training harness.

Audit procedures talk to a ClassifierAdapter: probabilities over classes,
input gradients of the cross-entropy loss, and named conv-layer activations
with class-score gradients. Inputs are H x W x 3 arrays in [0, 1]; any
model-internal normalization is the adapter's business.

The reference model is a small two-conv-block CNN trained at audit
resolution. It exists so audits are reproducible end-to-end, not as a
production architecture.
"""

from __future__ import annotations

import hashlib
import json
import logging
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .dataset import DatasetSplit

logger = logging.getLogger(__name__)


class ContractError(Exception):
    """Raised when an adapter call violates its input contract."""


class CapabilityError(Exception):
    """Raised when a procedure needs a capability the adapter lacks."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    seed: int = 0
    learning_rate: float = 1e-3
    batch_size: int = 64

    def __post_init__(self):
        if self.epochs <= 0:
            raise ValueError("epochs must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


class ClassifierAdapter(ABC):
    """Contract every audited classifier must satisfy."""

    num_classes: int
    input_shape: tuple  # (H, W, 3)
    conv_layers: tuple  # layer names, shallow to deep; empty if none exposed

    has_gradients: bool = False
    has_activations: bool = False

    @abstractmethod
    def predict_probs(self, batch: np.ndarray) -> np.ndarray:
        """N x H x W x 3 batch in [0, 1] -> N x num_classes row-stochastic."""

    def input_gradient(self, x: np.ndarray, y: int) -> np.ndarray:
        """Gradient of cross-entropy loss at label y w.r.t. the input pixels."""
        raise CapabilityError(f"{type(self).__name__} exposes no input gradients")

    def input_gradient_batch(self, batch: np.ndarray, labels: np.ndarray) -> np.ndarray:
        return np.stack(
            [self.input_gradient(x, int(y)) for x, y in zip(batch, labels)]
        )

    def layer_activations_and_grads(self, x: np.ndarray, y: int, layer: str):
        """(activation h x w x K, gradient of class-y pre-softmax score)."""
        raise CapabilityError(f"{type(self).__name__} exposes no layer activations")

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float32)
        if batch.ndim != 4 or batch.shape[1:] != tuple(self.input_shape):
            raise ContractError(
                f"batch shape {batch.shape} does not match N x {self.input_shape}"
            )
        if batch.size and (batch.min() < 0 or batch.max() > 1):
            raise ContractError("batch values must lie in [0, 1]")
        return batch


class _SmallCnn(nn.Module):
    """Two conv blocks plus two dense layers, sized for 32x32-scale inputs."""

    def __init__(self, num_classes: int, resolution: int):
        super().__init__()
        if resolution % 4 != 0:
            raise ValueError("resolution must be divisible by 4")
        self.conv1 = nn.Conv2d(3, 32, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(32, 64, kernel_size=3, padding=1)
        feat = 64 * (resolution // 4) ** 2
        self.fc1 = nn.Linear(feat, 128)
        self.fc2 = nn.Linear(128, num_classes)

    def forward(self, x, capture: dict | None = None):
        a1 = F.relu(self.conv1(x))
        h = F.max_pool2d(a1, 2)
        a2 = F.relu(self.conv2(h))
        h = F.max_pool2d(a2, 2)
        h = torch.flatten(h, 1)
        h = F.relu(self.fc1(h))
        logits = self.fc2(h)
        if capture is not None:
            capture["conv1"] = a1
            capture["conv2"] = a2
        return logits


class SmallCnnAdapter(ClassifierAdapter):
    """Reference classifier: white-box adapter around the small CNN."""

    has_gradients = True
    has_activations = True

    def __init__(self, num_classes: int, resolution: int = 32, metadata: dict | None = None):
        self.num_classes = num_classes
        self.input_shape = (resolution, resolution, 3)
        self.conv_layers = ("conv1", "conv2")
        self.metadata = dict(metadata or {})
        self._net = _SmallCnn(num_classes, resolution)
        self._net.eval()

    def _to_torch(self, batch: np.ndarray) -> torch.Tensor:
        # NHWC [0,1] -> NCHW float32; no further normalization
        return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2)))

    def predict_probs(self, batch: np.ndarray) -> np.ndarray:
        batch = self._check_batch(batch)
        if batch.shape[0] == 0:
            return np.zeros((0, self.num_classes), dtype=np.float32)
        with torch.no_grad():
            logits = self._net(self._to_torch(batch))
            probs = torch.softmax(logits, dim=1)
        return probs.numpy()

    def input_gradient(self, x: np.ndarray, y: int) -> np.ndarray:
        return self.input_gradient_batch(x[None], np.array([y]))[0]

    def input_gradient_batch(self, batch: np.ndarray, labels: np.ndarray) -> np.ndarray:
        batch = self._check_batch(batch)
        if not all(0 <= int(y) < self.num_classes for y in labels):
            raise ContractError("labels outside the class-id range")
        inp = self._to_torch(batch).requires_grad_(True)
        logits = self._net(inp)
        loss = F.cross_entropy(logits, torch.as_tensor(labels, dtype=torch.long),
                               reduction="sum")
        (grad,) = torch.autograd.grad(loss, inp)
        return grad.numpy().transpose(0, 2, 3, 1)

    def layer_activations_and_grads(self, x: np.ndarray, y: int, layer: str):
        if layer not in self.conv_layers:
            raise ContractError(
                f"unknown layer {layer!r}; declared layers: {self.conv_layers}"
            )
        if not 0 <= int(y) < self.num_classes:
            raise ContractError(f"class id {y} outside [0, {self.num_classes})")
        batch = self._check_batch(np.asarray(x, dtype=np.float32)[None])
        capture: dict = {}
        logits = self._net(self._to_torch(batch), capture=capture)
        activation = capture[layer]
        score = logits[0, int(y)]
        (grad,) = torch.autograd.grad(score, activation)
        act = activation.detach().numpy()[0].transpose(1, 2, 0)
        grd = grad.numpy()[0].transpose(1, 2, 0)
        return act, grd

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        """Write weights to `path` and metadata to `path` + '.meta.json'."""
        path = Path(path)
        torch.save(self._net.state_dict(), path)
        meta = {
            "num_classes": self.num_classes,
            "input_shape": list(self.input_shape),
            "conv_layers": list(self.conv_layers),
            **self.metadata,
        }
        Path(str(path) + ".meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path) -> "SmallCnnAdapter":
        path = Path(path)
        meta_path = Path(str(path) + ".meta.json")
        if not path.exists() or not meta_path.exists():
            raise ContractError(f"checkpoint {path} or its metadata sidecar is missing")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        adapter = cls(
            num_classes=meta["num_classes"],
            resolution=meta["input_shape"][0],
            metadata={
                k: v
                for k, v in meta.items()
                if k not in ("num_classes", "input_shape", "conv_layers")
            },
        )
        adapter._net.load_state_dict(torch.load(path, weights_only=True))
        adapter._net.eval()
        return adapter


def checkpoint_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _split_arrays(split: DatasetSplit):
    x = np.stack([item.pixels for item in split.items]).astype(np.float32)
    y = np.array([item.label for item in split.items], dtype=np.int64)
    return x, y


def train_reference(
    train: DatasetSplit,
    val: DatasetSplit,
    cfg: TrainConfig,
    num_classes: int | None = None,
) -> SmallCnnAdapter:
    """Train the reference CNN; deterministic for a fixed seed on one platform."""
    if len(train) == 0:
        raise ContractError("training split is empty")
    x_train, y_train = _split_arrays(train)
    if num_classes is None:
        num_classes = int(y_train.max()) + 1
    if y_train.max() >= num_classes:
        raise ContractError("training labels exceed the declared class count")

    resolution = x_train.shape[1]
    torch.manual_seed(cfg.seed)
    adapter = SmallCnnAdapter(
        num_classes,
        resolution=resolution,
        metadata={"train_config": cfg.to_dict()},
    )
    net = adapter._net
    net.train()
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)

    inputs = torch.from_numpy(x_train.transpose(0, 3, 1, 2))
    targets = torch.from_numpy(y_train)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(inputs))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[start : start + cfg.batch_size].copy())
            optimizer.zero_grad()
            logits = net(inputs[idx])
            loss = F.cross_entropy(logits, targets[idx])
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(idx)
        epoch_loss /= len(inputs)
        net.eval()
        val_acc = (
            evaluate_accuracy(adapter, val) if len(val) else float("nan")
        )
        net.train()
        logger.info(
            "epoch %d: train loss %.4f, val accuracy %.4f", epoch, epoch_loss, val_acc
        )
    net.eval()
    return adapter


def evaluate_accuracy(
    model: ClassifierAdapter, split: DatasetSplit, transform=None, batch_size: int = 256
) -> float:
    """Fraction of items whose argmax prediction (lowest id on ties) is correct."""
    if len(split) == 0:
        raise ContractError("cannot evaluate accuracy on an empty split")
    correct = 0
    items = split.items
    for start in range(0, len(items), batch_size):
        chunk = items[start : start + batch_size]
        batch = np.stack(
            [
                transform(item.pixels) if transform is not None else item.pixels
                for item in chunk
            ]
        ).astype(np.float32)
        probs = model.predict_probs(batch)
        preds = np.argmax(probs, axis=1)  # np.argmax breaks ties at the lowest index
        correct += int(sum(p == item.label for p, item in zip(preds, chunk)))
    return correct / len(items)
