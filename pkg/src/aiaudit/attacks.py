"""White-box evasion attacks: FGSM and L-infinity PGD.

Attacks operate on the classifier's [0, 1] input space; the perturbation
budget epsilon is therefore physically interpretable as a per-pixel bound.
Every iterate is projected back onto the epsilon ball and clamped to [0, 1].
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset import DatasetSplit
from .model import CapabilityError, ClassifierAdapter

DEFAULT_ITERATIONS = 40


@dataclass(frozen=True)
class PgdParams:
    epsilon: float = 0.3
    step_size: float | None = None  # defaults to 2.5 * epsilon / iterations
    iterations: int = DEFAULT_ITERATIONS
    random_start: bool = True
    seed: int = 0
    keep_best: bool = True

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.step_size is not None and self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.iterations <= 0:
            raise ValueError("iterations must be positive")

    @property
    def effective_step_size(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.iterations

    def to_dict(self) -> dict:
        d = asdict(self)
        d["step_size"] = self.effective_step_size
        return d

    @classmethod
    def from_dict(cls, obj: dict) -> "PgdParams":
        return cls(**obj)


def _require_gradients(model: ClassifierAdapter):
    if not model.has_gradients:
        raise CapabilityError(
            f"{type(model).__name__} exposes no input gradients; "
            "gradient-based attacks are unavailable"
        )


def _cross_entropy(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    picked = probs[np.arange(len(labels)), labels]
    return -np.log(np.clip(picked, 1e-12, None))


def fgsm(model: ClassifierAdapter, x: np.ndarray, y: int, epsilon: float) -> np.ndarray:
    """Single signed-gradient step, clamped to [0, 1]; sign(0) leaves pixels alone."""
    return fgsm_batch(model, np.asarray(x)[None], np.array([y]), epsilon)[0]


def fgsm_batch(
    model: ClassifierAdapter, batch: np.ndarray, labels: np.ndarray, epsilon: float
) -> np.ndarray:
    _require_gradients(model)
    batch = np.asarray(batch, dtype=np.float32)
    if epsilon == 0:
        return batch.copy()
    grad = model.input_gradient_batch(batch, labels)
    adv = batch + np.float32(epsilon) * np.sign(grad, dtype=np.float32)
    return np.clip(adv, 0.0, 1.0).astype(np.float32)


def pgd(
    model: ClassifierAdapter, x: np.ndarray, y: int, params: PgdParams
) -> np.ndarray:
    """Iterated projected signed-gradient ascent on the cross-entropy loss."""
    return pgd_batch(model, np.asarray(x)[None], np.array([y]), params)[0]


def pgd_batch(
    model: ClassifierAdapter,
    batch: np.ndarray,
    labels: np.ndarray,
    params: PgdParams,
    seeds=None,
) -> np.ndarray:
    """PGD over a batch; per-image random starts come from `seeds` (default
    params.seed for every image), so results are independent of batching."""
    _require_gradients(model)
    x0 = np.asarray(batch, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    eps = np.float32(params.epsilon)
    if params.epsilon == 0:
        return x0.copy()

    if seeds is None:
        seeds = [params.seed] * len(x0)
    x = x0.copy()
    if params.random_start and params.epsilon > 0:
        noise = np.stack(
            [
                np.random.default_rng(int(s)).uniform(-params.epsilon, params.epsilon,
                                                      size=x0.shape[1:])
                for s in seeds
            ]
        ).astype(np.float32)
        x = np.clip(x0 + noise, 0.0, 1.0)

    step = np.float32(params.effective_step_size)
    best = x.copy()
    best_loss = _cross_entropy(model.predict_probs(best), labels)
    for _ in range(params.iterations):
        grad = model.input_gradient_batch(x, labels)
        x = x + step * np.sign(grad, dtype=np.float32)
        x = np.clip(x, x0 - eps, x0 + eps)
        x = np.clip(x, 0.0, 1.0).astype(np.float32)
        if params.keep_best:
            loss = _cross_entropy(model.predict_probs(x), labels)
            improved = loss > best_loss
            best[improved] = x[improved]
            best_loss = np.maximum(best_loss, loss)
    return best if params.keep_best else x


def robust_accuracy(
    model: ClassifierAdapter,
    split: DatasetSplit,
    params: PgdParams,
    batch_size: int = 128,
) -> float:
    """Accuracy with every input replaced by its PGD adversarial counterpart."""
    _require_gradients(model)
    if len(split) == 0:
        raise ValueError("cannot evaluate robust accuracy on an empty split")
    correct = 0
    items = split.items
    for start in range(0, len(items), batch_size):
        chunk = items[start : start + batch_size]
        batch = np.stack([item.pixels for item in chunk]).astype(np.float32)
        labels = np.array([item.label for item in chunk], dtype=np.int64)
        seeds = [params.seed + start + i for i in range(len(chunk))]
        adv = pgd_batch(model, batch, labels, params, seeds=seeds)
        preds = np.argmax(model.predict_probs(adv), axis=1)
        correct += int(np.sum(preds == labels))
    return correct / len(items)
