"""Grad-CAM saliency maps and the automated center-focus check.

A saliency map is built from a conv layer's activations weighted by the
spatial mean of the class-score gradient, rectified, bilinearly upsampled to
input resolution and max-normalized. The center-focus check asks what
fraction of saliency mass falls inside a centered box; for a traffic-sign
classifier the sign itself sits at the image center, so decisions driven by
background show up as low central mass.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import DatasetSplit
from .model import ClassifierAdapter


class DegenerateSaliency(Exception):
    """Raised when a check is asked about an identically-zero saliency map."""


@dataclass(frozen=True)
class SaliencyMap:
    values: np.ndarray  # H x W in [0, 1]
    source_layer: str
    class_id: int
    degenerate: bool = False


@dataclass(frozen=True)
class CenterCheckParams:
    region_fraction: float = 0.5
    mass_threshold: float = 0.5
    per_class_pass_rate: float = 0.8
    samples_per_class: int = 60
    seed: int = 0

    def __post_init__(self):
        for name in ("region_fraction", "mass_threshold", "per_class_pass_rate"):
            value = getattr(self, name)
            if not 0 < value <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.samples_per_class <= 0:
            raise ValueError("samples_per_class must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "CenterCheckParams":
        return cls(**obj)


def bilinear_upsample(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear interpolation of a 2-D grid."""
    h, w = values.shape
    if (h, w) == (out_h, out_w):
        return values.copy()
    if h == 1 and w == 1:
        return np.full((out_h, out_w), values[0, 0])
    rows = np.linspace(0, h - 1, out_h) if h > 1 else np.zeros(out_h)
    cols = np.linspace(0, w - 1, out_w) if w > 1 else np.zeros(out_w)
    r0 = np.clip(np.floor(rows).astype(int), 0, h - 1)
    c0 = np.clip(np.floor(cols).astype(int), 0, w - 1)
    r1 = np.clip(r0 + 1, 0, h - 1)
    c1 = np.clip(c0 + 1, 0, w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    top = values[np.ix_(r0, c0)] * (1 - fc) + values[np.ix_(r0, c1)] * fc
    bottom = values[np.ix_(r1, c0)] * (1 - fc) + values[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bottom * fr


def grad_cam(
    model: ClassifierAdapter, x: np.ndarray, class_id: int, layer: str
) -> SaliencyMap:
    """Saliency for `class_id` from the named conv layer."""
    activation, gradient = model.layer_activations_and_grads(x, class_id, layer)
    weights = gradient.mean(axis=(0, 1))  # one weight per channel
    raw = np.maximum((activation * weights).sum(axis=2), 0.0)
    h, w = np.asarray(x).shape[:2]
    upsampled = bilinear_upsample(raw, h, w)
    peak = upsampled.max()
    if peak <= 0:
        return SaliencyMap(
            values=np.zeros((h, w)), source_layer=layer, class_id=class_id,
            degenerate=True,
        )
    return SaliencyMap(values=upsampled / peak, source_layer=layer, class_id=class_id)


def default_layer(model: ClassifierAdapter) -> str:
    """Deepest declared conv layer."""
    if not model.conv_layers:
        raise ValueError("model declares no conv layers")
    return model.conv_layers[-1]


def center_mass_fraction(saliency: SaliencyMap, region_fraction: float) -> float:
    """Saliency mass inside the centered box of side ceil(fraction * side)."""
    if saliency.degenerate:
        raise DegenerateSaliency(
            "saliency map is identically zero; no mass fraction is defined"
        )
    values = saliency.values
    h, w = values.shape
    bh = math.ceil(region_fraction * h)
    bw = math.ceil(region_fraction * w)
    top = (h - bh) // 2
    left = (w - bw) // 2
    inside = values[top : top + bh, left : left + bw].sum()
    return float(inside / values.sum())


@dataclass(frozen=True)
class ClassResult:
    class_id: int
    samples: int
    passed_samples: int
    degenerate_samples: int
    pass_rate: float
    passed: bool
    sampled_with_replacement: bool
    sample_sources: tuple = field(default_factory=tuple)


@dataclass(frozen=True)
class ExplanationAuditResult:
    per_class: tuple  # of ClassResult
    overall_pass: bool
    params: CenterCheckParams
    layer: str

    def to_dict(self) -> dict:
        return {
            "overall_pass": self.overall_pass,
            "layer": self.layer,
            "params": self.params.to_dict(),
            "per_class": [
                {
                    "class_id": r.class_id,
                    "samples": r.samples,
                    "passed_samples": r.passed_samples,
                    "degenerate_samples": r.degenerate_samples,
                    "pass_rate": r.pass_rate,
                    "passed": r.passed,
                    "sampled_with_replacement": r.sampled_with_replacement,
                    "sample_sources": list(r.sample_sources),
                }
                for r in self.per_class
            ],
        }


def explanation_audit(
    model: ClassifierAdapter,
    split: DatasetSplit,
    params: CenterCheckParams,
    layer: str | None = None,
) -> ExplanationAuditResult:
    """Center-focus audit: per class, sample images, Grad-CAM the predicted
    class, and require the central mass fraction to clear the threshold.

    Classes with fewer items than samples_per_class are sampled with
    replacement and flagged. Degenerate (all-zero) maps count as failures.
    """
    if layer is None:
        layer = default_layer(model)
    by_class: dict = {}
    for idx, item in enumerate(split.items):
        by_class.setdefault(item.label, []).append(idx)

    rng = np.random.default_rng(params.seed)
    results = []
    for class_id in sorted(by_class):
        pool = by_class[class_id]
        replace = len(pool) < params.samples_per_class
        chosen = rng.choice(len(pool), size=params.samples_per_class, replace=replace)
        passed = 0
        degenerate = 0
        sources = []
        for pick in chosen:
            item = split.items[pool[int(pick)]]
            sources.append(item.source_name or item.content_hash[:12])
            probs = model.predict_probs(item.pixels[None].astype(np.float32))
            predicted = int(np.argmax(probs[0]))
            saliency = grad_cam(model, item.pixels, predicted, layer)
            if saliency.degenerate:
                degenerate += 1
                continue
            if center_mass_fraction(saliency, params.region_fraction) >= params.mass_threshold:
                passed += 1
        pass_rate = passed / params.samples_per_class
        results.append(
            ClassResult(
                class_id=class_id,
                samples=params.samples_per_class,
                passed_samples=passed,
                degenerate_samples=degenerate,
                pass_rate=pass_rate,
                passed=pass_rate >= params.per_class_pass_rate,
                sampled_with_replacement=replace,
                sample_sources=tuple(sources),
            )
        )
    overall = bool(results) and all(r.passed for r in results)
    return ExplanationAuditResult(
        per_class=tuple(results), overall_pass=overall, params=params, layer=layer
    )
