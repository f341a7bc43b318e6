"""Parameterized natural-corruption transforms, chiefly a heavy-rain simulation.

All transforms map an H x W x 3 float image in [0, 1] to an image of the same
shape and range and are deterministic for fixed inputs and parameters.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import uniform_filter


@dataclass(frozen=True)
class RainParams:
    drop_density: float = 8.0  # streaks per 1000 pixels
    slant: int = -10  # degrees off vertical, in [-20, 20]
    drop_length: int = 6
    drop_thickness: int = 1
    blur_radius: int = 1
    brightness_factor: float = 0.7
    drop_color: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.drop_density < 0:
            raise ValueError("drop_density must be >= 0")
        if not -20 <= self.slant <= 20:
            raise ValueError("slant must lie in [-20, 20] degrees")
        if self.drop_length <= 0 or self.drop_thickness <= 0:
            raise ValueError("drop_length and drop_thickness must be positive")
        if self.blur_radius < 0:
            raise ValueError("blur_radius must be >= 0")
        if not 0 < self.brightness_factor <= 1:
            raise ValueError("brightness_factor must lie in (0, 1]")
        if not 0 <= self.drop_color <= 1:
            raise ValueError("drop_color must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RainParams":
        return cls(**obj)


def identity_rain_params(seed: int = 0) -> RainParams:
    """Parameters under which heavy_rain is the identity transform."""
    return RainParams(
        drop_density=0.0, blur_radius=0, brightness_factor=1.0, seed=seed
    )


def streak_count(params: RainParams, height: int, width: int) -> int:
    return int(round(params.drop_density * height * width / 1000.0))


def heavy_rain(image: np.ndarray, params: RainParams) -> np.ndarray:
    """Simulate heavy rain: darken, draw slanted streaks, box blur, clamp.

    Streak positions come from a fresh generator seeded by params.seed, so the
    same parameters draw the same rain pattern on every image.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected H x W x 3 image, got shape {image.shape}")
    h, w = image.shape[:2]
    out = image.astype(np.float64, copy=True)

    if params.brightness_factor != 1.0:
        out *= params.brightness_factor

    n_drops = streak_count(params, h, w)
    if n_drops > 0:
        rng = np.random.default_rng(params.seed)
        angle = np.deg2rad(params.slant)
        dx, dy = np.sin(angle), np.cos(angle)  # streaks fall mostly downward
        for _ in range(n_drops):
            y0 = rng.uniform(0, h)
            x0 = rng.uniform(0, w)
            for step in range(params.drop_length):
                yy = int(y0 + dy * step)
                xx = int(x0 + dx * step)
                if not (0 <= yy < h and 0 <= xx < w):
                    continue
                x_hi = min(w, xx + params.drop_thickness)
                out[yy, xx:x_hi, :] = params.drop_color

    if params.blur_radius > 0:
        size = 2 * params.blur_radius + 1
        out = uniform_filter(out, size=(size, size, 1), mode="reflect")

    return np.clip(out, 0.0, 1.0)


def rain_transform(params: RainParams):
    """heavy_rain as a single-argument image transform."""
    return lambda image: heavy_rain(image, params)


def brightness(factor: float):
    """Pixelwise multiply by `factor`, clamped to [0, 1]."""

    def apply(image: np.ndarray) -> np.ndarray:
        return np.clip(image * factor, 0.0, 1.0)

    return apply


def transform_chain(transforms):
    """Compose image transforms left-to-right; the empty chain is identity."""
    transforms = list(transforms)

    def apply(image: np.ndarray) -> np.ndarray:
        for t in transforms:
            image = t(image)
        return image

    return apply
