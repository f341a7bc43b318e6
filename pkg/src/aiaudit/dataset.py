"""Labeled image loading, leakage-free splitting and independence evidence.

Images are decoded to H x W x 3 float arrays in [0, 1] at the audit
resolution. Every image carries two fingerprints: a SHA-256 digest of the
decoded pixels (exact-duplicate detection) and a 64-bit average hash
(near-duplicate detection), plus a track id recording scene/recording
provenance when known.
"""

from __future__ import annotations

import csv
import hashlib
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image

DEFAULT_RESOLUTION = 32
DEFAULT_PHASH_HAMMING_MAX = 4
DEFAULT_TV_MAX = 0.10

IMAGE_SUFFIXES = (".png", ".ppm", ".jpg", ".jpeg")


class DatasetError(Exception):
    """Raised for unloadable dataset layouts or undecodable images."""


class SplitError(Exception):
    """Raised when a leakage-free split cannot be produced."""


class EvidenceError(Exception):
    """Raised when independence evidence cannot be established."""


def content_hash(pixels: np.ndarray) -> str:
    """SHA-256 of the decoded pixels, quantized to 8 bits per channel."""
    quantized = np.round(np.asarray(pixels, dtype=np.float64) * 255.0).astype(np.uint8)
    return hashlib.sha256(quantized.tobytes()).hexdigest()


def average_hash(pixels: np.ndarray) -> int:
    """64-bit average hash: luma, mean-pool to 8x8, threshold at the mean.

    Invariant under uniform brightness shifts that preserve the per-pixel
    ordering relative to the image mean.
    """
    arr = np.asarray(pixels, dtype=np.float64)
    luma = 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
    pooled = np.asarray(
        Image.fromarray(luma.astype(np.float32), mode="F").resize((8, 8), Image.BOX),
        dtype=np.float64,
    )
    bits = (pooled > pooled.mean()).astype(np.uint64).ravel()
    value = np.uint64(0)
    for bit in bits:
        value = (value << np.uint64(1)) | bit
    return int(value)


def hamming_distance(a: int, b: int) -> int:
    return bin(a ^ b).count("1")


@dataclass(frozen=True)
class LabeledImage:
    pixels: np.ndarray  # H x W x 3, float in [0, 1]
    label: int
    track_id: str = ""
    source_name: str = ""
    content_hash: str = ""
    phash: int = 0

    @classmethod
    def from_pixels(
        cls, pixels: np.ndarray, label: int, track_id: str = "", source_name: str = ""
    ) -> "LabeledImage":
        pixels = np.asarray(pixels, dtype=np.float32)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise DatasetError(f"expected H x W x 3 pixels, got shape {pixels.shape}")
        if pixels.min() < 0 or pixels.max() > 1:
            raise DatasetError("pixel values must lie in [0, 1]")
        return cls(
            pixels=pixels,
            label=int(label),
            track_id=track_id,
            source_name=source_name,
            content_hash=content_hash(pixels),
            phash=average_hash(pixels),
        )


class SplitName(Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


@dataclass(frozen=True)
class DatasetSplit:
    name: SplitName
    items: tuple = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.items)

    def class_histogram(self) -> dict:
        return dict(Counter(item.label for item in self.items))

    def digest(self) -> str:
        """Order-independent SHA-256 over member content hashes."""
        joined = "\n".join(sorted(item.content_hash for item in self.items))
        return hashlib.sha256(joined.encode("ascii")).hexdigest()


def _decode_image(path: Path, resolution: int) -> np.ndarray:
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize(
                (resolution, resolution), Image.BILINEAR
            )
    except Exception as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from exc
    return np.asarray(rgb, dtype=np.float32) / 255.0


def _read_manifest(path: Path) -> dict:
    entries = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = {"filename", "class_id", "track_id"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            raise DatasetError(
                f"{path}: manifest header must contain filename,class_id,track_id"
            )
        for row in reader:
            entries[row["filename"]] = (int(row["class_id"]), row["track_id"])
    return entries


def load_image_folder(
    root, expected_classes: int, resolution: int = DEFAULT_RESOLUTION
):
    """Load `<root>/<class_id>/<image>` into LabeledImages.

    Labels come from the class subdirectory names; an optional
    `<root>/manifest.csv` (filename,class_id,track_id) overrides labels and
    supplies track provenance.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")

    manifest = {}
    manifest_path = root / "manifest.csv"
    if manifest_path.exists():
        manifest = _read_manifest(manifest_path)

    items = []
    for class_dir in sorted(root.iterdir()):
        if not class_dir.is_dir():
            continue
        try:
            label = int(class_dir.name)
        except ValueError:
            raise DatasetError(
                f"unexpected directory {class_dir.name!r}: class directories "
                "must be zero-based decimal integers"
            ) from None
        if not 0 <= label < expected_classes:
            raise DatasetError(
                f"class directory {class_dir.name!r} outside "
                f"[0, {expected_classes})"
            )
        for image_path in sorted(class_dir.iterdir()):
            if image_path.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            rel_name = f"{class_dir.name}/{image_path.name}"
            item_label, track_id = label, ""
            if rel_name in manifest:
                item_label, track_id = manifest[rel_name]
                if not 0 <= item_label < expected_classes:
                    raise DatasetError(
                        f"manifest class id {item_label} for {rel_name} outside "
                        f"[0, {expected_classes})"
                    )
            pixels = _decode_image(image_path, resolution)
            items.append(
                LabeledImage.from_pixels(
                    pixels, item_label, track_id=track_id, source_name=rel_name
                )
            )
    return items


def _track_key(item: LabeledImage, index: int) -> str:
    # empty track id means the image is its own singleton track
    return item.track_id if item.track_id else f"__singleton__{index}"


def split_dataset(items, fractions, seed: int):
    """Track-disjoint, class-stratified train/validation/test split.

    Tracks (scene recordings) are allocated whole, per majority class, using
    largest-remainder rounding of the fractions; deterministic for a fixed
    seed and input order.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise SplitError("fractions must be three positive reals")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must sum to 1, got {sum(fractions)}")
    items = list(items)
    if not items:
        return tuple(DatasetSplit(name) for name in SplitName)

    tracks = defaultdict(list)  # track key -> item indices, insertion ordered
    for idx, item in enumerate(items):
        tracks[_track_key(item, idx)].append(idx)
    if len(tracks) == 1:
        raise SplitError(
            "all items share a single track; a track-disjoint split is impossible"
        )

    # stratify: bucket tracks by majority class (ties to the lowest class id)
    by_class = defaultdict(list)
    for key, idxs in tracks.items():
        counts = Counter(items[i].label for i in idxs)
        top = max(counts.values())
        majority = min(c for c, n in counts.items() if n == top)
        by_class[majority].append(key)

    rng = np.random.default_rng(seed)
    assignment = [[], [], []]  # item indices per split
    for cls in sorted(by_class):
        keys = by_class[cls]
        order = rng.permutation(len(keys))
        shuffled = [keys[i] for i in order]
        counts = _largest_remainder(len(keys), fractions)
        start = 0
        for split_idx, n in enumerate(counts):
            for key in shuffled[start : start + n]:
                assignment[split_idx].extend(tracks[key])
            start += n

    splits = []
    for name, idxs in zip(SplitName, assignment):
        idxs.sort()
        splits.append(DatasetSplit(name, tuple(items[i] for i in idxs)))
    return tuple(splits)


def _largest_remainder(total: int, fractions) -> list:
    raw = [f * total for f in fractions]
    counts = [int(r) for r in raw]
    remainder = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: raw[i] - counts[i], reverse=True)
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def total_variation_distance(hist_a: dict, hist_b: dict) -> float:
    """TV distance between two class-frequency histograms, in [0, 1]."""
    total_a = sum(hist_a.values())
    total_b = sum(hist_b.values())
    if total_a == 0 or total_b == 0:
        raise EvidenceError("cannot compare an empty class histogram")
    classes = set(hist_a) | set(hist_b)
    return 0.5 * sum(
        abs(hist_a.get(c, 0) / total_a - hist_b.get(c, 0) / total_b) for c in classes
    )


@dataclass(frozen=True)
class IndependenceReport:
    exact_overlap_count: dict  # (name, name) -> int, pair names sorted
    near_duplicate_count: dict
    track_overlap_count: dict
    class_histograms: dict  # split name -> {class id: count}
    max_pairwise_tv_distance: float
    disjoint: bool
    same_distribution: bool
    phash_hamming_max: int
    tv_max: float

    def findings(self):
        """Human-readable leakage findings, one per offending pair count."""
        out = []
        for kind, counts in (
            ("exact_overlap", self.exact_overlap_count),
            ("near_duplicate", self.near_duplicate_count),
            ("track_overlap", self.track_overlap_count),
        ):
            for pair, count in counts.items():
                if count > 0:
                    out.append(
                        {"type": kind, "splits": list(pair), "count": count}
                    )
        if self.max_pairwise_tv_distance > self.tv_max:
            out.append(
                {
                    "type": "distribution_mismatch",
                    "max_tv_distance": self.max_pairwise_tv_distance,
                    "tv_max": self.tv_max,
                }
            )
        return out

    def to_dict(self) -> dict:
        def pairs(counts):
            return {f"{a}|{b}": v for (a, b), v in sorted(counts.items())}

        return {
            "exact_overlap_count": pairs(self.exact_overlap_count),
            "near_duplicate_count": pairs(self.near_duplicate_count),
            "track_overlap_count": pairs(self.track_overlap_count),
            "class_histograms": {
                name: {str(c): n for c, n in sorted(hist.items())}
                for name, hist in sorted(self.class_histograms.items())
            },
            "max_pairwise_tv_distance": self.max_pairwise_tv_distance,
            "disjoint": self.disjoint,
            "same_distribution": self.same_distribution,
            "phash_hamming_max": self.phash_hamming_max,
            "tv_max": self.tv_max,
        }


def _pair_counts(split_a: DatasetSplit, split_b: DatasetSplit, hamming_max: int):
    hashes_a = Counter(item.content_hash for item in split_a.items)
    hashes_b = Counter(item.content_hash for item in split_b.items)
    exact = sum(hashes_a[h] * hashes_b[h] for h in hashes_a.keys() & hashes_b.keys())

    ph_a = np.array([item.phash for item in split_a.items], dtype=np.uint64)
    ph_b = np.array([item.phash for item in split_b.items], dtype=np.uint64)
    xor = ph_a[:, None] ^ ph_b[None, :]
    distances = np.zeros(xor.shape, dtype=np.int32)
    for _ in range(64):
        distances += (xor & np.uint64(1)).astype(np.int32)
        xor >>= np.uint64(1)
    near_mask = distances <= hamming_max
    # exact content matches are reported as exact overlap, not near-duplicates
    ch_a = [item.content_hash for item in split_a.items]
    ch_b = [item.content_hash for item in split_b.items]
    near = 0
    for i, j in zip(*np.nonzero(near_mask)):
        if ch_a[i] != ch_b[j]:
            near += 1

    tracks_a = {item.track_id for item in split_a.items if item.track_id}
    tracks_b = {item.track_id for item in split_b.items if item.track_id}
    track = len(tracks_a & tracks_b)
    return exact, near, track


def independence_check(
    train: DatasetSplit,
    val: DatasetSplit,
    test: DatasetSplit,
    phash_hamming_max: int = DEFAULT_PHASH_HAMMING_MAX,
    tv_max: float = DEFAULT_TV_MAX,
) -> IndependenceReport:
    """Dataset-independence evidence for the three splits.

    Exact overlap by content hash, near-duplicates by average-hash Hamming
    distance, track overlap by shared non-empty track ids, and distribution
    similarity by pairwise total variation distance on class histograms.
    """
    splits = {s.name.value: s for s in (train, val, test)}
    for name, split in splits.items():
        if len(split) == 0:
            raise EvidenceError(
                f"split {name!r} is empty; independence evidence cannot be established"
            )

    exact, near, track = {}, {}, {}
    tv_values = []
    names = sorted(splits)
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            pair = (a, b)
            e, n, t = _pair_counts(splits[a], splits[b], phash_hamming_max)
            exact[pair], near[pair], track[pair] = e, n, t
            tv_values.append(
                total_variation_distance(
                    splits[a].class_histogram(), splits[b].class_histogram()
                )
            )

    max_tv = max(tv_values)
    disjoint = all(
        v == 0 for counts in (exact, near, track) for v in counts.values()
    )
    return IndependenceReport(
        exact_overlap_count=exact,
        near_duplicate_count=near,
        track_overlap_count=track,
        class_histograms={name: splits[name].class_histogram() for name in names},
        max_pairwise_tv_distance=max_tv,
        disjoint=disjoint,
        same_distribution=max_tv <= tv_max,
        phash_hamming_max=phash_hamming_max,
        tv_max=tv_max,
    )
