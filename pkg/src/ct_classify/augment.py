"""Seeded stochastic augmentation, dataset expansion, and stratified splitting.

A single `apply_augmentation` call consumes draws from its random generator in
a fixed transform order, so a fixed seed replays the exact same augmented
image. Geometric transforms map output pixels back into the source (inverse
mapping) with bilinear sampling and nearest-edge fill; dimensions never
change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path, PurePosixPath

import numpy as np

from .dataset import DatasetManifest, ManifestRecord
from .imaging import GrayImage, load_grayscale, round_half_up, save_png

# per-class totals the default expansion aims for (train+val composition)
DEFAULT_EXPANSION_TARGETS = {"benign": 1282, "malignant": 4090, "normal": 3089}


@dataclass(frozen=True)
class AugmentationSpec:
    """Probabilities and ranges for the nine-transform augmentation recipe.

    Transforms are sampled in this order: flip top-bottom, flip left-right,
    horizontal flip, rotation, shear, height shift, zoom, brightness. The
    1/255 rescale is not applied here; it belongs to tensor conversion at
    training time so stored augmented images stay 8-bit.
    """

    p_flip_tb: float = 0.40
    p_flip_lr: float = 0.30
    p_hflip: float = 0.50
    rotation_deg: tuple[float, float] = (-40.0, 40.0)
    shear_deg: tuple[float, float] = (-20.0, 20.0)
    height_shift_frac: tuple[float, float] = (-0.2, 0.2)
    zoom_range: tuple[float, float] = (0.8, 1.2)
    p_brightness: float = 0.30
    brightness_range: tuple[float, float] = (0.3, 1.2)
    rescale: float = 1.0 / 255.0

    def __post_init__(self):
        for name in ("p_flip_tb", "p_flip_lr", "p_hflip", "p_brightness"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        for name in ("rotation_deg", "shear_deg", "height_shift_frac",
                     "zoom_range", "brightness_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is not ordered: ({lo}, {hi})")


@dataclass(frozen=True)
class SplitRatios:
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15

    def __post_init__(self):
        if min(self.train, self.val, self.test) <= 0.0:
            raise ValueError("split fractions must be positive")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")


def _bilinear_sample(px: np.ndarray, src_r: np.ndarray, src_c: np.ndarray) -> np.ndarray:
    """Sample at fractional coordinates; out-of-bounds clamps to the edge."""
    h, w = px.shape
    src = px.astype(np.float64)
    rows = np.clip(src_r, 0.0, h - 1.0)
    cols = np.clip(src_c, 0.0, w - 1.0)
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = rows - r0
    fc = cols - c0
    out = (src[r0, c0] * (1 - fr) * (1 - fc) + src[r0, c1] * (1 - fr) * fc
           + src[r1, c0] * fr * (1 - fc) + src[r1, c1] * fr * fc)
    return np.clip(round_half_up(out), 0, 255).astype(np.uint8)


def _affine_warp(px: np.ndarray, inv: np.ndarray) -> np.ndarray:
    """Warp with a 2x3 output->source affine map about the image center."""
    h, w = px.shape
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc_grid = np.meshgrid(np.arange(h, dtype=np.float64) - cr,
                              np.arange(w, dtype=np.float64) - cc, indexing="ij")
    src_r = inv[0, 0] * rr + inv[0, 1] * cc_grid + inv[0, 2] + cr
    src_c = inv[1, 0] * rr + inv[1, 1] * cc_grid + inv[1, 2] + cc
    return _bilinear_sample(px, src_r, src_c)


def _rotate(px: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0.0:
        return px
    a = math.radians(degrees)
    inv = np.array([[math.cos(a), -math.sin(a), 0.0],
                    [math.sin(a), math.cos(a), 0.0]])
    return _affine_warp(px, inv)


def _shear(px: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0.0:
        return px
    inv = np.array([[1.0, 0.0, 0.0],
                    [math.tan(math.radians(degrees)), 1.0, 0.0]])
    return _affine_warp(px, inv)


def _shift_rows(px: np.ndarray, shift_px: float) -> np.ndarray:
    if shift_px == 0.0:
        return px
    inv = np.array([[1.0, 0.0, shift_px],
                    [0.0, 1.0, 0.0]])
    return _affine_warp(px, inv)


def _zoom(px: np.ndarray, factor: float) -> np.ndarray:
    if factor == 1.0:
        return px
    inv = np.array([[1.0 / factor, 0.0, 0.0],
                    [0.0, 1.0 / factor, 0.0]])
    return _affine_warp(px, inv)


def apply_augmentation(img: GrayImage, spec: AugmentationSpec,
                       rng: np.random.Generator) -> GrayImage:
    """Draw one augmented variant of ``img``; output dimensions are unchanged."""
    px = img.pixels
    if rng.random() < spec.p_flip_tb:
        px = px[::-1, :]
    if rng.random() < spec.p_flip_lr:
        px = px[:, ::-1]
    if rng.random() < spec.p_hflip:
        px = px[:, ::-1]
    px = _rotate(px, rng.uniform(*spec.rotation_deg))
    px = _shear(px, rng.uniform(*spec.shear_deg))
    px = _shift_rows(px, rng.uniform(*spec.height_shift_frac) * img.height)
    px = _zoom(px, rng.uniform(*spec.zoom_range))
    if rng.random() < spec.p_brightness:
        factor = rng.uniform(*spec.brightness_range)
        px = np.clip(round_half_up(px.astype(np.float64) * factor), 0, 255).astype(np.uint8)
    return GrayImage(np.ascontiguousarray(px))


def _derive_rng(seed: int, class_index: int, item_index: int) -> np.random.Generator:
    # independent sub-stream per generated image, so output is schedule-free
    return np.random.default_rng(np.random.SeedSequence((seed, class_index, item_index)))


def expand_dataset(manifest: DatasetManifest, targets: dict[str, int], seed: int,
                   root, out_dir=None,
                   spec: AugmentationSpec = AugmentationSpec()) -> DatasetManifest:
    """Grow each class to its target count by writing augmented PNG copies.

    Source images are cycled in manifest order; copy ``k`` of a class comes
    from source ``k mod n`` and is written as ``<stem>_aug<idx>.png`` beside
    it (under ``out_dir`` when given, else under ``root``). Originals are
    retained and generated records inherit their source's label and split.
    """
    root = Path(root)
    out_dir = root if out_dir is None else Path(out_dir)

    new_records = []
    for class_index, label in enumerate(manifest.class_names):
        sources = [r for r in manifest.records if r.label == label]
        target = targets.get(label, len(sources))
        if target < len(sources):
            raise ValueError(
                f"target {target} for class {label!r} is below the existing "
                f"count {len(sources)}"
            )
        if not sources and target > 0:
            raise ValueError(f"class {label!r} has no source images to augment")
        for k in range(target - len(sources)):
            src = sources[k % len(sources)]
            rng = _derive_rng(seed, class_index, k)
            image = load_grayscale(root / src.path)
            augmented = apply_augmentation(image, spec, rng)
            rel = PurePosixPath(src.path)
            out_rel = str(rel.with_name(f"{rel.stem}_aug{k // len(sources):03d}.png"))
            save_png(augmented, out_dir / out_rel)
            new_records.append(ManifestRecord(path=out_rel, label=src.label, split=src.split))

    return DatasetManifest(records=manifest.records + tuple(new_records),
                           class_names=manifest.class_names)


def _largest_remainder(n: int, fractions: tuple[float, ...]) -> list[int]:
    ideal = [n * f for f in fractions]
    base = [int(math.floor(x)) for x in ideal]
    leftover = n - sum(base)
    order = sorted(range(len(fractions)), key=lambda i: (-(ideal[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def split_dataset(manifest: DatasetManifest, ratios: SplitRatios, seed: int):
    """Stratified train/val/test split; returns three disjoint manifests.

    Within each class the records are shuffled with the seeded generator and
    sliced by the ratios using largest-remainder rounding, so the partition is
    exhaustive and per-class sizes are off by at most one from the ideal.
    """
    rng = np.random.default_rng(seed)
    parts: dict[str, list[ManifestRecord]] = {"train": [], "val": [], "test": []}
    for label in manifest.class_names:
        items = [r for r in manifest.records if r.label == label]
        if not items:
            raise ValueError(f"class {label!r} has no records to split")
        order = rng.permutation(len(items))
        shuffled = [items[i] for i in order]
        n_train, n_val, n_test = _largest_remainder(
            len(items), (ratios.train, ratios.val, ratios.test))
        parts["train"].extend(shuffled[:n_train])
        parts["val"].extend(shuffled[n_train:n_train + n_val])
        parts["test"].extend(shuffled[n_train + n_val:])

    def as_manifest(records, tag):
        return DatasetManifest(
            records=tuple(ManifestRecord(r.path, r.label, tag) for r in records),
            class_names=manifest.class_names,
        )

    return (as_manifest(parts["train"], "train"),
            as_manifest(parts["val"], "val"),
            as_manifest(parts["test"], "test"))
