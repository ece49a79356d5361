"""Synthetic grayscale dataset for end-to-end smoke runs.

Classes are separable by mean intensity band (dark / mid / bright) with
per-image jitter and Gaussian pixel noise — enough signal for a short
training run to reach high validation accuracy, with zero clinical content.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import DEFAULT_CLASS_MAP, build_manifest, save_manifest
from .imaging import GrayImage, save_png

CLASS_MEANS = {"benign": 55.0, "malignant": 130.0, "normal": 205.0}


def generate_synthetic_dataset(out_dir, per_class: int = 60,
                               size: tuple[int, int] = (224, 224), seed: int = 0,
                               jitter: float = 12.0, sigma: float = 18.0) -> Path:
    """Write ``per_class`` noisy band images per class plus a manifest CSV.

    Directory names follow the raw-dataset layout ("Benign cases", ...), so
    the result feeds straight into manifest ingestion and preprocessing.
    Output is a pure function of the arguments. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    label_to_dir = {label: folder for folder, label in DEFAULT_CLASS_MAP.items()}
    for class_index, (label, mean) in enumerate(sorted(CLASS_MEANS.items())):
        folder = out_dir / label_to_dir[label]
        folder.mkdir(parents=True, exist_ok=True)
        for i in range(per_class):
            rng = np.random.default_rng(np.random.SeedSequence((seed, class_index, i)))
            center = mean + rng.uniform(-jitter, jitter)
            pixels = rng.normal(center, sigma, size=size)
            img = GrayImage(np.clip(np.rint(pixels), 0, 255).astype(np.uint8))
            save_png(img, folder / f"case_{i:03d}.png")
    manifest = build_manifest(out_dir)
    manifest_path = out_dir / "manifest.csv"
    save_manifest(manifest, manifest_path)
    return manifest_path
