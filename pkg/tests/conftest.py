"""Shared fixtures: a tiny pre-split image tree for trainer and CLI tests."""

import dataclasses
import sys

import numpy as np
import pytest

from ct_classify.dataset import (DatasetManifest, build_manifest,
                                 save_manifest)
from ct_classify.imaging import GrayImage, save_png

CLASS_BANDS = {"Benign cases": 55, "Malignant cases": 130, "Normal cases": 205}


def write_band_tree(root, per_class=4, side=32, seed=0):
    """Small noisy intensity-band images in the class-per-directory layout."""
    for ci, (folder, band) in enumerate(sorted(CLASS_BANDS.items())):
        rng = np.random.default_rng(np.random.SeedSequence((seed, ci)))
        for i in range(per_class):
            px = np.clip(rng.normal(band, 18, size=(side, side)), 0, 255)
            save_png(GrayImage(px.astype(np.uint8)), root / folder / f"case_{i:02d}.png")


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """(root, manifest_path): 4 images/class at 32x32, pre-tagged 2/1/1."""
    root = tmp_path_factory.mktemp("tiny_dataset")
    write_band_tree(root)
    manifest = build_manifest(root)
    tagged = []
    for label in manifest.class_names:
        records = [r for r in manifest.records if r.label == label]
        for i, rec in enumerate(records):
            split = "train" if i < 2 else ("val" if i == 2 else "test")
            tagged.append(dataclasses.replace(rec, split=split))
    tagged_manifest = DatasetManifest(records=tuple(tagged),
                                      class_names=manifest.class_names)
    manifest_path = root / "manifest.csv"
    save_manifest(tagged_manifest, manifest_path)
    return root, manifest_path


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Print one verdict line per acceptance criterion after every run."""
    module = sys.modules.get("test_acceptance")
    verdicts = getattr(module, "VERDICTS", None) if module else None
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for line in verdicts:
            terminalreporter.write_line(line)
