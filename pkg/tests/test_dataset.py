"""Manifest ingestion, validation, and CSV round-trip."""

import numpy as np
import pytest

from ct_classify.dataset import (DEFAULT_CLASS_NAMES, DatasetManifest,
                                 ManifestRecord, build_manifest, load_manifest,
                                 save_manifest)
from ct_classify.imaging import GrayImage, save_png


def make_tree(root, counts=(3, 2, 4)):
    folders = ("Benign cases", "Malignant cases", "Normal cases")
    rng = np.random.default_rng(0)
    for folder, n in zip(folders, counts):
        for i in range(n):
            img = GrayImage(rng.integers(0, 256, size=(8, 8), dtype=np.uint8))
            save_png(img, root / folder / f"case_{i:02d}.png")
    return root


def test_build_manifest_counts_and_order(tmp_path):
    make_tree(tmp_path)
    manifest = build_manifest(tmp_path)
    assert len(manifest) == 9
    assert manifest.class_names == DEFAULT_CLASS_NAMES
    assert manifest.counts_by_class() == {"benign": 3, "malignant": 2, "normal": 4}
    paths = [r.path for r in manifest.records]
    assert paths == sorted(paths)  # lexicographic, reproducible
    assert all(r.split == "unsplit" for r in manifest.records)
    assert all("/" in r.path and "\\" not in r.path for r in manifest.records)


def test_build_manifest_missing_class_warns_with_default_map(tmp_path):
    make_tree(tmp_path)
    (tmp_path / "Normal cases" / "case_00.png").unlink()
    (tmp_path / "Normal cases" / "case_01.png").unlink()
    (tmp_path / "Normal cases" / "case_02.png").unlink()
    (tmp_path / "Normal cases" / "case_03.png").unlink()
    (tmp_path / "Normal cases").rmdir()
    with pytest.warns(UserWarning):
        manifest = build_manifest(tmp_path)
    assert manifest.counts_by_class()["normal"] == 0


def test_build_manifest_missing_class_errors_with_explicit_map(tmp_path):
    make_tree(tmp_path)
    with pytest.raises(FileNotFoundError):
        build_manifest(tmp_path, class_map={"Missing cases": "benign"})


def test_manifest_rejects_duplicate_paths():
    rec = ManifestRecord(path="a/x.png", label="benign")
    with pytest.raises(ValueError):
        DatasetManifest(records=(rec, rec), class_names=DEFAULT_CLASS_NAMES)


def test_manifest_rejects_unknown_label():
    rec = ManifestRecord(path="a/x.png", label="mystery")
    with pytest.raises(ValueError):
        DatasetManifest(records=(rec,), class_names=DEFAULT_CLASS_NAMES)


def test_manifest_rejects_unknown_split():
    rec = ManifestRecord(path="a/x.png", label="benign", split="holdout")
    with pytest.raises(ValueError):
        DatasetManifest(records=(rec,), class_names=DEFAULT_CLASS_NAMES)


def test_label_index_and_class_encoding():
    manifest = DatasetManifest(records=(), class_names=DEFAULT_CLASS_NAMES)
    assert manifest.label_index("benign") == 0
    assert manifest.label_index("malignant") == 1
    assert manifest.label_index("normal") == 2


def test_save_load_round_trip(tmp_path):
    make_tree(tmp_path)
    manifest = build_manifest(tmp_path)
    path = tmp_path / "manifest.csv"
    save_manifest(manifest, path)
    text = path.read_text(encoding="utf-8")
    assert text.startswith("path,label,split\n")
    assert "\r" not in text
    again = load_manifest(path)
    assert again == manifest


def test_load_manifest_rejects_bad_header(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("file,class\nx.png,benign\n")
    with pytest.raises(ValueError):
        load_manifest(path)


def test_load_manifest_errors_name_the_line(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("path,label,split\nx.png,benign,train\ny.png,weird,train\n")
    with pytest.raises(ValueError, match=r"m\.csv:3"):
        load_manifest(path)


def test_filter_split_and_retag():
    records = (ManifestRecord("a.png", "benign", "train"),
               ManifestRecord("b.png", "malignant", "val"),
               ManifestRecord("c.png", "benign", "train"))
    manifest = DatasetManifest(records=records, class_names=DEFAULT_CLASS_NAMES)
    train = manifest.filter_split("train")
    assert [r.path for r in train.records] == ["a.png", "c.png"]
    retagged = train.retag("test")
    assert all(r.split == "test" for r in retagged.records)
    with pytest.raises(ValueError):
        manifest.filter_split("nope")
