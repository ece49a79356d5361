"""Dataset ingestion: class-per-directory scan into a persistent CSV manifest."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, replace
from pathlib import Path, PurePosixPath

DEFAULT_CLASS_NAMES = ("benign", "malignant", "normal")

# directory name -> class label; label order fixes the 0/1/2 encoding
DEFAULT_CLASS_MAP = {
    "Benign cases": "benign",
    "Malignant cases": "malignant",
    "Normal cases": "normal",
}

SPLIT_TAGS = ("train", "val", "test", "unsplit")

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class ManifestRecord:
    """One image: path relative to the dataset root, class label, split tag."""

    path: str
    label: str
    split: str = "unsplit"


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered image records plus the label vocabulary that encodes them."""

    records: tuple[ManifestRecord, ...]
    class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        seen = set()
        for rec in self.records:
            if rec.path in seen:
                raise ValueError(f"duplicate path in manifest: {rec.path}")
            seen.add(rec.path)
            if rec.label not in self.class_names:
                raise ValueError(f"unknown label {rec.label!r} for {rec.path}")
            if rec.split not in SPLIT_TAGS:
                raise ValueError(f"unknown split tag {rec.split!r} for {rec.path}")

    def __len__(self) -> int:
        return len(self.records)

    def label_index(self, label: str) -> int:
        return self.class_names.index(label)

    def counts_by_class(self) -> dict[str, int]:
        counts = {name: 0 for name in self.class_names}
        for rec in self.records:
            counts[rec.label] += 1
        return counts

    def filter_split(self, split: str) -> "DatasetManifest":
        if split not in SPLIT_TAGS:
            raise ValueError(f"unknown split tag {split!r}")
        return DatasetManifest(
            records=tuple(r for r in self.records if r.split == split),
            class_names=self.class_names,
        )

    def retag(self, split: str) -> "DatasetManifest":
        return DatasetManifest(
            records=tuple(replace(r, split=split) for r in self.records),
            class_names=self.class_names,
        )


def build_manifest(root, class_map: dict[str, str] | None = None) -> DatasetManifest:
    """Scan a class-per-directory tree into a manifest.

    ``class_map`` maps directory names under ``root`` to class labels; when
    omitted, the conventional layout (``Benign cases`` etc.) is assumed and
    absent directories merely produce an empty class with a warning. An
    explicitly mapped directory that does not exist is an error. Records are
    ordered lexicographically by relative path, so the scan is deterministic.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root does not exist: {root}")
    explicit = class_map is not None
    class_map = DEFAULT_CLASS_MAP if class_map is None else class_map

    class_names = tuple(dict.fromkeys(class_map.values()))
    records = []
    for dirname in sorted(class_map, key=lambda d: class_map[d]):
        label = class_map[dirname]
        class_dir = root / dirname
        if not class_dir.is_dir():
            if explicit:
                raise FileNotFoundError(f"class directory does not exist: {class_dir}")
            warnings.warn(f"class {label!r}: no directory {dirname!r} under {root}")
            continue
        paths = sorted(
            str(PurePosixPath(p.relative_to(root)))
            for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
        if not paths:
            warnings.warn(f"class {label!r}: no images under {class_dir}")
        records.extend(ManifestRecord(path=p, label=label) for p in paths)

    records.sort(key=lambda r: r.path)
    return DatasetManifest(records=tuple(records), class_names=class_names)


def save_manifest(manifest: DatasetManifest, path) -> None:
    """Write the manifest as ``path,label,split`` CSV (UTF-8, LF line endings)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "label", "split"])
        for rec in manifest.records:
            writer.writerow([rec.path, rec.label, rec.split])


def load_manifest(path, class_names: tuple[str, ...] = DEFAULT_CLASS_NAMES) -> DatasetManifest:
    """Read a manifest CSV; malformed rows raise ValueError naming the line."""
    path = Path(path)
    records = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "label", "split"]:
            raise ValueError(f"{path}:1: expected header 'path,label,split', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            rec_path, label, split = row
            if label not in class_names:
                raise ValueError(f"{path}:{lineno}: unknown label {label!r}")
            if split not in SPLIT_TAGS:
                raise ValueError(f"{path}:{lineno}: unknown split tag {split!r}")
            records.append(ManifestRecord(path=rec_path, label=label, split=split))
    return DatasetManifest(records=tuple(records), class_names=class_names)
