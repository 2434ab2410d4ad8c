"""Provenance-tagged image catalogs.

A manifest is the unit every pipeline stage exchanges instead of raw
directories: a list of image records, each tagged ``real`` or
``procedural``, plus the canonical (lexicographically ordered) class set.
Manifests are immutable values; ingest, split and merge all return new
ones. Records are always kept sorted by path so that serialization is
deterministic regardless of scan or merge order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DuplicatePath,
    EmptyClass,
    EmptyDataset,
    InsufficientClassSize,
    UnknownClass,
)
from .seeds import derive_seed

PROVENANCE_REAL = "real"
PROVENANCE_PROCEDURAL = "procedural"
_PROVENANCES = (PROVENANCE_REAL, PROVENANCE_PROCEDURAL)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class ImageRecord:
    path: str
    class_label: str
    provenance: str
    width: int
    height: int
    render_spec_id: str | None = None

    def __post_init__(self):
        if self.provenance not in _PROVENANCES:
            raise ValueError(f"provenance must be one of {_PROVENANCES}, got {self.provenance!r}")
        if not self.class_label:
            raise ValueError("class_label must be non-empty")
        if (self.render_spec_id is not None) != (self.provenance == PROVENANCE_PROCEDURAL):
            raise ValueError("render_spec_id must be set iff provenance is procedural")

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "class_label": self.class_label,
            "provenance": self.provenance,
            "render_spec_id": self.render_spec_id,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRecord":
        return cls(
            path=d["path"],
            class_label=d["class_label"],
            provenance=d["provenance"],
            render_spec_id=d.get("render_spec_id"),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[ImageRecord, ...]
    class_set: tuple[str, ...]
    manifest_id: str
    created_at: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if list(self.class_set) != sorted(set(self.class_set)):
            raise ValueError("class_set must be lexicographically sorted and unique")
        labels = set(self.class_set)
        seen = set()
        for rec in self.records:
            if rec.class_label not in labels:
                raise UnknownClass(f"record {rec.path!r} has class {rec.class_label!r} outside class_set")
            if rec.path in seen:
                raise DuplicatePath(f"duplicate path {rec.path!r}")
            seen.add(rec.path)
        object.__setattr__(self, "records", tuple(sorted(self.records, key=lambda r: r.path)))

    def __len__(self) -> int:
        return len(self.records)

    def records_by_class(self) -> dict[str, list[ImageRecord]]:
        by_class: dict[str, list[ImageRecord]] = {c: [] for c in self.class_set}
        for rec in self.records:
            by_class[rec.class_label].append(rec)
        return by_class

    def class_counts(self) -> dict[str, int]:
        return {c: len(recs) for c, recs in self.records_by_class().items()}

    def validate_paths(self) -> None:
        """Check every record's file exists and is readable."""
        for rec in self.records:
            p = Path(rec.path)
            if not p.is_file():
                raise FileNotFoundError(f"manifest {self.manifest_id}: missing image {rec.path}")
            with open(p, "rb") as fh:
                fh.read(1)

    # --- serialization: JSON is the source of truth, CSV is a convenience ---

    def to_dict(self) -> dict:
        return {
            "manifest_id": self.manifest_id,
            "class_set": list(self.class_set),
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            records=tuple(ImageRecord.from_dict(r) for r in d["records"]),
            class_set=tuple(d["class_set"]),
            manifest_id=d["manifest_id"],
        )

    def save_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")
        return path

    @classmethod
    def load_json(cls, path: str | Path) -> "DatasetManifest":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "class_label", "provenance", "render_spec_id", "width", "height"])
            for rec in self.records:
                writer.writerow([
                    rec.path, rec.class_label, rec.provenance,
                    rec.render_spec_id or "", rec.width, rec.height,
                ])
        return path


@dataclass(frozen=True)
class RejectedFile:
    path: str
    reason: str


@dataclass(frozen=True)
class IngestResult:
    manifest: DatasetManifest
    rejects: tuple[RejectedFile, ...]

    def save_rejects_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump([{"path": r.path, "reason": r.reason} for r in self.rejects], fh, indent=2)
            fh.write("\n")
        return path


@dataclass(frozen=True)
class SplitResult:
    train: DatasetManifest
    val: DatasetManifest
    ratio: tuple[int, int]


def _content_fingerprint(records: list[ImageRecord]) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(rec.path.encode())
        h.update(rec.class_label.encode())
        h.update(b"\x00")
    return h.hexdigest()[:12]


def _probe_image(path: Path) -> tuple[int, int]:
    """Read width/height from the header and verify the file decodes cleanly."""
    with Image.open(path) as im:
        size = im.size
        im.verify()
    # verify() catches most truncation; a full decode catches the rest
    with Image.open(path) as im:
        im.load()
    return size


def ingest(root_dir: str | Path, provenance: str, render_spec_id: str | None = None) -> IngestResult:
    """Scan ``<root>/<class>/<images>`` into a manifest plus a rejects report.

    Corrupt or unreadable image files are quarantined into the rejects list
    rather than aborting the scan; non-image files are ignored. An empty
    class directory is an error because silently dropping a class would
    skew every downstream per-class statistic.
    """
    root = Path(root_dir)
    if provenance not in _PROVENANCES:
        raise ValueError(f"provenance must be one of {_PROVENANCES}")
    if not root.is_dir():
        raise EmptyDataset(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise EmptyDataset(f"dataset root {root} contains no class directories")

    records: list[ImageRecord] = []
    rejects: list[RejectedFile] = []
    for class_dir in class_dirs:
        label = class_dir.name.lower()
        files = sorted(
            p for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
        )
        if not files:
            raise EmptyClass(f"class directory {class_dir} holds no image files")
        kept = 0
        for f in files:
            try:
                width, height = _probe_image(f)
            except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
                rejects.append(RejectedFile(path=str(f), reason=str(exc)))
                continue
            records.append(ImageRecord(
                path=str(f),
                class_label=label,
                provenance=provenance,
                render_spec_id=render_spec_id,
                width=width,
                height=height,
            ))
            kept += 1
        if kept == 0:
            raise EmptyClass(f"class directory {class_dir} holds no readable image files")

    class_set = tuple(sorted({r.class_label for r in records}))
    manifest_id = f"{root.name}-{provenance}-{_content_fingerprint(records)}"
    manifest = DatasetManifest(
        records=tuple(records),
        class_set=class_set,
        manifest_id=manifest_id,
        created_at=time.time(),
    )
    return IngestResult(manifest=manifest, rejects=tuple(rejects))


def stratified_split(manifest: DatasetManifest, ratio: tuple[int, int], seed: int) -> SplitResult:
    """Split per class at ``ratio`` (train, val), floor to val, remainder to train.

    The assignment is a seeded uniform shuffle within each class, so the
    same (manifest, ratio, seed) always yields the same partition.
    """
    ratio_train, ratio_val = int(ratio[0]), int(ratio[1])
    if ratio_train < 1 or ratio_val < 1:
        raise ValueError(f"ratio parts must be positive, got {ratio}")
    total_parts = ratio_train + ratio_val
    by_class = manifest.records_by_class()
    for label, recs in by_class.items():
        if len(recs) < total_parts:
            raise InsufficientClassSize(
                f"class {label!r} has {len(recs)} records, needs at least {total_parts} for ratio {ratio_train}:{ratio_val}"
            )

    train_records: list[ImageRecord] = []
    val_records: list[ImageRecord] = []
    for class_index, label in enumerate(manifest.class_set):
        recs = by_class[label]
        n_val = (len(recs) * ratio_val) // total_parts
        rng = np.random.default_rng(derive_seed(seed, "split", class_index))
        order = rng.permutation(len(recs))
        val_records.extend(recs[i] for i in order[:n_val])
        train_records.extend(recs[i] for i in order[n_val:])

    train = DatasetManifest(
        records=tuple(train_records),
        class_set=manifest.class_set,
        manifest_id=f"{manifest.manifest_id}-train",
        created_at=manifest.created_at,
    )
    val = DatasetManifest(
        records=tuple(val_records),
        class_set=manifest.class_set,
        manifest_id=f"{manifest.manifest_id}-val",
        created_at=manifest.created_at,
    )
    return SplitResult(train=train, val=val, ratio=(ratio_train, ratio_val))


def merge(base: DatasetManifest, addition: DatasetManifest) -> DatasetManifest:
    """Concatenate two manifests; the base's class set wins and must cover the addition."""
    unknown = set(addition.class_set) - set(base.class_set)
    if unknown:
        raise UnknownClass(f"addition brings classes outside the base class set: {sorted(unknown)}")
    base_paths = {r.path for r in base.records}
    clashes = [r.path for r in addition.records if r.path in base_paths]
    if clashes:
        raise DuplicatePath(f"{len(clashes)} paths appear in both manifests, e.g. {clashes[0]!r}")
    return DatasetManifest(
        records=base.records + addition.records,
        class_set=base.class_set,
        manifest_id=f"{base.manifest_id}+{addition.manifest_id}",
        created_at=base.created_at,
    )


def from_records(records, class_set=None, manifest_id="manual") -> DatasetManifest:
    """Build a manifest from in-memory records (fixtures, tests, adapters)."""
    records = tuple(records)
    if class_set is None:
        class_set = tuple(sorted({r.class_label for r in records}))
    return DatasetManifest(
        records=records,
        class_set=tuple(class_set),
        manifest_id=manifest_id,
        created_at=time.time(),
    )
