"""Dataset manifest: class table, per-image file paths, split assignment."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

TRAIN_META = "train-meta"
SEARCH = "search"
SPLITS = (TRAIN_META, SEARCH)

MANIFEST_VERSION = 1


class ManifestError(ValueError):
    """Malformed or inconsistent manifest."""


@dataclass(frozen=True)
class Record:
    image_id: str
    gt_mask: "str | None" = None
    polygons: "str | None" = None
    probmap: "str | None" = None
    rgb: "str | None" = None
    depth: "str | None" = None
    clean_mask: "str | None" = None  # pre-perturbation mask, kept for audits
    split: "str | None" = None

    def to_dict(self) -> dict:
        out = {"image_id": self.image_id}
        for key in ("gt_mask", "polygons", "probmap", "rgb", "depth",
                    "clean_mask", "split"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out


@dataclass(frozen=True)
class Manifest:
    dataset: str
    classes: dict[str, int]  # name -> id; 0 is reserved for void
    records: tuple[Record, ...]

    @property
    def n_classes(self) -> int:
        return max(self.classes.values()) if self.classes else 0

    def class_name(self, class_id: int) -> str:
        for name, cid in self.classes.items():
            if cid == class_id:
                return name
        return f"class{class_id}"

    def record(self, image_id: str) -> Record:
        for r in self.records:
            if r.image_id == image_id:
                return r
        raise ManifestError(f"unknown image id {image_id!r}")

    def split_records(self, split: str) -> list[Record]:
        return [r for r in self.records if r.split == split]

    def validate(self, base_dir: "Path | None" = None,
                 check_files: bool = True) -> "Manifest":
        ids = [r.image_id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate image ids: {dupes}")
        for name, cid in self.classes.items():
            if not isinstance(cid, int) or cid < 1:
                raise ManifestError(f"class {name!r} must map to an id >= 1, got {cid}")
        for r in self.records:
            if r.split is not None and r.split not in SPLITS:
                raise ManifestError(f"record {r.image_id}: bad split {r.split!r}")
            if r.gt_mask is None and r.polygons is None:
                raise ManifestError(f"record {r.image_id}: needs gt_mask or polygons")
            if check_files:
                for key in ("gt_mask", "polygons", "probmap", "rgb", "depth",
                            "clean_mask"):
                    rel = getattr(r, key)
                    if rel is None:
                        continue
                    path = self.resolve(rel, base_dir)
                    if not path.exists():
                        raise ManifestError(
                            f"record {r.image_id}: missing file {path}")
        return self

    @staticmethod
    def resolve(rel: str, base_dir: "Path | None") -> Path:
        p = Path(rel)
        if p.is_absolute() or base_dir is None:
            return p
        return base_dir / p

    def to_json(self) -> str:
        return json.dumps({
            "schema_version": MANIFEST_VERSION,
            "dataset": self.dataset,
            "classes": self.classes,
            "records": [r.to_dict() for r in self.records],
        }, sort_keys=True, indent=1)

    @staticmethod
    def from_json(text: str) -> "Manifest":
        obj = json.loads(text)
        if obj.get("schema_version") != MANIFEST_VERSION:
            raise ManifestError(
                f"unsupported manifest schema version {obj.get('schema_version')}")
        records = tuple(Record(**{k: v for k, v in r.items()})
                        for r in obj["records"])
        return Manifest(dataset=obj["dataset"],
                        classes={k: int(v) for k, v in obj["classes"].items()},
                        records=records)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @staticmethod
    def load(path, check_files: bool = True) -> "Manifest":
        path = Path(path)
        m = Manifest.from_json(path.read_text())
        return m.validate(base_dir=path.parent, check_files=check_files)


def assign_halves(manifest: Manifest, seed: int) -> Manifest:
    """Seed-deterministic half/half split over image ids."""
    import numpy as np
    ids = sorted(r.image_id for r in manifest.records)
    order = np.random.default_rng(seed).permutation(len(ids))
    train = {ids[i] for i in order[:len(ids) // 2]}
    records = tuple(replace(r, split=TRAIN_META if r.image_id in train else SEARCH)
                    for r in manifest.records)
    return replace(manifest, records=records)


def kfold_rounds(manifest: Manifest, k: int, seed: int) -> list[Manifest]:
    """K manifests; in round j fold j is the search split, the rest train."""
    import numpy as np
    if k < 2:
        raise ManifestError(f"kfold requires k >= 2, got {k}")
    ids = sorted(r.image_id for r in manifest.records)
    if len(ids) < k:
        raise ManifestError(f"kfold k={k} exceeds record count {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    fold_of = {ids[i]: int(j % k) for j, i in enumerate(order)}
    rounds = []
    for j in range(k):
        records = tuple(
            replace(r, split=SEARCH if fold_of[r.image_id] == j else TRAIN_META)
            for r in manifest.records)
        rounds.append(replace(manifest, records=records))
    return rounds
