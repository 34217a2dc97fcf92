"""Annotated reference databases and the on-disk dataset layout.

A dataset directory looks like::

    dataset.json           manifest: class_count + [{"id", "role"}, ...]
    images/<id>.png        grayscale images
    masks/<id>.png         ground-truth label masks
    preds/<id>.png         predicted masks (needed for calibration/test ids)
    embeddings.jsonl       optional precomputed embedding vectors

Roles are "reference", "calibration" or "test"; ids without a role can be
assigned one with a seeded split.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DataError
from .image import GrayImage, LabelMask, load_image, load_mask, resize_bilinear, resize_nearest
from .retrieval import EmbeddingIndex, EmbeddingVector, load_embeddings
from .rng import Xorshift64Star

ROLES = ("reference", "calibration", "test")


@dataclass(frozen=True)
class ReferenceRecord:
    """One annotated reference sample: image plus ground-truth mask."""

    id: str
    image: GrayImage
    gt_mask: LabelMask
    embedding: EmbeddingVector | None = None

    def __post_init__(self):
        if (self.image.width, self.image.height) != (self.gt_mask.width, self.gt_mask.height):
            raise DataError(
                f"record {self.id!r}: image {self.image.width}x{self.image.height} and "
                f"mask {self.gt_mask.width}x{self.gt_mask.height} dimensions differ"
            )


@dataclass(frozen=True)
class ReferenceDatabase:
    records: tuple

    def __post_init__(self):
        recs = tuple(self.records)
        if not recs:
            raise DataError("reference database must contain at least one record")
        ids = [r.id for r in recs]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate reference ids: {dup}")
        object.__setattr__(self, "records", recs)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list:
        return [r.id for r in self.records]

    def get(self, id: str) -> ReferenceRecord:
        for r in self.records:
            if r.id == id:
                return r
        raise DataError(f"no reference record with id {id!r}")

    def subset(self, ids) -> "ReferenceDatabase":
        """Records for the given ids, in the given order."""
        return ReferenceDatabase(tuple(self.get(i) for i in ids))

    def embedding_index(self) -> EmbeddingIndex:
        missing = [r.id for r in self.records if r.embedding is None]
        if missing:
            raise DataError(f"records without embeddings: {missing}")
        return EmbeddingIndex(tuple(r.embedding for r in self.records))


@dataclass(frozen=True)
class Dataset:
    """A loaded dataset directory: manifest roles plus all rasters."""

    root: Path
    class_count: int
    ids: tuple
    roles: dict  # id -> role or None
    images: dict  # id -> GrayImage
    masks: dict  # id -> LabelMask
    embeddings: EmbeddingIndex | None

    def ids_with_role(self, role: str) -> list:
        return [i for i in self.ids if self.roles.get(i) == role]

    def record(self, id: str) -> ReferenceRecord:
        emb = None
        if self.embeddings is not None and id in set(self.embeddings.ids):
            emb = self.embeddings.get(id)
        return ReferenceRecord(id, self.images[id], self.masks[id], emb)

    def reference_database(self, ids=None) -> ReferenceDatabase:
        if ids is None:
            ids = self.ids_with_role("reference")
        return ReferenceDatabase(tuple(self.record(i) for i in ids))

    def load_prediction(self, id: str, size: int | None = None) -> LabelMask:
        path = self.root / "preds" / f"{id}.png"
        if not path.exists():
            raise DataError(f"no predicted mask for id {id!r} (expected {path})")
        mask = load_mask(path, self.class_count)
        if size is not None:
            mask = resize_nearest(mask, size, size)
        return mask


def load_dataset(root, size: int | None = None) -> Dataset:
    """Load a dataset directory, optionally resizing every raster to size x size."""
    root = Path(root)
    manifest_path = root / "dataset.json"
    if not manifest_path.exists():
        raise DataError(f"missing dataset manifest {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed manifest {manifest_path}: {exc.msg}")

    if "class_count" not in manifest or "samples" not in manifest:
        raise DataError(f"manifest {manifest_path} must define class_count and samples")
    class_count = int(manifest["class_count"])

    ids, roles = [], {}
    for entry in manifest["samples"]:
        if isinstance(entry, str):
            sid, role = entry, None
        else:
            sid = entry.get("id")
            role = entry.get("role")
        if not isinstance(sid, str):
            raise DataError(f"manifest sample entries need a string id, got {entry!r}")
        if role is not None and role not in ROLES:
            raise DataError(f"unknown role {role!r} for id {sid!r}; choose from {ROLES}")
        if sid in roles:
            raise DataError(f"duplicate id {sid!r} in manifest")
        ids.append(sid)
        roles[sid] = role

    if not ids:
        raise DataError(f"manifest {manifest_path} lists no samples")

    images, masks = {}, {}
    for sid in ids:
        img = load_image(root / "images" / f"{sid}.png")
        mask = load_mask(root / "masks" / f"{sid}.png", class_count)
        if (img.width, img.height) != (mask.width, mask.height):
            raise DataError(f"id {sid!r}: image and mask dimensions differ")
        if size is not None:
            img = resize_bilinear(img, size, size)
            mask = resize_nearest(mask, size, size)
        images[sid] = img
        masks[sid] = mask

    emb_path = root / "embeddings.jsonl"
    embeddings = load_embeddings(emb_path) if emb_path.exists() else None

    return Dataset(root, class_count, tuple(ids), roles, images, masks, embeddings)


def assign_roles(ids, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> dict:
    """Seeded shuffle split of ids into reference/calibration/test roles.

    Fractions must sum to 1; counts are rounded so every id gets a role and
    calibration/test each receive at least one id when fractions allow.
    """
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise DataError(f"split fractions must be three values summing to 1, got {fractions}")
    pool = list(ids)
    rng = Xorshift64Star(seed)
    rng.shuffle(pool)
    n = len(pool)
    n_cal = max(1, round(fractions[1] * n)) if fractions[1] > 0 else 0
    n_test = max(1, round(fractions[2] * n)) if fractions[2] > 0 else 0
    if n_cal + n_test >= n:
        raise DataError(f"dataset of {n} ids is too small for split {fractions}")
    n_ref = n - n_cal - n_test
    roles = {}
    for i, sid in enumerate(pool):
        if i < n_ref:
            roles[sid] = "reference"
        elif i < n_ref + n_cal:
            roles[sid] = "calibration"
        else:
            roles[sid] = "test"
    return roles
