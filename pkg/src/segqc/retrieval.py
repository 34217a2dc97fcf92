"""Reference retrieval: exact similarity search over precomputed embeddings.

Embedding computation happens upstream (any image encoder); this module only
stores the vectors and answers exact top-k queries. Reference databases are
small enough (a few thousand vectors) that an exhaustive scan is both faster
to validate and fast enough in practice.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError

SIMILARITY_METRICS = ("cosine", "euclidean", "dot")


@dataclass(frozen=True)
class EmbeddingVector:
    id: str
    values: np.ndarray  # float32, shape (dim,)

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 1 or arr.size == 0:
            raise DataError(f"embedding {self.id!r} must be a nonempty 1-D vector")
        if not np.all(np.isfinite(arr)):
            raise DataError(f"embedding {self.id!r} contains non-finite values")
        if float(np.dot(arr, arr)) == 0.0:
            raise DataError(f"embedding {self.id!r} is the zero vector")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class EmbeddingIndex:
    vectors: tuple

    def __post_init__(self):
        vecs = tuple(self.vectors)
        if not vecs:
            raise DataError("embedding index must contain at least one vector")
        dims = {v.dim for v in vecs}
        if len(dims) != 1:
            raise DataError(f"inconsistent embedding dims: {sorted(dims)}")
        ids = [v.id for v in vecs]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate embedding ids: {dup}")
        object.__setattr__(self, "vectors", vecs)

    def __len__(self) -> int:
        return len(self.vectors)

    @property
    def dim(self) -> int:
        return self.vectors[0].dim

    @property
    def ids(self) -> list:
        return [v.id for v in self.vectors]

    def get(self, id: str) -> EmbeddingVector:
        for v in self.vectors:
            if v.id == id:
                return v
        raise DataError(f"no embedding for id {id!r}")


def cosine_similarity(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """dot(u, v) / (|u| * |v|), computed in double precision."""
    if u.dim != v.dim:
        raise DataError(f"embedding dim mismatch: {u.dim} vs {v.dim}")
    a = u.values.astype(np.float64)
    b = v.values.astype(np.float64)
    na = math.sqrt(float(np.dot(a, a)))
    nb = math.sqrt(float(np.dot(b, b)))
    if na == 0.0 or nb == 0.0:
        raise DataError("cosine similarity undefined for zero-norm vectors")
    return float(np.dot(a, b) / (na * nb))


def _similarities(index: EmbeddingIndex, query: EmbeddingVector, metric: str) -> np.ndarray:
    mat = np.stack([v.values for v in index.vectors]).astype(np.float64)
    q = query.values.astype(np.float64)
    if metric == "cosine":
        norms = np.linalg.norm(mat, axis=1)
        qn = np.linalg.norm(q)
        return mat @ q / (norms * qn)
    if metric == "dot":
        return mat @ q
    if metric == "euclidean":
        # Negated distance so that "larger is more similar" holds uniformly.
        return -np.linalg.norm(mat - q, axis=1)
    raise DataError(f"unknown similarity metric {metric!r}; choose from {SIMILARITY_METRICS}")


def top_k(index: EmbeddingIndex, query: EmbeddingVector, k: int, metric: str = "cosine") -> list:
    """The k most similar records as (id, similarity), descending.

    Returns min(k, len(index)) pairs; exact ties keep insertion order.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    if query.dim != index.dim:
        raise DataError(f"query dim {query.dim} does not match index dim {index.dim}")
    sims = _similarities(index, query, metric)
    order = np.argsort(-sims, kind="stable")[: min(k, len(index))]
    ids = index.ids
    return [(ids[i], float(sims[i])) for i in order]


def load_embeddings(path) -> EmbeddingIndex:
    """Load a JSONL file of {"id": str, "vec": [numbers]} records."""
    vectors = []
    seen = set()
    dim = None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read embeddings file {path}: {exc}")

    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})")
        if not isinstance(rec, dict) or "id" not in rec or "vec" not in rec:
            raise DataError(f"{path}:{lineno}: expected object with 'id' and 'vec'")
        rid = rec["id"]
        if not isinstance(rid, str):
            raise DataError(f"{path}:{lineno}: 'id' must be a string")
        if rid in seen:
            raise DataError(f"{path}:{lineno}: duplicate id {rid!r}")
        vec = rec["vec"]
        if not isinstance(vec, list) or not all(isinstance(x, (int, float)) for x in vec):
            raise DataError(f"{path}:{lineno}: 'vec' must be a list of numbers")
        if dim is None:
            dim = len(vec)
        elif len(vec) != dim:
            raise DataError(
                f"{path}:{lineno}: id {rid!r} has dim {len(vec)}, expected {dim}"
            )
        try:
            vectors.append(EmbeddingVector(rid, np.asarray(vec, dtype=np.float32)))
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}")
        seen.add(rid)

    if not vectors:
        raise DataError(f"embeddings file {path} contains no records")
    return EmbeddingIndex(tuple(vectors))
