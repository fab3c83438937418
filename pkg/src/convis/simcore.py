"""Image-concept similarity: definition matrix, z scores, rank similarity.

The central objects are the definition matrix (one text embedding per
hierarchy synset) and the rank-similarity score: the fraction of synsets
whose z score (cosine against the definition embedding) is strictly lower
than the queried synset's. Ties therefore share a rank, the best
attainable value is (|T|-1)/|T|, and every value is a multiple of 1/|T|.

All rank computations are pure functions over immutable inputs and can be
called concurrently from any number of workers.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import EncoderBackend
from .errors import CacheError, UnknownSynsetError
from .lexdb import Hierarchy
from .matrixio import read_vector_table, write_vector_table

__all__ = [
    "DefinitionMatrix",
    "build_definition_matrix",
    "z_score",
    "z_all",
    "rank_sim",
    "rank_all",
    "rank_from_z",
    "max_rank_sim",
    "max_rank_sim_rows",
    "top_concepts",
]

DEFMAT_MAGIC = b"CVDM"


@dataclass
class DefinitionMatrix:
    """|T| x D matrix of definition embeddings, rows sorted by synset id.

    ``vectors`` is float64 in memory (an exact upcast of the float32 rows
    stored on disk), so cache hits and fresh builds score identically.
    """

    synset_ids: tuple[str, ...]
    vectors: np.ndarray
    model_id: str
    hierarchy_digest: str
    _index: dict[str, int] = field(init=False, repr=False)
    _row_norms: np.ndarray = field(init=False, repr=False)
    _unique_vectors: np.ndarray = field(init=False, repr=False)
    _unique_inverse: np.ndarray = field(init=False, repr=False)
    _unique_norms: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.synset_ids):
            raise ValueError("vector row count does not match synset id count")
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self._index = {sid: i for i, sid in enumerate(self.synset_ids)}
        if len(self._index) != len(self.synset_ids):
            raise ValueError("synset ids must be unique")
        # Duplicate rows (synsets sharing a definition) are collapsed for
        # scoring: BLAS results can differ in the last ulp by row position,
        # which would silently break exact-tie rank semantics.
        self._unique_vectors, self._unique_inverse = np.unique(
            self.vectors, axis=0, return_inverse=True
        )
        self._unique_inverse = self._unique_inverse.reshape(-1)
        self._unique_norms = np.linalg.norm(self._unique_vectors, axis=1)
        self._row_norms = self._unique_norms[self._unique_inverse]
        if np.any(self._unique_norms == 0.0):
            raise ValueError("definition matrix contains a zero row")

    def __len__(self) -> int:
        return len(self.synset_ids)

    def __contains__(self, synset_id: str) -> bool:
        return synset_id in self._index

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def index_of(self, synset_id: str) -> int:
        try:
            return self._index[synset_id]
        except KeyError:
            raise UnknownSynsetError(synset_id) from None

    def save(self, path: str | Path) -> None:
        write_vector_table(
            path,
            DEFMAT_MAGIC,
            list(self.synset_ids),
            self.vectors.astype(np.float32),
            self.model_id,
            bytes.fromhex(self.hierarchy_digest),
        )

    @classmethod
    def load(cls, path: str | Path) -> "DefinitionMatrix":
        ids, rows, model_id, digest = read_vector_table(path, DEFMAT_MAGIC)
        return cls(
            synset_ids=tuple(ids),
            vectors=rows.astype(np.float64),
            model_id=model_id,
            hierarchy_digest=digest.hex(),
        )


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text)[:48]


def resolve_cache_dir(cache_dir: str | Path | None) -> Path | None:
    """Explicit directory, else the CONVIS_CACHE_DIR environment override."""
    env = os.environ.get("CONVIS_CACHE_DIR")
    if env:
        return Path(env)
    return Path(cache_dir) if cache_dir is not None else None


def definition_cache_path(cache_dir: Path, model_id: str, hierarchy_digest: str) -> Path:
    return cache_dir / f"defmat-{_slug(model_id)}-{hierarchy_digest[:16]}.cvdm"


def build_definition_matrix(
    hier: Hierarchy,
    backend: EncoderBackend,
    cache_dir: str | Path | None = None,
    batch_size: int = 256,
) -> DefinitionMatrix:
    """Embed every synset definition, or reload the cached matrix.

    The cache key is (model_id, hierarchy content digest); a hit performs
    zero backend calls. With no cache directory configured (argument or
    CONVIS_CACHE_DIR), the matrix is rebuilt each time.
    """
    if len(hier) == 0:
        raise ValueError("cannot build a definition matrix for an empty hierarchy")
    digest = hier.content_digest()
    directory = resolve_cache_dir(cache_dir)
    cache_path = None
    if directory is not None:
        cache_path = definition_cache_path(directory, backend.model_id, digest)
        if cache_path.is_file():
            cached = DefinitionMatrix.load(cache_path)
            if cached.model_id != backend.model_id or cached.hierarchy_digest != digest:
                raise CacheError(
                    f"{cache_path}: cached matrix key does not match request "
                    f"(model {cached.model_id!r}, digest {cached.hierarchy_digest[:16]}...)"
                )
            return cached

    ids = list(hier.ids())
    rows = np.empty((len(ids), backend.dimension), dtype=np.float32)
    for start in range(0, len(ids), batch_size):
        chunk = ids[start : start + batch_size]
        embedded = backend.embed_text_batch([hier.synset(sid).definition for sid in chunk])
        for offset, vec in enumerate(embedded):
            rows[start + offset] = vec

    matrix = DefinitionMatrix(
        synset_ids=tuple(ids),
        vectors=rows.astype(np.float64),
        model_id=backend.model_id,
        hierarchy_digest=digest,
    )
    if cache_path is not None:
        directory.mkdir(parents=True, exist_ok=True)
        matrix.save(cache_path)
    return matrix


def _as_rows(x: np.ndarray) -> np.ndarray:
    rows = np.asarray(x, dtype=np.float64)
    if rows.ndim == 1:
        rows = rows[np.newaxis, :]
    if rows.ndim != 2:
        raise ValueError(f"expected a vector or matrix of vectors, got ndim={rows.ndim}")
    return rows


def z_matrix(embeddings: np.ndarray, defmat: DefinitionMatrix) -> np.ndarray:
    """Cosine of each embedding row against every definition row.

    Shape (n, |T|); one matrix product per call. Values are clamped to
    [-1, 1] against rounding. Identical embedding rows and identical
    definition rows are guaranteed identical outputs (exact ties), via
    row deduplication around the product.
    """
    rows = _as_rows(embeddings)
    if rows.shape[1] != defmat.dimension:
        raise ValueError(
            f"embedding dimension {rows.shape[1]} != matrix dimension {defmat.dimension}"
        )
    urows, uinv = np.unique(rows, axis=0, return_inverse=True)
    uinv = uinv.reshape(-1)
    unorms = np.linalg.norm(urows, axis=1)
    if np.any(unorms == 0.0):
        raise ValueError("cannot score a zero embedding vector")
    z = (urows @ defmat._unique_vectors.T) / (
        unorms[:, np.newaxis] * defmat._unique_norms[np.newaxis, :]
    )
    z = np.clip(z, -1.0, 1.0)
    return z[uinv][:, defmat._unique_inverse]


def z_all(x_emb: np.ndarray, defmat: DefinitionMatrix) -> np.ndarray:
    """z score of one embedding against every synset, in id order."""
    return z_matrix(x_emb, defmat)[0]


def z_score(x_emb: np.ndarray, synset_id: str, defmat: DefinitionMatrix) -> float:
    """Cosine between an embedding and one synset's definition embedding."""
    return float(z_all(x_emb, defmat)[defmat.index_of(synset_id)])


def rank_from_z(z: np.ndarray) -> np.ndarray:
    """Rank similarity for every entry of a z vector.

    One sort; tie groups share the count of strictly-smaller values.
    """
    z = np.asarray(z, dtype=np.float64)
    uniq, inverse, counts = np.unique(z, return_inverse=True, return_counts=True)
    strictly_smaller = np.concatenate(([0], np.cumsum(counts)[:-1]))
    return strictly_smaller[inverse] / z.shape[0]


def rank_all(x_emb: np.ndarray, defmat: DefinitionMatrix) -> np.ndarray:
    """Rank similarity of one embedding against every synset, in id order."""
    return rank_from_z(z_all(x_emb, defmat))


def rank_sim(x_emb: np.ndarray, synset_id: str, defmat: DefinitionMatrix) -> float:
    """Fraction of synsets with strictly lower z than ``synset_id``."""
    z = z_all(x_emb, defmat)
    target = z[defmat.index_of(synset_id)]
    return float(np.count_nonzero(z < target) / len(defmat))


def _descendant_indices(synset_id: str, hier: Hierarchy, defmat: DefinitionMatrix) -> np.ndarray:
    members = hier.descendants(synset_id)
    return np.fromiter(
        (defmat.index_of(sid) for sid in members), dtype=np.intp, count=len(members)
    )


def max_rank_sim_rows(
    embeddings: np.ndarray,
    synset_id: str,
    hier: Hierarchy,
    defmat: DefinitionMatrix,
) -> np.ndarray:
    """max_rank_sim for each embedding row (shared descendant lookup).

    Rank is monotone non-decreasing in z, so the maximum over the
    descendant set is attained at the descendant with maximal z; one
    strict-count per row replaces |S| full rank computations.
    """
    idx = _descendant_indices(synset_id, hier, defmat)
    z = z_matrix(embeddings, defmat)
    best = z[:, idx].max(axis=1)
    return np.count_nonzero(z < best[:, np.newaxis], axis=1) / len(defmat)


def max_rank_sim(
    x_emb: np.ndarray, synset_id: str, hier: Hierarchy, defmat: DefinitionMatrix
) -> float:
    """Maximum rank similarity over the synset's descendant set."""
    return float(max_rank_sim_rows(x_emb, synset_id, hier, defmat)[0])


def top_concepts(
    x_emb: np.ndarray, defmat: DefinitionMatrix, k: int
) -> list[tuple[str, float]]:
    """The k highest-ranked synsets, descending, ids breaking ties."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranks = rank_all(x_emb, defmat)
    order = sorted(range(len(defmat)), key=lambda i: (-ranks[i], defmat.synset_ids[i]))
    return [(defmat.synset_ids[i], float(ranks[i])) for i in order[:k]]
