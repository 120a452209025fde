"""Text embedding providers and exact inner-product top-k retrieval."""

from __future__ import annotations

import hashlib
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import AbstractSet, Iterable, Sequence

import numpy as np
import requests

from .corpus import Catalog, render_item_text


class SemIndexError(Exception):
    """Base class for embedding and retrieval failures."""


class ProviderUnavailable(SemIndexError):
    pass


class DimensionMismatch(SemIndexError):
    pass


class EmbeddingProvider:
    """Maps texts to fixed-dimension vectors; deterministic within one configuration.

    ``keys`` are optional stable identifiers (item ids, sample ids) that
    file-backed providers use for lookup instead of the raw text.
    """

    kind: str = "abstract"
    dim: int = 0

    def embed(self, texts: Sequence[str], keys: Sequence[str] | None = None) -> np.ndarray:
        raise NotImplementedError

    def identity(self) -> str:
        return f"{self.kind}:d{self.dim}"


def embed_texts(provider: EmbeddingProvider, texts: Sequence[str],
                keys: Sequence[str] | None = None) -> np.ndarray:
    """Embed texts, validating inputs and the provider's output shape."""
    texts = list(texts)
    if any(not isinstance(t, str) or not t for t in texts):
        raise ValueError("texts must be non-empty strings")
    if keys is not None and len(keys) != len(texts):
        raise ValueError("keys must align with texts")
    vectors = np.asarray(provider.embed(texts, keys=keys), dtype=np.float64)
    if vectors.shape != (len(texts), provider.dim):
        raise DimensionMismatch(
            f"provider returned shape {vectors.shape}, expected {(len(texts), provider.dim)}")
    if not np.all(np.isfinite(vectors)):
        raise ProviderUnavailable("provider returned non-finite values")
    return vectors


class HashedNgramProvider(EmbeddingProvider):
    """Hermetic test encoder: seeded feature hashing of token n-grams.

    Contract (frozen; tests recompute it independently):
      tokens   = lowercase alphanumeric runs of the text
      grams    = all unigrams plus space-joined consecutive bigrams
      for each gram g: h = blake2b(g, digest_size=8, key=str(seed))
                       index = little-endian uint32 of h[:4] modulo dim
                       sign  = +1 if h[4] is even else -1
      vector[index] += sign
    """

    kind = "deterministic-test"

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.seed = seed
        self._key = str(seed).encode("utf-8")

    def identity(self) -> str:
        return f"{self.kind}:d{self.dim}:s{self.seed}"

    def _grams(self, text: str) -> list[str]:
        tokens = re.findall(r"[a-z0-9]+", text.lower())
        return tokens + [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]

    def embed(self, texts: Sequence[str], keys: Sequence[str] | None = None) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for row, text in enumerate(texts):
            for gram in self._grams(text):
                digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8,
                                         key=self._key).digest()
                index = int.from_bytes(digest[:4], "little") % self.dim
                out[row, index] += 1.0 if digest[4] % 2 == 0 else -1.0
        return out


class PrecomputedProvider(EmbeddingProvider):
    """Vectors read from a JSONL file of ``{"key": str, "vector": [float]}`` rows."""

    kind = "precomputed-file"

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._vectors: dict[str, np.ndarray] = {}
        dim = None
        with self.path.open("r", encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    key, vector = record["key"], record["vector"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ProviderUnavailable(f"{self.path}:{line_no}: bad record ({exc})") from exc
                arr = np.asarray(vector, dtype=np.float64)
                if dim is None:
                    dim = arr.shape[0] if arr.ndim == 1 else -1
                if arr.ndim != 1 or arr.shape[0] != dim:
                    raise DimensionMismatch(f"{self.path}:{line_no}: inconsistent dimension")
                self._vectors[key] = arr
        if dim is None:
            raise ProviderUnavailable(f"{self.path}: no vectors found")
        self.dim = dim

    def identity(self) -> str:
        return f"{self.kind}:{self.path.name}:d{self.dim}"

    def embed(self, texts: Sequence[str], keys: Sequence[str] | None = None) -> np.ndarray:
        lookups = keys if keys is not None else texts
        rows = []
        for lookup in lookups:
            if lookup not in self._vectors:
                raise ProviderUnavailable(f"no precomputed vector for {lookup!r}")
            rows.append(self._vectors[lookup])
        return np.stack(rows) if rows else np.zeros((0, self.dim))


class RemoteHttpProvider(EmbeddingProvider):
    """HTTP embedding client: POST ``{"texts": [...]}`` -> ``{"vectors": [[...]]}``.

    Requests are chunked; with ``max_in_flight`` > 1 the chunks run
    concurrently and results are reassembled by position, never by arrival.
    """

    kind = "remote-http"

    def __init__(self, endpoint: str, dim: int, token: str | None = None,
                 batch_size: int = 64, timeout: float = 30.0, max_in_flight: int = 1):
        self.endpoint = endpoint
        self.dim = dim
        self.token = token
        self.batch_size = batch_size
        self.timeout = timeout
        self.max_in_flight = max(1, max_in_flight)

    def identity(self) -> str:
        return f"{self.kind}:{self.endpoint}:d{self.dim}"

    def _post(self, chunk: list[str]) -> list[list[float]]:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            response = requests.post(self.endpoint, json={"texts": chunk},
                                     headers=headers, timeout=self.timeout)
            response.raise_for_status()
            payload = response.json()
        except requests.RequestException as exc:
            raise ProviderUnavailable(f"embedding endpoint failed: {exc}") from exc
        except ValueError as exc:
            raise ProviderUnavailable(f"embedding endpoint returned non-JSON: {exc}") from exc
        if "vectors" not in payload:
            raise ProviderUnavailable("embedding response missing 'vectors'")
        vectors = payload["vectors"]
        if len(vectors) != len(chunk):
            raise ProviderUnavailable(
                f"embedding response has {len(vectors)} vectors for {len(chunk)} texts")
        return vectors

    def embed(self, texts: Sequence[str], keys: Sequence[str] | None = None) -> np.ndarray:
        chunks = [list(texts[i:i + self.batch_size])
                  for i in range(0, len(texts), self.batch_size)]
        if self.max_in_flight > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
                results = list(pool.map(self._post, chunks))
        else:
            results = [self._post(chunk) for chunk in chunks]
        rows = [vec for chunk in results for vec in chunk]
        return np.asarray(rows, dtype=np.float64) if rows else np.zeros((0, self.dim))


@dataclass(frozen=True)
class ItemIndex:
    """Immutable catalog embedding matrix, rows aligned with sorted item ids."""

    item_ids: tuple[str, ...]
    matrix: np.ndarray
    normalized: bool
    zero_rows: tuple[str, ...] = ()
    _id_array: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.item_ids):
            raise DimensionMismatch("matrix rows must match item ids")
        self.matrix.flags.writeable = False
        object.__setattr__(self, "_id_array", np.asarray(self.item_ids))

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.item_ids)


def build_index(catalog: Catalog, provider: EmbeddingProvider,
                normalize: bool = False) -> ItemIndex:
    """Embed every catalog item (sorted by id) into an index.

    With ``normalize`` the rows are scaled to unit L2 norm; zero vectors are
    left untouched and reported in ``zero_rows``.
    """
    if len(catalog) == 0:
        raise ValueError("catalog is empty")
    item_ids = catalog.ids_sorted()
    texts = [render_item_text(catalog.get(item_id)) for item_id in item_ids]
    matrix = embed_texts(provider, texts, keys=item_ids)
    zero_rows: tuple[str, ...] = ()
    if normalize:
        norms = np.linalg.norm(matrix, axis=1)
        zero = norms == 0.0
        zero_rows = tuple(np.asarray(item_ids)[zero])
        safe = np.where(zero, 1.0, norms)
        matrix = matrix / safe[:, None]
    return ItemIndex(item_ids=tuple(item_ids), matrix=matrix,
                     normalized=normalize, zero_rows=zero_rows)


def retrieve_topk(index: ItemIndex, query: np.ndarray, k: int,
                  exclude: AbstractSet[str] = frozenset()) -> list[tuple[str, float]]:
    """Exact max-inner-product search over the index.

    Returns min(k, remaining) ``(item_id, score)`` pairs sorted by inner
    product descending, ties broken by ascending item id; excluded ids never
    appear. Exhaustive, no approximation.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    if query.shape[0] != index.dim:
        raise DimensionMismatch(f"query dim {query.shape[0]} != index dim {index.dim}")
    scores = index.matrix @ query
    if exclude:
        keep = ~np.isin(index._id_array, list(exclude))
        ids, scores = index._id_array[keep], scores[keep]
    else:
        ids = index._id_array
    order = np.lexsort((ids, -scores))[:k]
    return [(str(ids[i]), float(scores[i])) for i in order]
