"""Synthetic label dataset assembly: retrieve, judge, filter, and measure coverage."""

from __future__ import annotations

import json
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import Catalog, ContextSample
from .judge import JudgeBackend, filter_by_threshold, score_candidates
from .recmodel import RecommenderParams, predict_topk
from .semindex import EmbeddingProvider, ItemIndex, embed_texts, retrieve_topk


@dataclass(frozen=True)
class SynPair:
    context_id: str
    item_id: str
    score: float | None
    retriever: str  # "semantic" | "sd"


@dataclass(frozen=True)
class SyntheticDataset:
    """Filtered context -> label pairs with per-pair provenance.

    Records are unique per (context_id, item_id), sorted, and never contain an
    item mentioned in the owning context.
    """

    records: tuple[SynPair, ...]
    k: int
    threshold: float
    retriever: str
    judge_id: str
    embedder_id: str = ""
    dropped: int = 0

    @property
    def pairs(self) -> list[tuple[str, str]]:
        return [(r.context_id, r.item_id) for r in self.records]

    def distinct_items(self) -> set[str]:
        return {r.item_id for r in self.records}

    def grouped_by_context(self) -> dict[str, frozenset[str]]:
        groups: dict[str, set[str]] = {}
        for r in self.records:
            groups.setdefault(r.context_id, set()).add(r.item_id)
        return {cid: frozenset(items) for cid, items in groups.items()}

    def metadata(self) -> dict:
        return {"k": self.k, "threshold": self.threshold, "retriever": self.retriever,
                "judge": self.judge_id, "embedder": self.embedder_id,
                "dropped": self.dropped, "pairs": len(self.records)}


def _assemble(per_context: Sequence[tuple[ContextSample, list[SynPair]]],
              **metadata) -> SyntheticDataset:
    """Merge per-context pairs: enforce the mentioned-exclusion invariant,
    deduplicate keeping the maximum score, and sort deterministically."""
    best: dict[tuple[str, str], SynPair] = {}
    for sample, pairs in per_context:
        for pair in pairs:
            if pair.item_id in sample.mentioned_ids:
                continue
            key = (pair.context_id, pair.item_id)
            held = best.get(key)
            if held is None or (pair.score or 0.0) > (held.score or 0.0):
                best[key] = pair
    records = tuple(best[key] for key in sorted(best))
    return SyntheticDataset(records=records, **metadata)


def build_synthetic_dataset(samples: Sequence[ContextSample], index: ItemIndex,
                            provider: EmbeddingProvider, backend: JudgeBackend,
                            catalog: Catalog, k: int, threshold: float,
                            exclude_mentioned: bool = True,
                            max_workers: int = 1) -> SyntheticDataset:
    """Run the full augmentation pipeline over training contexts.

    For each sample: embed the rendered context, retrieve the top-k catalog
    items by inner product (mentioned items excluded by default), score the
    candidates with the judge, and keep pairs whose score strictly exceeds the
    threshold. The union is deduplicated (max score wins) and sorted.
    """
    def process(sample: ContextSample) -> tuple[ContextSample, list[SynPair]]:
        query = embed_texts(provider, [sample.rendered()], keys=[sample.id])[0]
        exclude = sample.mentioned_ids if exclude_mentioned else frozenset()
        hits = retrieve_topk(index, query, k, exclude=exclude)
        if not hits:
            return sample, []
        triples = score_candidates(backend, sample, [item_id for item_id, _ in hits], catalog)
        kept = set(filter_by_threshold(triples, threshold))
        pairs = [SynPair(t.context_id, t.item_id, t.score, "semantic")
                 for t in triples if (t.context_id, t.item_id) in kept]
        return sample, pairs

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            per_context = list(pool.map(process, samples))
    else:
        per_context = [process(sample) for sample in samples]
    return _assemble(per_context, k=k, threshold=threshold, retriever="semantic",
                     judge_id=backend.identity(), embedder_id=provider.identity(),
                     dropped=getattr(backend, "dropped", 0))


def dataset_from_triples(triples, samples: Sequence[ContextSample], k: int,
                         threshold: float, retriever: str = "semantic",
                         judge_id: str = "", embedder_id: str = "",
                         dropped: int = 0) -> SyntheticDataset:
    """Filter pre-scored triples by threshold and assemble a dataset."""
    by_context: dict[str, list] = {}
    for triple in triples:
        by_context.setdefault(triple.context_id, []).append(triple)
    per_context = []
    for sample in samples:
        scored = by_context.get(sample.id, [])
        kept = set(filter_by_threshold(scored, threshold))
        per_context.append((sample, [SynPair(t.context_id, t.item_id, t.score, retriever)
                                     for t in scored
                                     if (t.context_id, t.item_id) in kept]))
    return _assemble(per_context, k=k, threshold=threshold, retriever=retriever,
                     judge_id=judge_id, embedder_id=embedder_id, dropped=dropped)


def build_sd_candidates(samples: Sequence[ContextSample], base_model: RecommenderParams,
                        context_vecs: Mapping[str, np.ndarray], k: int,
                        exclude_mentioned: bool = True) -> dict[str, list[str]]:
    """Self-distillation retrieval: top-k items by the base recommender's logits."""
    out: dict[str, list[str]] = {}
    for sample in samples:
        context = sample if exclude_mentioned else ContextSample(
            id=sample.id, context_turns=(), mentioned_ids=frozenset(),
            label_ids=sample.label_ids, text=sample.rendered())
        out[sample.id] = predict_topk(base_model, context, context_vecs[sample.id], k)
    return out


def build_sd_dataset(samples: Sequence[ContextSample], base_model: RecommenderParams,
                     context_vecs: Mapping[str, np.ndarray], backend: JudgeBackend,
                     catalog: Catalog, k: int, threshold: float) -> SyntheticDataset:
    """SD baseline: collaborative retrieval, then the same judge + filter path."""
    candidates = build_sd_candidates(samples, base_model, context_vecs, k)
    per_context = []
    for sample in samples:
        cands = candidates[sample.id]
        if not cands:
            per_context.append((sample, []))
            continue
        triples = score_candidates(backend, sample, cands, catalog)
        kept = set(filter_by_threshold(triples, threshold))
        per_context.append((sample, [SynPair(t.context_id, t.item_id, t.score, "sd")
                                     for t in triples if (t.context_id, t.item_id) in kept]))
    return _assemble(per_context, k=k, threshold=threshold, retriever="sd",
                     judge_id=backend.identity(), embedder_id="",
                     dropped=getattr(backend, "dropped", 0))


def build_unfiltered_dataset(samples: Sequence[ContextSample], index: ItemIndex,
                             provider: EmbeddingProvider, catalog: Catalog, k: int,
                             noise_frac: float = 0.3, seed: int = 0) -> SyntheticDataset:
    """Scorer ablation: retrieved candidates plus random noise, no filtering.

    Adds ``ceil(noise_frac * k)`` uniformly random non-mentioned catalog items
    per context and keeps everything unjudged (score None).
    """
    rng = random.Random(seed)
    all_ids = catalog.ids_sorted()
    per_context = []
    for sample in samples:
        query = embed_texts(provider, [sample.rendered()], keys=[sample.id])[0]
        hits = retrieve_topk(index, query, k, exclude=sample.mentioned_ids)
        chosen = [item_id for item_id, _ in hits]
        pool = [i for i in all_ids if i not in sample.mentioned_ids and i not in chosen]
        n_noise = min(math.ceil(noise_frac * k), len(pool))
        chosen += rng.sample(pool, n_noise)
        per_context.append((sample, [SynPair(sample.id, item_id, None, "semantic")
                                     for item_id in chosen]))
    return _assemble(per_context, k=k, threshold=0.0, retriever="semantic",
                     judge_id="none", embedder_id=provider.identity(), dropped=0)


def coverage_stats(dataset: SyntheticDataset, catalog: Catalog) -> dict[str, float]:
    """Total pair count and the percentage of distinct catalog items covered."""
    return {"count": float(len(dataset.records)),
            "coverage": 100.0 * len(dataset.distinct_items()) / len(catalog)}


def subsample_pairs(dataset: SyntheticDataset, fraction: float, seed: int) -> SyntheticDataset:
    """Uniform pair subsample with a fixed seed, for data-quantity sweeps."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    n_keep = round(fraction * len(dataset.records))
    rng = random.Random(seed)
    kept = sorted(rng.sample(range(len(dataset.records)), n_keep))
    return replace(dataset, records=tuple(dataset.records[i] for i in kept))


def write_synthetic_dataset(dataset: SyntheticDataset, path: str | Path) -> None:
    """JSONL pairs plus a ``<stem>.meta.json`` sidecar with the build metadata."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for r in dataset.records:
            handle.write(json.dumps({"context_id": r.context_id, "item_id": r.item_id,
                                     "score": r.score, "retriever": r.retriever},
                                    sort_keys=True) + "\n")
    sidecar = path.with_suffix(".meta.json")
    sidecar.write_text(json.dumps(dataset.metadata(), sort_keys=True, indent=2),
                       encoding="utf-8")


def read_synthetic_dataset(path: str | Path) -> SyntheticDataset:
    path = Path(path)
    records = []
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            score = rec["score"]
            records.append(SynPair(rec["context_id"], rec["item_id"],
                                   None if score is None else float(score),
                                   rec["retriever"]))
    sidecar = path.with_suffix(".meta.json")
    meta = json.loads(sidecar.read_text(encoding="utf-8")) if sidecar.exists() else {}
    return SyntheticDataset(records=tuple(records), k=meta.get("k", 0),
                            threshold=meta.get("threshold", 0.0),
                            retriever=meta.get("retriever", "semantic"),
                            judge_id=meta.get("judge", ""),
                            embedder_id=meta.get("embedder", ""),
                            dropped=meta.get("dropped", 0))
