"""Evaluation metrics: recall, tail recall, collaborative score, semantic score."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import AbstractSet, Mapping, Sequence

import numpy as np

from .corpus import Catalog, ContextSample
from .judge import JudgeBackend, score_candidates
from .recmodel import RecommenderParams, predict_topk


class EvalError(Exception):
    pass


class EmptyLabels(EvalError):
    pass


def recall_at_k(predictions: Sequence[str], labels: AbstractSet[str], k: int) -> float:
    """|top-k predictions intersect labels| / |labels|.

    Predictions must be deduplicated; fewer than k predictions simply means
    the missing slots count as misses.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(set(predictions)) != len(predictions):
        raise ValueError("predictions contain duplicates")
    if not labels:
        raise EmptyLabels("no labels to score against")
    return len(set(predictions[:k]) & labels) / len(labels)


def tail_recall_at_k(predictions: Sequence[str], labels: AbstractSet[str],
                     tail_items: AbstractSet[str], k: int) -> float | None:
    """Recall restricted to long-tail labels; None when no label is tail (skip)."""
    tail_labels = labels & tail_items
    if not tail_labels:
        return None
    return recall_at_k(predictions, tail_labels, k)


@dataclass(frozen=True)
class CooccurrenceModel:
    """Symmetric smoothed-PMI logits between catalog items.

    ``logits[a][b] = log((count(a,b) + 1) / ((count(a) + 1) * (count(b) + 1) / T))``
    where counts are per-sample co-appearances within mentions plus labels and
    T is the number of training samples. The diagonal is excluded from scoring.
    """

    item_ids: tuple[str, ...]
    logits: np.ndarray

    def index_of(self, item_id: str) -> int:
        return self.item_ids.index(item_id)

    def score(self, item_a: str, item_b: str) -> float:
        lookup = {item_id: i for i, item_id in enumerate(self.item_ids)}
        return float(self.logits[lookup[item_a], lookup[item_b]])


def fit_cooccurrence_model(train_samples: Sequence[ContextSample],
                           catalog: Catalog) -> CooccurrenceModel:
    if not train_samples:
        raise ValueError("train_samples must be non-empty")
    item_ids = tuple(catalog.ids_sorted())
    lookup = {item_id: i for i, item_id in enumerate(item_ids)}
    m = len(item_ids)
    total = len(train_samples)
    occur = np.zeros(m)
    joint = np.zeros((m, m))
    for sample in train_samples:
        present = sorted((sample.mentioned_ids | sample.label_ids) & set(item_ids))
        idx = [lookup[i] for i in present]
        occur[idx] += 1.0
        for a_pos, a in enumerate(idx):
            for b in idx[a_pos + 1:]:
                joint[a, b] += 1.0
                joint[b, a] += 1.0
    np.fill_diagonal(joint, occur)  # self co-occurrence; diagonal never scored
    logits = np.log((joint + 1.0) * total / np.outer(occur + 1.0, occur + 1.0))
    return CooccurrenceModel(item_ids=item_ids, logits=logits)


def collaborative_score(model: CooccurrenceModel, recommended: Sequence[str],
                        mentioned: AbstractSet[str]) -> float | None:
    """Mean over recommended r of mean over mentioned m of the co-occurrence logit.

    Self pairs (r == m) are excluded; samples with nothing mentioned are
    skipped (None).
    """
    if not mentioned:
        return None
    lookup = {item_id: i for i, item_id in enumerate(model.item_ids)}
    per_rec = []
    for rec in recommended:
        others = [m for m in mentioned if m != rec]
        if not others:
            continue
        row = model.logits[lookup[rec]]
        per_rec.append(float(np.mean([row[lookup[m]] for m in others])))
    if not per_rec:
        return None
    return float(np.mean(per_rec))


def semantic_score(backend: JudgeBackend, context: ContextSample,
                   recommended: Sequence[str], catalog: Catalog) -> float | None:
    """Mean judge relevance score of the recommended items for this context."""
    triples = score_candidates(backend, context, list(recommended), catalog)
    if not triples:
        return None
    return float(np.mean([t.score for t in triples]))


def _mean(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def evaluate_model(params: RecommenderParams, samples: Sequence[ContextSample],
                   context_vecs: Mapping[str, np.ndarray],
                   recall_ks: Sequence[int] = (1, 10, 50),
                   cooc_model: CooccurrenceModel | None = None,
                   cooc_ks: Sequence[int] = (10, 50),
                   tail_items: AbstractSet[str] | None = None,
                   tail_ks: Sequence[int] = (10, 50),
                   judge: JudgeBackend | None = None,
                   catalog: Catalog | None = None,
                   semantic_ks: Sequence[int] = (1, 5),
                   manifest_ref: str = "") -> list[dict]:
    """Compute all configured metrics over evaluation samples.

    Samples are processed in sorted-id order so the aggregation is invariant
    to input ordering. Returns report entries of the form
    ``{"metric", "k", "value", "n_samples", "manifest"}``.
    """
    samples = sorted(samples, key=lambda s: s.id)
    max_k = max([*recall_ks, *(cooc_ks if cooc_model else []),
                 *(tail_ks if tail_items else []), *(semantic_ks if judge else [])])
    recalls: dict[int, list[float]] = {k: [] for k in recall_ks}
    tails: dict[int, list[float]] = {k: [] for k in tail_ks}
    collabs: dict[int, list[float]] = {k: [] for k in cooc_ks}
    semantics: dict[int, list[float]] = {k: [] for k in semantic_ks}
    for sample in samples:
        preds = predict_topk(params, sample, context_vecs[sample.id], max_k)
        for k in recall_ks:
            recalls[k].append(recall_at_k(preds, sample.label_ids, k))
        if tail_items is not None:
            for k in tail_ks:
                value = tail_recall_at_k(preds, sample.label_ids, tail_items, k)
                if value is not None:
                    tails[k].append(value)
        if cooc_model is not None:
            for k in cooc_ks:
                value = collaborative_score(cooc_model, preds[:k], sample.mentioned_ids)
                if value is not None:
                    collabs[k].append(value)
        if judge is not None:
            if catalog is None:
                raise ValueError("semantic scoring needs the catalog")
            for k in semantic_ks:
                value = semantic_score(judge, sample, preds[:k], catalog)
                if value is not None:
                    semantics[k].append(value)
    entries = []

    def add(metric: str, k: int, values: list[float]):
        mean = _mean(values)
        if mean is not None:
            entries.append({"metric": metric, "k": k, "value": mean,
                            "n_samples": len(values), "manifest": manifest_ref})

    for k in recall_ks:
        add("recall", k, recalls[k])
    if tail_items is not None:
        for k in tail_ks:
            add("tail_recall", k, tails[k])
    if cooc_model is not None:
        for k in cooc_ks:
            add("collab_score", k, collabs[k])
    if judge is not None:
        for k in semantic_ks:
            add("semantic_score", k, semantics[k])
    return entries


def report_to_text(entries: Sequence[dict]) -> str:
    """Aligned plain-text table mirroring the JSON report."""
    header = f"{'metric':<16}{'k':>4}{'value':>12}{'n':>8}"
    lines = [header, "-" * len(header)]
    for entry in entries:
        lines.append(f"{entry['metric']:<16}{entry['k']:>4}"
                     f"{entry['value']:>12.4f}{entry['n_samples']:>8}")
    return "\n".join(lines)


def write_report(entries: Sequence[dict], path: str | Path) -> None:
    Path(path).write_text(json.dumps(list(entries), sort_keys=True, indent=2) + "\n",
                          encoding="utf-8")


def read_report(path: str | Path) -> list[dict]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def report_value(entries: Sequence[dict], metric: str, k: int) -> float:
    for entry in entries:
        if entry["metric"] == metric and entry["k"] == k:
            return entry["value"]
    raise KeyError(f"no entry for {metric}@{k}")
