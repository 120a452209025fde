"""Planted-topic synthetic corpus for offline experiments and acceptance runs.

Two orthogonal signals are planted so that semantic and collaborative skills
can be measured separately:

* semantics — every item carries a 3-word subset of its topic's six flavor
  words; a dialogue asks for a 3-word flavor combination, and items overlapping
  it in at least two words "match" the request.
* collaboration — each topic's items are partitioned into cliques; a dialogue
  mentions items from one clique and its labels come from that same clique.
  Clique membership is invisible in any text, so it can only be learned from
  co-occurrence in the training labels.

Train-split labels and mentions are popularity-skewed (Zipf within the clique)
while valid/test labels are uniform over the clique items matching the flavor
request, so models that only memorize popular items generalize measurably
worse than models that learn both planted signals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .corpus import Catalog, CatalogItem, Dialogue, Speaker, Split, Utterance

TOPIC_NAMES = ("amber", "breeze", "cinder", "dune", "ember", "frost", "grove", "harbor")
WORDS_PER_TOPIC = 7
WORDS_PER_ITEM = 3
MIN_WORD_OVERLAP = 2


@dataclass
class ToyCorpus:
    dialogues: list[Dialogue]
    catalog: Catalog
    item_topics: dict[str, str]
    context_topics: dict[str, str]
    item_words: dict[str, frozenset[str]]
    zipf_s: float
    seed: int

    def write(self, directory: str | Path) -> dict[str, Path]:
        """Emit corpus.jsonl / catalog.jsonl / topics.json under ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        corpus_path = directory / "corpus.jsonl"
        with corpus_path.open("w", encoding="utf-8") as handle:
            for dlg in self.dialogues:
                record = {
                    "id": dlg.id,
                    "split": dlg.split.value,
                    "turns": [
                        {"speaker": turn.speaker.value, "text": turn.text,
                         "mentions": list(turn.mentioned_items),
                         **({"labels": list(turn.labels)} if turn.labels else {})}
                        for turn in dlg.turns
                    ],
                }
                handle.write(json.dumps(record, sort_keys=True) + "\n")
        catalog_path = directory / "catalog.jsonl"
        with catalog_path.open("w", encoding="utf-8") as handle:
            for item_id in self.catalog.ids_sorted():
                item = self.catalog.get(item_id)
                handle.write(json.dumps({"id": item.id, "title": item.title,
                                         "description": item.description},
                                        sort_keys=True) + "\n")
        topics_path = directory / "topics.json"
        topics_path.write_text(json.dumps({"items": self.item_topics,
                                           "contexts": self.context_topics},
                                          sort_keys=True, indent=2), encoding="utf-8")
        return {"corpus": corpus_path, "catalog": catalog_path, "topics": topics_path}


def _topic_words(name: str) -> list[str]:
    return [f"{name}{j}" for j in range(WORDS_PER_TOPIC)]


def _zipf_weights(n: int, s: float) -> np.ndarray:
    weights = 1.0 / np.arange(1, n + 1) ** s
    return weights / weights.sum()


def generate_toy_corpus(n_topics: int = 8, items_per_topic: int = 40,
                        n_train: int = 2000, n_valid: int = 200, n_test: int = 300,
                        cliques_per_topic: int = 2, zipf_s: float = 1.6,
                        mention_zipf_s: float = 0.7, clique_label_prob: float = 1.0,
                        seed: int = 7) -> ToyCorpus:
    """``zipf_s`` skews train-split label popularity; ``mention_zipf_s`` skews
    mention popularity (kept mild so every item keeps a base occurrence count).
    Each label stays inside the dialogue's clique with probability
    ``clique_label_prob`` and otherwise lands on a flavor-matching item of the
    sibling clique, so neither clique membership nor flavor alone explains the
    labels."""
    if n_topics > len(TOPIC_NAMES):
        raise ValueError(f"at most {len(TOPIC_NAMES)} topics supported")
    if items_per_topic % cliques_per_topic:
        raise ValueError("items_per_topic must be divisible by cliques_per_topic")
    if not 0.0 <= clique_label_prob <= 1.0:
        raise ValueError("clique_label_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    topics = TOPIC_NAMES[:n_topics]
    clique_size = items_per_topic // cliques_per_topic
    word_subsets = list(combinations(range(WORDS_PER_TOPIC), WORDS_PER_ITEM))

    items: dict[str, CatalogItem] = {}
    item_topics: dict[str, str] = {}
    item_words: dict[str, frozenset[str]] = {}
    per_topic_ids: dict[str, list[str]] = {}
    for t_idx, topic in enumerate(topics):
        words = _topic_words(topic)
        ids = []
        for i in range(items_per_topic):
            item_id = f"{topic}-{i:02d}"
            subset = word_subsets[rng.integers(len(word_subsets))]
            chosen = [words[j] for j in subset]
            uq = f"uq{t_idx}x{i:02d}"
            title = f"{topic.capitalize()} Tale {uq}"
            description = (f"A {chosen[0]} {chosen[1]} story with {chosen[2]} moments, "
                           f"truly {chosen[0]} {chosen[1]} {chosen[2]}, always "
                           f"{chosen[0]} {chosen[1]} {chosen[2]}.")
            items[item_id] = CatalogItem(id=item_id, title=title, description=description)
            item_topics[item_id] = topic
            item_words[item_id] = frozenset(chosen)
            ids.append(item_id)
        per_topic_ids[topic] = ids

    def clique_rank(item_id: str) -> int:
        return int(item_id.rsplit("-", 1)[1]) % clique_size

    def weighted_pick(ids: list[str], count: int, s: float,
                      forbidden: set[str]) -> list[str]:
        pool = [i for i in ids if i not in forbidden]
        if not pool:
            return []
        count = min(count, len(pool))
        if s > 0:
            ranks = np.array([clique_rank(i) for i in pool])
            weights = 1.0 / (ranks + 1.0) ** s
            weights = weights / weights.sum()
            picked = rng.choice(len(pool), size=count, replace=False, p=weights)
        else:
            picked = rng.choice(len(pool), size=count, replace=False)
        return [pool[j] for j in sorted(picked)]

    dialogues: list[Dialogue] = []
    context_topics: dict[str, str] = {}
    plan = [(Split.TRAIN, n_train), (Split.VALID, n_valid), (Split.TEST, n_test)]
    serial = 0
    for split, count in plan:
        for _ in range(count):
            t_idx = int(rng.integers(n_topics))
            topic = topics[t_idx]
            words = _topic_words(topic)
            flavor = [words[j] for j in word_subsets[rng.integers(len(word_subsets))]]
            flavor_set = frozenset(flavor)
            topic_ids = per_topic_ids[topic]
            clique = int(rng.integers(cliques_per_topic))
            clique_ids = topic_ids[clique * clique_size:(clique + 1) * clique_size]
            # community tag: shared by every dialogue of this clique, absent from
            # all item text, so only label co-occurrence can reveal what it implies
            crew = f"crew{t_idx}x{clique}"
            mentions = weighted_pick(clique_ids, int(rng.integers(2, 5)),
                                     s=mention_zipf_s, forbidden=set())

            def matching_in(ids: list[str]) -> list[str]:
                return [i for i in ids
                        if len(item_words[i] & flavor_set) >= MIN_WORD_OVERLAP]

            sibling_ids = [i for i in topic_ids if i not in clique_ids]
            n_labels = int(rng.integers(1, 4)) if split is Split.TRAIN else int(rng.integers(1, 3))
            label_s = zipf_s if split is Split.TRAIN else 0.0
            labels: list[str] = []
            for _ in range(n_labels):
                in_clique = rng.random() < clique_label_prob
                pools = [matching_in(clique_ids), matching_in(sibling_ids), clique_ids]
                if not in_clique:
                    pools[0], pools[1] = pools[1], pools[0]
                for pool in pools:
                    pick = weighted_pick(pool, 1, s=label_s,
                                         forbidden=set(mentions) | set(labels))
                    if pick:
                        labels.extend(pick)
                        break
            labels.sort()
            mention_titles = " and ".join(items[i].title for i in mentions)
            user_text = (f"I am in the mood for something {flavor[0]}, {flavor[1]} "
                         f"and {flavor[2]}. My {crew} friends from the {crew} club "
                         f"told the {crew} forum, and the whole {crew} circle of "
                         f"{crew} regulars with {crew} taste agrees.")
            if mentions:
                user_text += f" I liked {mention_titles}."
            rec_text = "You might enjoy " + " and ".join(items[i].title for i in labels) + "."
            dlg_id = f"dlg{serial:05d}"
            serial += 1
            dialogues.append(Dialogue(
                id=dlg_id,
                split=split,
                turns=(
                    Utterance(speaker=Speaker.USER, text=user_text,
                              mentioned_items=tuple(mentions)),
                    Utterance(speaker=Speaker.RECOMMENDER, text=rec_text,
                              mentioned_items=tuple(labels), labels=tuple(labels)),
                ),
            ))
            context_topics[f"{dlg_id}#1"] = topic

    return ToyCorpus(dialogues=dialogues, catalog=Catalog(items=items),
                     item_topics=item_topics, context_topics=context_topics,
                     item_words=item_words, zipf_s=zipf_s, seed=seed)


def load_topics(path: str | Path) -> tuple[dict[str, str], dict[str, str]]:
    """Read a topics.json sidecar; returns (context_topics, item_topics)."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return raw.get("contexts", {}), raw.get("items", {})
