"""Loading, validation, and preprocessing of dialogue corpora and item catalogs."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator


class CorpusError(Exception):
    """Base class for corpus loading and validation failures."""


class MalformedRecord(CorpusError):
    def __init__(self, line: int, detail: str):
        super().__init__(f"line {line}: {detail}")
        self.line = line
        self.detail = detail


class UnknownItemId(CorpusError):
    def __init__(self, item_id: str, line: int):
        super().__init__(f"line {line}: unknown item id {item_id!r}")
        self.item_id = item_id
        self.line = line


class DuplicateId(CorpusError):
    def __init__(self, dup_id: str):
        super().__init__(f"duplicate id {dup_id!r}")
        self.dup_id = dup_id


class Speaker(str, Enum):
    USER = "user"
    RECOMMENDER = "recommender"


class Split(str, Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


@dataclass(frozen=True)
class Utterance:
    speaker: Speaker
    text: str
    mentioned_items: tuple[str, ...] = ()
    labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[Utterance, ...]
    split: Split


@dataclass(frozen=True)
class CatalogItem:
    id: str
    title: str
    description: str


@dataclass(frozen=True)
class Catalog:
    """Item id -> descriptive record. Deterministic iteration is by sorted id."""

    items: dict[str, CatalogItem]

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.items

    def get(self, item_id: str) -> CatalogItem:
        return self.items[item_id]

    def ids_sorted(self) -> list[str]:
        return sorted(self.items)

    def display_name(self, item_id: str) -> str:
        item = self.items[item_id]
        return item.title or item.id


@dataclass(frozen=True)
class ContextSample:
    """One training/evaluation unit: the turns before a labeled recommender turn.

    ``mentioned_ids`` is the cumulative set of items mentioned anywhere in the
    context turns; ``label_ids`` never intersects it (preprocessing drops any
    label already mentioned). ``text`` holds a pre-rendered context string for
    samples restored from artifacts that no longer carry full turns.
    """

    id: str
    context_turns: tuple[Utterance, ...]
    mentioned_ids: frozenset[str]
    label_ids: frozenset[str]
    text: str | None = None

    def __post_init__(self):
        if not self.label_ids:
            raise ValueError(f"sample {self.id!r} has no labels")
        if self.label_ids & self.mentioned_ids:
            raise ValueError(f"sample {self.id!r} labels overlap mentioned items")

    def rendered(self, max_turns: int = 10, max_chars: int = 2048) -> str:
        if self.text is not None:
            return self.text
        return render_context(self.context_turns, max_turns=max_turns, max_chars=max_chars)


def render_context(turns: Iterable[Utterance], max_turns: int = 10, max_chars: int = 2048) -> str:
    """Serialize context turns for embedding: speaker-prefixed lines, recency-biased.

    Keeps the most recent ``max_turns`` turns and, if the result is still too
    long, the last ``max_chars`` characters (the active request lives at the end).
    """
    role = {Speaker.USER: "User", Speaker.RECOMMENDER: "Recommender"}
    lines = [f"{role[t.speaker]}: {t.text}" for t in list(turns)[-max_turns:]]
    text = "\n".join(lines)
    return text[-max_chars:] if len(text) > max_chars else text


def render_item_text(item: CatalogItem) -> str:
    """Serialize one catalog item for embedding."""
    return ". ".join(part for part in (item.title, item.description) if part)


def _iter_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"invalid JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise MalformedRecord(line_no, "record is not a JSON object")
            yield line_no, record


def _require(record: dict, key: str, line_no: int):
    if key not in record:
        raise MalformedRecord(line_no, f"missing field {key!r}")
    return record[key]


def _string_list(value, field: str, line_no: int) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise MalformedRecord(line_no, f"{field!r} must be a list of strings")
    return value


def load_catalog(catalog_path: str | Path) -> Catalog:
    items: dict[str, CatalogItem] = {}
    for line_no, record in _iter_jsonl(Path(catalog_path)):
        item_id = _require(record, "id", line_no)
        title = _require(record, "title", line_no)
        description = _require(record, "description", line_no)
        if not isinstance(item_id, str) or not item_id:
            raise MalformedRecord(line_no, "item id must be a non-empty string")
        if not isinstance(description, str) or not description.strip():
            raise MalformedRecord(line_no, f"item {item_id!r} has an empty description")
        if item_id in items:
            raise DuplicateId(item_id)
        items[item_id] = CatalogItem(id=item_id, title=str(title), description=description)
    return Catalog(items=items)


def load_corpus(dialogues_path: str | Path, catalog_path: str | Path) -> tuple[list[Dialogue], Catalog]:
    """Load and validate a dialogue corpus against its item catalog.

    Every mentioned or labeled item id must resolve against the catalog.
    Dialogue order follows record order in the file. Raises MalformedRecord,
    UnknownItemId, or DuplicateId on the first violation.
    """
    catalog = load_catalog(catalog_path)
    dialogues: list[Dialogue] = []
    seen_ids: set[str] = set()
    for line_no, record in _iter_jsonl(Path(dialogues_path)):
        dlg_id = _require(record, "id", line_no)
        if not isinstance(dlg_id, str) or not dlg_id:
            raise MalformedRecord(line_no, "dialogue id must be a non-empty string")
        if dlg_id in seen_ids:
            raise DuplicateId(dlg_id)
        seen_ids.add(dlg_id)
        try:
            split = Split(_require(record, "split", line_no))
        except ValueError:
            raise MalformedRecord(line_no, f"unknown split {record.get('split')!r}") from None
        raw_turns = _require(record, "turns", line_no)
        if not isinstance(raw_turns, list) or not raw_turns:
            raise MalformedRecord(line_no, f"dialogue {dlg_id!r} has no turns")
        turns = []
        for raw in raw_turns:
            if not isinstance(raw, dict):
                raise MalformedRecord(line_no, "turn is not a JSON object")
            try:
                speaker = Speaker(_require(raw, "speaker", line_no))
            except ValueError:
                raise MalformedRecord(line_no, f"unknown speaker {raw.get('speaker')!r}") from None
            text = _require(raw, "text", line_no)
            if not isinstance(text, str) or not text.strip():
                raise MalformedRecord(line_no, "turn text empty after trimming")
            mentions = _string_list(raw.get("mentions", []), "mentions", line_no)
            labels = _string_list(raw.get("labels", []), "labels", line_no)
            if labels and speaker is not Speaker.RECOMMENDER:
                raise MalformedRecord(line_no, "labels present on a non-recommender turn")
            for item_id in (*mentions, *labels):
                if item_id not in catalog:
                    raise UnknownItemId(item_id, line_no)
            turns.append(Utterance(speaker=speaker, text=text,
                                   mentioned_items=tuple(mentions), labels=tuple(labels)))
        dialogues.append(Dialogue(id=dlg_id, turns=tuple(turns), split=split))
    return dialogues, catalog


def derive_context_samples(dialogues: Iterable[Dialogue],
                           mention_scope: str = "both") -> list[ContextSample]:
    """Turn dialogues into context->labels samples, removing repeated items.

    One sample is emitted per recommender turn that carries at least one label.
    Labels already mentioned earlier in the dialogue are dropped; samples whose
    label set becomes empty are discarded entirely. ``mention_scope`` controls
    whose mentions accumulate: "both" (default) or "recommender" only.
    """
    if mention_scope not in ("both", "recommender"):
        raise ValueError(f"mention_scope must be 'both' or 'recommender', got {mention_scope!r}")
    samples: list[ContextSample] = []
    for dlg in dialogues:
        mentioned: set[str] = set()
        for idx, turn in enumerate(dlg.turns):
            if turn.speaker is Speaker.RECOMMENDER and turn.labels:
                labels = set(turn.labels) - mentioned
                if labels:
                    samples.append(ContextSample(
                        id=f"{dlg.id}#{idx}",
                        context_turns=dlg.turns[:idx],
                        mentioned_ids=frozenset(mentioned),
                        label_ids=frozenset(labels),
                    ))
            if mention_scope == "both" or turn.speaker is Speaker.RECOMMENDER:
                mentioned.update(turn.mentioned_items)
    return samples


def tail_item_set(train_samples: Iterable[ContextSample], catalog: Catalog,
                  threshold: int = 4) -> set[str]:
    """Return catalog items occurring fewer than ``threshold`` times in training.

    An occurrence is one sample whose mentions or labels contain the item.
    Items absent from the training samples count zero times and are tail.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    counts: Counter[str] = Counter()
    for sample in train_samples:
        counts.update(sample.mentioned_ids | sample.label_ids)
    return {item_id for item_id in catalog.items if counts[item_id] < threshold}


def write_context_samples(path: str | Path, samples: Iterable[ContextSample]) -> None:
    """Persist samples as JSONL with pre-rendered context text."""
    with Path(path).open("w", encoding="utf-8") as handle:
        for sample in samples:
            record = {
                "id": sample.id,
                "context": sample.rendered(),
                "mentioned": sorted(sample.mentioned_ids),
                "labels": sorted(sample.label_ids),
            }
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def read_context_samples(path: str | Path) -> list[ContextSample]:
    samples = []
    for line_no, record in _iter_jsonl(Path(path)):
        for key in ("id", "context", "mentioned", "labels"):
            _require(record, key, line_no)
        samples.append(ContextSample(
            id=record["id"],
            context_turns=(),
            mentioned_ids=frozenset(record["mentioned"]),
            label_ids=frozenset(record["labels"]),
            text=record["context"],
        ))
    return samples
