"""Relevance judging: scoring backends, output parsing, scorer distillation, filtering."""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import requests

from .corpus import Catalog, ContextSample

logger = logging.getLogger(__name__)

SCORE_MIN = 0.0
SCORE_MAX = 4.0
DEFAULT_THRESHOLD = 3.5
TEACHER_CANDIDATES_PER_CONTEXT = 5


class JudgeError(Exception):
    """Base class for relevance-judging failures."""


class BackendUnavailable(JudgeError):
    pass


class UnparseableJudgeOutput(JudgeError):
    def __init__(self, detail: str, raw: str = ""):
        super().__init__(detail)
        self.raw = raw


class SingularSystem(JudgeError):
    pass


RELEVANCE_PROMPT = """You are provided with a dialogue history between a user and a recommender system, along with the system's top k movie recommendations. Your task is to score each recommendation on a scale from 0 to 4 based on how well it aligns with the user's expressed preferences.
~~~~~~~
4: The recommendation perfectly aligns with all expressed aspects of the user's preferences.
3: The recommendation aligns well with the main aspects of the user's preferences but lacks one or two minor aspects.
2: The recommendation aligns with some but not all major aspects of the user's preferences.
1: The recommendation aligns minimally with the user's preferences, missing several key aspects.
0: The recommendation does not align with the user's preferences at all.
You can give non-integer scores if necessary
~~~~~~~
Here is an illustration of the scoring criteria.:
If a user said, 'I like movies similar to Super Troopers (2001), especially its humorous style!' that may indicate the user's preference for the comedy genre, absurd humor, and perhaps law enforcement themes. Therefore, if a recommender system recommends movies such as 'Hot Fuzz (2007)' or 'The Other Guys (2010),' those should be 4-point recommendations because they align with the user's preferences for the comedy genre, absurd humor styles, and law enforcement themes. If a recommender system recommends a movie like 'Superbad (2007),' this should be a 3-point recommendation since it aligns with the user's preference for the comedy genre and absurd humor styles but lacks a law enforcement theme. If a recommender system recommends a movie like 'Police Story (1985),' this may be a 2-point recommendation since it has law enforcement themes and some comedy elements due to Jackie Chan's acting style. If a recommender system recommends a movie like 'Infernal Affairs (2002),' this may be a 1-point recommendation since it has law enforcement themes but lacks any comedy or humor elements. If a recommender system recommends a movie like 'It (2017),' this should be a 0-point recommendation since 'It (2017)' is not relevant to the user's preferences.
Dialogue history:
{context}
recommender's recommendation:
{rec}
Give brief reason and end with a JSON format as follows:
{{"<movie>": <score>, "<movie>": <score>, ...}}
Note: Replace <movie> and <score> with the movie name (year if exist) and actual score you have assigned to each movie."""


@dataclass(frozen=True)
class RelevanceTriple:
    """One (context, item, score) judgment; score lies in [0, 4]."""

    context_id: str
    item_id: str
    score: float

    def __post_init__(self):
        if not SCORE_MIN <= self.score <= SCORE_MAX:
            raise ValueError(f"score {self.score} outside [{SCORE_MIN}, {SCORE_MAX}]")


def clamp_score(value: float) -> float:
    return min(SCORE_MAX, max(SCORE_MIN, float(value)))


class JudgeBackend:
    """Assigns relevance scores to (context, candidate item) pairs."""

    kind: str = "abstract"

    def score(self, context_id: str, context_text: str,
              candidates: Sequence[tuple[str, str]]) -> dict[str, float]:
        """Return item_id -> raw score for ``(item_id, display_name)`` candidates.

        Backends with a drop policy may omit candidates they failed to score.
        """
        raise NotImplementedError

    def identity(self) -> str:
        return self.kind


class RuleJudge(JudgeBackend):
    """Deterministic test oracle driven by a ``(context_id, item_id) -> score`` rule."""

    kind = "oracle-test"

    def __init__(self, rule: Callable[[str, str], float]):
        self._rule = rule

    @classmethod
    def from_topics(cls, context_topics: Mapping[str, str], item_topics: Mapping[str, str],
                    hit: float = 4.0, miss: float = 0.0) -> "RuleJudge":
        """Score ``hit`` when context and item share a planted topic, else ``miss``."""
        def rule(context_id: str, item_id: str) -> float:
            return hit if context_topics.get(context_id) == item_topics.get(item_id) else miss
        return cls(rule)

    def score(self, context_id, context_text, candidates):
        return {item_id: float(self._rule(context_id, item_id)) for item_id, _ in candidates}


class DistilledJudge(JudgeBackend):
    """Cheap local scorer: a distilled regression head over embedding features."""

    kind = "distilled-regressor"

    def __init__(self, scorer: "DistilledScorer", item_vecs: Mapping[str, np.ndarray],
                 context_vecs: Mapping[str, np.ndarray] | None = None, provider=None):
        self.scorer = scorer
        self.item_vecs = item_vecs
        self.context_vecs = context_vecs or {}
        self.provider = provider

    def _context_vec(self, context_id: str, context_text: str) -> np.ndarray:
        if context_id in self.context_vecs:
            return self.context_vecs[context_id]
        if self.provider is None:
            raise BackendUnavailable(f"no context vector for {context_id!r} and no provider")
        from .semindex import embed_texts
        return embed_texts(self.provider, [context_text], keys=[context_id])[0]

    def score(self, context_id, context_text, candidates):
        ctx = self._context_vec(context_id, context_text)
        out = {}
        for item_id, _ in candidates:
            if item_id not in self.item_vecs:
                raise BackendUnavailable(f"no item vector for {item_id!r}")
            out[item_id] = self.scorer.predict(ctx, self.item_vecs[item_id])
        return out


class RemoteJudge(JudgeBackend):
    """LLM judge over HTTP: POST ``{"prompt": str}`` -> ``{"text": str}``.

    Unparseable completions are retried once; persistently unparseable batches
    are dropped with a warning (``dropped`` counts affected candidates).
    """

    kind = "remote-llm"

    def __init__(self, endpoint: str, token: str | None = None,
                 template: str = RELEVANCE_PROMPT, timeout: float = 60.0, retries: int = 1):
        self.endpoint = endpoint
        self.token = token
        self.template = template
        self.timeout = timeout
        self.retries = retries
        self.dropped = 0

    def identity(self) -> str:
        return f"{self.kind}:{self.endpoint}"

    def _complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            response = requests.post(self.endpoint, json={"prompt": prompt},
                                     headers=headers, timeout=self.timeout)
            response.raise_for_status()
            payload = response.json()
        except requests.RequestException as exc:
            raise BackendUnavailable(f"judge endpoint failed: {exc}") from exc
        except ValueError as exc:
            raise BackendUnavailable(f"judge endpoint returned non-JSON: {exc}") from exc
        if "text" not in payload:
            raise BackendUnavailable("judge response missing 'text'")
        return payload["text"]

    def score(self, context_id, context_text, candidates):
        rec = "\n".join(name for _, name in candidates)
        prompt = self.template.format(context=context_text, rec=rec)
        for _ in range(self.retries + 1):
            raw = self._complete(prompt)
            try:
                return parse_judge_response(raw, candidates)
            except UnparseableJudgeOutput as exc:
                last_error = exc
        self.dropped += len(candidates)
        logger.warning("dropping %d candidates for context %s: %s",
                       len(candidates), context_id, last_error)
        return {}


def _iter_json_objects(raw: str) -> Iterable[dict]:
    decoder = json.JSONDecoder()
    pos = 0
    while True:
        start = raw.find("{", pos)
        if start == -1:
            return
        try:
            obj, end = decoder.raw_decode(raw, start)
        except json.JSONDecodeError:
            pos = start + 1
            continue
        if isinstance(obj, dict):
            yield obj
        pos = end


def parse_judge_response(raw: str, expected_items: Sequence[tuple[str, str]]) -> dict[str, float]:
    """Extract the last JSON object from a judge completion and map scores to items.

    Keys are matched against expected display names exactly, then
    case-insensitively. Non-integer scores are accepted. Raises
    UnparseableJudgeOutput if no JSON object is found, any expected item is
    unmatched, or a value is non-numeric.
    """
    last = None
    for obj in _iter_json_objects(raw):
        last = obj
    if last is None:
        raise UnparseableJudgeOutput("no JSON object in judge output", raw=raw)
    lowered = {str(k).lower(): v for k, v in last.items()}
    result: dict[str, float] = {}
    for item_id, name in expected_items:
        if name in last:
            value = last[name]
        elif name.lower() in lowered:
            value = lowered[name.lower()]
        else:
            raise UnparseableJudgeOutput(f"item {name!r} missing from judge output", raw=raw)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise UnparseableJudgeOutput(
                    f"non-numeric score {value!r} for {name!r}", raw=raw) from None
        result[item_id] = float(value)
    return result


def score_candidates(backend: JudgeBackend, context: ContextSample,
                     candidates: Sequence[str], catalog: Catalog) -> list[RelevanceTriple]:
    """Score each candidate item against the context; scores are clamped to [0, 4].

    Candidates a backend dropped under its failure policy are simply absent
    from the result (deterministic backends always return one triple per
    candidate, in candidate order).
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    missing = [c for c in candidates if c not in catalog]
    if missing:
        raise ValueError(f"candidates not in catalog: {missing}")
    pairs = [(item_id, catalog.display_name(item_id)) for item_id in candidates]
    raw_scores = backend.score(context.id, context.rendered(), pairs)
    return [RelevanceTriple(context_id=context.id, item_id=item_id,
                            score=clamp_score(raw_scores[item_id]))
            for item_id in candidates if item_id in raw_scores]


def generate_teacher_triples(samples: Sequence[ContextSample], catalog: Catalog,
                             backend: JudgeBackend,
                             per_context: int = TEACHER_CANDIDATES_PER_CONTEXT,
                             seed: int = 0) -> list[RelevanceTriple]:
    """Sample candidate items per context and score them with an expensive teacher."""
    rng = random.Random(seed)
    ids = catalog.ids_sorted()
    triples: list[RelevanceTriple] = []
    for sample in samples:
        pool = [i for i in ids if i not in sample.mentioned_ids]
        picks = rng.sample(pool, min(per_context, len(pool)))
        triples.extend(score_candidates(backend, sample, picks, catalog))
    triples.sort(key=lambda t: (t.context_id, t.item_id))
    return triples


@dataclass(frozen=True)
class DistilledScorer:
    """Ridge-regression relevance scorer over ``[ctx, item, ctx*item]`` features.

    Predictions are clamped to [0, 4] at inference. ``weights`` excludes the
    intercept, which is carried separately (and never regularized).
    """

    weights: np.ndarray
    bias: float
    feature_recipe: str
    train_mse: float

    @staticmethod
    def features(context_vec: np.ndarray, item_vec: np.ndarray) -> np.ndarray:
        u = np.asarray(context_vec, dtype=np.float64)
        v = np.asarray(item_vec, dtype=np.float64)
        return np.concatenate([u, v, u * v])

    def raw_predict(self, context_vec: np.ndarray, item_vec: np.ndarray) -> float:
        return float(self.features(context_vec, item_vec) @ self.weights + self.bias)

    def predict(self, context_vec: np.ndarray, item_vec: np.ndarray) -> float:
        return clamp_score(self.raw_predict(context_vec, item_vec))


def distill_scorer(teacher_triples: Sequence[RelevanceTriple],
                   context_vecs: Mapping[str, np.ndarray],
                   item_vecs: Mapping[str, np.ndarray],
                   regularization: float = 0.0) -> DistilledScorer:
    """Fit the closed-form ridge minimizer of squared error against teacher scores.

    Solves ``min_w sum((phi @ w + b - s)^2) + reg * ||w||^2`` via the normal
    equations, with the intercept left unpenalized. Raises SingularSystem when
    ``regularization`` is 0 and the system is rank-deficient.
    """
    if regularization < 0:
        raise ValueError("regularization must be >= 0")
    if not teacher_triples:
        raise ValueError("no teacher triples")
    rows, targets = [], []
    for triple in teacher_triples:
        if triple.context_id not in context_vecs:
            raise ValueError(f"no context vector for {triple.context_id!r}")
        if triple.item_id not in item_vecs:
            raise ValueError(f"no item vector for {triple.item_id!r}")
        rows.append(DistilledScorer.features(context_vecs[triple.context_id],
                                             item_vecs[triple.item_id]))
        targets.append(triple.score)
    features = np.column_stack([np.stack(rows), np.ones(len(rows))])
    y = np.asarray(targets, dtype=np.float64)
    n, p = features.shape
    if n < p:
        raise ValueError(f"need at least {p} triples for {p - 1} features, got {n}")
    gram = features.T @ features
    penalty = np.full(p, regularization)
    penalty[-1] = 0.0  # intercept unpenalized
    system = gram + np.diag(penalty)
    if regularization == 0.0 and np.linalg.matrix_rank(gram) < p:
        raise SingularSystem("normal equations are rank-deficient and regularization is 0")
    solution = np.linalg.solve(system, features.T @ y)
    residual = features @ solution - y
    return DistilledScorer(weights=solution[:-1], bias=float(solution[-1]),
                           feature_recipe="ctx|item|ctx*item",
                           train_mse=float(np.mean(residual ** 2)))


def filter_by_threshold(triples: Sequence[RelevanceTriple],
                        tau: float = DEFAULT_THRESHOLD) -> list[tuple[str, str]]:
    """Keep exactly the pairs whose score strictly exceeds ``tau``, in input order."""
    if not SCORE_MIN <= tau <= SCORE_MAX:
        raise ValueError(f"tau must lie in [{SCORE_MIN}, {SCORE_MAX}]")
    return [(t.context_id, t.item_id) for t in triples if t.score > tau]


def save_scorer(scorer: DistilledScorer, path) -> None:
    from pathlib import Path
    payload = {"weights": [float(w) for w in scorer.weights], "bias": scorer.bias,
               "feature_recipe": scorer.feature_recipe, "train_mse": scorer.train_mse}
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_scorer(path) -> DistilledScorer:
    from pathlib import Path
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return DistilledScorer(weights=np.asarray(payload["weights"], dtype=np.float64),
                           bias=float(payload["bias"]),
                           feature_recipe=payload["feature_recipe"],
                           train_mse=float(payload["train_mse"]))


def write_triples(path, triples: Sequence[RelevanceTriple]) -> None:
    from pathlib import Path
    with Path(path).open("w", encoding="utf-8") as handle:
        for t in triples:
            handle.write(json.dumps({"context_id": t.context_id, "item_id": t.item_id,
                                     "score": t.score}, sort_keys=True) + "\n")


def read_triples(path) -> list[RelevanceTriple]:
    from pathlib import Path
    triples = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            triples.append(RelevanceTriple(context_id=record["context_id"],
                                           item_id=record["item_id"],
                                           score=float(record["score"])))
    return triples
