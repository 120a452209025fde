"""Two-tower softmax recommender: scoring, training losses, analytic gradients.

The recommender scores item j for a context vector u as ``(u @ A) @ V[j]`` and
turns the full logit vector into a distribution with a softmax over the whole
catalog. All four training losses and their closed-form gradients live here:

  multilabel CE   mean_i sum_{j in pos_i} -log P(i, j)
  soft (KL)       mean_i sum_j P(i, j) * log(P(i, j) / yhat(i, j))
  finetune        CE + alpha * KL

The KL term is computed with the current model's distribution as the first
argument (a ``direction`` flag flips it for the distillation-conventional
reverse form).
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import AbstractSet, Sequence

import numpy as np

SOFT_LABEL_FLOOR = 1e-12
INIT_SCALE = 0.05

Batch = Sequence[tuple[np.ndarray, AbstractSet[str]]]


class ModelError(Exception):
    pass


class DimensionMismatch(ModelError):
    pass


class NonFiniteLoss(ModelError):
    pass


@dataclass
class RecommenderParams:
    """Item embedding matrix V (M x d) and context projection A (d_e x d)."""

    item_ids: tuple[str, ...]
    item_embeddings: np.ndarray
    context_projection: np.ndarray
    seed: int = 0
    version: str = "two-tower-v1"
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.item_embeddings.shape[0] != len(self.item_ids):
            raise DimensionMismatch("item embedding rows must match item ids")
        if self.item_embeddings.shape[1] != self.context_projection.shape[1]:
            raise DimensionMismatch("V and A must share the latent dimension")
        self._index = {item_id: i for i, item_id in enumerate(self.item_ids)}

    @property
    def n_items(self) -> int:
        return self.item_embeddings.shape[0]

    @property
    def latent_dim(self) -> int:
        return self.item_embeddings.shape[1]

    @property
    def context_dim(self) -> int:
        return self.context_projection.shape[0]

    def index_of(self, item_id: str) -> int:
        return self._index[item_id]

    def copy(self) -> "RecommenderParams":
        return replace(self, item_embeddings=self.item_embeddings.copy(),
                       context_projection=self.context_projection.copy())

    @classmethod
    def init_random(cls, item_ids: Sequence[str], latent_dim: int, context_dim: int,
                    seed: int, scale: float = INIT_SCALE) -> "RecommenderParams":
        """Small symmetric init, i.i.d. uniform in [-scale, scale] from the run seed."""
        rng = np.random.default_rng(seed)
        V = rng.uniform(-scale, scale, size=(len(item_ids), latent_dim))
        A = rng.uniform(-scale, scale, size=(context_dim, latent_dim))
        return cls(item_ids=tuple(item_ids), item_embeddings=V,
                   context_projection=A, seed=seed)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs_pretrain: int = 5
    epochs_finetune: int = 3
    batch_size: int = 64
    alpha: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if min(self.epochs_pretrain, self.epochs_finetune) < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _context_matrix(params: RecommenderParams, context_vecs: Sequence[np.ndarray]) -> np.ndarray:
    U = np.stack([np.asarray(v, dtype=np.float64) for v in context_vecs])
    if U.shape[1] != params.context_dim:
        raise DimensionMismatch(f"context dim {U.shape[1]} != expected {params.context_dim}")
    return U


def score_all(params: RecommenderParams, context_vec: np.ndarray) -> np.ndarray:
    """Full-catalog logits for one context: ``(u @ A) @ V.T``."""
    u = np.asarray(context_vec, dtype=np.float64).reshape(-1)
    if u.shape[0] != params.context_dim:
        raise DimensionMismatch(f"context dim {u.shape[0]} != expected {params.context_dim}")
    return (u @ params.context_projection) @ params.item_embeddings.T


def probabilities(params: RecommenderParams, context_vecs: Sequence[np.ndarray]) -> np.ndarray:
    """Row-wise softmax distributions over the catalog for a batch of contexts."""
    U = _context_matrix(params, context_vecs)
    return _softmax((U @ params.context_projection) @ params.item_embeddings.T)


class SoftLabelProvider:
    """Frozen model snapshot serving per-context soft-label distributions."""

    def __init__(self, params: RecommenderParams):
        self._params = params.copy()
        self._params.item_embeddings.flags.writeable = False
        self._params.context_projection.flags.writeable = False

    @property
    def n_items(self) -> int:
        return self._params.n_items

    def soft_labels(self, context_vecs: Sequence[np.ndarray]) -> np.ndarray:
        return probabilities(self._params, context_vecs)


def _positive_matrix(params: RecommenderParams, batch: Batch) -> np.ndarray:
    """Multi-hot label matrix; each positive set must be non-empty."""
    Y = np.zeros((len(batch), params.n_items))
    for i, (_, positives) in enumerate(batch):
        if not positives:
            raise ValueError(f"batch row {i} has no positive items")
        for item_id in positives:
            Y[i, params.index_of(item_id)] = 1.0
    return Y


def loss_multilabel_ce(params: RecommenderParams, batch: Batch) -> float:
    """Mean over the batch of the summed negative log-likelihood of positives."""
    P = probabilities(params, [vec for vec, _ in batch])
    Y = _positive_matrix(params, batch)
    return float(-(Y * np.log(P)).sum() / len(batch))


def _kl_terms(P: np.ndarray, soft: np.ndarray, direction: str) -> np.ndarray:
    soft = np.maximum(soft, SOFT_LABEL_FLOOR)
    if direction == "forward":
        return (P * np.log(P / soft)).sum(axis=1)
    if direction == "reverse":
        return (soft * np.log(soft / np.maximum(P, SOFT_LABEL_FLOOR))).sum(axis=1)
    raise ValueError(f"direction must be 'forward' or 'reverse', got {direction!r}")


def loss_soft(params: RecommenderParams, soft_provider: SoftLabelProvider,
              context_vecs: Sequence[np.ndarray], direction: str = "forward") -> float:
    """Mean KL divergence between the current model and the frozen snapshot.

    Forward (the default) places the current model's distribution first; soft
    labels are floored at 1e-12 before the ratio.
    """
    if soft_provider.n_items != params.n_items:
        raise DimensionMismatch("soft-label provider and params disagree on catalog size")
    P = probabilities(params, context_vecs)
    soft = soft_provider.soft_labels(context_vecs)
    return float(_kl_terms(P, soft, direction).mean())


def loss_finetune(params: RecommenderParams, soft_provider: SoftLabelProvider,
                  batch: Batch, alpha: float, direction: str = "forward") -> float:
    """Fine-tuning objective: CE plus ``alpha`` times the soft-label KL term."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    ce = loss_multilabel_ce(params, batch)
    if alpha == 0.0:
        return ce
    return ce + alpha * loss_soft(params, soft_provider, [v for v, _ in batch], direction)


@dataclass(frozen=True)
class LossSpec:
    """Selects the objective for a gradient step."""

    kind: str  # "ce" | "soft" | "finetune"
    soft_provider: SoftLabelProvider | None = None
    alpha: float = 0.0
    direction: str = "forward"

    def __post_init__(self):
        if self.kind not in ("ce", "soft", "finetune"):
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.kind in ("soft", "finetune") and self.soft_provider is None:
            raise ValueError(f"loss {self.kind!r} needs a soft-label provider")


def _loss_and_logit_grad(params: RecommenderParams, batch: Batch,
                         spec: LossSpec) -> tuple[float, np.ndarray, np.ndarray]:
    """Shared forward pass returning (loss, dL/dlogits, U).

    CE per row: |pos| * P - Y. Forward KL per row: P * (r - KL) with
    r = log(P / yhat); reverse KL per row: P - yhat. The finetune gradient is
    the CE gradient plus alpha times the KL gradient (skipped when alpha is 0
    so that the alpha=0 trajectory is bit-identical to plain CE).
    """
    U = _context_matrix(params, [vec for vec, _ in batch])
    P = _softmax((U @ params.context_projection) @ params.item_embeddings.T)
    B = len(batch)
    loss = 0.0
    grad_logits = np.zeros_like(P)
    if spec.kind in ("ce", "finetune"):
        Y = _positive_matrix(params, batch)
        loss += float(-(Y * np.log(P)).sum() / B)
        grad_logits += Y.sum(axis=1, keepdims=True) * P - Y
    if spec.kind == "soft" or (spec.kind == "finetune" and spec.alpha != 0.0):
        weight = 1.0 if spec.kind == "soft" else spec.alpha
        soft = np.maximum(spec.soft_provider.soft_labels([vec for vec, _ in batch]),
                          SOFT_LABEL_FLOOR)
        kl = _kl_terms(P, soft, spec.direction)
        loss += weight * float(kl.mean())
        if spec.direction == "forward":
            ratio = np.log(P / soft)
            grad_logits += weight * P * (ratio - kl[:, None])
        else:
            grad_logits += weight * (P - soft)
    return loss, grad_logits / B, U


def gradients(params: RecommenderParams, batch: Batch,
              spec: LossSpec) -> tuple[float, np.ndarray, np.ndarray]:
    """Loss plus analytic gradients w.r.t. V and A."""
    loss, grad_logits, U = _loss_and_logit_grad(params, batch, spec)
    Z = U @ params.context_projection
    grad_V = grad_logits.T @ Z
    grad_A = U.T @ (grad_logits @ params.item_embeddings)
    return loss, grad_V, grad_A


def grad_step(params: RecommenderParams, batch: Batch, spec: LossSpec,
              config: TrainConfig) -> tuple[RecommenderParams, float]:
    """One mini-batch gradient-descent update; returns new params and the loss."""
    loss, grad_V, grad_A = gradients(params, batch, spec)
    if not (np.isfinite(loss) and np.isfinite(grad_V).all() and np.isfinite(grad_A).all()):
        raise NonFiniteLoss(
            f"non-finite update: loss={loss}, |dV|={np.abs(grad_V).max():.3e}, "
            f"|dA|={np.abs(grad_A).max():.3e}")
    updated = replace(
        params,
        item_embeddings=params.item_embeddings - config.learning_rate * grad_V,
        context_projection=params.context_projection - config.learning_rate * grad_A,
    )
    return updated, loss


def predict_topk(params: RecommenderParams, context, context_vec: np.ndarray,
                 k: int) -> list[str]:
    """Top-k item ids by logit, excluding context-mentioned items, ties by id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    logits = score_all(params, context_vec)
    ids = np.asarray(params.item_ids)
    mentioned = getattr(context, "mentioned_ids", frozenset())
    if mentioned:
        keep = ~np.isin(ids, list(mentioned))
        ids, logits = ids[keep], logits[keep]
    order = np.lexsort((ids, -logits))[:k]
    return [str(ids[i]) for i in order]


def _encode(matrix: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(matrix, dtype=np.float64).tobytes()).decode()


def _decode(blob: str, shape: tuple[int, int]) -> np.ndarray:
    return np.frombuffer(base64.b64decode(blob), dtype=np.float64).reshape(shape).copy()


def save_checkpoint(params: RecommenderParams, path: str | Path, **extra) -> None:
    """Write a deterministic JSON checkpoint (row-major float64 matrices)."""
    payload = {
        "version": params.version,
        "n_items": params.n_items,
        "latent_dim": params.latent_dim,
        "context_dim": params.context_dim,
        "seed": params.seed,
        "item_ids": list(params.item_ids),
        "item_embeddings": _encode(params.item_embeddings),
        "context_projection": _encode(params.context_projection),
        **extra,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> RecommenderParams:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return RecommenderParams(
        item_ids=tuple(payload["item_ids"]),
        item_embeddings=_decode(payload["item_embeddings"],
                                (payload["n_items"], payload["latent_dim"])),
        context_projection=_decode(payload["context_projection"],
                                   (payload["context_dim"], payload["latent_dim"])),
        seed=payload["seed"],
        version=payload["version"],
    )
