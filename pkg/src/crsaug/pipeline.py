"""Two-stage training orchestration, one-stage mixing baseline, run manifests."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .augment import SyntheticDataset
from .corpus import ContextSample
from .recmodel import (LossSpec, RecommenderParams, SoftLabelProvider, TrainConfig,
                       grad_step)

MANIFEST_SCHEMA_VERSION = 1


@dataclass
class RunManifest:
    """Append-only record of a run: hashes, per-epoch losses, artifacts, timings."""

    config_hash: str = ""
    dataset_hashes: dict[str, str] = field(default_factory=dict)
    stages: dict[str, dict] = field(default_factory=dict)
    schema_version: int = MANIFEST_SCHEMA_VERSION

    def stage(self, name: str) -> dict:
        return self.stages.setdefault(name, {"losses": [], "counters": {}})

    def record(self, stage: str, **fields) -> None:
        self.stage(stage).update(fields)

    def add_epoch_loss(self, stage: str, loss: float) -> None:
        if not math.isfinite(loss):
            raise ValueError(f"non-finite epoch loss for stage {stage!r}")
        self.stage(stage)["losses"].append(loss)

    def bump(self, stage: str, counter: str, amount: int = 1) -> None:
        counters = self.stage(stage)["counters"]
        counters[counter] = counters.get(counter, 0) + amount

    def to_dict(self) -> dict:
        return {"schema_version": self.schema_version, "config_hash": self.config_hash,
                "dataset_hashes": self.dataset_hashes, "stages": self.stages}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n",
                              encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        manifest = cls(config_hash=raw.get("config_hash", ""),
                       dataset_hashes=raw.get("dataset_hashes", {}),
                       stages=raw.get("stages", {}),
                       schema_version=raw.get("schema_version", MANIFEST_SCHEMA_VERSION))
        return manifest


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """Shuffle order for one epoch, derived from (run seed, epoch index) only."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, epoch]))
    return rng.permutation(n)


def group_real_samples(samples: Sequence[ContextSample]) -> dict[str, frozenset[str]]:
    return {sample.id: sample.label_ids for sample in samples}


def _as_groups(data) -> list[tuple[str, frozenset[str]]]:
    if isinstance(data, SyntheticDataset):
        mapping = data.grouped_by_context()
    else:
        mapping = dict(data)
    return sorted(mapping.items())


def _batch(groups: Sequence[tuple[str, frozenset[str]]],
           context_vecs: Mapping[str, np.ndarray],
           order: Sequence[int]) -> list[tuple[np.ndarray, frozenset[str]]]:
    return [(context_vecs[groups[i][0]], groups[i][1]) for i in order]


def _run_epochs(params: RecommenderParams, groups, context_vecs, config: TrainConfig,
                spec: LossSpec, epochs: int, stage: str,
                manifest: RunManifest | None) -> RecommenderParams:
    started = time.monotonic()
    for epoch in range(epochs):
        order = _epoch_permutation(config.seed, epoch, len(groups))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = _batch(groups, context_vecs, order[start:start + config.batch_size])
            params, loss = grad_step(params, batch, spec, config)
            epoch_losses.append(loss)
        if manifest is not None:
            manifest.add_epoch_loss(stage, float(np.mean(epoch_losses)))
    if manifest is not None:
        manifest.record(stage, epochs=epochs, contexts=len(groups),
                        elapsed_s=round(time.monotonic() - started, 3))
    return params


def pretrain(params: RecommenderParams, synthetic, context_vecs: Mapping[str, np.ndarray],
             config: TrainConfig, epochs: int | None = None,
             manifest: RunManifest | None = None,
             stage: str = "pretrain") -> RecommenderParams:
    """Stage 1: cross-entropy training over the synthetic dataset, grouped per context.

    ``synthetic`` is a SyntheticDataset or any context-id -> positive-set
    mapping, so the same loop also serves real-data-only baselines.
    """
    groups = _as_groups(synthetic)
    if not groups:
        raise ValueError("synthetic dataset is empty")
    epochs = config.epochs_pretrain if epochs is None else epochs
    return _run_epochs(params, groups, context_vecs, config, LossSpec("ce"),
                       epochs, stage, manifest)


def finetune(stage1_params: RecommenderParams, real_samples: Sequence[ContextSample],
             context_vecs: Mapping[str, np.ndarray], config: TrainConfig,
             manifest: RunManifest | None = None,
             kl_direction: str = "forward") -> RecommenderParams:
    """Stage 2: CE + alpha * KL against a snapshot of the stage-1 model.

    The soft-label snapshot is frozen exactly once, before any update.
    """
    provider = SoftLabelProvider(stage1_params)
    spec = LossSpec("finetune", soft_provider=provider, alpha=config.alpha,
                    direction=kl_direction)
    groups = _as_groups(group_real_samples(real_samples))
    if not groups:
        raise ValueError("real dataset is empty")
    if manifest is not None:
        manifest.record("finetune", alpha=config.alpha)
    return _run_epochs(stage1_params, groups, context_vecs, config, spec,
                       config.epochs_finetune, "finetune", manifest)


def _mix_quota(omega3: float, batch_size: int) -> int:
    """Synthetic draw per batch: proportion for omega3 <= 1, synthetic:real ratio above."""
    if omega3 < 0:
        raise ValueError("omega3 must be >= 0")
    if omega3 <= 1.0:
        n_syn = math.ceil(omega3 * batch_size)
    else:
        n_syn = math.ceil(batch_size * omega3 / (1.0 + omega3))
    return min(n_syn, batch_size)


def train_one_stage_mix(params: RecommenderParams, synthetic,
                        real_samples: Sequence[ContextSample],
                        omega3: float, context_vecs: Mapping[str, np.ndarray],
                        config: TrainConfig, epochs: int | None = None,
                        manifest: RunManifest | None = None) -> RecommenderParams:
    """One-stage baseline: every batch mixes synthetic and real contexts.

    omega3 = 0 degenerates to training on the real data alone and omega3 = 1
    to pretraining on the synthetic data alone (identical loss streams, same
    epoch shuffles). In between, an epoch covers the real data once while the
    synthetic stream cycles.
    """
    epochs = (config.epochs_pretrain + config.epochs_finetune) if epochs is None else epochs
    n_syn = _mix_quota(omega3, config.batch_size)
    n_real = config.batch_size - n_syn
    syn_groups = _as_groups(synthetic)
    real_groups = _as_groups(group_real_samples(real_samples))
    if n_syn == 0:
        return _run_epochs(params, real_groups, context_vecs, config, LossSpec("ce"),
                           epochs, "mix", manifest)
    if n_real == 0:
        return _run_epochs(params, syn_groups, context_vecs, config, LossSpec("ce"),
                           epochs, "mix", manifest)
    if not syn_groups or not real_groups:
        raise ValueError("mixing needs both synthetic and real data")
    started = time.monotonic()
    for epoch in range(epochs):
        real_order = _epoch_permutation(config.seed, epoch, len(real_groups))
        syn_order = _epoch_permutation(config.seed + 1, epoch, len(syn_groups))
        syn_cursor = 0
        epoch_losses = []
        for start in range(0, len(real_order), n_real):
            batch = _batch(real_groups, context_vecs, real_order[start:start + n_real])
            for _ in range(n_syn):
                idx = syn_order[syn_cursor % len(syn_order)]
                syn_cursor += 1
                batch.append((context_vecs[syn_groups[idx][0]], syn_groups[idx][1]))
            params, loss = grad_step(params, batch, LossSpec("ce"), config)
            epoch_losses.append(loss)
        if manifest is not None:
            manifest.add_epoch_loss("mix", float(np.mean(epoch_losses)))
    if manifest is not None:
        manifest.record("mix", epochs=epochs, omega3=omega3, n_syn_per_batch=n_syn,
                        elapsed_s=round(time.monotonic() - started, 3))
    return params
