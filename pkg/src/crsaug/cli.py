"""Command-line pipeline driver: staged artifacts, resumable runs, reports."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augment, evalkit, pipeline, toydata
from .corpus import (Catalog, ContextSample, CorpusError, Split, derive_context_samples,
                     load_corpus, read_context_samples, tail_item_set,
                     write_context_samples)
from .judge import (BackendUnavailable, DistilledJudge, JudgeError, RelevanceTriple,
                    RemoteJudge, RuleJudge, SingularSystem, load_scorer, read_triples,
                    score_candidates, write_triples)
from .recmodel import (NonFiniteLoss, RecommenderParams, TrainConfig, load_checkpoint,
                       save_checkpoint)
from .semindex import (HashedNgramProvider, PrecomputedProvider, ProviderUnavailable,
                       RemoteHttpProvider, SemIndexError, build_index, embed_texts,
                       retrieve_topk)

logger = logging.getLogger("crsaug")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4
EXIT_NUMERIC = 5

SUBCOMMANDS = ("ingest", "embed", "retrieve", "judge", "build-syn", "pretrain",
               "finetune", "train-mix", "evaluate", "sweep-alpha", "report")


class ConfigInvalid(Exception):
    def __init__(self, field: str, detail: str = ""):
        super().__init__(f"invalid config field {field!r}" + (f": {detail}" if detail else ""))
        self.field = field


class MissingArtifact(Exception):
    def __init__(self, stage: str, path: Path):
        super().__init__(f"stage {stage!r} needs missing artifact {path}")
        self.stage = stage
        self.path = path


class LockHeld(Exception):
    pass


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def _float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(part) for part in raw.split(",") if part.strip())


# key -> (parser, default); None default means required
_CONFIG_SPEC = {
    "corpus_path": (str, None),
    "catalog_path": (str, None),
    "topics_path": (str, ""),
    "embed_backend": (str, "deterministic"),
    "embed_dim": (int, 64),
    "embed_seed": (int, 0),
    "embed_endpoint": (str, ""),
    "embed_token": (str, ""),
    "embed_ctx_file": (str, ""),
    "embed_item_file": (str, ""),
    "normalize_embeddings": (_bool, False),
    "judge_backend": (str, "oracle"),
    "judge_endpoint": (str, ""),
    "judge_token": (str, ""),
    "scorer_path": (str, ""),
    "retrieval_k": (int, 50),
    "threshold": (float, 3.5),
    "exclude_mentioned": (_bool, True),
    "mention_scope": (str, "both"),
    "alpha": (float, 0.2),
    "omega3": (float, 0.5),
    "learning_rate": (float, 0.05),
    "batch_size": (int, 64),
    "epochs_pretrain": (int, 5),
    "epochs_finetune": (int, 3),
    "model_dim": (int, 32),
    "seed": (int, 0),
    "eval_ks": (_int_list, (1, 10, 50)),
    "cooc_ks": (_int_list, (10, 50)),
    "tail_ks": (_int_list, (10, 50)),
    "semantic_ks": (_int_list, (1, 5)),
    "semantic_eval": (_bool, False),
    "tail_threshold": (int, 4),
    "alpha_grid": (_float_list, (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)),
}

_SECRET_KEYS = ("embed_token", "judge_token")
_ENV_OVERRIDES = {"embed_token": "CRSAUG_EMBED_TOKEN", "judge_token": "CRSAUG_JUDGE_TOKEN"}


@dataclass
class PipelineConfig:
    values: dict

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def hash(self) -> str:
        public = {k: v for k, v in self.values.items() if k not in _SECRET_KEYS}
        canonical = "\n".join(f"{k}={public[k]}" for k in sorted(public))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def train_config(self, alpha: float | None = None) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate,
                           epochs_pretrain=self.epochs_pretrain,
                           epochs_finetune=self.epochs_finetune,
                           batch_size=self.batch_size,
                           alpha=self.alpha if alpha is None else alpha,
                           seed=self.seed)


def load_config(path: str | Path, seed_override: int | None = None) -> PipelineConfig:
    """Parse a ``key = value`` config file; unknown keys are rejected.

    Secrets (backend tokens) may be supplied via CRSAUG_* environment
    variables, which take precedence over the file.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid("config", f"file not found: {path}")
    raw: dict[str, str] = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigInvalid("config", f"line {line_no} is not 'key = value'")
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()
    unknown = set(raw) - set(_CONFIG_SPEC)
    if unknown:
        raise ConfigInvalid(sorted(unknown)[0], "unknown key")
    values = {}
    for key, (parse, default) in _CONFIG_SPEC.items():
        if key in raw:
            try:
                values[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigInvalid(key, str(exc)) from exc
        elif default is None:
            raise ConfigInvalid(key, "required")
        else:
            values[key] = default
    for key, env in _ENV_OVERRIDES.items():
        if os.environ.get(env):
            values[key] = os.environ[env]
    if seed_override is not None:
        values["seed"] = seed_override
    _validate(values)
    return PipelineConfig(values=values)


def _validate(values: dict) -> None:
    if values["embed_backend"] not in ("deterministic", "precomputed", "remote"):
        raise ConfigInvalid("embed_backend", values["embed_backend"])
    if values["judge_backend"] not in ("oracle", "distilled", "remote"):
        raise ConfigInvalid("judge_backend", values["judge_backend"])
    if values["mention_scope"] not in ("both", "recommender"):
        raise ConfigInvalid("mention_scope", values["mention_scope"])
    for key in ("retrieval_k", "batch_size", "model_dim", "embed_dim", "tail_threshold"):
        if values[key] < 1:
            raise ConfigInvalid(key, "must be >= 1")
    for key in ("epochs_pretrain", "epochs_finetune"):
        if values[key] < 0:
            raise ConfigInvalid(key, "must be >= 0")
    if not 0.0 <= values["threshold"] <= 4.0:
        raise ConfigInvalid("threshold", "must lie in [0, 4]")
    if values["alpha"] < 0 or values["omega3"] < 0:
        raise ConfigInvalid("alpha" if values["alpha"] < 0 else "omega3", "must be >= 0")
    if values["learning_rate"] <= 0:
        raise ConfigInvalid("learning_rate", "must be > 0")


# ---------------------------------------------------------------------------
# artifact bookkeeping

def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as handle:
        for block in iter(lambda: handle.read(65536), b""):
            digest.update(block)
    return digest.hexdigest()


def _stamp_path(artifact: Path) -> Path:
    return artifact.with_name(artifact.name + ".stamp.json")


def _write_stamp(artifact: Path, config_hash: str, inputs: list[Path]) -> None:
    stamp = {"config_hash": config_hash,
             "inputs": {p.name: _sha256_file(p) for p in inputs}}
    _stamp_path(artifact).write_text(json.dumps(stamp, sort_keys=True, indent=2),
                                     encoding="utf-8")


def _fresh(artifact: Path, config_hash: str, inputs: list[Path]) -> bool:
    stamp_file = _stamp_path(artifact)
    if not (artifact.exists() and stamp_file.exists()):
        return False
    try:
        stamp = json.loads(stamp_file.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    if stamp.get("config_hash") != config_hash:
        return False
    return stamp.get("inputs") == {p.name: _sha256_file(p) for p in inputs}


def _require_inputs(stage: str, paths: list[Path]) -> None:
    for path in paths:
        if not path.exists():
            raise MissingArtifact(stage, path)


def _load_manifest(run: Path) -> pipeline.RunManifest:
    manifest_path = run / "manifest.json"
    if manifest_path.exists():
        return pipeline.RunManifest.load(manifest_path)
    return pipeline.RunManifest()


def _save_manifest(run: Path, manifest: pipeline.RunManifest, cfg: PipelineConfig) -> None:
    manifest.config_hash = cfg.hash()
    manifest.save(run / "manifest.json")


def _write_vectors(path: Path, keys: list[str], matrix: np.ndarray) -> None:
    with path.open("w", encoding="utf-8") as handle:
        for key, row in zip(keys, matrix):
            handle.write(json.dumps({"key": key, "vector": [float(x) for x in row]}) + "\n")


def _read_vectors(path: Path) -> dict[str, np.ndarray]:
    vectors = {}
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                record = json.loads(line)
                vectors[record["key"]] = np.asarray(record["vector"], dtype=np.float64)
    return vectors


def _embedding_provider(cfg: PipelineConfig, for_items: bool):
    backend = cfg.embed_backend
    if backend == "deterministic":
        return HashedNgramProvider(dim=cfg.embed_dim, seed=cfg.embed_seed)
    if backend == "precomputed":
        source = cfg.embed_item_file if for_items else cfg.embed_ctx_file
        if not source:
            raise ConfigInvalid("embed_item_file" if for_items else "embed_ctx_file",
                                "required for the precomputed backend")
        return PrecomputedProvider(source)
    if not cfg.embed_endpoint:
        raise ConfigInvalid("embed_endpoint", "required for the remote backend")
    return RemoteHttpProvider(cfg.embed_endpoint, dim=cfg.embed_dim,
                              token=cfg.embed_token or None)


def _judge_backend(cfg: PipelineConfig, run: Path):
    backend = cfg.judge_backend
    if backend == "oracle":
        if not cfg.topics_path:
            raise ConfigInvalid("topics_path", "required for the oracle judge")
        context_topics, item_topics = toydata.load_topics(cfg.topics_path)
        return RuleJudge.from_topics(context_topics, item_topics)
    if backend == "remote":
        if not cfg.judge_endpoint:
            raise ConfigInvalid("judge_endpoint", "required for the remote judge")
        return RemoteJudge(cfg.judge_endpoint, token=cfg.judge_token or None)
    if not cfg.scorer_path:
        raise ConfigInvalid("scorer_path", "required for the distilled judge")
    item_vecs = _read_vectors(run / "item_vecs.jsonl")
    ctx_vecs = _read_vectors(run / "ctx_vecs.jsonl")
    return DistilledJudge(load_scorer(cfg.scorer_path), item_vecs, context_vecs=ctx_vecs)


# ---------------------------------------------------------------------------
# stages

def stage_ingest(cfg: PipelineConfig, run: Path, force: bool) -> None:
    inputs = [Path(cfg.corpus_path), Path(cfg.catalog_path)]
    _require_inputs("ingest", inputs)
    outputs = [run / f"samples_{split.value}.jsonl" for split in Split]
    if not force and all(_fresh(o, cfg.hash(), inputs) for o in outputs):
        logger.info("ingest: up to date")
        return
    dialogues, _catalog = load_corpus(cfg.corpus_path, cfg.catalog_path)
    manifest = _load_manifest(run)
    for split in Split:
        split_dialogues = [d for d in dialogues if d.split is split]
        samples = derive_context_samples(split_dialogues, mention_scope=cfg.mention_scope)
        out = run / f"samples_{split.value}.jsonl"
        write_context_samples(out, samples)
        _write_stamp(out, cfg.hash(), inputs)
        manifest.record("ingest", **{f"samples_{split.value}": len(samples)})
    manifest.record("ingest", dialogues=len(dialogues))
    _save_manifest(run, manifest, cfg)


def stage_embed(cfg: PipelineConfig, run: Path, force: bool) -> None:
    sample_files = [run / f"samples_{split.value}.jsonl" for split in Split]
    inputs = sample_files + [Path(cfg.catalog_path)]
    _require_inputs("embed", inputs)
    ctx_out, item_out = run / "ctx_vecs.jsonl", run / "item_vecs.jsonl"
    if not force and all(_fresh(o, cfg.hash(), inputs) for o in (ctx_out, item_out)):
        logger.info("embed: up to date")
        return
    samples = [s for f in sample_files for s in read_context_samples(f)]
    ctx_provider = _embedding_provider(cfg, for_items=False)
    keys = [s.id for s in samples]
    ctx_matrix = embed_texts(ctx_provider, [s.rendered() for s in samples], keys=keys)
    _write_vectors(ctx_out, keys, ctx_matrix)
    catalog = load_corpus(cfg.corpus_path, cfg.catalog_path)[1]
    item_provider = _embedding_provider(cfg, for_items=True)
    index = build_index(catalog, item_provider, normalize=False)
    _write_vectors(item_out, list(index.item_ids), np.asarray(index.matrix))
    for out in (ctx_out, item_out):
        _write_stamp(out, cfg.hash(), inputs)
    manifest = _load_manifest(run)
    manifest.record("embed", contexts=len(samples), items=len(index.item_ids),
                    provider=ctx_provider.identity())
    _save_manifest(run, manifest, cfg)


def stage_retrieve(cfg: PipelineConfig, run: Path, force: bool) -> None:
    inputs = [run / "item_vecs.jsonl", run / "ctx_vecs.jsonl", run / "samples_train.jsonl"]
    _require_inputs("retrieve", inputs)
    out = run / "candidates.jsonl"
    if not force and _fresh(out, cfg.hash(), inputs):
        logger.info("retrieve: up to date")
        return
    catalog = load_corpus(cfg.corpus_path, cfg.catalog_path)[1]
    provider = PrecomputedProvider(run / "item_vecs.jsonl")
    index = build_index(catalog, provider, normalize=cfg.normalize_embeddings)
    ctx_vecs = _read_vectors(run / "ctx_vecs.jsonl")
    samples = read_context_samples(run / "samples_train.jsonl")
    with out.open("w", encoding="utf-8") as handle:
        for sample in samples:
            exclude = sample.mentioned_ids if cfg.exclude_mentioned else frozenset()
            hits = retrieve_topk(index, ctx_vecs[sample.id], cfg.retrieval_k,
                                 exclude=exclude)
            handle.write(json.dumps({"context_id": sample.id,
                                     "candidates": [item_id for item_id, _ in hits]}) + "\n")
    _write_stamp(out, cfg.hash(), inputs)
    manifest = _load_manifest(run)
    manifest.record("retrieve", k=cfg.retrieval_k, contexts=len(samples))
    _save_manifest(run, manifest, cfg)


def stage_judge(cfg: PipelineConfig, run: Path, force: bool) -> None:
    inputs = [run / "candidates.jsonl", run / "samples_train.jsonl"]
    _require_inputs("judge", inputs)
    out = run / "triples.jsonl"
    if not force and _fresh(out, cfg.hash(), inputs):
        logger.info("judge: up to date")
        return
    catalog = load_corpus(cfg.corpus_path, cfg.catalog_path)[1]
    backend = _judge_backend(cfg, run)
    samples = {s.id: s for s in read_context_samples(run / "samples_train.jsonl")}
    triples: list[RelevanceTriple] = []
    with (run / "candidates.jsonl").open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            sample = samples[record["context_id"]]
            if record["candidates"]:
                triples.extend(score_candidates(backend, sample, record["candidates"],
                                                catalog))
    triples.sort(key=lambda t: (t.context_id, t.item_id))
    write_triples(out, triples)
    _write_stamp(out, cfg.hash(), inputs)
    manifest = _load_manifest(run)
    manifest.record("judge", backend=backend.identity(), triples=len(triples),
                    dropped=getattr(backend, "dropped", 0))
    _save_manifest(run, manifest, cfg)


def stage_build_syn(cfg: PipelineConfig, run: Path, force: bool) -> None:
    inputs = [run / "triples.jsonl", run / "samples_train.jsonl"]
    _require_inputs("build-syn", inputs)
    out = run / "dsyn.jsonl"
    if not force and _fresh(out, cfg.hash(), inputs):
        logger.info("build-syn: up to date")
        return
    triples = read_triples(run / "triples.jsonl")
    samples = read_context_samples(run / "samples_train.jsonl")
    manifest = _load_manifest(run)
    dropped = manifest.stages.get("judge", {}).get("dropped", 0)
    dataset = augment.dataset_from_triples(
        triples, samples, k=cfg.retrieval_k, threshold=cfg.threshold,
        retriever="semantic", judge_id=manifest.stages.get("judge", {}).get("backend", ""),
        embedder_id=manifest.stages.get("embed", {}).get("provider", ""), dropped=dropped)
    augment.write_synthetic_dataset(dataset, out)
    sidecar = out.with_suffix(".meta.json")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    meta["config_hash"] = cfg.hash()
    sidecar.write_text(json.dumps(meta, sort_keys=True, indent=2), encoding="utf-8")
    _write_stamp(out, cfg.hash(), inputs)
    manifest.record("build-syn", pairs=len(dataset.records),
                    coverage_items=len(dataset.distinct_items()))
    _save_manifest(run, manifest, cfg)


def _init_params(cfg: PipelineConfig, catalog: Catalog, ctx_dim: int) -> RecommenderParams:
    return RecommenderParams.init_random(catalog.ids_sorted(), latent_dim=cfg.model_dim,
                                         context_dim=ctx_dim, seed=cfg.seed)


def stage_pretrain(cfg: PipelineConfig, run: Path, force: bool) -> None:
    inputs = [run / "dsyn.jsonl", run / "ctx_vecs.jsonl"]
    _require_inputs("pretrain", inputs)
    out = run / "ckpt-stage1.json"
    if not force and _fresh(out, cfg.hash(), inputs):
        logger.info("pretrain: up to date")
        return
    dataset = augment.read_synthetic_dataset(run / "dsyn.jsonl")
    ctx_vecs = _read_vectors(run / "ctx_vecs.jsonl")
    catalog = load_corpus(cfg.corpus_path, cfg.catalog_path)[1]
    ctx_dim = next(iter(ctx_vecs.values())).shape[0]
    manifest = _load_manifest(run)
    params = pipeline.pretrain(_init_params(cfg, catalog, ctx_dim), dataset, ctx_vecs,
                               cfg.train_config(), manifest=manifest)
    save_checkpoint(params, out, config_hash=cfg.hash(), stage="stage1")
    _write_stamp(out, cfg.hash(), inputs)
    _save_manifest(run, manifest, cfg)


def stage_finetune(cfg: PipelineConfig, run: Path, force: bool,
                   alpha: float | None = None, out_name: str = "ckpt-stage2.json") -> None:
    inputs = [run / "ckpt-stage1.json", run / "samples_train.jsonl", run / "ctx_vecs.jsonl"]
    _require_inputs("finetune", inputs)
    out = run / out_name
    if not force and _fresh(out, cfg.hash(), inputs):
        logger.info("finetune: up to date (%s)", out_name)
        return
    stage1 = load_checkpoint(run / "ckpt-stage1.json")
    samples = read_context_samples(run / "samples_train.jsonl")
    ctx_vecs = _read_vectors(run / "ctx_vecs.jsonl")
    manifest = _load_manifest(run)
    params = pipeline.finetune(stage1, samples, ctx_vecs, cfg.train_config(alpha=alpha),
                               manifest=manifest)
    save_checkpoint(params, out, config_hash=cfg.hash(), stage="stage2",
                    alpha=cfg.alpha if alpha is None else alpha)
    _write_stamp(out, cfg.hash(), inputs)
    _save_manifest(run, manifest, cfg)


def stage_train_mix(cfg: PipelineConfig, run: Path, force: bool) -> None:
    inputs = [run / "dsyn.jsonl", run / "samples_train.jsonl", run / "ctx_vecs.jsonl"]
    _require_inputs("train-mix", inputs)
    out = run / "ckpt-mix.json"
    if not force and _fresh(out, cfg.hash(), inputs):
        logger.info("train-mix: up to date")
        return
    dataset = augment.read_synthetic_dataset(run / "dsyn.jsonl")
    samples = read_context_samples(run / "samples_train.jsonl")
    ctx_vecs = _read_vectors(run / "ctx_vecs.jsonl")
    catalog = load_corpus(cfg.corpus_path, cfg.catalog_path)[1]
    ctx_dim = next(iter(ctx_vecs.values())).shape[0]
    manifest = _load_manifest(run)
    params = pipeline.train_one_stage_mix(_init_params(cfg, catalog, ctx_dim), dataset,
                                          samples, cfg.omega3, ctx_vecs,
                                          cfg.train_config(), manifest=manifest)
    save_checkpoint(params, out, config_hash=cfg.hash(), stage="mix", omega3=cfg.omega3)
    _write_stamp(out, cfg.hash(), inputs)
    _save_manifest(run, manifest, cfg)


def _report_name(checkpoint: str) -> str:
    return "report.json" if checkpoint == "stage2" else f"report-{checkpoint}.json"


def stage_evaluate(cfg: PipelineConfig, run: Path, force: bool,
                   checkpoint: str = "stage2") -> list[dict]:
    ckpt_path = run / f"ckpt-{checkpoint}.json"
    inputs = [ckpt_path, run / "samples_test.jsonl", run / "samples_train.jsonl",
              run / "ctx_vecs.jsonl"]
    _require_inputs("evaluate", inputs)
    out = run / _report_name(checkpoint)
    if not force and _fresh(out, cfg.hash(), inputs):
        logger.info("evaluate: up to date (%s)", out.name)
        return evalkit.read_report(out)
    params = load_checkpoint(ckpt_path)
    test_samples = read_context_samples(run / "samples_test.jsonl")
    train_samples = read_context_samples(run / "samples_train.jsonl")
    ctx_vecs = _read_vectors(run / "ctx_vecs.jsonl")
    catalog = load_corpus(cfg.corpus_path, cfg.catalog_path)[1]
    cooc = evalkit.fit_cooccurrence_model(train_samples, catalog)
    tail = tail_item_set(train_samples, catalog, threshold=cfg.tail_threshold)
    judge_backend = _judge_backend(cfg, run) if cfg.semantic_eval else None
    entries = evalkit.evaluate_model(
        params, test_samples, ctx_vecs, recall_ks=cfg.eval_ks, cooc_model=cooc,
        cooc_ks=cfg.cooc_ks, tail_items=tail, tail_ks=cfg.tail_ks, judge=judge_backend,
        catalog=catalog, semantic_ks=cfg.semantic_ks,
        manifest_ref=f"{cfg.hash()}:{checkpoint}")
    evalkit.write_report(entries, out)
    _write_stamp(out, cfg.hash(), inputs)
    manifest = _load_manifest(run)
    manifest.record(f"evaluate-{checkpoint}", report=out.name, samples=len(test_samples))
    _save_manifest(run, manifest, cfg)
    print(evalkit.report_to_text(entries))
    return entries


def stage_sweep_alpha(cfg: PipelineConfig, run: Path, force: bool) -> None:
    _require_inputs("sweep-alpha", [run / "ckpt-stage1.json"])
    rows = []
    for alpha in cfg.alpha_grid:
        tag = f"alpha-{alpha:g}"
        stage_finetune(cfg, run, force, alpha=alpha, out_name=f"ckpt-{tag}.json")
        entries = stage_evaluate(cfg, run, force, checkpoint=tag)
        row = {"alpha": alpha}
        for entry in entries:
            row[f"{entry['metric']}@{entry['k']}"] = entry["value"]
        rows.append(row)
    combined = run / "alpha_sweep.json"
    combined.write_text(json.dumps(rows, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    columns = ["alpha"] + [f"recall@{k}" for k in cfg.eval_ks] + \
              [f"collab_score@{k}" for k in cfg.cooc_ks]
    lines = ["  ".join(f"{c:>16}" for c in columns)]
    for row in rows:
        lines.append("  ".join(f"{row.get(c, float('nan')):>16.4f}" for c in columns))
    table = "\n".join(lines)
    (run / "alpha_sweep.txt").write_text(table + "\n", encoding="utf-8")
    print(table)


def stage_report(cfg: PipelineConfig, run: Path, force: bool) -> None:
    reports = sorted(run.glob("report*.json"))
    if not reports:
        raise MissingArtifact("report", run / "report.json")
    expected = f"{cfg.hash()}:"
    for path in reports:
        entries = evalkit.read_report(path)
        refs = {entry.get("manifest", "") for entry in entries}
        if not force and any(not ref.startswith(expected) for ref in refs):
            raise ConfigInvalid(
                "report", f"{path.name} was produced under a different config hash "
                          f"(use --force to mix)")
        print(f"== {path.name}")
        print(evalkit.report_to_text(entries))


# ---------------------------------------------------------------------------
# entry point

class _RunLock:
    def __init__(self, run: Path):
        self.path = run / ".lock"

    def __enter__(self):
        try:
            with self.path.open("x", encoding="utf-8") as handle:
                handle.write(str(os.getpid()))
        except FileExistsError:
            raise LockHeld(f"run directory is locked by {self.path}") from None
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


_STAGES = {
    "ingest": stage_ingest,
    "embed": stage_embed,
    "retrieve": stage_retrieve,
    "judge": stage_judge,
    "build-syn": stage_build_syn,
    "pretrain": stage_pretrain,
    "finetune": stage_finetune,
    "train-mix": stage_train_mix,
    "sweep-alpha": stage_sweep_alpha,
    "report": stage_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crsaug",
                                     description="Label augmentation pipeline driver")
    parser.add_argument("--config", required=True, help="path to the key=value config file")
    parser.add_argument("--run-dir", required=True, help="artifact directory for this run")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--force", action="store_true", help="recompute fresh artifacts")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        if name == "evaluate":
            sp.add_argument("--checkpoint", default="stage2",
                            help="checkpoint tag: stage1, stage2, mix, alpha-<a>")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed_override=args.seed)
        run = Path(args.run_dir)
        run.mkdir(parents=True, exist_ok=True)
        with _RunLock(run):
            if args.command == "evaluate":
                stage_evaluate(cfg, run, args.force, checkpoint=args.checkpoint)
            else:
                _STAGES[args.command](cfg, run, args.force)
    except (ConfigInvalid, LockHeld) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifact, CorpusError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ProviderUnavailable, BackendUnavailable, JudgeError, SemIndexError) as exc:
        if isinstance(exc, SingularSystem):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (NonFiniteLoss,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
