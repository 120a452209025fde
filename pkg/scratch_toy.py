"""Scratch: end-to-end toy pipeline to check acceptance margins. Not part of the package."""
import time

import numpy as np

from crsaug import augment, evalkit, pipeline
from crsaug.corpus import Split, derive_context_samples, tail_item_set
from crsaug.judge import RuleJudge
from crsaug.recmodel import RecommenderParams, TrainConfig
from crsaug.semindex import HashedNgramProvider, build_index, embed_texts
from crsaug.toydata import generate_toy_corpus

t0 = time.time()
toy = generate_toy_corpus(zipf_s=1.3, seed=7)
samples = derive_context_samples([d for d in toy.dialogues])
by_split = {}
for d in toy.dialogues:
    by_split.setdefault(d.split, []).append(d)
train = derive_context_samples(by_split[Split.TRAIN])
test = derive_context_samples(by_split[Split.TEST])
print(f"gen {time.time()-t0:.1f}s train={len(train)} test={len(test)} M={len(toy.catalog)}")

provider = HashedNgramProvider(dim=512, seed=0)
index = build_index(toy.catalog, provider)
all_s = train + test
vecs = {s.id: v for s, v in zip(all_s, embed_texts(provider, [s.rendered() for s in all_s], keys=[s.id for s in all_s]))}
judge_backend = RuleJudge.from_topics(toy.context_topics, toy.item_topics)

t0 = time.time()
dsyn = augment.build_synthetic_dataset(train, index, provider, judge_backend, toy.catalog, k=20, threshold=3.5)
print(f"dsyn {time.time()-t0:.1f}s pairs={len(dsyn.records)} cov={augment.coverage_stats(dsyn, toy.catalog)}")
# check purity: all pairs same-topic?
bad = [r for r in dsyn.records if toy.item_topics[r.item_id] != toy.context_topics[r.context_id]]
print("off-topic pairs:", len(bad))

cfg = TrainConfig(seed=0)
d_e = 512
cooc = evalkit.fit_cooccurrence_model(train, toy.catalog)
tail = tail_item_set(train, toy.catalog)
print("tail size:", len(tail))

def fresh():
    return RecommenderParams.init_random(toy.catalog.ids_sorted(), 96, 512, seed=cfg.seed)

def r_at(params, k=10):
    e = evalkit.evaluate_model(params, test, vecs, recall_ks=(1, 10, 50), cooc_model=cooc, cooc_ks=(10, 50), tail_items=tail)
    return {f"{x['metric']}@{x['k']}": round(x['value'], 4) for x in e}

t0 = time.time()
baseline = pipeline.pretrain(fresh(), pipeline.group_real_samples(train), vecs, cfg,
                             epochs=cfg.epochs_pretrain + cfg.epochs_finetune, stage="baseline")
print(f"baseline {time.time()-t0:.1f}s", r_at(baseline))

t0 = time.time()
s1 = pipeline.pretrain(fresh(), dsyn, vecs, cfg)
print(f"stage1 {time.time()-t0:.1f}s", r_at(s1))
s2 = pipeline.finetune(s1, train, vecs, cfg)
print("stage2", r_at(s2))

mix = pipeline.train_one_stage_mix(fresh(), dsyn, train, 0.5, vecs, cfg)
print("mix0.5", r_at(mix))

for alpha in (0.0, 0.2, 0.4, 0.8):
    cfg_a = TrainConfig(seed=0, alpha=alpha)
    m = pipeline.finetune(s1, train, vecs, cfg_a)
    print(f"alpha={alpha}", r_at(m))
