"""Scratch diagnostics for the toy corpus signal structure."""
from collections import Counter

import numpy as np

from crsaug import augment, evalkit, pipeline
from crsaug.corpus import Split, derive_context_samples
from crsaug.judge import RuleJudge
from crsaug.recmodel import RecommenderParams, TrainConfig, predict_topk
from crsaug.semindex import HashedNgramProvider, build_index, embed_texts
from crsaug.toydata import generate_toy_corpus

toy = generate_toy_corpus(zipf_s=1.3, seed=7)
by_split = {}
for d in toy.dialogues:
    by_split.setdefault(d.split, []).append(d)
train = derive_context_samples(by_split[Split.TRAIN])
test = derive_context_samples(by_split[Split.TEST])

# occurrence stats
counts = Counter()
for s in train:
    counts.update(s.mentioned_ids | s.label_ids)
occ = np.array([counts[i] for i in toy.catalog.ids_sorted()])
print(f"occurrences: min={occ.min()} p10={np.percentile(occ,10):.0f} med={np.median(occ):.0f} max={occ.max()}")

clique_size = 20
def clique_of(item_id):
    t = toy.item_topics[item_id]
    return (t, int(item_id.rsplit('-', 1)[1]) // clique_size)

provider = HashedNgramProvider(dim=512, seed=0)
index = build_index(toy.catalog, provider)
all_s = train + test
vecs = {s.id: v for s, v in zip(all_s, embed_texts(provider, [s.rendered() for s in all_s], keys=[s.id for s in all_s]))}
jb = RuleJudge.from_topics(toy.context_topics, toy.item_topics)
dsyn = augment.build_synthetic_dataset(train, index, provider, jb, toy.catalog, k=20, threshold=3.5)
cooc = evalkit.fit_cooccurrence_model(train, toy.catalog)
lookup = {i: j for j, i in enumerate(cooc.item_ids)}

cfg = TrainConfig(seed=0)
fresh = lambda: RecommenderParams.init_random(toy.catalog.ids_sorted(), 96, 512, seed=0)
baseline = pipeline.pretrain(fresh(), pipeline.group_real_samples(train), vecs, cfg, epochs=8, stage="b")
s1 = pipeline.pretrain(fresh(), dsyn, vecs, cfg)
s2 = pipeline.finetune(s1, train, vecs, cfg)

# test-label structure
in_clique_labels = 0
nlab = 0
for s in test:
    m_cliques = {clique_of(m) for m in s.mentioned_ids}
    for l in s.label_ids:
        nlab += 1
        if clique_of(l) in m_cliques:
            in_clique_labels += 1
print(f"test labels in mentioned clique: {in_clique_labels}/{nlab}")

def diag(params, name):
    frac_clique, frac_topic, pmi_in, pmi_out = [], [], [], []
    for s in test:
        preds = predict_topk(params, s, vecs[s.id], 10)
        m_cliques = {clique_of(m) for m in s.mentioned_ids}
        topic = toy.context_topics[s.id]
        inc = [p for p in preds if clique_of(p) in m_cliques]
        frac_clique.append(len(inc) / 10)
        frac_topic.append(sum(toy.item_topics[p] == topic for p in preds) / 10)
        for p in preds:
            vals = [cooc.logits[lookup[p], lookup[m]] for m in s.mentioned_ids if m != p]
            if not vals:
                continue
            (pmi_in if clique_of(p) in m_cliques else pmi_out).append(np.mean(vals))
    print(f"{name}: in-clique={np.mean(frac_clique):.3f} in-topic={np.mean(frac_topic):.3f} "
          f"PMI(in-clique recs)={np.mean(pmi_in):.2f} (n={len(pmi_in)}) "
          f"PMI(out recs)={np.mean(pmi_out):.2f} (n={len(pmi_out)})")

diag(baseline, "baseline")
diag(s1, "stage1  ")
diag(s2, "stage2  ")
mix = pipeline.train_one_stage_mix(fresh(), dsyn, train, 0.5, vecs, cfg)
diag(mix, "mix0.5  ")
for alpha in (0.0, 0.4, 0.8):
    m = pipeline.finetune(s1, train, vecs, TrainConfig(seed=0, alpha=alpha))
    diag(m, f"a={alpha}   ")
