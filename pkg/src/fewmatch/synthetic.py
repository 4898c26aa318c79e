"""Synthetic few-shot relation corpora for desk-scale experiments.

Each pseudo-relation is defined by a trigger token that appears between the
two marked entities; classifying a query therefore requires matching its
trigger against the support sentences. Train and eval splits use disjoint
trigger sets, so the task exercises generalization to unseen relations.
"""

from __future__ import annotations

import json

import numpy as np

from .data import Corpus, EmbeddingTable, Instance

TRIGGER_PREFIX = "rel"


def make_corpora(n_train_relations: int = 20, n_eval_relations: int = 5,
                 instances_per_relation: int = 30, n_fillers: int = 120,
                 n_entities: int = 30, seed: int = 0):
    """Generate (train_corpus, eval_corpus) with trigger-defined relations."""
    rng = np.random.default_rng(seed)
    fillers = [f"w{i:03d}" for i in range(n_fillers)]
    entities = [f"ent{i:02d}" for i in range(n_entities)]
    n_rel = n_train_relations + n_eval_relations
    triggers = [f"{TRIGGER_PREFIX}{i:02d}" for i in range(n_rel)]

    def make_instances(relation, trigger):
        out = []
        for _ in range(instances_per_relation):
            left = rng.integers(1, 4)
            right = rng.integers(1, 4)
            mid = rng.integers(0, 2)  # optional filler between head and trigger
            toks = [fillers[i] for i in rng.integers(0, n_fillers, left)]
            head_pos = len(toks)
            toks.append(entities[rng.integers(0, n_entities)])
            toks.extend(fillers[i] for i in rng.integers(0, n_fillers, mid))
            toks.append(trigger)
            tail_pos = len(toks)
            toks.append(entities[rng.integers(0, n_entities)])
            toks.extend(fillers[i] for i in rng.integers(0, n_fillers, right))
            out.append(Instance(tuple(toks), head_pos, tail_pos, relation))
        return out

    train = {f"train_{t}": make_instances(f"train_{t}", t)
             for t in triggers[:n_train_relations]}
    evals = {f"eval_{t}": make_instances(f"eval_{t}", t)
             for t in triggers[n_train_relations:]}
    return Corpus(train, "train"), Corpus(evals, "eval")


def make_embeddings(corpora, dim: int = 24, seed: int = 0, scale: float = 2.0,
                    trigger_scale: float = 2.0) -> EmbeddingTable:
    """Random fixed embeddings for every token in the given corpora.

    `scale` sets the per-token vector norm; larger values make same-token
    alignments sharp at initialization, which speeds up desk-scale training.
    Trigger tokens get an extra `trigger_scale`, playing the role of salient
    content words against low-information fillers.
    """
    rng = np.random.default_rng(seed)
    vocab = sorted({t.lower()
                    for c in corpora
                    for insts in c.by_relation.values()
                    for inst in insts
                    for t in inst.tokens})
    vectors = {}
    for tok in vocab:
        vec = rng.normal(0.0, scale, dim) / np.sqrt(dim)
        if tok.startswith(TRIGGER_PREFIX):
            vec = vec * trigger_scale
        vectors[tok] = vec
    return EmbeddingTable(vectors, dim)


def write_corpus_json(corpus: Corpus, path) -> None:
    """Serialize a corpus in the FewRel-style JSON layout."""
    raw = {}
    for relation, instances in corpus.by_relation.items():
        raw[relation] = [
            {"tokens": list(inst.tokens),
             "h": [inst.tokens[inst.head_pos], "H", [[inst.head_pos]]],
             "t": [inst.tokens[inst.tail_pos], "T", [[inst.tail_pos]]]}
            for inst in instances
        ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(raw, fh, sort_keys=True)


def write_embeddings_text(table: EmbeddingTable, path) -> None:
    """Serialize embeddings as one `token v1 .. vd` line per token."""
    with open(path, "w", encoding="utf-8") as fh:
        for token in sorted(table.vectors):
            vals = " ".join(format(v, ".17g") for v in table.vectors[token])
            fh.write(f"{token} {vals}\n")
