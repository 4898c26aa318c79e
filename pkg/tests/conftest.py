import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from fewmatch import synthetic
from fewmatch.data import Corpus, Instance
from fewmatch.params import ModelDims, ParameterSet


def make_tiny_corpus(seed=0, n_relations=3, per_relation=6, vocab=8,
                     min_len=3, max_len=6, split="train", prefix="r"):
    """Random short sentences; relation labels carry no signal here."""
    rng = np.random.default_rng(seed)
    by_relation = {}
    for i in range(n_relations):
        rel = f"{prefix}{i}"
        insts = []
        for _ in range(per_relation):
            t_len = int(rng.integers(min_len, max_len + 1))
            toks = tuple(f"t{rng.integers(0, vocab)}" for _ in range(t_len))
            p1 = int(rng.integers(0, t_len))
            p2 = int(rng.integers(0, t_len))
            insts.append(Instance(toks, p1, p2, rel, overlapping=(p1 == p2)))
        by_relation[rel] = insts
    return Corpus(by_relation, split)


TINY_DIMS = ModelDims(d_w=3, d_p=2, d_c=4, d_h=3, window=3, max_dist=40)


@pytest.fixture
def tiny_dims():
    return TINY_DIMS


@pytest.fixture
def tiny_params(tiny_dims):
    return ParameterSet.init(tiny_dims, seed=0)


@pytest.fixture
def tiny_corpus():
    return make_tiny_corpus()


@pytest.fixture
def tiny_embeddings(tiny_corpus):
    return synthetic.make_embeddings([tiny_corpus], dim=3, seed=1)


@pytest.fixture(scope="session")
def synthetic_task():
    """The 20-train / 5-eval trigger-token task plus fixed embeddings."""
    train_c, eval_c = synthetic.make_corpora(seed=0)
    emb = synthetic.make_embeddings([train_c, eval_c], dim=24, seed=1)
    return train_c, eval_c, emb
