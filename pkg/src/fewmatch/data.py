"""Corpus ingestion, pretrained embeddings, position features, episode sampling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

MAX_RELATIVE_DISTANCE = 40
POSITION_VOCAB_SIZE = 2 * MAX_RELATIVE_DISTANCE + 1  # indices 0..80


class IngestionError(ValueError):
    """A corpus record could not be parsed."""


class ValidationError(ValueError):
    """A corpus record parsed but violates its invariants."""


class FormatError(ValueError):
    """An embedding file line has the wrong layout."""


class SamplingError(ValueError):
    """The corpus cannot supply the requested episode."""


@dataclass(frozen=True)
class Instance:
    """A tokenized sentence with two marked entity positions and a label."""
    tokens: tuple
    head_pos: int
    tail_pos: int
    relation: str
    overlapping: bool = False  # head and tail spans share the anchor token

    def __post_init__(self):
        t = len(self.tokens)
        if t < 1:
            raise ValidationError(f"empty sentence for relation {self.relation!r}")
        for pos in (self.head_pos, self.tail_pos):
            if not 0 <= pos < t:
                raise ValidationError(
                    f"entity position {pos} outside sentence of length {t} "
                    f"(relation {self.relation!r})")


@dataclass
class Corpus:
    """Instances grouped by relation label, tagged with their split."""
    by_relation: dict
    split: str

    @property
    def labels(self):
        return sorted(self.by_relation)

    def __len__(self):
        return sum(len(v) for v in self.by_relation.values())


@dataclass
class Episode:
    """One N-way-K-shot task: support grid plus labeled queries."""
    support: list  # N lists of K Instances
    queries: list  # list of (Instance, label index in 0..N-1)
    labels: list   # the N sampled relation names

    @property
    def n_way(self):
        return len(self.support)

    @property
    def k_shot(self):
        return len(self.support[0])


def _entity_anchor(entity, n_tokens, relation, index):
    """First token index of the first span of a FewRel-style entity record."""
    try:
        spans = entity[2]
        first = int(spans[0][0])
    except (IndexError, TypeError, ValueError) as exc:
        raise IngestionError(
            f"malformed entity record in relation {relation!r}, instance {index}") from exc
    if not 0 <= first < n_tokens:
        raise ValidationError(
            f"entity span start {first} outside sentence of length {n_tokens} "
            f"(relation {relation!r}, instance {index})")
    return first


def load_corpus(path, split: str) -> Corpus:
    """Load a JSON corpus: {relation: [{"tokens": [...], "h": ..., "t": ...}]}.

    Multi-token entity spans are reduced to their first token index.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestionError(f"corpus file {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise IngestionError(f"corpus file {path} must map relation -> instance list")
    by_relation = {}
    for relation, records in raw.items():
        instances = []
        for idx, rec in enumerate(records):
            try:
                tokens = tuple(str(t) for t in rec["tokens"])
                head, tail = rec["h"], rec["t"]
            except (KeyError, TypeError) as exc:
                raise IngestionError(
                    f"malformed record in relation {relation!r}, instance {idx}") from exc
            p1 = _entity_anchor(head, len(tokens), relation, idx)
            p2 = _entity_anchor(tail, len(tokens), relation, idx)
            instances.append(Instance(tokens, p1, p2, relation,
                                      overlapping=(p1 == p2)))
        by_relation[relation] = instances
    return Corpus(by_relation, split)


def check_label_disjoint(*corpora) -> None:
    """Raise if any two corpora share a relation label."""
    for i, a in enumerate(corpora):
        for b in corpora[i + 1:]:
            shared = set(a.by_relation) & set(b.by_relation)
            if shared:
                raise ValidationError(
                    f"splits {a.split!r} and {b.split!r} share labels {sorted(shared)}")


class EmbeddingTable:
    """Frozen token -> vector map; unknown tokens resolve to a zero vector."""

    def __init__(self, vectors: dict, dim: int):
        self.vectors = vectors
        self.dim = dim
        self.unk = np.zeros(dim)

    def lookup(self, token: str) -> np.ndarray:
        return self.vectors.get(token.lower(), self.unk)

    def encode(self, tokens) -> np.ndarray:
        """(T, dim) matrix of embeddings; rows for unknown tokens are zero."""
        return np.array([self.lookup(t) for t in tokens])


def load_embeddings(path, vocab=None, dim: int = 50) -> EmbeddingTable:
    """Load whitespace-separated text embeddings (token then `dim` numbers).

    Tokens are lowercased before storage and lookup; when `vocab` is given,
    only tokens appearing in it (lowercased) are kept.
    """
    wanted = None if vocab is None else {t.lower() for t in vocab}
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) != dim + 1:
                raise FormatError(
                    f"line {lineno}: expected token + {dim} numbers, got "
                    f"{len(parts) - 1} numbers")
            token = parts[0].lower()
            if wanted is not None and token not in wanted:
                continue
            try:
                vectors[token] = np.array([float(v) for v in parts[1:]])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: non-numeric embedding value") from exc
    return EmbeddingTable(vectors, dim)


def build_vocab(*corpora) -> set:
    vocab = set()
    for corpus in corpora:
        for instances in corpus.by_relation.values():
            for inst in instances:
                vocab.update(t.lower() for t in inst.tokens)
    return vocab


def position_indices(t_len: int, pos: int,
                     max_dist: int = MAX_RELATIVE_DISTANCE) -> np.ndarray:
    """Clipped relative distances to one entity, shifted to [0, 2*max_dist]."""
    if not 0 <= pos < t_len:
        raise ValidationError(f"entity position {pos} outside sentence of length {t_len}")
    rel = np.arange(t_len) - pos
    return np.clip(rel, -max_dist, max_dist) + max_dist


def sample_episode(corpus: Corpus, n_way: int, k_shot: int, n_query: int,
                   rng: np.random.Generator) -> Episode:
    """Sample an N-way-K-shot episode with queries pooled over the N classes.

    Queries are drawn uniformly without replacement from the instances left
    after removing each class's support set.
    """
    labels = corpus.labels
    if len(labels) < n_way:
        raise SamplingError(f"need {n_way} relations, corpus has {len(labels)}")
    per_class_needed = k_shot + math.ceil(n_query / n_way)
    short = [l for l in labels if len(corpus.by_relation[l]) < per_class_needed]
    if short:
        raise SamplingError(
            f"relations {short} have fewer than {per_class_needed} instances")

    chosen = [labels[i] for i in rng.choice(len(labels), size=n_way, replace=False)]
    support = []
    remainder = []
    for class_idx, label in enumerate(chosen):
        pool = corpus.by_relation[label]
        support_idx = set(rng.choice(len(pool), size=k_shot, replace=False).tolist())
        support.append([pool[i] for i in sorted(support_idx)])
        remainder.extend((pool[i], class_idx)
                         for i in range(len(pool)) if i not in support_idx)
    if len(remainder) < n_query:
        raise SamplingError(
            f"only {len(remainder)} instances left for {n_query} queries")
    query_idx = rng.choice(len(remainder), size=n_query, replace=False)
    queries = [remainder[i] for i in query_idx]
    return Episode(support=support, queries=queries, labels=chosen)
