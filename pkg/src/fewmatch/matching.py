"""Local matching and aggregation, instance matching, and class matching.

The query's context matrix is softly aligned against the concatenated
support contexts, the aligned pairs are fused and re-encoded with a BLSTM,
pooled into vectors, and finally compared through a small shared MLP at
both the instance and class level.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .params import MatchParams


@dataclass
class LocalMatch:
    """Soft alignment between query rows (m) and support rows (n)."""
    scores: ad.Tensor        # (T_q, T_s) raw dot products
    attn_query: ad.Tensor    # (T_q, T_s), each row sums to 1 (mixes support rows)
    attn_support: ad.Tensor  # (T_q, T_s), each column sums to 1 (mixes query rows)
    q_matched: ad.Tensor     # (T_q, d_c)
    c_matched: ad.Tensor     # (T_s, d_c)


@dataclass
class SupportBundle:
    """Per-class support encodings plus alignment diagnostics."""
    s_hats: list                    # K vectors of width 4*d_h
    boundaries: list                # support segment lengths [T_1..T_K]
    attn_support: ad.Tensor = None  # column-normalized weights (full variant only)
    attn_query: ad.Tensor = None    # row-normalized weights (full variant only)


def concat_support(contexts):
    """Row-stack the K support context matrices, remembering segment lengths."""
    if not contexts:
        raise ad.DimensionError("concat_support of an empty support set")
    boundaries = [c.data.shape[0] for c in contexts]
    return ad.concat_rows(contexts), boundaries


def split_rows(matrix: ad.Tensor, boundaries):
    """Exact inverse of concat_support on the row axis."""
    segments = []
    start = 0
    for t_k in boundaries:
        segments.append(ad.narrow(matrix, 0, start, start + t_k))
        start += t_k
    return segments


def local_match(q: ad.Tensor, c: ad.Tensor) -> LocalMatch:
    """Bidirectional soft alignment between two context matrices."""
    if q.data.shape[1] != c.data.shape[1]:
        raise ad.DimensionError(
            f"local_match widths differ: {q.data.shape} vs {c.data.shape}")
    scores = ad.matmul(q, ad.transpose(c))
    attn_query = ad.softmax(scores, axis=1)
    attn_support = ad.softmax(scores, axis=0)
    q_matched = ad.matmul(attn_query, c)
    c_matched = ad.matmul(ad.transpose(attn_support), q)
    return LocalMatch(scores, attn_query, attn_support, q_matched, c_matched)


def fuse(x: ad.Tensor, x_matched: ad.Tensor, w1: ad.Tensor) -> ad.Tensor:
    """ReLU([X; X~; |X - X~|; X * X~] W1); no bias term."""
    features = ad.concat_cols([x, x_matched,
                               ad.abs_(ad.sub(x, x_matched)),
                               ad.mul(x, x_matched)])
    return ad.relu(ad.matmul(features, w1))


def blstm_encode(x: ad.Tensor, mp: MatchParams, training: bool, rng,
                 dropout_rate: float = 0.2, direct: bool = False) -> ad.Tensor:
    """Single-layer BLSTM over rows; output (T, 2*d_h), zero initial states.

    Dropout is applied to the input sequence during training. `direct`
    selects the cells sized for raw CNN contexts (local matching skipped).
    """
    t_len = x.data.shape[0]
    if t_len < 1:
        raise ad.EmptySequenceError("blstm_encode over zero rows")
    cell_f = mp.fwd_direct if direct else mp.fwd
    cell_b = mp.bwd_direct if direct else mp.bwd
    d_h = cell_f.w_h.data.shape[1]
    x = ad.dropout(x, dropout_rate, training, rng)

    def run(cell, order):
        h = ad.Tensor([0.0] * d_h)
        c = ad.Tensor([0.0] * d_h)
        states = [None] * t_len
        for t in order:
            h, c = ad.lstm_step(ad.row(x, t), h, c, cell.w_x, cell.w_h, cell.b)
            states[t] = h
        return states

    fwd = run(cell_f, range(t_len))
    bwd = run(cell_b, range(t_len - 1, -1, -1))
    return ad.concat_cols([ad.stack(fwd), ad.stack(bwd)])


def local_aggregate(x_hat: ad.Tensor) -> ad.Tensor:
    """[columnwise max; columnwise mean], width 4*d_h."""
    return ad.concat([ad.pool_max_rows(x_hat), ad.pool_mean_rows(x_hat)])


def match_score(a: ad.Tensor, b: ad.Tensor, w2: ad.Tensor, v: ad.Tensor) -> ad.Tensor:
    """v . ReLU(W2 [a; b]) — the shared matching MLP."""
    return ad.dot(v, ad.relu(ad.matvec(w2, ad.concat([a, b]))))


def aggregate_prototype(s_hats, q_hat, mp: MatchParams, mode: str = "attention"):
    """Combine support vectors into a class prototype.

    attention: weights are softmaxed instance matching scores against the
    query (always through the shared W2, v). max/mean: elementwise pooling,
    no weights. Returns (prototype, weights or None).
    """
    if not s_hats:
        raise ad.EmptySequenceError("aggregate_prototype of an empty support set")
    stacked = ad.stack(s_hats)
    if mode == "attention":
        betas = ad.stack([match_score(s_k, q_hat, mp.w2, mp.v) for s_k in s_hats])
        weights = ad.softmax(betas, axis=0)
        proto = ad.matvec(ad.transpose(stacked), weights)
        return proto, weights
    if mode == "max":
        return ad.pool_max_rows(stacked), None
    if mode == "mean":
        return ad.pool_mean_rows(stacked), None
    raise ad.ConfigurationError(f"unknown instance aggregation mode {mode!r}")


def class_score(s_hat, q_hat, mp: MatchParams, metric: str = "mlp",
                tied: bool = True) -> ad.Tensor:
    """Class-level matching score; larger means a better match."""
    if metric == "mlp":
        if tied:
            return match_score(s_hat, q_hat, mp.w2, mp.v)
        return match_score(s_hat, q_hat, mp.w2_untied, mp.v_untied)
    if metric == "euclidean":
        # negated squared distance so the softmax-over-scores form is unchanged
        return ad.scale(ad.sq_l2(ad.sub(s_hat, q_hat)), -1.0)
    raise ad.ConfigurationError(f"unknown class matching metric {metric!r}")


def encode_pair(query_ctx, support_ctxs, mp: MatchParams, variant: str = "full",
                training: bool = False, rng=None, dropout_rate: float = 0.2):
    """Encode a (query, support set) pair into (q_hat, SupportBundle).

    full: align against the row-concatenated support matrix.
    no_concat: align against each support instance separately, then average
      the per-pair query vectors.
    no_local_match: skip alignment and fusion entirely; BLSTM directly on
      the CNN contexts.
    """
    if variant == "full":
        c, boundaries = concat_support(support_ctxs)
        lm = local_match(query_ctx, c)
        q_bar = fuse(query_ctx, lm.q_matched, mp.w1)
        c_bar = fuse(c, lm.c_matched, mp.w1)
        s_hats = [local_aggregate(blstm_encode(seg, mp, training, rng, dropout_rate))
                  for seg in split_rows(c_bar, boundaries)]
        q_hat = local_aggregate(blstm_encode(q_bar, mp, training, rng, dropout_rate))
        return q_hat, SupportBundle(s_hats, boundaries, lm.attn_support, lm.attn_query)

    if variant == "no_concat":
        s_hats, q_hats = [], []
        for s_ctx in support_ctxs:
            lm = local_match(query_ctx, s_ctx)
            q_bar = fuse(query_ctx, lm.q_matched, mp.w1)
            s_bar = fuse(s_ctx, lm.c_matched, mp.w1)
            s_hats.append(local_aggregate(
                blstm_encode(s_bar, mp, training, rng, dropout_rate)))
            q_hats.append(local_aggregate(
                blstm_encode(q_bar, mp, training, rng, dropout_rate)))
        q_hat = ad.pool_mean_rows(ad.stack(q_hats))
        boundaries = [c.data.shape[0] for c in support_ctxs]
        return q_hat, SupportBundle(s_hats, boundaries)

    if variant == "no_local_match":
        s_hats = [local_aggregate(
            blstm_encode(s_ctx, mp, training, rng, dropout_rate, direct=True))
            for s_ctx in support_ctxs]
        q_hat = local_aggregate(
            blstm_encode(query_ctx, mp, training, rng, dropout_rate, direct=True))
        boundaries = [c.data.shape[0] for c in support_ctxs]
        return q_hat, SupportBundle(s_hats, boundaries)

    raise ad.ConfigurationError(f"unknown local matching variant {variant!r}")
