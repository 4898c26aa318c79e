"""Context encoder: word + position embeddings followed by a same-padded CNN."""

from __future__ import annotations

from . import autodiff as ad
from .data import EmbeddingTable, Instance, position_indices
from .params import EncoderParams, ModelDims


def embed(instance: Instance, embeddings: EmbeddingTable,
          encoder: EncoderParams, dims: ModelDims) -> ad.Tensor:
    """Word representation matrix, one row [e_t; p1_t; p2_t] per token.

    The word-embedding slice is a frozen constant; gradients reach only the
    two position tables.
    """
    words = ad.Tensor(embeddings.encode(instance.tokens))
    idx1 = position_indices(len(instance.tokens), instance.head_pos, dims.max_dist)
    idx2 = position_indices(len(instance.tokens), instance.tail_pos, dims.max_dist)
    p1 = ad.gather_rows(encoder.pos1_table, idx1)
    p2 = ad.gather_rows(encoder.pos2_table, idx2)
    return ad.concat_cols([words, p1, p2])


def encode_context(wordrep: ad.Tensor, encoder: EncoderParams,
                   training: bool, rng, dropout_rate: float = 0.2) -> ad.Tensor:
    """CNN context representation, (T, d_c); dropout precedes the convolution."""
    x = ad.dropout(wordrep, dropout_rate, training, rng)
    return ad.relu(ad.conv1d_same(x, encoder.filters, encoder.bias))


def encode_instance(instance: Instance, embeddings: EmbeddingTable,
                    encoder: EncoderParams, dims: ModelDims,
                    training: bool, rng, dropout_rate: float = 0.2) -> ad.Tensor:
    return encode_context(embed(instance, embeddings, encoder, dims),
                          encoder, training, rng, dropout_rate)
