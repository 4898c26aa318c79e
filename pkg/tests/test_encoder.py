import numpy as np
import pytest

from fewmatch import autodiff as ad
from fewmatch.data import Instance
from fewmatch.encoder import embed, encode_context, encode_instance
from fdcheck import finite_diff_grad, max_rel_error


@pytest.fixture
def inst():
    return Instance(("t0", "t1", "t2", "t3"), 1, 3, "r")


class TestEmbed:
    def test_shape_and_word_slice(self, inst, tiny_params, tiny_embeddings, tiny_dims):
        rep = embed(inst, tiny_embeddings, tiny_params.encoder, tiny_dims)
        assert rep.data.shape == (4, tiny_dims.d_in)
        np.testing.assert_array_equal(rep.data[:, :tiny_dims.d_w],
                                      tiny_embeddings.encode(inst.tokens))

    def test_position_slices_from_tables(self, inst, tiny_params, tiny_embeddings,
                                         tiny_dims):
        rep = embed(inst, tiny_embeddings, tiny_params.encoder, tiny_dims)
        d_w, d_p = tiny_dims.d_w, tiny_dims.d_p
        p1 = tiny_params.encoder.pos1_table.data
        p2 = tiny_params.encoder.pos2_table.data
        # head at index 1, tail at index 3; center index is 40
        np.testing.assert_array_equal(rep.data[1, d_w:d_w + d_p], p1[40])
        np.testing.assert_array_equal(rep.data[0, d_w:d_w + d_p], p1[39])
        np.testing.assert_array_equal(rep.data[3, d_w + d_p:], p2[40])
        np.testing.assert_array_equal(rep.data[0, d_w + d_p:], p2[37])

    def test_entity_positions_change_only_position_slices(
            self, tiny_params, tiny_embeddings, tiny_dims):
        a = embed(Instance(("t0", "t1", "t2"), 0, 2, "r"),
                  tiny_embeddings, tiny_params.encoder, tiny_dims)
        b = embed(Instance(("t0", "t1", "t2"), 1, 2, "r"),
                  tiny_embeddings, tiny_params.encoder, tiny_dims)
        d_w = tiny_dims.d_w
        np.testing.assert_array_equal(a.data[:, :d_w], b.data[:, :d_w])
        assert not np.array_equal(a.data[:, d_w:], b.data[:, d_w:])

    def test_gradient_reaches_position_tables_only_at_used_rows(
            self, inst, tiny_params, tiny_embeddings, tiny_dims):
        enc = tiny_params.encoder
        enc.pos1_table.zero_grad()
        rep = embed(inst, tiny_embeddings, enc, tiny_dims)
        ad.backward(ad.sum_all(rep))
        used = {39, 40, 41, 42}  # distances -1, 0, 1, 2 from the head entity
        nonzero = set(np.flatnonzero(np.abs(enc.pos1_table.grad).sum(axis=1)).tolist())
        assert nonzero == used

    def test_unknown_tokens_embed_to_zero_words(self, tiny_params, tiny_embeddings,
                                                tiny_dims):
        rep = embed(Instance(("nonexistent-token",), 0, 0, "r"),
                    tiny_embeddings, tiny_params.encoder, tiny_dims)
        np.testing.assert_array_equal(rep.data[0, :tiny_dims.d_w], 0.0)


class TestEncodeContext:
    def test_shape_and_nonnegative(self, inst, tiny_params, tiny_embeddings,
                                   tiny_dims):
        ctx = encode_instance(inst, tiny_embeddings, tiny_params.encoder,
                              tiny_dims, training=False, rng=None)
        assert ctx.data.shape == (4, tiny_dims.d_c)
        assert (ctx.data >= 0.0).all()

    def test_zero_filters_give_relu_of_bias(self, inst, tiny_params,
                                            tiny_embeddings, tiny_dims):
        enc = tiny_params.encoder
        enc.filters.data[...] = 0.0
        enc.bias.data[...] = [-1.0, 0.0, 2.0, 3.0]
        ctx = encode_instance(inst, tiny_embeddings, enc, tiny_dims,
                              training=False, rng=None)
        np.testing.assert_array_equal(ctx.data,
                                      np.tile([0.0, 0.0, 2.0, 3.0], (4, 1)))

    def test_eval_mode_deterministic(self, inst, tiny_params, tiny_embeddings,
                                     tiny_dims):
        a = encode_instance(inst, tiny_embeddings, tiny_params.encoder,
                            tiny_dims, training=False, rng=None)
        b = encode_instance(inst, tiny_embeddings, tiny_params.encoder,
                            tiny_dims, training=False, rng=None)
        np.testing.assert_array_equal(a.data, b.data)

    def test_training_dropout_perturbs_output(self, inst, tiny_params,
                                              tiny_embeddings, tiny_dims):
        rng = np.random.default_rng(3)
        a = encode_instance(inst, tiny_embeddings, tiny_params.encoder,
                            tiny_dims, training=True, rng=rng, dropout_rate=0.5)
        b = encode_instance(inst, tiny_embeddings, tiny_params.encoder,
                            tiny_dims, training=False, rng=None)
        assert not np.array_equal(a.data, b.data)

    def test_gradients_match_finite_differences(self, inst, tiny_params,
                                                tiny_embeddings, tiny_dims):
        enc = tiny_params.encoder

        def loss_fn():
            ctx = encode_instance(inst, tiny_embeddings, enc, tiny_dims,
                                  training=False, rng=None)
            return ad.sq_l2(ad.pool_mean_rows(ctx))

        for p in (enc.pos1_table, enc.pos2_table, enc.filters, enc.bias):
            p.zero_grad()
        ad.backward(loss_fn())
        for p in (enc.filters, enc.bias, enc.pos1_table, enc.pos2_table):
            numeric = finite_diff_grad(loss_fn, p)
            assert max_rel_error(p.grad, numeric) < 1e-5
