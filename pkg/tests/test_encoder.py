"""Encoder tests: fused LSTM backward vs finite differences, masking
equivalence between padded batches and lone sequences, parameter sharing."""

import numpy as np
import pytest

from synmatch import autodiff as ad
from synmatch.encoder import (Encoder, EncoderConfig, gate_slices,
                              init_lstm_params, lstm_recurrence, masked_time_max)
from synmatch.gradcheck import max_relative_error, numeric_gradient
from synmatch.rng import Rng
from synmatch.text import Vocabulary, init_embeddings


def micro_encoder(seed=0, emb_dim=4, hidden=3, out_dim=4, layers=1, dropout=0.0):
    rng = Rng(seed)
    config = EncoderConfig(emb_dim=emb_dim, lstm_layers=layers, lstm_hidden=hidden,
                           output_dim=out_dim, emb_dropout=dropout)
    vocab = Vocabulary([f"tok{i}" for i in range(10)])
    embedding = ad.parameter(init_embeddings(vocab, emb_dim, rng.child("emb")))
    params = dict(init_lstm_params(config, rng.child("lstm")))
    params["embedding"] = embedding
    return Encoder(config, embedding, params), vocab


class TestRecurrence:
    def test_forward_shape_and_determinism(self):
        rng = Rng(1)
        gx = ad.tensor(rng.uniform(-1, 1, (5, 2, 12)))
        wh = ad.tensor(rng.uniform(-1, 1, (3, 12)))
        b = ad.tensor(np.zeros(12))
        mask = np.ones((5, 2))
        a = lstm_recurrence(gx, wh, b, mask).data
        b2 = lstm_recurrence(gx, wh, b, mask).data
        assert a.shape == (5, 2, 3)
        np.testing.assert_array_equal(a, b2)

    @pytest.mark.parametrize("reverse", [False, True])
    def test_gradients_match_fd(self, reverse):
        rng = Rng(2)
        gx = ad.parameter(rng.uniform(-0.8, 0.8, (4, 2, 12)))
        wh = ad.parameter(rng.uniform(-0.5, 0.5, (3, 12)))
        bias = ad.parameter(rng.uniform(-0.1, 0.1, 12))
        mask = np.array([[1, 1], [1, 1], [1, 0], [1, 0]], dtype=float)
        weights = ad.tensor(rng.uniform(-1, 1, (4, 2, 3)))

        def loss():
            out = lstm_recurrence(gx, wh, bias, mask, reverse=reverse)
            return ad.reduce_sum(ad.mul(out, weights))

        for p in (gx, wh, bias):
            p.zero_grad()
        ad.backward(loss())

        def value():
            with ad.no_grad():
                return loss().item()

        for p in (gx, wh, bias):
            numeric = numeric_gradient(value, p.data, eps=1e-5)
            assert max_relative_error(p.grad, numeric) < 1e-6

    def test_masked_steps_carry_state(self):
        # a sequence padded at the tail must produce the same prefix states
        # as the same sequence alone
        rng = Rng(3)
        gx_full = rng.uniform(-1, 1, (5, 1, 12))
        wh = ad.tensor(rng.uniform(-1, 1, (3, 12)))
        b = ad.tensor(np.zeros(12))
        mask = np.ones((5, 1))
        mask[3:] = 0.0
        padded = lstm_recurrence(ad.tensor(gx_full), wh, b, mask).data
        alone = lstm_recurrence(ad.tensor(gx_full[:3]), wh, b, np.ones((3, 1))).data
        np.testing.assert_allclose(padded[:3], alone, atol=1e-14)
        # outputs at padded steps just repeat the carried state
        np.testing.assert_array_equal(padded[3], padded[2])

    def test_reverse_with_padding_matches_lone_sequence(self):
        rng = Rng(4)
        gx_full = rng.uniform(-1, 1, (5, 1, 12))
        wh = ad.tensor(rng.uniform(-1, 1, (3, 12)))
        b = ad.tensor(np.zeros(12))
        mask = np.ones((5, 1))
        mask[3:] = 0.0
        padded = lstm_recurrence(ad.tensor(gx_full), wh, b, mask, reverse=True).data
        alone = lstm_recurrence(ad.tensor(gx_full[:3]), wh, b, np.ones((3, 1)),
                                reverse=True).data
        np.testing.assert_allclose(padded[:3], alone, atol=1e-14)


class TestEncoder:
    def test_document_shape(self):
        enc, _ = micro_encoder(emb_dim=4, hidden=3, out_dim=4)
        ids = np.arange(2, 9)
        h = enc.encode_text(ids)
        assert h.shape == (7, 4)

    def test_reference_shape_top50_config(self):
        # N=37 document at the h=512 configuration: H is 37 x 512
        config = EncoderConfig(emb_dim=100, lstm_layers=1, lstm_hidden=512,
                               output_dim=512, emb_dropout=0.0)
        rng = Rng(0)
        vocab = Vocabulary([f"t{i}" for i in range(50)])
        embedding = ad.parameter(init_embeddings(vocab, 100, rng.child("e")))
        params = dict(init_lstm_params(config, rng.child("l")))
        enc = Encoder(config, embedding, params)
        with ad.no_grad():
            h = enc.encode_text(np.arange(2, 39))
        assert h.shape == (37, 512)

    def test_single_token_document(self):
        enc, _ = micro_encoder()
        h = enc.encode_text(np.array([5]))
        assert h.shape == (1, 4)
        assert np.isfinite(h.data).all()

    def test_empty_document_rejected(self):
        enc, _ = micro_encoder()
        with pytest.raises(ValueError, match="empty"):
            enc.encode_text(np.array([], dtype=np.int64))

    def test_synonym_single_token_equals_hidden_row(self):
        enc, _ = micro_encoder()
        ids = np.array([4])
        q = enc.encode_synonym(ids)
        h = enc.encode_text(ids)
        np.testing.assert_allclose(q.data, h.data[0], atol=1e-14)

    def test_synonym_deterministic_in_eval_mode(self):
        enc, _ = micro_encoder()
        ids = np.array([2, 5, 3])
        np.testing.assert_array_equal(enc.encode_synonym(ids).data,
                                      enc.encode_synonym(ids).data)

    def test_synonym_order_sensitivity(self):
        enc, _ = micro_encoder(seed=11)
        a = enc.encode_synonym(np.array([2, 3, 4])).data
        b = enc.encode_synonym(np.array([4, 3, 2])).data
        assert np.abs(a - b).max() > 1e-8

    def test_empty_and_overlong_synonyms_rejected(self):
        enc, _ = micro_encoder()
        with pytest.raises(ValueError):
            enc.encode_synonym(np.array([], dtype=np.int64))
        with pytest.raises(ValueError, match="32"):
            enc.encode_synonym(np.full(33, 2))

    def test_batched_equals_lone_sequences(self):
        # padded batch encoding must reproduce each unpadded document exactly
        enc, _ = micro_encoder(seed=9)
        seqs = [np.array([2, 3, 4, 5]), np.array([6, 7]), np.array([8, 9, 3])]
        t = max(len(s) for s in seqs)
        ids = np.zeros((3, t), dtype=np.int64)
        mask = np.zeros((3, t))
        for i, s in enumerate(seqs):
            ids[i, :len(s)] = s
            mask[i, :len(s)] = 1.0
        with ad.no_grad():
            batched = enc.encode_batch(ids, mask).data
            for i, s in enumerate(seqs):
                alone = enc.encode_text(s).data
                np.testing.assert_allclose(batched[i, :len(s)], alone, atol=1e-12)

    def test_parameter_sharing_between_paths(self):
        enc, _ = micro_encoder()
        ids = np.array([2, 3])
        before_doc = enc.encode_text(ids).data.copy()
        before_syn = enc.encode_synonym(ids).data.copy()
        enc.params["proj.w"].data += 0.1  # mutate through one handle
        after_doc = enc.encode_text(ids).data
        after_syn = enc.encode_synonym(ids).data
        assert np.abs(after_doc - before_doc).max() > 1e-9
        assert np.abs(after_syn - before_syn).max() > 1e-9

    def test_two_layer_stack_shapes(self):
        enc, _ = micro_encoder(layers=2, emb_dim=4, hidden=3, out_dim=6)
        h = enc.encode_text(np.array([2, 3, 4]))
        assert h.shape == (3, 6)

    def test_full_gradient_check_micro_model(self):
        # every encoder parameter against central finite differences
        enc, _ = micro_encoder(seed=5, emb_dim=4, hidden=3, out_dim=4)
        ids = np.array([[2, 3], [4, 0]])
        mask = np.array([[1.0, 1.0], [1.0, 0.0]])
        rng = Rng(12)
        weights = ad.tensor(rng.uniform(-1, 1, (2, 2, 4)))
        named = sorted(enc.params.items())

        def loss():
            return ad.reduce_sum(ad.mul(enc.encode_batch(ids, mask), weights))

        for _, p in named:
            p.zero_grad()
        ad.backward(loss())

        def value():
            with ad.no_grad():
                return loss().item()

        for name, p in named:
            numeric = numeric_gradient(value, p.data, eps=1e-4)
            analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
            assert max_relative_error(analytic, numeric) < 1e-3, name

    def test_forget_gate_bias_initialized_to_one(self):
        config = EncoderConfig(emb_dim=4, lstm_hidden=3, output_dim=4)
        params = init_lstm_params(config, Rng(0))
        gates = gate_slices(params, "lstm.l0.fw")
        np.testing.assert_array_equal(gates["forget"]["bias"], np.ones(3))
        np.testing.assert_array_equal(gates["input"]["bias"], np.zeros(3))

    def test_masked_time_max_ignores_padding(self):
        states = ad.tensor(np.array([[[1.0, -5.0], [9.0, 9.0]]]))  # (1, 2, 2)
        mask = np.array([[1.0, 0.0]])  # second position is padding
        out = masked_time_max(states, mask)
        np.testing.assert_array_equal(out.data, [[1.0, -5.0]])
