"""Scorer tests: closed-form reductions, loop oracles, parameter counts."""

import numpy as np
import pytest

from synmatch import autodiff as ad
from synmatch.gradcheck import max_relative_error, numeric_gradient
from synmatch.rng import Rng
from synmatch.scoring import (batched_logits, code_repr, init_scorer,
                              parameter_count, score)


class TestCodeRepr:
    def test_m_one_is_identity(self):
        q = ad.tensor([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(code_repr([q]).data, q.data)

    def test_equal_queries_collapse(self):
        q = ad.tensor([0.5, 0.5])
        np.testing.assert_array_equal(code_repr([q, q, q]).data, q.data)

    def test_matches_independent_max(self):
        rng = Rng(0)
        qs = rng.uniform(-1, 1, (4, 8))
        pooled = code_repr([ad.tensor(row) for row in qs])
        expected = np.array([max(qs[j][k] for j in range(4)) for k in range(8)])
        np.testing.assert_array_equal(pooled.data, expected)

    def test_tensor_form(self):
        rng = Rng(1)
        q = rng.uniform(-1, 1, (3, 4, 8))  # (C, M, h)
        pooled = code_repr(ad.tensor(q))
        np.testing.assert_array_equal(pooled.data, q.max(axis=1))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            code_repr([])


class TestScore:
    def test_biaffine_identity_reduces_to_dot(self):
        h = 4
        params = init_scorer("biaffine", h, 10, Rng(0))
        params.weight.data = np.eye(h)
        params.bias.data = np.zeros(())
        e1 = np.zeros(h)
        e1[0] = 1.0
        logit, prob = score(ad.tensor(e1), ad.tensor(e1), params)
        assert logit.item() == 1.0
        assert abs(prob.item() - 0.7310585786300049) < 1e-15

    def test_dot_orthogonal_gives_half(self):
        params = init_scorer("dot", 3, 10, Rng(0))
        v = ad.tensor([1.0, 0.0, 0.0])
        q = ad.tensor([0.0, 1.0, 0.0])
        _, prob = score(v, q, params)
        assert prob.item() == 0.5

    def test_biaffine_matches_double_loop(self):
        rng = Rng(2)
        h = 3
        params = init_scorer("biaffine", h, 10, rng)
        v = rng.uniform(-1, 1, h)
        q = rng.uniform(-1, 1, h)
        logit, _ = score(ad.tensor(v), ad.tensor(q), params)
        expected = float(params.bias.data)
        for i in range(h):
            for j in range(h):
                expected += v[i] * params.weight.data[i, j] * q[j]
        assert abs(logit.item() - expected) <= 1e-12

    def test_per_label_uses_requested_row(self):
        rng = Rng(3)
        params = init_scorer("per_label", 4, 5, rng)
        v = rng.uniform(-1, 1, 4)
        logit, _ = score(ad.tensor(v), None, params, label=2)
        expected = v @ params.weight.data[2] + params.bias.data[2]
        assert abs(logit.item() - expected) <= 1e-12

    def test_per_label_unknown_index_rejected(self):
        params = init_scorer("per_label", 4, 5, Rng(0))
        with pytest.raises(ValueError):
            score(ad.tensor(np.zeros(4)), None, params, label=7)

    def test_probability_strictly_increasing_in_logit(self):
        params = init_scorer("dot", 2, 1, Rng(0))
        probs = []
        for s in (-3.0, -1.0, 0.0, 1.0, 3.0):
            _, prob = score(ad.tensor([s, 0.0]), ad.tensor([1.0, 0.0]), params)
            probs.append(prob.item())
        assert all(0.0 < p < 1.0 for p in probs)
        assert probs == sorted(probs)


class TestBatchedLogits:
    def test_biaffine_identity_equals_dot_bitwise(self):
        rng = Rng(4)
        v = ad.tensor(rng.uniform(-1, 1, (2, 3, 4)))
        q = ad.tensor(rng.uniform(-1, 1, (3, 4)))
        bi = init_scorer("biaffine", 4, 3, rng)
        bi.weight.data = np.eye(4)
        dot = init_scorer("dot", 4, 3, rng)
        np.testing.assert_array_equal(batched_logits(v, q, bi).data,
                                      batched_logits(v, q, dot).data)

    def test_matches_single_score(self):
        rng = Rng(5)
        v = rng.uniform(-1, 1, (2, 3, 4))
        q = rng.uniform(-1, 1, (3, 4))
        for variant in ("biaffine", "dot", "per_label"):
            params = init_scorer(variant, 4, 3, rng)
            batched = batched_logits(ad.tensor(v), ad.tensor(q), params).data
            for b in range(2):
                for c in range(3):
                    lone, _ = score(ad.tensor(v[b, c]), ad.tensor(q[c]), params, label=c)
                    assert abs(batched[b, c] - lone.item()) <= 1e-12, variant

    def test_gradients_match_fd(self):
        rng = Rng(6)
        v = ad.parameter(rng.uniform(-1, 1, (2, 3, 4)))
        q = ad.parameter(rng.uniform(-1, 1, (3, 4)))
        for variant in ("biaffine", "dot", "per_label"):
            params = init_scorer(variant, 4, 3, rng)
            named = [("v", v), ("q", q)] + list(params.tensors().items())

            def loss():
                return ad.reduce_sum(ad.sigmoid(batched_logits(v, q, params)))

            for _, p in named:
                p.zero_grad()
            ad.backward(loss())

            def value():
                with ad.no_grad():
                    return loss().item()

            for name, p in named:
                if not p.requires_grad:
                    continue
                numeric = numeric_gradient(value, p.data, eps=1e-4)
                analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
                assert max_relative_error(analytic, numeric) < 1e-3, (variant, name)


class TestParameterCount:
    def test_biaffine_independent_of_code_count(self):
        assert parameter_count("biaffine", 512, 50) == 262145
        assert parameter_count("biaffine", 512, 8692) == 262145

    def test_per_label_scales_linearly(self):
        assert parameter_count("per_label", 512, 50) == 25650
        assert parameter_count("per_label", 512, 8692) == 8692 * 513

    def test_dot_is_constant_one(self):
        for c in (1, 50, 8692):
            assert parameter_count("dot", 512, c) == 1

    def test_counts_match_actual_parameters(self):
        rng = Rng(7)
        for variant in ("biaffine", "dot", "per_label"):
            params = init_scorer(variant, 16, 9, rng)
            actual = sum(t.size for t in params.tensors().values())
            assert actual == parameter_count(variant, 16, 9)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ValueError):
            parameter_count("bilinear", 8, 2)
