import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardabsa import heads as hd
from hardabsa import numerics as nx
from hardabsa.errors import ContractError, DimensionError
from hardabsa.heads import SnippetSelection, init_head_params
from hardabsa.numerics import Tensor

from conftest import check_grad


def params_with(hidden=4, **tensors):
    p = init_head_params(hidden, 3, seed=0)
    for k, v in tensors.items():
        p.tensors[k] = Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)
    return p


def softmax(z):
    z = np.asarray(z) - np.max(z)
    return np.exp(z) / np.exp(z).sum()


class TestSoftSelect:
    def test_single_row(self, rng):
        ts = Tensor(rng.normal(size=(1, 4)))
        sel = hd.soft_select(ts, params_with())
        np.testing.assert_array_equal(sel.alpha.data, [1.0])
        np.testing.assert_allclose(sel.g.data, ts.data[0], atol=1e-15)

    def test_identical_rows_uniform(self, rng):
        row = rng.normal(size=4)
        sel = hd.soft_select(Tensor(np.tile(row, (5, 1))), params_with())
        np.testing.assert_allclose(sel.alpha.data, np.full(5, 0.2), atol=1e-15)

    def test_direct_summation(self, rng):
        ts = rng.normal(size=(6, 4))
        p = params_with(v1=rng.normal(size=4), W1=rng.normal(size=(4, 4)))
        sel = hd.soft_select(Tensor(ts), p)
        alpha = softmax([p["v1"].data @ np.tanh(p["W1"].data @ ts[i]) for i in range(6)])
        np.testing.assert_allclose(sel.alpha.data, alpha, atol=1e-12)
        g = sum(alpha[i] * ts[i] for i in range(6))
        np.testing.assert_allclose(sel.g.data, g, atol=1e-12)
        assert abs(sel.alpha.data.sum() - 1) < 1e-9

    def test_shape_checked(self):
        with pytest.raises(DimensionError):
            hd.soft_select(Tensor(np.ones((3, 5))), params_with(4))

    def test_gradient(self, rng):
        p = params_with()
        check_grad(
            lambda ts, v1, W1: nx.sum_over_axis(nx.mul(hd.soft_select(ts, _swap(p, v1=v1, W1=W1)).g, np.arange(1.0, 5.0))),
            [rng.normal(size=(5, 4)), rng.normal(size=4), rng.normal(size=(4, 4))],
        )


def _swap(p, **tensors):
    q = hd.HeadParams(p.hidden, p.n_classes, dict(p.tensors))
    q.tensors.update(tensors)
    return q


class TestClassify:
    def test_zero_weights_tie_to_first(self):
        pred = hd.classify(Tensor(np.ones(4)), Tensor(np.zeros((3, 4))), Tensor(np.zeros(3)))
        np.testing.assert_allclose(pred.probs.data, [1 / 3] * 3, atol=1e-15)
        assert pred.predicted_class == 0

    def test_dominant_bias(self):
        pred = hd.classify(Tensor(np.ones(4)), Tensor(np.zeros((3, 4))), Tensor([10.0, 0.0, 0.0]))
        assert pred.predicted_class == 0 and pred.probs.data[0] > 0.99

    def test_reevaluation(self, rng):
        g, W2, b = rng.normal(size=4), rng.normal(size=(3, 4)), rng.normal(size=3)
        pred = hd.classify(Tensor(g), Tensor(W2), Tensor(b))
        np.testing.assert_allclose(pred.probs.data, softmax(W2 @ g + b), atol=1e-12)
        assert abs(pred.probs.data.sum() - 1) < 1e-9


class TestSpanDistributions:
    def test_start_zero_vector_uniform(self, rng):
        beta = hd.span_distribution_start(Tensor(rng.normal(size=(5, 4))), Tensor(np.zeros(4)))
        np.testing.assert_allclose(beta.data, np.full(5, 0.2), atol=1e-15)

    def test_start_single_position(self, rng):
        beta = hd.span_distribution_start(Tensor(rng.normal(size=(1, 4))), Tensor(rng.normal(size=4)))
        assert beta.data.tolist() == [1.0]

    def test_start_direct(self, rng):
        ts, s = rng.normal(size=(6, 4)), rng.normal(size=4)
        beta = hd.span_distribution_start(Tensor(ts), Tensor(s))
        np.testing.assert_allclose(beta.data, softmax([ts[i] @ s for i in range(6)]), atol=1e-12)

    def test_end_last_position_forced(self, rng):
        ts = Tensor(rng.normal(size=(5, 4)))
        beta = hd.span_distribution_end(nx.take(ts, slice(4, None)), Tensor(rng.normal(size=4)))
        assert beta.data.tolist() == [1.0]

    def test_end_zero_vector_uniform(self, rng):
        ts = Tensor(rng.normal(size=(5, 4)))
        beta = hd.span_distribution_end(nx.take(ts, slice(2, None)), Tensor(np.zeros(4)))
        np.testing.assert_allclose(beta.data, np.full(3, 1 / 3), atol=1e-15)

    def test_end_empty_slice(self):
        with pytest.raises(ContractError):
            hd.span_distribution_end(Tensor(np.zeros((0, 4))), Tensor(np.zeros(4)))


class TestSelectSpan:
    def test_greedy_zero_vectors(self, rng):
        sel = hd.select_span(Tensor(rng.normal(size=(5, 4))), params_with(s=np.zeros(4), e=np.zeros(4)))
        assert sel.span == (0, 0) and sel.mode == "greedy"

    def test_sampled_one_hot(self):
        # rows chosen so that s picks row 2 and e picks row 3 with overwhelming margin
        ts = np.zeros((5, 4))
        ts[2, 0] = 1.0
        ts[3, 1] = 1.0
        p = params_with(s=[1e4, 0, 0, 0], e=[0, 1e4, 0, 0])
        sel = hd.select_span(Tensor(ts), p, "sampled", np.random.default_rng(0))
        assert sel.span == (2, 3)
        assert sel.logp_l.item() == 0.0 and sel.logp_r.item() == 0.0

    def test_modes_and_rng(self, rng):
        ts = Tensor(rng.normal(size=(3, 4)))
        with pytest.raises(ContractError):
            hd.select_span(ts, params_with(), "beam")
        with pytest.raises(ContractError):
            hd.select_span(ts, params_with(), "sampled")

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 7), st.integers(0, 2**32 - 1))
    def test_invariants(self, n, seed):
        g = np.random.default_rng(seed)
        ts = g.normal(size=(n, 4))
        p = params_with(s=g.normal(size=4) * 2, e=g.normal(size=4) * 2)
        for mode in ("greedy", "sampled"):
            sel = hd.select_span(Tensor(ts), p, mode, np.random.default_rng(seed))
            assert 0 <= sel.l <= sel.r < n
            beta_l = softmax(ts @ p["s"].data)
            beta_r = softmax(ts[sel.l :] @ p["e"].data)
            assert abs(math.exp(sel.logp_l.item()) - beta_l[sel.l]) < 1e-12
            assert abs(math.exp(sel.logp_r.item()) - beta_r[sel.r - sel.l]) < 1e-12
            assert sel.logp_l.item() <= 0 and sel.logp_r.item() <= 0
            if mode == "greedy":
                assert sel.l == int(np.argmax(beta_l)) and sel.r - sel.l == int(np.argmax(beta_r))

    def test_sampled_reproducible(self, rng):
        ts = Tensor(rng.normal(size=(6, 4)))
        p = params_with(s=rng.normal(size=4), e=rng.normal(size=4))
        a = [hd.select_span(ts, p, "sampled", np.random.default_rng(9)).span for _ in range(2)]
        assert a[0] == a[1]

    def test_end_absolute_index_by_enumeration(self, rng):
        ts = rng.normal(size=(5, 4))
        p = params_with(s=rng.normal(size=4), e=rng.normal(size=4))
        g = np.random.default_rng(3)
        for _ in range(50):
            sel = hd.select_span(Tensor(ts), p, "sampled", g)
            offsets = list(range(5 - sel.l))
            assert sel.r in [sel.l + o for o in offsets]


class TestSampleIndex:
    def test_never_returns_zero_probability(self):
        probs = np.array([0.0, 0.5, 0.5, 0.0])
        u = np.linspace(0, 1, 101)[:-1]
        idx = hd.sample_index(np.tile(probs, (len(u), 1)), u)
        assert set(idx.tolist()) == {1, 2}

    def test_inverse_cdf(self):
        assert hd.sample_index(np.array([0.2, 0.3, 0.5]), 0.49).item() == 1
        assert hd.sample_index(np.array([0.2, 0.3, 0.5]), 0.5).item() == 2


class TestPooling:
    def test_single_row(self, rng):
        ts = Tensor(rng.normal(size=(4, 3)))
        g = hd.pool_snippet(ts, SnippetSelection(2, 2, Tensor(0.0), Tensor(0.0), "greedy"))
        np.testing.assert_array_equal(g.data, ts.data[2])

    def test_two_rows(self):
        g = hd.pool_snippet(Tensor([[1.0, 1.0], [3.0, 3.0]]), SnippetSelection(0, 1, Tensor(0.0), Tensor(0.0), "greedy"))
        assert g.data.tolist() == [2.0, 2.0]

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.data())
    def test_row_mean(self, n, data):
        ts = np.random.default_rng(n).normal(size=(n, 3))
        l = data.draw(st.integers(0, n - 1))
        r = data.draw(st.integers(l, n - 1))
        g = hd.pool_snippet(Tensor(ts), SnippetSelection(l, r, Tensor(0.0), Tensor(0.0), "greedy"))
        np.testing.assert_allclose(g.data, ts[l : r + 1].sum(axis=0) / (r + 1 - l), atol=1e-12)
        full = hd.pool_snippet(Tensor(ts), SnippetSelection(0, n - 1, Tensor(0.0), Tensor(0.0), "greedy"))
        np.testing.assert_allclose(full.data, ts.mean(axis=0), atol=1e-12)

    def test_invalid_span(self, rng):
        with pytest.raises(ContractError):
            hd.pool_snippet(Tensor(rng.normal(size=(3, 2))), SnippetSelection(1, 3, Tensor(0.0), Tensor(0.0), "greedy"))

    def test_cls_row_only(self, rng):
        full = rng.normal(size=(5, 3))
        out = hd.cls_pool(Tensor(full)).data.copy()
        full[1:] = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(hd.cls_pool(Tensor(full)).data, out)
        np.testing.assert_array_equal(out, full[0])

    def test_original_composition(self, rng):
        full = Tensor(rng.normal(size=(5, 3)))
        W2, b = Tensor(rng.normal(size=(3, 3))), Tensor(rng.normal(size=3))
        direct = hd.classify(Tensor(full.data[0]), W2, b)
        assert hd.classify(hd.cls_pool(full), W2, b).predicted_class == direct.predicted_class
        np.testing.assert_array_equal(hd.classify(hd.cls_pool(full), W2, b).probs.data, direct.probs.data)


class TestBatchedAgreement:
    """The padded batch functions reproduce the single-example ones."""

    def _batch(self, rng, lengths, h=4):
        nmax = max(lengths)
        ts = rng.normal(size=(len(lengths), nmax, h))
        mask = np.arange(nmax)[None, :] < np.asarray(lengths)[:, None]
        return ts, mask

    def test_soft(self, rng):
        ts, mask = self._batch(rng, [3, 6, 1])
        p = params_with(v1=rng.normal(size=4), W1=rng.normal(size=(4, 4)))
        alpha, g = hd.batch_soft_select(Tensor(ts), mask, p)
        for j, n in enumerate([3, 6, 1]):
            one = hd.soft_select(Tensor(ts[j, :n]), p)
            np.testing.assert_allclose(alpha.data[j, :n], one.alpha.data, atol=1e-12)
            assert np.all(alpha.data[j, n:] == 0)
            np.testing.assert_allclose(g.data[j], one.g.data, atol=1e-12)

    def test_greedy_spans_and_logprobs(self, rng):
        lengths = [4, 6, 2, 5]
        ts, mask = self._batch(rng, lengths)
        p = params_with(s=rng.normal(size=4) * 2, e=rng.normal(size=4) * 2)
        l, r, lp_l, lp_r = hd.batch_select(Tensor(ts), mask, p, "greedy")
        pooled = hd.batch_pool(Tensor(ts), l, r)
        for j, n in enumerate(lengths):
            one = hd.select_span(Tensor(ts[j, :n]), p)
            assert (l[j], r[j]) == one.span
            assert abs(lp_l.data[j] - one.logp_l.item()) < 1e-12
            assert abs(lp_r.data[j] - one.logp_r.item()) < 1e-12
            np.testing.assert_allclose(pooled.data[j], hd.pool_snippet(Tensor(ts[j, :n]), one).data, atol=1e-12)

    def test_sampled_stays_inside_mask(self, rng):
        lengths = [1, 3, 6]
        ts, mask = self._batch(rng, lengths)
        p = params_with(s=rng.normal(size=4), e=rng.normal(size=4))
        g = np.random.default_rng(0)
        for _ in range(100):
            l, r, _, _ = hd.batch_select(Tensor(ts), mask, p, "sampled", g)
            assert np.all(l <= r) and np.all(r < np.asarray(lengths))
