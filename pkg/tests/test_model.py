"""Prototype bank, projection network, loss, and prediction tests."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import protoner.autodiff as ad
from oracles import span_loss_double_loop
from protoner.gradcheck import check_grad
from protoner.model import (
    PrototypeBank,
    ProjectionNet,
    ProtoModel,
    cross_entropy_loss,
    predict,
    predict_scores,
    proto_repulsion_loss,
    span_alignment_loss,
)
from protoner.embeddings import EmbeddingTable
from protoner.rng import Rng
from protoner.spans import MARKER, MarkedSpan


def unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# repulsion loss


class TestRepulsionLoss:
    def test_antipodal_pair_is_zero(self):
        p = ad.param(np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]))
        assert abs(proto_repulsion_loss(p).item()) < 1e-12

    def test_identical_pair_is_two(self):
        p = ad.param(np.array([[0.0, 2.0, 0.0], [0.0, 2.0, 0.0]]))
        assert abs(proto_repulsion_loss(p).item() - 2.0) < 1e-12

    def test_three_orthogonal_is_one(self):
        p = ad.param(np.eye(3))
        assert abs(proto_repulsion_loss(p).item() - 1.0) < 1e-12

    def test_single_row_rejected(self):
        with pytest.raises(ValueError):
            proto_repulsion_loss(ad.param(np.ones((1, 4))))

    @given(st.integers(2, 12), st.integers(2, 8), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_bounded_zero_two(self, rows, dim, seed):
        p = np.random.default_rng(seed).normal(size=(rows, dim)) + 1e-3
        loss = proto_repulsion_loss(ad.param(p)).item()
        assert -1e-12 <= loss <= 2.0 + 1e-12

    def test_row_scaling_invariance(self):
        rng = np.random.default_rng(7)
        p = rng.normal(size=(5, 4))
        scaled = p * rng.uniform(0.1, 9.0, size=(5, 1))
        a = proto_repulsion_loss(ad.param(p)).item()
        b = proto_repulsion_loss(ad.param(scaled)).item()
        assert abs(a - b) < 1e-12

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        # well-spread rows keep the max index stable under FD steps
        p = unit_rows(rng.normal(size=(6, 5))) * rng.uniform(0.5, 2.0, size=(6, 1))
        err = check_grad(lambda v: proto_repulsion_loss(v[0]), [p])
        assert err < 1e-4


# ---------------------------------------------------------------------------
# span alignment loss


def random_episode(rng, n, m, k, d):
    protos = rng.normal(size=(n * m, d)) + 0.1
    spans = rng.normal(size=(n * k, d)) + 0.1
    return protos, spans


class TestSpanAlignmentLoss:
    def test_single_category_is_inverse_k(self):
        # with one category the ratio collapses to (1/K) * sum / sum; the
        # denominator epsilon is negligible once the distance mass is O(1)
        rng = np.random.default_rng(3)
        u = unit_rows(rng.normal(size=6))
        for k in (1, 2, 5):
            protos = np.tile(u, (3, 1))
            spans = np.tile(-u, (k, 1))  # antipodal: min-pooled distance is 4
            loss = span_alignment_loss(ad.param(protos), ad.param(spans), 1, 3, k).item()
            assert abs(loss - 1.0 / k) < 1e-12

    @given(
        st.integers(1, 4),
        st.integers(1, 3),
        st.integers(1, 4),
        st.integers(2, 7),
        st.integers(0, 2**32 - 1),
    )
    @settings(max_examples=60, deadline=None)
    def test_matches_double_loop_oracle(self, n, m, k, d, seed):
        rng = np.random.default_rng(seed)
        protos, spans = random_episode(rng, n, m, k, d)
        loss = span_alignment_loss(ad.param(protos), ad.param(spans), n, m, k).item()
        ref = span_loss_double_loop(spans, protos.reshape(n, m, d), k)
        assert abs(loss - ref) < 1e-12

    @given(st.integers(2, 5), st.integers(1, 3), st.integers(1, 4), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_bounds(self, n, m, k, seed):
        rng = np.random.default_rng(seed)
        protos, spans = random_episode(rng, n, m, k, 5)
        loss = span_alignment_loss(ad.param(protos), ad.param(spans), n, m, k).item()
        assert -1e-12 <= loss <= n / k + 1e-12

    def test_rotation_invariance(self):
        rng = np.random.default_rng(19)
        n, m, k, d = 3, 2, 4, 6
        protos, spans = random_episode(rng, n, m, k, d)
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        a = span_alignment_loss(ad.param(protos), ad.param(spans), n, m, k).item()
        b = span_alignment_loss(ad.param(protos @ q), ad.param(spans @ q), n, m, k).item()
        assert abs(a - b) < 1e-10

    def test_perfect_alignment_is_near_zero(self):
        # spans sit exactly on their own prototypes, orthogonal to the rest
        eye = np.eye(6)
        protos = eye[[0, 1, 2, 3]]  # 2 categories x 2 prototypes
        spans = eye[[0, 0, 2, 2]]  # 2 shots each, on the first prototype
        loss = span_alignment_loss(ad.param(protos), ad.param(spans), 2, 2, 2).item()
        assert loss < 1e-9

    def test_shape_validation(self):
        protos = ad.param(np.ones((4, 3)))
        spans = ad.param(np.ones((5, 3)))
        with pytest.raises(ad.ShapeError):
            span_alignment_loss(protos, spans, 2, 2, 2)
        with pytest.raises(ad.ShapeError):
            span_alignment_loss(ad.param(np.ones((3, 3))), spans, 2, 2, 2)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(23)
        n, m, k, d = 2, 2, 3, 5
        protos, spans = random_episode(rng, n, m, k, d)
        err = check_grad(
            lambda v: span_alignment_loss(v[0], v[1], n, m, k), [protos, spans]
        )
        assert err < 1e-4

    def test_min_pool_routes_gradient_to_achieving_prototype_only(self):
        # categories {e1,e2} and {e3,e4}; spans lean on e1/e3 so e2 and e4
        # never achieve the min and must receive exactly zero gradient
        d = 4
        protos = ad.param(np.eye(d))
        z = []
        for c, base in ((0, 0), (1, 2)):
            other = 2 - base
            for j in range(3):
                v = np.zeros(d)
                v[base] = 1.0
                v[other] = 0.01 * (j + 1)
                z.append(v / np.linalg.norm(v))
        loss = span_alignment_loss(protos, ad.constant(np.array(z)), 2, 2, 3)
        ad.backward(loss)
        grads = protos.grad
        assert np.all(grads[1] == 0.0) and np.all(grads[3] == 0.0)
        assert np.abs(grads[0]).max() > 0.0 and np.abs(grads[2]).max() > 0.0


# ---------------------------------------------------------------------------
# cross-entropy ablation loss


class TestCrossEntropyLoss:
    def test_orthogonal_spans_give_log_n(self):
        # spans orthogonal to every prototype: all logits zero
        n, m, k = 3, 2, 2
        protos = np.zeros((n * m, 8))
        protos[:, :4] = np.random.default_rng(0).normal(size=(n * m, 4))
        spans = np.zeros((n * k, 8))
        spans[:, 4:] = np.random.default_rng(1).normal(size=(n * k, 4))
        loss = cross_entropy_loss(ad.param(protos), ad.param(spans), n, m, k).item()
        assert abs(loss - np.log(n)) < 1e-12

    def test_separation_beats_uniform(self):
        eye = np.eye(4)
        protos = eye[[0, 1]]
        spans = eye[[0, 0, 1, 1]]
        loss = cross_entropy_loss(ad.param(protos), ad.param(spans), 2, 1, 2).item()
        assert loss < np.log(2)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(29)
        n, m, k, d = 2, 2, 2, 5
        protos, spans = random_episode(rng, n, m, k, d)
        err = check_grad(lambda v: cross_entropy_loss(v[0], v[1], n, m, k), [protos, spans])
        assert err < 1e-4


# ---------------------------------------------------------------------------
# prediction


class TestPredict:
    def brute_force(self, z, matrix, m, pooling):
        out = []
        n = matrix.shape[0] // m
        for row in z:
            best_c, best_s = 0, -np.inf
            for c in range(n):
                sims = []
                for p in matrix[c * m : (c + 1) * m]:
                    na = max(np.linalg.norm(row), 1e-12)
                    nb = max(np.linalg.norm(p), 1e-12)
                    sims.append(float(row @ p) / (na * nb))
                s = max(sims) if pooling == "max" else sum(sims) / len(sims)
                if s > best_s:
                    best_c, best_s = c, s
            out.append((best_c, best_s))
        return out

    @pytest.mark.parametrize("pooling", ["max", "mean"])
    def test_matches_brute_force(self, pooling):
        rng = np.random.default_rng(31)
        m = 3
        matrix = rng.normal(size=(4 * m, 6))
        z = rng.normal(size=(10, 6))
        scores = predict_scores(z, matrix, m, pooling)
        ref = self.brute_force(z, matrix, m, pooling)
        for i, (c, s) in enumerate(ref):
            assert scores[i].argmax() == c
            assert abs(scores[i].max() - s) < 1e-12

    def test_scale_invariance(self):
        rng = np.random.default_rng(37)
        matrix = rng.normal(size=(6, 5))
        z = rng.normal(size=(4, 5))
        a = predict_scores(z, matrix, 2)
        b = predict_scores(z * rng.uniform(0.5, 10.0, size=(4, 1)), matrix, 2)
        assert np.abs(a - b).max() < 1e-12

    def test_tie_goes_to_lowest_index(self):
        base = np.array([[1.0, 0.0], [0.0, 1.0]])
        bank = PrototypeBank(("a", "b"), 1, 2, ad.param(np.vstack([base[0], base[0]])))
        picks = predict(np.array([[1.0, 0.0]]), bank)
        assert picks[0][0] == "a"

    def test_pooling_modes_can_disagree(self):
        # category a: one perfect and one opposite prototype; category b: two mediocre
        matrix = np.array([[1.0, 0.0], [-1.0, 0.0], [0.8, 0.6], [0.8, -0.6]])
        bank = PrototypeBank(("a", "b"), 2, 2, ad.param(matrix))
        z = np.array([[1.0, 0.0]])
        assert predict(z, bank, pooling="max")[0][0] == "a"
        assert predict(z, bank, pooling="mean")[0][0] == "b"

    def test_unknown_pooling_rejected(self):
        with pytest.raises(ValueError):
            predict_scores(np.ones((1, 2)), np.ones((2, 2)), 1, pooling="sum")


# ---------------------------------------------------------------------------
# prototype bank


class TestPrototypeBank:
    def test_init_rows_unit_norm_and_deterministic(self):
        a = PrototypeBank.init(("x", "y", "z"), 4, 7, Rng(42))
        b = PrototypeBank.init(("x", "y", "z"), 4, 7, Rng(42))
        c = PrototypeBank.init(("x", "y", "z"), 4, 7, Rng(43))
        assert a.matrix.shape == (12, 7)
        assert a.max_norm_error() < 1e-12
        assert np.array_equal(a.matrix.data, b.matrix.data)
        assert not np.array_equal(a.matrix.data, c.matrix.data)

    def test_gather_reorders_blocks(self):
        bank = PrototypeBank.init(("x", "y", "z"), 2, 5, Rng(1))
        g = bank.gather(("z", "x"))
        assert g.shape == (4, 5)
        assert np.array_equal(g.data[:2], bank.matrix.data[4:6])
        assert np.array_equal(g.data[2:], bank.matrix.data[0:2])

    def test_gather_unknown_category(self):
        bank = PrototypeBank.init(("x",), 2, 5, Rng(1))
        with pytest.raises(ValueError):
            bank.gather(("nope",))

    def test_gather_gradient_lands_in_bank_rows(self):
        bank = PrototypeBank.init(("x", "y"), 1, 3, Rng(5))
        g = bank.gather(("y",))
        ad.backward(ad.sum_(g))
        assert np.array_equal(bank.matrix.grad[0], np.zeros(3))
        assert np.array_equal(bank.matrix.grad[1], np.ones(3))

    def test_renormalize_restores_unit_rows(self):
        bank = PrototypeBank.init(("x", "y"), 2, 6, Rng(2))
        bank.matrix.data *= 3.7
        bank.matrix.data[0] *= 0.01
        bank.renormalize()
        assert bank.max_norm_error() < 1e-12

    def test_append_categories_preserves_existing_rows(self):
        bank = PrototypeBank.init(("x", "y"), 2, 6, Rng(3))
        before = bank.matrix.data.copy()
        grown = bank.append_categories(("z", "w"), Rng(3))
        assert grown.categories == ("x", "y", "z", "w")
        assert grown.matrix.shape == (8, 6)
        assert np.array_equal(grown.matrix.data[:4], before)
        assert grown.max_norm_error() < 1e-12

    def test_append_rejects_duplicates(self):
        bank = PrototypeBank.init(("x", "y"), 2, 6, Rng(3))
        with pytest.raises(ValueError, match="already present"):
            bank.append_categories(("y",), Rng(3))

    def test_init_validation(self):
        with pytest.raises(ValueError):
            PrototypeBank.init((), 2, 4, Rng(1))
        with pytest.raises(ValueError):
            PrototypeBank.init(("x",), 0, 4, Rng(1))


# ---------------------------------------------------------------------------
# projection network


def small_net(dropout=0.0, d_in=6, d_out=4):
    return ProjectionNet.init(Rng(9), d_in=d_in, d_out=d_out, dropout=dropout)


class TestProjectionNet:
    def test_output_shape(self):
        net = small_net()
        x = ad.constant(np.random.default_rng(0).normal(size=(5, 6)))
        assert net.forward(x, train=False).shape == (5, 4)

    def test_layer_norm_zero_mean_rows(self):
        # at init the affine gain is one and bias zero, so row means vanish
        net = small_net()
        x = ad.constant(np.random.default_rng(1).normal(size=(7, 6)) * 3.0)
        out = net.forward(x, train=False)
        assert np.abs(out.data.mean(axis=1)).max() < 1e-9

    def test_train_updates_running_stats(self):
        net = small_net()
        x = ad.constant(np.random.default_rng(2).normal(loc=2.0, size=(50, 6)))
        h = x.data @ net.w1.data + net.b1.data
        expect_mean = 0.9 * 0.0 + 0.1 * h.mean(axis=0)
        expect_var = 0.9 * 1.0 + 0.1 * h.var(axis=0)
        net.forward(x, train=True, dropout_stream=np.random.default_rng(0))
        assert np.abs(net.running_mean - expect_mean).max() < 1e-12
        assert np.abs(net.running_var - expect_var).max() < 1e-12

    def test_eval_is_pure(self):
        net = small_net()
        x = ad.constant(np.random.default_rng(3).normal(size=(4, 6)))
        a = net.forward(x, train=False).data
        b = net.forward(x, train=False).data
        assert np.array_equal(a, b)
        assert np.array_equal(net.running_mean, np.zeros(6))

    def test_train_and_eval_differ(self):
        net = small_net()
        x = ad.constant(np.random.default_rng(4).normal(loc=1.5, size=(8, 6)))
        a = net.forward(x, train=True, dropout_stream=np.random.default_rng(0)).data
        b = net.forward(x, train=False).data
        assert np.abs(a - b).max() > 1e-3

    def test_dropout_zeroes_and_rescales(self):
        net = small_net(dropout=0.5)
        x = ad.constant(np.random.default_rng(5).normal(size=(40, 6)))
        a = net.forward(x, train=True, dropout_stream=np.random.default_rng(10)).data
        b = net.forward(x, train=True, dropout_stream=np.random.default_rng(11)).data
        assert not np.array_equal(a, b)

    def test_train_without_stream_rejected_when_dropping(self):
        net = small_net(dropout=0.1)
        x = ad.constant(np.ones((2, 6)))
        with pytest.raises(ValueError, match="dropout stream"):
            net.forward(x, train=True)

    def test_single_row_batch_is_finite(self):
        net = small_net()
        x = ad.constant(np.random.default_rng(6).normal(size=(1, 6)))
        out = net.forward(x, train=True).data
        assert np.all(np.isfinite(out))

    def test_gradients_match_finite_differences(self):
        x = np.random.default_rng(7).normal(size=(5, 6))
        init = small_net()
        arrays = [v.data.copy() for v in init.parameters().values()]

        def build(vals):
            net = ProjectionNet(
                w1=vals[0], b1=vals[1], bn_gamma=vals[2], bn_beta=vals[3],
                w_out=vals[4], b_out=vals[5], ln_gamma=vals[6], ln_beta=vals[7],
                running_mean=np.zeros(6), running_var=np.ones(6), dropout=0.0,
            )
            out = net.forward(ad.constant(x), train=True)
            return ad.sum_(ad.mul(out, ad.constant(weight)))

        # modest readout scale keeps finite-difference noise on the flat
        # bias directions (batch norm cancels b1) well under tolerance
        weight = np.random.default_rng(8).normal(size=(5, 4)) * 0.1
        assert check_grad(build, arrays) < 1e-4

    def test_first_bias_gradient_vanishes_in_train_mode(self):
        # mean subtraction removes the pre-norm bias entirely
        net = small_net()
        x = ad.constant(np.random.default_rng(9).normal(size=(6, 6)))
        out = net.forward(x, train=True)
        ad.backward(ad.sum_(ad.square(out)))
        assert np.abs(net.b1.grad).max() < 1e-12


# ---------------------------------------------------------------------------
# combined objective gradient and full model wiring


def test_full_objective_gradient():
    """Projection + alignment + repulsion, differentiated end to end."""
    rng = np.random.default_rng(41)
    n, m, k, d_in, d_out = 2, 2, 3, 6, 4
    x = rng.normal(size=(n * k, d_in))
    init = small_net(d_in=d_in, d_out=d_out)
    arrays = [v.data.copy() for v in init.parameters().values()]
    arrays.append(unit_rows(rng.normal(size=(n * m, d_out))))

    def build(vals):
        net = ProjectionNet(
            w1=vals[0], b1=vals[1], bn_gamma=vals[2], bn_beta=vals[3],
            w_out=vals[4], b_out=vals[5], ln_gamma=vals[6], ln_beta=vals[7],
            running_mean=np.zeros(d_in), running_var=np.ones(d_in), dropout=0.0,
        )
        z = net.forward(ad.constant(x), train=True)
        protos = vals[8]
        loss = span_alignment_loss(protos, z, n, m, k)
        return ad.add(loss, ad.mul(proto_repulsion_loss(protos), ad.constant(0.5)))

    assert check_grad(build, arrays) < 1e-4


def toy_table(dim=8):
    rng = np.random.default_rng(55)
    vectors = {w: rng.normal(size=dim) for w in ("alpha", "beta", "gamma", "delta")}
    return EmbeddingTable(dim=dim, vectors=vectors)


def toy_span(i: int) -> MarkedSpan:
    words = ["alpha", "beta", "gamma", "delta"]
    tokens = (MARKER, words[i % 4], words[(i + 1) % 4])
    return MarkedSpan(sentence_id=f"s{i}", start=0, end=1, tokens=tokens, label="x")


class TestProtoModel:
    def test_init_and_parameter_names(self):
        model = ProtoModel.init(
            ("x", "y"), toy_table(), Rng(42), d_pos=4, hidden=5, d_repr=6, m_protos=2, d_proto=3
        )
        params = model.parameters()
        assert len(params) == 16
        assert set(params) >= {"encoder/w_p", "projection/w1", "prototypes"}
        state = model.state()
        assert len(state) == 18
        assert "projection/running_mean" in state

    def test_embed_spans_shape_and_predict(self):
        model = ProtoModel.init(
            ("x", "y"), toy_table(), Rng(42), d_pos=4, hidden=5, d_repr=6, m_protos=2, d_proto=3
        )
        spans = [toy_span(i) for i in range(4)]
        z = model.embed_spans(spans, train=False)
        assert z.shape == (4, 3)
        picks = predict(z.data, model.bank)
        assert len(picks) == 4
        assert all(c in ("x", "y") for c, _ in picks)
