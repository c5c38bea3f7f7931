import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zerosight.backbone import BackboneConfig, build
from zerosight.exceptions import ConfigurationError
from zerosight.gradcheck import run_check
from zerosight.losses import LossHead, ProxyBank, combined_loss, proxy_nca, smoothed_softmax, smoothing_targets
from zerosight.tensor import Tape, Tensor, default_dtype


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


class TestProxyNca:
    def test_at_positive_antipodal_negative(self):
        loss = proxy_nca(t64([[1.0, 0.0]]), [0], t64([[1.0, 0.0], [-1.0, 0.0]]))
        assert loss.item() == pytest.approx(-4.0, abs=1e-12)

    def test_equal_distances(self):
        # both proxies at squared distance 1 from x on the unit circle
        c = np.cos(np.pi / 3)
        proxies = t64([[c, np.sin(np.pi / 3)], [c, -np.sin(np.pi / 3)]])
        loss = proxy_nca(t64([[1.0, 0.0]]), [0], proxies)
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(0)
        e, p = rng.standard_normal((5, 3)), rng.standard_normal((4, 3))
        y = np.array([0, 1, 3, 3, 2])
        en = e / np.linalg.norm(e, axis=1, keepdims=True)
        pn = p / np.linalg.norm(p, axis=1, keepdims=True)
        total = 0.0
        for i in range(5):
            d = [float(((en[i] - pn[j]) ** 2).sum()) for j in range(4)]
            total += d[y[i]] + np.log(sum(np.exp(-d[j]) for j in range(4) if j != y[i]))
        assert proxy_nca(t64(e), y, t64(p)).item() == pytest.approx(total / 5, rel=1e-12)

    def test_bank_maps_class_ids(self):
        bank = ProxyBank([10, 20, 30], 4, seed=0)
        assert list(bank.rows([30, 10])) == [2, 0]
        with pytest.raises(ConfigurationError):
            bank.rows([40])

    def test_bank_rows_unit_norm_and_seeded(self):
        a, b = ProxyBank(range(5), 8, seed=3), ProxyBank(range(5), 8, seed=3)
        np.testing.assert_allclose(np.linalg.norm(a.bank.data, axis=1), 1.0, rtol=1e-6)
        assert a.bank.data.tobytes() == b.bank.data.tobytes()

    def test_label_out_of_range(self):
        with pytest.raises(ConfigurationError):
            proxy_nca(t64(np.ones((2, 3))), [0, 5], t64(np.ones((3, 3))))

    def test_single_proxy_has_no_negative(self):
        with pytest.raises(ConfigurationError):
            proxy_nca(t64(np.ones((2, 3))), [0, 0], t64(np.ones((1, 3))))

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), scale=st.floats(1e-3, 1e3))
    def test_invariant_to_positive_rescaling(self, seed, scale):
        rng = np.random.default_rng(seed)
        e, p = rng.standard_normal((4, 5)), rng.standard_normal((3, 5))
        y = rng.integers(0, 3, 4)
        a = proxy_nca(t64(e), y, t64(p)).item()
        b = proxy_nca(t64(e * scale), y, t64(p)).item()
        assert b == pytest.approx(a, rel=1e-9, abs=1e-12)

    def test_proxy_gradients(self):
        worst, tol = run_check("proxy_nca", seeds=[31])
        assert worst <= tol


class TestSmoothedSoftmax:
    def test_uniform_two_class(self):
        assert smoothed_softmax(t64([[0.0, 0.0]]), [0], 0.5).item() == pytest.approx(0.693147, abs=1e-6)

    @pytest.mark.parametrize("c, eps", [(2, 0.5), (4, 0.25), (10, 0.1)])
    def test_target_vectors(self, c, eps):
        for y in range(c):
            q = smoothing_targets([y], c, eps)[0]
            expected = np.full(c, eps)
            expected[y] = 1 - eps
            np.testing.assert_array_equal(q, expected)
            assert q.sum() == pytest.approx(1 + (c - 2) * eps)

    def test_four_class_example(self):
        np.testing.assert_array_equal(smoothing_targets([1], 4, 0.25)[0], [0.25, 0.75, 0.25, 0.25])

    def test_normalized_targets_sum_to_one(self):
        q = smoothing_targets([0, 3], 5, 0.2, normalize=True)
        np.testing.assert_allclose(q.sum(axis=1), 1.0)

    def test_zero_eps_is_cross_entropy(self):
        rng = np.random.default_rng(1)
        logits, y = rng.standard_normal((7, 6)) * 3, rng.integers(0, 6, 7)
        ce = 0.0
        for row, label in zip(logits, y):
            ce += -row[label] + np.log(sum(np.exp(v) for v in row))
        assert abs(smoothed_softmax(t64(logits), y, 0.0).item() - ce / 7) <= 1e-9

    def test_label_out_of_range(self):
        with pytest.raises(ConfigurationError):
            smoothed_softmax(t64(np.zeros((1, 3))), [3], 0.1)

    def test_eps_out_of_range(self):
        with pytest.raises(ConfigurationError):
            smoothed_softmax(t64(np.zeros((1, 3))), [0], 0.6)

    def test_gradients(self):
        worst, tol = run_check("smoothed_softmax", seeds=[41])
        assert worst <= tol


def head_and_bank(lambda_softmax=0.5, norm=True):
    with default_dtype(np.float64):
        return (LossHead(6, 3, seed=0, lambda_softmax=lambda_softmax, use_separation_norm=norm),
                ProxyBank([0, 1, 2], 6, seed=1))


class TestCombined:
    def test_zero_softmax_weight_gives_proxy_loss(self):
        head, bank = head_and_bank(lambda_softmax=0.0)
        emb, y = t64(np.random.default_rng(2).standard_normal((6, 6))), [0, 0, 1, 1, 2, 2]
        total, parts = combined_loss(emb, y, head, bank)
        assert total.item() == proxy_nca(emb, y, bank).item()
        assert parts["proxy"] == total.item()

    def test_weighted_sum_arithmetic(self):
        assert 1.0 * 4.0 + 0.5 * 0.6931 == pytest.approx(4.34655)
        head, bank = head_and_bank()
        emb, y = t64(np.random.default_rng(3).standard_normal((6, 6))), [0, 0, 1, 1, 2, 2]
        total, parts = combined_loss(emb, y, head, bank)
        assert total.item() == pytest.approx(parts["proxy"] + 0.5 * parts["softmax"], rel=1e-12)

    def test_default_eps_is_inverse_class_count(self):
        head, _ = head_and_bank()
        assert head.eps == pytest.approx(1 / 3)

    def test_softmax_branch_sees_normalized_features(self):
        head, bank = head_and_bank()
        rng = np.random.default_rng(4)
        emb, y = rng.standard_normal((6, 6)), [0, 0, 1, 1, 2, 2]
        shifted = emb * 3.0 + 7.0
        # batch norm removes the per-feature affine change (up to its eps)
        a = combined_loss(t64(emb), y, head, bank)[1]["softmax"]
        b = combined_loss(t64(shifted), y, head, bank)[1]["softmax"]
        assert a == pytest.approx(b, rel=1e-4)

    def test_gradients_reach_every_parameter_group(self):
        cfg = BackboneConfig(widths=(4, 8), use_input_attention=True, placement="early", cbam_reduction=2,
                             input_size=16)
        model = build(cfg, seed=0, dtype=np.float64)
        with default_dtype(np.float64):
            head, bank = LossHead(8, 3, seed=0), ProxyBank([0, 1, 2], 8, seed=0)
        x = Tensor(np.random.default_rng(5).standard_normal((6, 3, 16, 16)))
        tape = Tape()
        with tape:
            total, _ = combined_loss(model(x), [0, 0, 1, 1, 2, 2], head, bank)
        tape.backward(total)
        named = dict(model.named_parameters())
        named.update(head.named_parameters("head."))
        named.update(bank.named_parameters("proxy."))
        for key in ("stem_conv.weight", "ia.conv_a.weight", "block0.cbam.mlp_w1", "block0.cbam.spatial.weight",
                    "proxy.bank", "head.norm.gamma", "head.norm.beta", "head.classifier.weight"):
            assert named[key].grad is not None and np.abs(named[key].grad).sum() > 0, key
        assert all(p.grad is not None for p in named.values())

    def test_full_graph_gradients(self):
        worst, tol = run_check("combined_loss", seeds=[51])
        assert worst <= tol

    def test_checkpoint_names(self):
        head, bank = head_and_bank()
        names = set(head.state_dict("head.")) | set(bank.state_dict("proxy."))
        assert {"proxy.bank", "head.classifier.weight", "head.norm.gamma", "head.norm.beta"} <= names
        assert any(n.startswith("head.norm.running") for n in names)
