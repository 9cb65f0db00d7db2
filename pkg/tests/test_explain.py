"""Explanation engine, checked against brute-force loop oracles and
finite-difference probes of the attention-output gradients."""

from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clipscope import autodiff as ad
from clipscope.explain import (
    HeatMap,
    _rollout_matrix,
    _spatial_lam,
    explain_image,
    explain_text,
    layer_heat,
    loosened_weights,
    normalize01,
    token_to_word_scores,
)
from clipscope.model import encode_image, encode_text
from clipscope.toydata import build_toy_bundle, render_item


@pytest.fixture(scope="module")
def bundle():
    return build_toy_bundle(seed=5)


@pytest.fixture(scope="module")
def pixels(bundle):
    img, _, _, _, _ = render_item(np.random.default_rng(9), 32)
    return bundle.preprocess(img)


@pytest.fixture(scope="module")
def encoded(bundle):
    return bundle.tokenizer.encode("a photo of a red circle")


class TestHeatFormulaOracle:
    """The vectorized per-layer heat must equal an explicit triple loop."""

    def brute_force(self, w, lam, v, signed):
        n, c_dim = v.shape
        out = np.zeros(n)
        for i in range(n):
            acc = 0.0
            for c in range(c_dim):
                acc += w[c] * lam[i] * v[i, c]
            out[i] = acc if signed else max(acc, 0.0)
        return out

    def test_fifty_instances(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            n, c_dim = int(rng.integers(2, 9)), int(rng.integers(2, 13))
            w = rng.normal(size=c_dim)
            lam = rng.random(n)
            v = rng.normal(size=(n, c_dim))
            signed = bool(seed % 2)
            got = layer_heat(w, lam, v, signed=signed)
            want = self.brute_force(w, lam, v, signed)
            np.testing.assert_allclose(got, want, atol=1e-10)


class TestSpatialWeights:
    def test_worked_example_exact(self):
        np.testing.assert_array_equal(loosened_weights([2.0, 5.0, 3.5]), [0.0, 1.0, 0.5])

    def test_bounds(self):
        rng = np.random.default_rng(1)
        lam = loosened_weights(rng.normal(size=50))
        assert lam.min() == 0.0 and lam.max() == 1.0

    def test_degenerate_is_all_ones(self):
        np.testing.assert_array_equal(loosened_weights([3.0, 3.0, 3.0]), [1.0, 1.0, 1.0])

    def test_affine_invariance_exact_on_dyadic_inputs(self):
        x = np.array([3.625, -1.25, 0.5, 7.0, 2.125])
        for a in (0.5, 2.0, 3.0, 4.0):
            for b in (-1.25, 0.0, 3.5):
                np.testing.assert_array_equal(loosened_weights(a * x + b), loosened_weights(x))

    @settings(max_examples=60, deadline=None)
    @given(
        st.integers(min_value=0, max_value=10**6),
        st.floats(0.01, 100.0),
        st.floats(-100.0, 100.0),
    )
    def test_affine_invariance_float_property(self, seed, a, b):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=8)
        np.testing.assert_allclose(loosened_weights(a * x + b), loosened_weights(x), atol=1e-9)

    def test_softmax_mode_recomputation_matches_attention_row(self, bundle, pixels):
        # The standalone helper recomputes the softmax; it may differ from
        # the traced row only by reduction-order ulps.
        _, trace = encode_image(bundle, pixels, head_mode="single")
        lt = trace.layers[-1]
        select = np.arange(1, bundle.config.n_patches + 1)
        lam = _spatial_lam(lt.q.numpy()[0], lt.k.numpy(), select, "softmax", lt.q.shape[1])
        np.testing.assert_allclose(lam, lt.attns[0].numpy()[0, select], rtol=1e-13)

    def test_softmax_mode_recomputation_matches_attention_row_text(self, bundle, encoded):
        _, trace = encode_text(bundle, encoded, head_mode="single")
        lt = trace.layers[-1]
        eot = encoded.eot_index
        select = np.arange(1, eot)
        lam = _spatial_lam(lt.q.numpy()[eot], lt.k.numpy(), select, "softmax", lt.q.shape[1])
        np.testing.assert_allclose(lam, lt.attns[0].numpy()[eot, select], rtol=1e-13)

    def test_softmax_mode_is_exactly_the_attention_weighted_heat(self, bundle, pixels, encoded):
        # Public-API equivalence: softmax-mode heat equals building the map
        # directly from the traced attention row, bit for bit.
        feat_t, _ = encode_text(bundle, encoded)
        unit_t = feat_t.numpy() / np.linalg.norm(feat_t.numpy())
        with ad.Tape() as tape:
            f, trace = encode_image(bundle, pixels, head_mode="single", grad_mode="attn")
            s = ad.dot(ad.l2_normalize(f), ad.constant(unit_t))
        tape.backward(s)
        lt = trace.layers[-1]
        select = np.arange(1, bundle.config.n_patches + 1)
        att_row = lt.attns[0].numpy()[0, select]
        manual = np.maximum(att_row * (lt.v.numpy()[select] @ lt.o.grad[0]), 0.0)
        hm = explain_image(bundle, pixels, encoded, lam_mode="softmax", layers=[-1])
        np.testing.assert_array_equal(hm.patch_values.ravel(), manual)

    def test_unknown_mode_raises(self):
        with pytest.raises(ValueError, match="lam_mode"):
            _spatial_lam(np.zeros(3), np.zeros((3, 3)), np.arange(3), "nope", 3)


class TestChannelWeightInjectionOracle:
    """d(score)/d(attention output) from the tape must match central
    differences obtained by injecting offsets into the live forward pass."""

    def test_image_encoder_all_layers(self, bundle, pixels, encoded):
        feat_t, _ = encode_text(bundle, encoded)
        unit_t = feat_t.numpy() / np.linalg.norm(feat_t.numpy())

        def score(offsets):
            f, _ = encode_image(bundle, pixels, head_mode="single", attn_out_offsets=offsets)
            v = f.numpy()
            return float(np.dot(v / np.linalg.norm(v), unit_t))

        with ad.Tape() as tape:
            f, trace = encode_image(bundle, pixels, head_mode="single", grad_mode="attn")
            s = ad.dot(ad.l2_normalize(f), ad.constant(unit_t))
        tape.backward(s)

        rng = np.random.default_rng(2)
        eps = 1e-5
        for layer in range(bundle.config.vision_layers):
            g = trace.layers[layer].o.grad
            for _ in range(3):
                i = int(rng.integers(g.shape[0]))
                j = int(rng.integers(g.shape[1]))
                bump = np.zeros_like(g)
                bump[i, j] = eps
                fd = (score({layer: bump}) - score({layer: -bump})) / (2 * eps)
                assert abs(g[i, j] - fd) < 1e-4 * max(1.0, abs(fd))

    def test_text_encoder_all_layers(self, bundle, pixels, encoded):
        feat_i, _ = encode_image(bundle, pixels)
        unit_i = feat_i.numpy() / np.linalg.norm(feat_i.numpy())

        def score(offsets):
            f, _ = encode_text(bundle, encoded, head_mode="single", attn_out_offsets=offsets)
            v = f.numpy()
            return float(np.dot(v / np.linalg.norm(v), unit_i))

        with ad.Tape() as tape:
            f, trace = encode_text(bundle, encoded, head_mode="single", grad_mode="attn")
            s = ad.dot(ad.l2_normalize(f), ad.constant(unit_i))
        tape.backward(s)

        rng = np.random.default_rng(3)
        eps = 1e-5
        for layer in range(bundle.config.text_layers):
            g = trace.layers[layer].o.grad
            for _ in range(3):
                i = int(rng.integers(g.shape[0]))
                j = int(rng.integers(g.shape[1]))
                bump = np.zeros_like(g)
                bump[i, j] = eps
                fd = (score({layer: bump}) - score({layer: -bump})) / (2 * eps)
                assert abs(g[i, j] - fd) < 1e-4 * max(1.0, abs(fd))


class TestImageExplanations:
    def test_shapes_and_range(self, bundle, pixels, encoded):
        hm = explain_image(bundle, pixels, encoded)
        s = bundle.config.image_size
        g = bundle.config.grid
        assert hm.values.shape == (s, s)
        assert hm.patch_values.shape == (g, g)
        assert hm.values.min() >= 0.0 and hm.values.max() <= 1.0
        assert -1.0 <= hm.score <= 1.0

    def test_deterministic(self, bundle, pixels, encoded):
        a = explain_image(bundle, pixels, encoded)
        b = explain_image(bundle, pixels, encoded)
        np.testing.assert_array_equal(a.values, b.values)

    def test_multi_layer_sum_of_clamped_layers(self, bundle, pixels, encoded):
        both = explain_image(bundle, pixels, encoded, layers=[0, 1])
        l0 = explain_image(bundle, pixels, encoded, layers=[0])
        l1 = explain_image(bundle, pixels, encoded, layers=[1])
        np.testing.assert_allclose(
            both.patch_values, l0.patch_values + l1.patch_values, atol=1e-12
        )

    def test_layer_choice_matters(self, bundle, pixels, encoded):
        l0 = explain_image(bundle, pixels, encoded, layers=[0])
        l1 = explain_image(bundle, pixels, encoded, layers=[1])
        assert not np.array_equal(l0.patch_values, l1.patch_values)

    def test_negative_layer_indices(self, bundle, pixels, encoded):
        a = explain_image(bundle, pixels, encoded, layers=[-1])
        b = explain_image(bundle, pixels, encoded, layers=[1])
        np.testing.assert_array_equal(a.values, b.values)
        with pytest.raises(ValueError, match="out of range"):
            explain_image(bundle, pixels, encoded, layers=[5])

    def test_signed_flag_allows_negative_patches(self, bundle, pixels, encoded):
        signed = explain_image(bundle, pixels, encoded, signed=True)
        clamped = explain_image(bundle, pixels, encoded, signed=False)
        assert clamped.patch_values.min() >= 0.0
        assert signed.patch_values.min() < 0.0  # random model: some channel hurts

    def test_lam_modes_differ(self, bundle, pixels, encoded):
        a = explain_image(bundle, pixels, encoded, lam_mode="loosened")
        b = explain_image(bundle, pixels, encoded, lam_mode="ones")
        assert not np.array_equal(a.patch_values, b.patch_values)

    def test_upsample_modes(self, bundle, pixels, encoded):
        near = explain_image(bundle, pixels, encoded, upsample="nearest")
        bil = explain_image(bundle, pixels, encoded, upsample="bilinear")
        assert near.values.shape == bil.values.shape
        assert not np.array_equal(near.values, bil.values)
        # Nearest keeps exactly the patch-level value set.
        norm_patches = normalize01(near.patch_values)
        assert set(np.round(near.values.ravel(), 12)) <= set(np.round(norm_patches.ravel(), 12))

    def test_all_baselines_run(self, bundle, pixels, encoded):
        for method in ("raw-attention", "rollout", "grad-cam"):
            hm = explain_image(bundle, pixels, encoded, method=method)
            assert hm.method == method
            assert hm.values.shape == (32, 32)
            assert np.isfinite(hm.values).all()

    def test_attention_baselines_are_text_agnostic(self, bundle, pixels):
        e1 = bundle.tokenizer.encode("a photo of a red circle")
        e2 = bundle.tokenizer.encode("a photo of a blue square")
        for method in ("raw-attention", "rollout"):
            a = explain_image(bundle, pixels, e1, method=method)
            b = explain_image(bundle, pixels, e2, method=method)
            np.testing.assert_array_equal(a.values, b.values)

    def test_grad_eclip_is_text_specific(self, bundle, pixels):
        e1 = bundle.tokenizer.encode("a photo of a red circle")
        e2 = bundle.tokenizer.encode("a photo of a blue square")
        a = explain_image(bundle, pixels, e1)
        b = explain_image(bundle, pixels, e2)
        assert not np.array_equal(a.values, b.values)

    def test_unknown_method_raises(self, bundle, pixels, encoded):
        with pytest.raises(ValueError, match="method"):
            explain_image(bundle, pixels, encoded, method="mystery")


class TestRollout:
    def test_rows_stochastic(self, bundle, pixels):
        _, trace = encode_image(bundle, pixels)
        r = _rollout_matrix(trace)
        np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-12)
        assert (r >= 0).all()

    def test_hand_computed_two_layer_example(self):
        a1 = np.array([[1.0, 0.0], [0.5, 0.5]])
        a2 = np.array([[0.25, 0.75], [0.75, 0.25]])
        t1 = SimpleNamespace(attns=[ad.Tensor(a1)])
        t2 = SimpleNamespace(attns=[ad.Tensor(a2)])
        trace = SimpleNamespace(layers=[t1, t2])
        m1 = 0.5 * a1 + 0.5 * np.eye(2)
        m1 /= m1.sum(axis=1, keepdims=True)
        m2 = 0.5 * a2 + 0.5 * np.eye(2)
        m2 /= m2.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(_rollout_matrix(trace), m2 @ m1, atol=1e-15)

    def test_head_averaging(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        b = np.array([[0.0, 1.0], [1.0, 0.0]])
        t = SimpleNamespace(attns=[ad.Tensor(a), ad.Tensor(b)])
        trace = SimpleNamespace(layers=[t])
        expected = 0.5 * (0.5 * (a + b)) + 0.5 * np.eye(2)
        expected /= expected.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(_rollout_matrix(trace), expected, atol=1e-15)


class TestTextExplanations:
    def test_word_scores_structure(self, bundle, pixels):
        enc = bundle.tokenizer.encode("a photo of a red circle")
        sal = explain_text(bundle, pixels, enc)
        assert sal.words == ["a", "photo", "of", "a", "red", "circle"]
        imp = np.asarray(sal.importances)
        assert imp.shape == (6,)
        assert imp.min() >= 0.0 or sal.method == "grad-eclip"  # signed sums can dip below 0
        assert imp.max() == pytest.approx(1.0)

    def test_token_to_word_sums_then_max_normalizes(self):
        scores = token_to_word_scores([0.2, 0.3, 0.5], [0, 1, 1], ["w0", "w1"])
        np.testing.assert_allclose(scores, [0.25, 1.0])

    def test_token_to_word_all_zero_stays_zero(self):
        scores = token_to_word_scores([0.0, 0.0], [0, 1], ["a", "b"])
        np.testing.assert_array_equal(scores, [0.0, 0.0])

    def test_deterministic(self, bundle, pixels, encoded):
        a = explain_text(bundle, pixels, encoded)
        b = explain_text(bundle, pixels, encoded)
        assert a.importances == b.importances

    def test_attention_methods_run(self, bundle, pixels, encoded):
        for method in ("raw-attention", "rollout"):
            sal = explain_text(bundle, pixels, encoded, method=method)
            assert len(sal.importances) == len(encoded.words)
            assert max(sal.importances) == pytest.approx(1.0)

    def test_grad_cam_rejected_for_text(self, bundle, pixels, encoded):
        with pytest.raises(ValueError, match="image-side"):
            explain_text(bundle, pixels, encoded, method="grad-cam")

    def test_single_word_text(self, bundle, pixels):
        enc = bundle.tokenizer.encode("circle")
        sal = explain_text(bundle, pixels, enc)
        assert sal.words == ["circle"]
        # Clamped heats are non-negative, so the lone word is either the
        # (normalized) peak or exactly zero.
        assert sal.importances[0] in (0.0, 1.0)

    def test_default_uses_last_eight_layers_capped(self, bundle, pixels, encoded):
        # Toy model has 2 text layers; default must equal layers=[0, 1].
        default = explain_text(bundle, pixels, encoded)
        explicit = explain_text(bundle, pixels, encoded, layers=[0, 1])
        assert default.importances == explicit.importances


class TestHeatMapRecord:
    def test_round_trip(self):
        rng = np.random.default_rng(4)
        values = rng.random((5, 7))
        hm = HeatMap(width=7, height=5, values=values)
        rec = hm.to_record()
        assert rec["dtype"] == "f32" and rec["width"] == 7 and rec["height"] == 5
        back = HeatMap.from_record(rec)
        np.testing.assert_allclose(back.values, values.astype(np.float32), atol=1e-7)

    def test_size_validation(self):
        rec = {"width": 3, "height": 3, "dtype": "f32", "data": "AAAA"}
        with pytest.raises(ValueError, match="size"):
            HeatMap.from_record(rec)

    def test_row_major_layout(self):
        values = np.arange(6, dtype=np.float64).reshape(2, 3)
        rec = HeatMap(width=3, height=2, values=values).to_record()
        import base64

        raw = np.frombuffer(base64.b64decode(rec["data"]), dtype="<f4")
        np.testing.assert_array_equal(raw, [0, 1, 2, 3, 4, 5])


class TestNormalization:
    def test_normalize01_flat_collapses_to_zero(self):
        np.testing.assert_array_equal(normalize01(np.full((3, 3), 2.0)), np.zeros((3, 3)))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6))
    def test_normalize01_bounds(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(4, 4))
        y = normalize01(x)
        assert y.min() == 0.0 and y.max() == 1.0
