"""Encoders are checked against a straight-line numpy re-implementation
written independently of the autodiff graph, plus gradient-capture and
persistence behavior."""

import numpy as np
import pytest

from clipscope import autodiff as ad
from clipscope.container import ContainerError
from clipscope.model import (
    ModelBundle,
    causal_mask,
    encode_image,
    encode_text,
    extract_patches,
    matching_score,
    weight_spec,
)
from clipscope.toydata import build_toy_bundle, render_item


@pytest.fixture(scope="module")
def bundle():
    return build_toy_bundle(seed=11)


@pytest.fixture(scope="module")
def pixels(bundle):
    img, _, _, _, _ = render_item(np.random.default_rng(3), 32)
    return bundle.preprocess(img)


# ---------------------------------------------------------------------------
# Independent straight-line forward pass (plain numpy, no shared helpers)
# ---------------------------------------------------------------------------


def _ln(x, g, b, eps=1e-5):
    mu = x.mean(axis=1, keepdims=True)
    c = x - mu
    var = (c * c).mean(axis=1, keepdims=True)
    return c / np.sqrt(var + eps) * g + b


def _sm(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _gelu(x):
    return x / (1.0 + np.exp(-1.702 * x))


def _np_block(x, w, prefix, heads, mask=None):
    width = x.shape[1]
    y = _ln(x, w[f"{prefix}.norm1.gain"], w[f"{prefix}.norm1.bias"])
    qkv = y @ w[f"{prefix}.attn.qkv.weight"].T + w[f"{prefix}.attn.qkv.bias"]
    q, k, v = qkv[:, :width], qkv[:, width : 2 * width], qkv[:, 2 * width :]
    dh = width // heads
    outs = []
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        scores = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
        if mask is not None:
            scores = scores + mask
        outs.append(_sm(scores) @ v[:, sl])
    o = np.concatenate(outs, axis=1)
    x = x + o @ w[f"{prefix}.attn.out.weight"].T + w[f"{prefix}.attn.out.bias"]
    z = _ln(x, w[f"{prefix}.norm2.gain"], w[f"{prefix}.norm2.bias"])
    h1 = _gelu(z @ w[f"{prefix}.mlp.fc1.weight"].T + w[f"{prefix}.mlp.fc1.bias"])
    return x + h1 @ w[f"{prefix}.mlp.fc2.weight"].T + w[f"{prefix}.mlp.fc2.bias"]


def np_vision_forward(bundle, pixels, heads):
    cfg = bundle.config
    w = {k: t.data for k, t in bundle.weights.items()}
    p = cfg.patch_size
    g = cfg.grid
    rows = []
    for i in range(g):
        for j in range(g):
            vec = []
            for c in range(3):
                for r in range(p):
                    for cc in range(p):
                        vec.append(pixels[c, i * p + r, j * p + cc])
            rows.append(vec)
    patches = np.asarray(rows)
    x = patches @ w["visual.patch_proj.weight"].T
    x = np.vstack([w["visual.cls_token"][None, :], x]) + w["visual.pos_embed"]
    x = _ln(x, w["visual.pre_norm.gain"], w["visual.pre_norm.bias"])
    for i in range(cfg.vision_layers):
        x = _np_block(x, w, f"visual.layers.{i}", heads)
    x = _ln(x, w["visual.post_norm.gain"], w["visual.post_norm.bias"])
    return x[0] @ w["visual.proj"]


def np_text_forward(bundle, encoded, heads):
    cfg = bundle.config
    w = {k: t.data for k, t in bundle.weights.items()}
    n = encoded.eot_index + 1
    ids = encoded.ids[:n]
    x = w["text.token_embed"][ids] + w["text.pos_embed"][:n]
    mask = np.zeros((n, n))
    mask[np.triu_indices(n, k=1)] = -1e30
    for i in range(cfg.text_layers):
        x = _np_block(x, w, f"text.layers.{i}", heads, mask=mask)
    x = _ln(x, w["text.final_norm.gain"], w["text.final_norm.bias"])
    return x[n - 1] @ w["text.proj"]


class TestForwardOracle:
    def test_vision_multi_head_matches(self, bundle, pixels):
        got, _ = encode_image(bundle, pixels)
        want = np_vision_forward(bundle, pixels, bundle.config.vision_heads)
        np.testing.assert_allclose(got.numpy(), want, rtol=1e-10, atol=1e-12)

    def test_vision_single_head_matches(self, bundle, pixels):
        got, _ = encode_image(bundle, pixels, head_mode="single")
        want = np_vision_forward(bundle, pixels, 1)
        np.testing.assert_allclose(got.numpy(), want, rtol=1e-10, atol=1e-12)

    def test_text_multi_head_matches(self, bundle):
        enc = bundle.tokenizer.encode("a photo of a green triangle")
        got, _ = encode_text(bundle, enc)
        want = np_text_forward(bundle, enc, bundle.config.text_heads)
        np.testing.assert_allclose(got.numpy(), want, rtol=1e-10, atol=1e-12)

    def test_text_single_head_matches(self, bundle):
        enc = bundle.tokenizer.encode("a blue cross")
        got, _ = encode_text(bundle, enc, head_mode="single")
        want = np_text_forward(bundle, enc, 1)
        np.testing.assert_allclose(got.numpy(), want, rtol=1e-10, atol=1e-12)


class TestPatchExtraction:
    def test_matches_explicit_loop(self):
        rng = np.random.default_rng(4)
        px = rng.normal(size=(3, 8, 8))
        got = extract_patches(px, 4)
        for idx in range(4):
            i, j = divmod(idx, 2)
            vec = []
            for c in range(3):
                for r in range(4):
                    for cc in range(4):
                        vec.append(px[c, i * 4 + r, j * 4 + cc])
            np.testing.assert_array_equal(got[idx], vec)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            extract_patches(np.zeros((1, 8, 8)), 4)
        with pytest.raises(ValueError):
            extract_patches(np.zeros((3, 9, 9)), 4)


class TestCausality:
    def test_shared_prefix_rows_identical(self, bundle):
        a = bundle.tokenizer.encode("red circle")
        b = bundle.tokenizer.encode("red square")
        # Number of leading tokens the two encodings share (incl. start).
        k = 0
        while a.tokens[k] == b.tokens[k]:
            k += 1
        assert k >= 2
        _, ta = encode_text(bundle, a)
        _, tb = encode_text(bundle, b)
        for la, lb in zip(ta.layers, tb.layers):
            np.testing.assert_array_equal(la.q.numpy()[:k], lb.q.numpy()[:k])
            np.testing.assert_array_equal(la.o.numpy()[:k], lb.o.numpy()[:k])

    def test_mask_layout(self):
        m = causal_mask(3)
        assert m[0, 1] < -1e29 and m[0, 2] < -1e29 and m[1, 2] < -1e29
        assert m[1, 0] == 0 and m[2, 2] == 0


class TestTraceAndGradients:
    def test_inference_records_nothing(self, bundle, pixels):
        with ad.Tape() as tape:
            encode_image(bundle, pixels)
        assert len(tape) == 0

    def test_attn_grad_mode_stops_at_attention_output(self, bundle, pixels):
        enc = bundle.tokenizer.encode("a photo of a red circle")
        ft, _ = encode_text(bundle, enc)
        unit = ft.numpy() / np.linalg.norm(ft.numpy())
        with ad.Tape() as tape:
            fi, trace = encode_image(bundle, pixels, head_mode="single", grad_mode="attn")
            score = ad.dot(ad.l2_normalize(fi), ad.constant(unit))
        tape.backward(score)
        for layer in trace.layers:
            assert layer.o.grad is not None
        # Upstream of the first attention output nothing participates.
        assert trace.layers[0].q.grad is None
        assert trace.layers[0].x_in.grad is None
        # The residual input of layer 1 is downstream of layer 0's output.
        assert trace.layers[1].x_in.grad is not None
        # Model weights were never marked trainable.
        assert bundle.weights["visual.patch_proj.weight"].grad is None

    def test_attention_grad_matches_finite_differences(self, bundle, pixels):
        enc = bundle.tokenizer.encode("a photo of a blue square")
        ft, _ = encode_text(bundle, enc)
        unit = ft.numpy() / np.linalg.norm(ft.numpy())

        def score_with_offset(layer, offset):
            fi, _ = encode_image(
                bundle, pixels, head_mode="single", attn_out_offsets={layer: offset}
            )
            v = fi.numpy()
            return float(np.dot(v / np.linalg.norm(v), unit))

        with ad.Tape() as tape:
            fi, trace = encode_image(bundle, pixels, head_mode="single", grad_mode="attn")
            score = ad.dot(ad.l2_normalize(fi), ad.constant(unit))
        tape.backward(score)

        rng = np.random.default_rng(0)
        eps = 1e-5
        for layer in (0, 1):
            g = trace.layers[layer].o.grad
            t_dim, c_dim = g.shape
            for _ in range(4):
                i, j = rng.integers(t_dim), rng.integers(c_dim)
                bump = np.zeros((t_dim, c_dim))
                bump[i, j] = eps
                fd = (score_with_offset(layer, bump) - score_with_offset(layer, -bump)) / (2 * eps)
                assert abs(g[i, j] - fd) < 1e-4 * max(1.0, abs(fd))

    def test_dense_features_shape_and_identity_attention(self, bundle, pixels):
        feats, trace = encode_image(bundle, pixels, dense_last=True)
        cfg = bundle.config
        assert feats.shape == (cfg.n_patches, cfg.embed_dim)
        last = trace.layers[-1]
        assert last.attns == []
        assert last.o is last.v

    def test_text_trace_carries_word_alignment(self, bundle):
        enc = bundle.tokenizer.encode("a red circle")
        _, trace = encode_text(bundle, enc)
        assert trace.eot_index == enc.eot_index
        assert trace.words == ["a", "red", "circle"]


class TestScoring:
    def test_matching_score_bounded(self, bundle, pixels):
        enc = bundle.tokenizer.encode("a photo of a red circle")
        s = matching_score(bundle, pixels, enc)
        assert -1.0 <= s <= 1.0

    def test_single_vs_multi_head_scores_differ_in_general(self, bundle, pixels):
        enc = bundle.tokenizer.encode("a photo of a red circle")
        s_multi = matching_score(bundle, pixels, enc)
        s_single = matching_score(bundle, pixels, enc, head_mode="single")
        assert s_multi != s_single


class TestPersistence:
    def test_save_load_round_trip(self, bundle, pixels, tmp_path):
        path = tmp_path / "toy.gecw"
        bundle.save(path)
        loaded = ModelBundle.load(path)
        assert loaded.config == bundle.config
        f0, _ = encode_image(bundle, pixels)
        f1, _ = encode_image(loaded, pixels)
        np.testing.assert_allclose(f0.numpy(), f1.numpy(), atol=1e-4)
        enc0 = bundle.tokenizer.encode("a red circle")
        enc1 = loaded.tokenizer.encode("a red circle")
        np.testing.assert_array_equal(enc0.ids, enc1.ids)

    def test_missing_tensor_rejected(self, bundle):
        weights = {k: t.data for k, t in bundle.weights.items()}
        del weights["visual.proj"]
        with pytest.raises(ContainerError, match="missing"):
            ModelBundle(bundle.config, weights, bundle.tokenizer)

    def test_wrong_shape_rejected(self, bundle):
        weights = {k: t.data for k, t in bundle.weights.items()}
        weights["visual.proj"] = np.zeros((2, 2))
        with pytest.raises(ContainerError, match="shape"):
            ModelBundle(bundle.config, weights, bundle.tokenizer)

    def test_weight_spec_is_complete(self, bundle):
        assert set(bundle.weights) == {name for name, _ in weight_spec(bundle.config)}
