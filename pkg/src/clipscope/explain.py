"""Explanation methods for image-text matching.

The main method decomposes the matching score along the attention output of
chosen encoder layers.  For layer t with single-head attention internals
(q, k, v) and attention output o:

* channel weights w = d(score)/d(o) at the pooled position (the class token
  for images, the end marker for text) — obtained by one backward pass
  through a single-head forward;
* spatial weights lam_i rescale the pooled position's raw query-key
  affinities to [0, 1] ("loosened"), or use the softmax attention row
  ("softmax"), or are all ones ("ones");
* the per-position heat is ReLU(sum_c w_c * lam_i * v_ic), and multi-layer
  explanations sum the clamped per-layer maps before the final 0-1
  normalization.

Baselines: the pooled attention row ("raw-attention"), attention rollout
with half-identity mixing ("rollout"), and gradient-weighted activations of
the final block's input ("grad-cam").
"""

import base64
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import autodiff as ad
from .images import resize_nearest
from .model import encode_image, encode_text

METHODS = ("grad-eclip", "raw-attention", "rollout", "grad-cam")
LAM_MODES = ("loosened", "softmax", "ones")


@dataclass
class HeatMap:
    """A dense saliency map at image resolution plus its patch-level grid."""

    width: int
    height: int
    values: np.ndarray  # (height, width) float64 in [0, 1]
    patch_values: np.ndarray = None  # raw per-patch grid before normalization
    method: str = ""
    score: float = 0.0

    def to_record(self):
        data = np.ascontiguousarray(self.values, dtype="<f4").tobytes()
        return {
            "width": int(self.width),
            "height": int(self.height),
            "dtype": "f32",
            "data": base64.b64encode(data).decode("ascii"),
        }

    @classmethod
    def from_record(cls, rec):
        if rec.get("dtype", "f32") != "f32":
            raise ValueError(f"unsupported heat map dtype {rec.get('dtype')!r}")
        w, h = int(rec["width"]), int(rec["height"])
        raw = base64.b64decode(rec["data"])
        if len(raw) != w * h * 4:
            raise ValueError("heat map payload size does not match its dimensions")
        values = np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(np.float64)
        return cls(width=w, height=h, values=values)


@dataclass
class TextSaliency:
    """Per-word importances, max-normalized within the sentence."""

    words: list
    importances: list
    method: str = ""
    score: float = 0.0

    def to_records(self):
        return [
            {"word": w, "importance": float(v)}
            for w, v in zip(self.words, self.importances)
        ]


def loosened_weights(x):
    """Rescale to [0, 1] by the range; a degenerate range yields all ones."""
    x = np.asarray(x, dtype=np.float64)
    lo = x.min()
    hi = x.max()
    if hi == lo:
        return np.ones_like(x)
    return (x - lo) / (hi - lo)


def normalize01(x):
    """Min-max normalize; a flat map collapses to zeros."""
    x = np.asarray(x, dtype=np.float64)
    lo = x.min()
    hi = x.max()
    if hi == lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def layer_heat(w, lam, v, signed=False):
    """Per-position heat ReLU(sum_c w_c * lam_i * v_ic) for one layer."""
    w = np.asarray(w, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    contrib = lam * (v @ w)
    return contrib if signed else np.maximum(contrib, 0.0)


def _spatial_lam(q_pooled, k_all, select, lam_mode, head_dim):
    """Spatial weights over the selected positions."""
    raw = k_all @ q_pooled  # [T] affinities of the pooled query to every key
    if lam_mode == "loosened":
        return loosened_weights(raw[select])
    if lam_mode == "softmax":
        row = _kernels.softmax_rows((raw * head_dim**-0.5)[None, :])[0]
        return row[select]
    if lam_mode == "ones":
        return np.ones(len(select))
    raise ValueError(f"unknown lam_mode {lam_mode!r} (expected one of {LAM_MODES})")


def _resolve_layers(layers, n_layers, default_count):
    if layers is None:
        count = min(default_count, n_layers)
        return list(range(n_layers - count, n_layers))
    resolved = []
    for t in layers:
        t = int(t)
        if t < 0:
            t += n_layers
        if not 0 <= t < n_layers:
            raise ValueError(f"layer index {t} out of range for {n_layers} layers")
        resolved.append(t)
    return resolved


def _grad_decomposition_heat(trace, layers, lam_mode, pooled_idx, select, signed):
    """Sum the per-layer gradient-weighted heats over selected positions."""
    total = np.zeros(len(select))
    for t in layers:
        lt = trace.layers[t]
        if lt.o.grad is None:
            raise RuntimeError("explanation pass did not produce attention-output gradients")
        w = lt.o.grad[pooled_idx]
        v = lt.v.numpy()[select]
        if lam_mode == "softmax" and len(lt.attns) == 1:
            # Use the traced attention row itself: identical by construction
            # to the softmax of the raw affinities, with zero recomputation.
            lam = lt.attns[0].numpy()[pooled_idx, select]
        else:
            lam = _spatial_lam(
                lt.q.numpy()[pooled_idx], lt.k.numpy(), select, lam_mode, lt.q.shape[1]
            )
        total += layer_heat(w, lam, v, signed=signed)
    return total


def _mean_head_attention(layer_trace):
    mats = [a.numpy() for a in layer_trace.attns]
    return sum(mats) / len(mats)


def _rollout_matrix(trace):
    """Cumulative attention with half-identity mixing, re-normalized rows."""
    result = None
    for lt in trace.layers:
        a = _mean_head_attention(lt)
        a = 0.5 * a + 0.5 * np.eye(a.shape[0])
        a = a / a.sum(axis=1, keepdims=True)
        result = a if result is None else a @ result
    return result


def _unit(vec):
    return vec / np.linalg.norm(vec)


def _finish_map(patch_heat, trace, out_size, upsample, method, score):
    grid = patch_heat.reshape(trace.grid_h, trace.grid_w)
    if upsample == "nearest":
        dense = resize_nearest(grid, out_size, out_size)
    else:
        dense = _kernels.bilinear_resize(np.ascontiguousarray(grid), out_size, out_size)
    return HeatMap(
        width=out_size,
        height=out_size,
        values=normalize01(dense),
        patch_values=grid.copy(),
        method=method,
        score=score,
    )


def explain_image(
    bundle,
    pixels,
    encoded,
    method="grad-eclip",
    lam_mode="loosened",
    layers=None,
    signed=False,
    upsample="bilinear",
    out_size=None,
):
    """Heat map over the image for one image-text pair.

    ``pixels`` is the standardized 3*S*S encoder input; ``encoded`` a
    tokenized text.  Returns a HeatMap whose ``score`` is the canonical
    multi-head cosine similarity of the pair.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r} (expected one of {METHODS})")
    cfg = bundle.config
    out_size = out_size or cfg.image_size
    score = None

    if method == "grad-eclip":
        feat_t, _ = encode_text(bundle, encoded)
        unit_t = _unit(feat_t.numpy())
        with ad.Tape() as tape:
            feat_i, trace = encode_image(bundle, pixels, head_mode="single", grad_mode="attn")
            s = ad.dot(ad.l2_normalize(feat_i), ad.constant(unit_t))
        tape.backward(s)
        layer_ids = _resolve_layers(layers, cfg.vision_layers, 1)
        select = np.arange(1, cfg.n_patches + 1)
        heat = _grad_decomposition_heat(trace, layer_ids, lam_mode, 0, select, signed)
        score = float(np.dot(_unit(encode_image(bundle, pixels)[0].numpy()), unit_t))

    elif method == "raw-attention":
        _, trace = encode_image(bundle, pixels)
        heat = _mean_head_attention(trace.layers[-1])[0, 1:]
        score = _canonical_score(bundle, pixels, encoded)

    elif method == "rollout":
        _, trace = encode_image(bundle, pixels)
        heat = _rollout_matrix(trace)[0, 1:]
        score = _canonical_score(bundle, pixels, encoded)

    else:  # grad-cam
        feat_t, _ = encode_text(bundle, encoded)
        unit_t = _unit(feat_t.numpy())
        with ad.Tape() as tape:
            feat_i, trace = encode_image(bundle, pixels, grad_mode="all")
            s = ad.dot(ad.l2_normalize(feat_i), ad.constant(unit_t))
        tape.backward(s)
        last = trace.layers[-1]
        grads = last.x_in.grad
        if grads is None:
            raise RuntimeError("explanation pass did not produce activation gradients")
        acts = last.x_in.numpy()[1:]
        w = grads[1:].mean(axis=0)
        heat = np.maximum(acts @ w, 0.0)
        score = float(np.dot(_unit(feat_i.numpy()), unit_t))

    return _finish_map(heat, trace, out_size, upsample, method, score)


def _canonical_score(bundle, pixels, encoded):
    feat_i, _ = encode_image(bundle, pixels)
    feat_t, _ = encode_text(bundle, encoded)
    return float(np.dot(_unit(feat_i.numpy()), _unit(feat_t.numpy())))


def token_to_word_scores(token_scores, token_word, words):
    """Sum sub-word token scores into word scores, then max-normalize."""
    out = np.zeros(len(words))
    for score, w in zip(token_scores, token_word):
        if w is not None:
            out[w] += score
    peak = out.max() if len(out) else 0.0
    if peak > 0:
        out = out / peak
    return out


def explain_text(
    bundle,
    pixels,
    encoded,
    method="grad-eclip",
    lam_mode="loosened",
    layers=None,
    signed=False,
):
    """Per-word saliency for one image-text pair.

    Token positions between the start and end markers get token scores which
    are summed per source word and max-normalized.
    """
    if method == "grad-cam":
        raise ValueError("grad-cam is an image-side method; pick grad-eclip, raw-attention, or rollout")
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r} (expected one of {METHODS})")
    cfg = bundle.config
    if encoded.eot_index < 2:
        raise ValueError("text has no words to attribute")
    body = np.arange(1, encoded.eot_index)

    if method == "grad-eclip":
        feat_i, _ = encode_image(bundle, pixels)
        unit_i = _unit(feat_i.numpy())
        with ad.Tape() as tape:
            feat_t, trace = encode_text(bundle, encoded, head_mode="single", grad_mode="attn")
            s = ad.dot(ad.l2_normalize(feat_t), ad.constant(unit_i))
        tape.backward(s)
        layer_ids = _resolve_layers(layers, cfg.text_layers, 8)
        token_scores = _grad_decomposition_heat(
            trace, layer_ids, lam_mode, encoded.eot_index, body, signed
        )
    elif method == "raw-attention":
        _, trace = encode_text(bundle, encoded)
        token_scores = _mean_head_attention(trace.layers[-1])[encoded.eot_index, body]
    else:  # rollout
        _, trace = encode_text(bundle, encoded)
        token_scores = _rollout_matrix(trace)[encoded.eot_index, body]

    word_scores = token_to_word_scores(token_scores, [encoded.token_word[i] for i in body], encoded.words)
    score = _canonical_score(bundle, pixels, encoded)
    return TextSaliency(
        words=list(encoded.words),
        importances=[float(v) for v in word_scores],
        method=method,
        score=score,
    )
