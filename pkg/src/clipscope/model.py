"""Dual-encoder model: a vision transformer and a text transformer whose
pooled embeddings meet in a shared space.

The forward passes are built from the autodiff ops so any scalar derived
from the outputs can be differentiated.  Every layer leaves a trace of its
attention internals (queries, keys, values, per-head attention, pre-output
attention result) for the explanation code to consume.

Gradient capture modes:

* ``grad_mode=None`` — plain inference, nothing recorded.
* ``grad_mode="attn"`` — only each layer's attention output participates in
  differentiation, so a backward pass yields d(score)/d(attention output)
  without paying for gradients of earlier sublayers.
* ``grad_mode="all"`` — the embedded input tokens participate too, so every
  intermediate (including each layer's residual input) receives a gradient.

``attn_out_offsets`` adds a constant bump to chosen layers' attention
outputs *after* capture, which lets tests probe d(score)/d(attention
output) with finite differences at the exact captured point.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .container import ContainerError, load_container, save_container, tokenizer_paths
from .images import DEFAULT_MEAN, DEFAULT_STD, preprocess
from .tokenizer import Tokenizer

NEG_BIG = -1e30  # additive mask value; exp underflows to exactly 0.0


@dataclass
class ModelConfig:
    image_size: int = 224
    patch_size: int = 32
    vision_width: int = 768
    vision_layers: int = 12
    vision_heads: int = 12
    text_width: int = 512
    text_layers: int = 12
    text_heads: int = 8
    embed_dim: int = 512
    vocab_size: int = 49408
    context_length: int = 77
    mean: tuple = tuple(DEFAULT_MEAN)
    std: tuple = tuple(DEFAULT_STD)
    ln_eps: float = 1e-5

    @property
    def grid(self):
        return self.image_size // self.patch_size

    @property
    def n_patches(self):
        return self.grid * self.grid

    def to_dict(self):
        d = asdict(self)
        d["mean"] = list(self.mean)
        d["std"] = list(self.std)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        kwargs = {k: v for k, v in d.items() if k in known}
        if "mean" in kwargs:
            kwargs["mean"] = tuple(kwargs["mean"])
        if "std" in kwargs:
            kwargs["std"] = tuple(kwargs["std"])
        return cls(**kwargs)


def weight_spec(cfg):
    """Yield (name, shape) for every tensor the model expects."""
    p = cfg.patch_size
    vw, tw = cfg.vision_width, cfg.text_width
    yield "visual.patch_proj.weight", (vw, 3 * p * p)
    yield "visual.cls_token", (vw,)
    yield "visual.pos_embed", (cfg.n_patches + 1, vw)
    yield "visual.pre_norm.gain", (vw,)
    yield "visual.pre_norm.bias", (vw,)
    for i in range(cfg.vision_layers):
        pre = f"visual.layers.{i}"
        yield f"{pre}.norm1.gain", (vw,)
        yield f"{pre}.norm1.bias", (vw,)
        yield f"{pre}.attn.qkv.weight", (3 * vw, vw)
        yield f"{pre}.attn.qkv.bias", (3 * vw,)
        yield f"{pre}.attn.out.weight", (vw, vw)
        yield f"{pre}.attn.out.bias", (vw,)
        yield f"{pre}.norm2.gain", (vw,)
        yield f"{pre}.norm2.bias", (vw,)
        yield f"{pre}.mlp.fc1.weight", (4 * vw, vw)
        yield f"{pre}.mlp.fc1.bias", (4 * vw,)
        yield f"{pre}.mlp.fc2.weight", (vw, 4 * vw)
        yield f"{pre}.mlp.fc2.bias", (vw,)
    yield "visual.post_norm.gain", (vw,)
    yield "visual.post_norm.bias", (vw,)
    yield "visual.proj", (vw, cfg.embed_dim)
    yield "text.token_embed", (cfg.vocab_size, tw)
    yield "text.pos_embed", (cfg.context_length, tw)
    for i in range(cfg.text_layers):
        pre = f"text.layers.{i}"
        yield f"{pre}.norm1.gain", (tw,)
        yield f"{pre}.norm1.bias", (tw,)
        yield f"{pre}.attn.qkv.weight", (3 * tw, tw)
        yield f"{pre}.attn.qkv.bias", (3 * tw,)
        yield f"{pre}.attn.out.weight", (tw, tw)
        yield f"{pre}.attn.out.bias", (tw,)
        yield f"{pre}.norm2.gain", (tw,)
        yield f"{pre}.norm2.bias", (tw,)
        yield f"{pre}.mlp.fc1.weight", (4 * tw, tw)
        yield f"{pre}.mlp.fc1.bias", (4 * tw,)
        yield f"{pre}.mlp.fc2.weight", (tw, 4 * tw)
        yield f"{pre}.mlp.fc2.bias", (tw,)
    yield "text.final_norm.gain", (tw,)
    yield "text.final_norm.bias", (tw,)
    yield "text.proj", (tw, cfg.embed_dim)
    yield "logit_scale", ()


def init_random_weights(cfg, rng):
    """Random but sanely-scaled weights for toy models and tests."""
    weights = {}
    for name, shape in weight_spec(cfg):
        if name == "logit_scale":
            weights[name] = np.array(np.log(1.0 / 0.07))
        elif name.endswith((".gain",)):
            weights[name] = np.ones(shape)
        elif name.endswith((".bias", "cls_token")):
            weights[name] = np.zeros(shape)
        elif name.endswith("pos_embed"):
            weights[name] = rng.normal(scale=0.01, size=shape)
        elif name.endswith((".proj", "proj.weight")) or ".attn.out." in name:
            fan_in = shape[-1] if len(shape) > 1 else shape[0]
            weights[name] = rng.normal(scale=fan_in**-0.5, size=shape)
        else:
            fan_in = shape[-1] if len(shape) > 1 else shape[0]
            weights[name] = rng.normal(scale=fan_in**-0.5, size=shape)
    return weights


@dataclass
class LayerTrace:
    """Attention internals of one transformer block, as live tensors."""

    x_in: ad.Tensor  # residual-stream input to the block
    q: ad.Tensor  # [T, C] queries, before any head split
    k: ad.Tensor  # [T, C]
    v: ad.Tensor  # [T, C]
    attns: list  # per-head [T, T] attention tensors
    o: ad.Tensor  # [T, C] attention output before the output projection


@dataclass
class EncoderTrace:
    layers: list = field(default_factory=list)
    head_mode: str = "multi"
    grid_h: int = 0
    grid_w: int = 0
    eot_index: int = -1
    token_word: list = field(default_factory=list)
    words: list = field(default_factory=list)


class ModelBundle:
    """Config, weights (as autodiff tensors), and the paired tokenizer."""

    def __init__(self, config, weights, tokenizer, vocab_lines=None, merges_lines=None):
        self.config = config
        missing = []
        bad_shape = []
        self.weights = {}
        for name, shape in weight_spec(config):
            if name not in weights:
                missing.append(name)
                continue
            w = weights[name]
            t = w if isinstance(w, ad.Tensor) else ad.Tensor(np.asarray(w, dtype=np.float64))
            if t.shape != tuple(shape):
                bad_shape.append(f"{name}: expected {tuple(shape)}, got {t.shape}")
            self.weights[name] = t
        if missing:
            raise ContainerError(f"container is missing tensors: {', '.join(missing[:8])}")
        if bad_shape:
            raise ContainerError("tensor shape mismatch: " + "; ".join(bad_shape[:8]))
        self.tokenizer = tokenizer
        self.vocab_lines = vocab_lines
        self.merges_lines = merges_lines

    @classmethod
    def load(cls, path):
        config, tensors, _ = load_container(path)
        if "model" not in config:
            raise ContainerError("container header has no model config")
        cfg = ModelConfig.from_dict(config["model"])
        vocab_path, merges_path = tokenizer_paths(path, config)
        tok = Tokenizer.from_files(vocab_path, merges_path, context_length=cfg.context_length)
        vocab_lines = vocab_path.read_text(encoding="utf-8").splitlines()
        merges_lines = merges_path.read_text(encoding="utf-8").splitlines()
        return cls(cfg, tensors, tok, vocab_lines, merges_lines)

    def save(self, path):
        if self.vocab_lines is None or self.merges_lines is None:
            raise ContainerError("bundle has no tokenizer text to save alongside")
        tensors = {name: t.data for name, t in self.weights.items()}
        return save_container(
            path,
            {"model": self.config.to_dict()},
            tensors,
            tokenizer_files={"vocab": self.vocab_lines, "merges": self.merges_lines},
        )

    def preprocess(self, img01):
        """[0,1] H*W*3 -> standardized 3*S*S for the vision encoder."""
        return preprocess(img01, self.config.image_size, self.config.mean, self.config.std)

    def parameters(self):
        return self.weights

    def set_trainable(self, flag=True):
        for t in self.weights.values():
            t.requires_grad = flag

    def zero_grads(self):
        for t in self.weights.values():
            t.grad = None


def _linear(x, w, b=None):
    out = ad.matmul(x, ad.transpose(w))
    if b is not None:
        out = ad.add(out, b)
    return out


def _attention(x_ln, w, prefix, width, heads, mask):
    qkv = _linear(x_ln, w[f"{prefix}.attn.qkv.weight"], w[f"{prefix}.attn.qkv.bias"])
    q = ad.slice_cols(qkv, 0, width)
    k = ad.slice_cols(qkv, width, 2 * width)
    v = ad.slice_cols(qkv, 2 * width, 3 * width)
    dh = width // heads
    outs = []
    attns = []
    for h in range(heads):
        qh = ad.slice_cols(q, h * dh, (h + 1) * dh) if heads > 1 else q
        kh = ad.slice_cols(k, h * dh, (h + 1) * dh) if heads > 1 else k
        vh = ad.slice_cols(v, h * dh, (h + 1) * dh) if heads > 1 else v
        scores = ad.mul(ad.matmul(qh, ad.transpose(kh)), dh**-0.5)
        if mask is not None:
            scores = ad.add(scores, mask)
        a = ad.softmax(scores)
        attns.append(a)
        outs.append(ad.matmul(a, vh))
    o = outs[0] if heads == 1 else ad.concat_cols(outs)
    return q, k, v, attns, o


def _block(x, w, prefix, width, heads, eps, mask, grad_mode, offset, identity_attn=False):
    x_in = x
    y = ad.layer_norm(x, w[f"{prefix}.norm1.gain"], w[f"{prefix}.norm1.bias"], eps)
    if identity_attn:
        qkv = _linear(y, w[f"{prefix}.attn.qkv.weight"], w[f"{prefix}.attn.qkv.bias"])
        q = ad.slice_cols(qkv, 0, width)
        k = ad.slice_cols(qkv, width, 2 * width)
        v = ad.slice_cols(qkv, 2 * width, 3 * width)
        attns = []
        o = v
    else:
        q, k, v, attns, o = _attention(y, w, prefix, width, heads, mask)
    if grad_mode == "attn":
        o.requires_grad = True
    o_used = o if offset is None else ad.add(o, ad.constant(offset))
    x = ad.add(x_in, _linear(o_used, w[f"{prefix}.attn.out.weight"], w[f"{prefix}.attn.out.bias"]))
    z = ad.layer_norm(x, w[f"{prefix}.norm2.gain"], w[f"{prefix}.norm2.bias"], eps)
    h = ad.quick_gelu(_linear(z, w[f"{prefix}.mlp.fc1.weight"], w[f"{prefix}.mlp.fc1.bias"]))
    x = ad.add(x, _linear(h, w[f"{prefix}.mlp.fc2.weight"], w[f"{prefix}.mlp.fc2.bias"]))
    return x, LayerTrace(x_in=x_in, q=q, k=k, v=v, attns=attns, o=o)


def extract_patches(pixels, patch_size):
    """3*S*S standardized pixels -> [n_patches, 3*p*p] rows in raster order."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 3 or pixels.shape[0] != 3:
        raise ValueError(f"expected channel-first 3*S*S pixels, got shape {pixels.shape}")
    _, s1, s2 = pixels.shape
    p = patch_size
    if s1 % p or s2 % p:
        raise ValueError(f"image size {s1}x{s2} is not divisible by patch size {p}")
    gh, gw = s1 // p, s2 // p
    out = pixels.reshape(3, gh, p, gw, p).transpose(1, 3, 0, 2, 4).reshape(gh * gw, 3 * p * p)
    return np.ascontiguousarray(out)


def encode_image(
    bundle,
    pixels,
    head_mode="multi",
    grad_mode=None,
    attn_out_offsets=None,
    dense_last=False,
):
    """Run the vision encoder.

    Returns (features, trace): a 1-D embedding for the pooled path, or a
    [n_patches, embed_dim] map when ``dense_last`` is set (the final block's
    attention is bypassed so each token keeps its own spatial identity).
    """
    cfg = bundle.config
    w = bundle.weights
    heads = 1 if head_mode == "single" else cfg.vision_heads
    offsets = attn_out_offsets or {}

    patches = extract_patches(pixels, cfg.patch_size)
    x = ad.matmul(ad.constant(patches), ad.transpose(w["visual.patch_proj.weight"]))
    cls_row = ad.reshape(w["visual.cls_token"], (1, cfg.vision_width))
    x = ad.concat_rows([cls_row, x])
    x = ad.add(x, w["visual.pos_embed"])
    if grad_mode == "all":
        x.requires_grad = True
    x = ad.layer_norm(x, w["visual.pre_norm.gain"], w["visual.pre_norm.bias"], cfg.ln_eps)

    trace = EncoderTrace(head_mode=head_mode, grid_h=cfg.grid, grid_w=cfg.grid)
    for i in range(cfg.vision_layers):
        identity = dense_last and i == cfg.vision_layers - 1
        x, lt = _block(
            x,
            w,
            f"visual.layers.{i}",
            cfg.vision_width,
            heads,
            cfg.ln_eps,
            mask=None,
            grad_mode=grad_mode,
            offset=offsets.get(i),
            identity_attn=identity,
        )
        trace.layers.append(lt)

    x = ad.layer_norm(x, w["visual.post_norm.gain"], w["visual.post_norm.bias"], cfg.ln_eps)
    if dense_last:
        tokens = ad.slice_rows(x, 1, cfg.n_patches + 1)
        feats = ad.matmul(tokens, w["visual.proj"])
        return feats, trace
    cls_out = ad.slice_rows(x, 0, 1)
    feat = ad.reshape(ad.matmul(cls_out, w["visual.proj"]), (cfg.embed_dim,))
    return feat, trace


def causal_mask(n):
    mask = np.zeros((n, n))
    mask[np.triu_indices(n, k=1)] = NEG_BIG
    return mask


def encode_text(bundle, encoded, head_mode="multi", grad_mode=None, attn_out_offsets=None):
    """Run the text encoder on an EncodedText; pools at the end marker.

    Positions after the end marker are dropped entirely — with the causal
    mask they cannot influence the pooled embedding.
    """
    cfg = bundle.config
    w = bundle.weights
    heads = 1 if head_mode == "single" else cfg.text_heads
    offsets = attn_out_offsets or {}

    length = encoded.eot_index + 1
    ids = encoded.ids[:length]
    x = ad.embedding(w["text.token_embed"], ids)
    x = ad.add(x, ad.slice_rows(w["text.pos_embed"], 0, length))
    if grad_mode == "all":
        x.requires_grad = True
    mask = ad.constant(causal_mask(length))

    trace = EncoderTrace(
        head_mode=head_mode,
        eot_index=encoded.eot_index,
        token_word=list(encoded.token_word),
        words=list(encoded.words),
    )
    for i in range(cfg.text_layers):
        x, lt = _block(
            x,
            w,
            f"text.layers.{i}",
            cfg.text_width,
            heads,
            cfg.ln_eps,
            mask=mask,
            grad_mode=grad_mode,
            offset=offsets.get(i),
        )
        trace.layers.append(lt)

    x = ad.layer_norm(x, w["text.final_norm.gain"], w["text.final_norm.bias"], cfg.ln_eps)
    eot_row = ad.slice_rows(x, length - 1, length)
    feat = ad.reshape(ad.matmul(eot_row, w["text.proj"]), (cfg.embed_dim,))
    return feat, trace


def matching_score(bundle, pixels, encoded, head_mode="multi"):
    """Cosine similarity between the pooled embeddings (no gradients)."""
    feat_i, _ = encode_image(bundle, pixels, head_mode=head_mode)
    feat_t, _ = encode_text(bundle, encoded, head_mode=head_mode)
    a = feat_i.numpy()
    b = feat_t.numpy()
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
