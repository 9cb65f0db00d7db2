"""Desk-scale fixtures: a tiny trained-from-scratch tokenizer, a small
random dual encoder, and a synthetic colored-shapes dataset with captions,
masks, boxes, and class labels.

Everything here is seeded and deterministic: item i of a run seeded with s
uses its own generator seeded with s XOR i.
"""

from collections import Counter
from pathlib import Path

import numpy as np

from .manifests import ManifestRecord, write_manifest
from .model import ModelBundle, ModelConfig, init_random_weights
from .tokenizer import Tokenizer, build_vocab_lines
from .images import write_ppm

COLORS = {
    "red": (0.90, 0.12, 0.12),
    "green": (0.10, 0.80, 0.15),
    "blue": (0.15, 0.25, 0.90),
    "yellow": (0.92, 0.85, 0.10),
}
SHAPES = ("circle", "square", "triangle", "cross")

# Sentences the toy merge rules are learned from; includes the dataset
# caption vocabulary plus assorted filler so merges are not degenerate.
_CORPUS = [
    "a photo of a red circle",
    "a photo of a green square",
    "a photo of a blue triangle",
    "a photo of a yellow cross",
    "a photo of a red square",
    "a photo of a green circle",
    "a photo of a blue cross",
    "a photo of a yellow triangle",
    "a dog in a black car waiting for traffic lights",
    "the small shape on a plain background",
    "one bright shape in the picture",
]


def learn_merges(corpus, n_merges=160):
    """Greedy pair-frequency merge learning over whitespace words.

    Ties break lexicographically so the result is fully deterministic.
    """
    word_freq = Counter()
    for sentence in corpus:
        for word in sentence.lower().split():
            word_freq[word] += 1
    symbols = {
        word: tuple(list(word[:-1]) + [word[-1] + "</w>"]) for word in word_freq
    }
    merges = []
    for _ in range(n_merges):
        pair_freq = Counter()
        for word, syms in symbols.items():
            f = word_freq[word]
            for i in range(len(syms) - 1):
                pair_freq[(syms[i], syms[i + 1])] += f
        if not pair_freq:
            break
        best = max(pair_freq.items(), key=lambda kv: (kv[1], kv[0]))[0]
        merges.append(best)
        first, second = best
        merged = first + second
        for word, syms in list(symbols.items()):
            out = []
            i = 0
            while i < len(syms):
                if i < len(syms) - 1 and syms[i] == first and syms[i + 1] == second:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            symbols[word] = tuple(out)
    return merges


def toy_tokenizer(context_length=32):
    merges = learn_merges(_CORPUS)
    merges_lines = [" ".join(pair) for pair in merges]
    vocab_lines = build_vocab_lines(merges)
    tok = Tokenizer(vocab_lines, merges_lines, context_length=context_length)
    return tok, vocab_lines, merges_lines


def toy_config(vocab_size, image_size=32, context_length=32):
    return ModelConfig(
        image_size=image_size,
        patch_size=8,
        vision_width=32,
        vision_layers=2,
        vision_heads=4,
        text_width=32,
        text_layers=2,
        text_heads=4,
        embed_dim=32,
        vocab_size=vocab_size,
        context_length=context_length,
    )


def build_toy_bundle(seed=0, image_size=32, vision_layers=None, text_layers=None):
    tok, vocab_lines, merges_lines = toy_tokenizer()
    cfg = toy_config(tok.vocab_size, image_size=image_size)
    if vision_layers is not None:
        cfg.vision_layers = vision_layers
    if text_layers is not None:
        cfg.text_layers = text_layers
    weights = init_random_weights(cfg, np.random.default_rng(seed))
    return ModelBundle(cfg, weights, tok, vocab_lines, merges_lines)


def _shape_mask(shape, size, cx, cy, r):
    yy, xx = np.mgrid[0:size, 0:size]
    if shape == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if shape == "square":
        return (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    if shape == "triangle":
        inside_rows = (yy >= cy - r) & (yy <= cy + r)
        halfwidth = (yy - (cy - r)) * 0.5
        return inside_rows & (np.abs(xx - cx) <= halfwidth)
    if shape == "cross":
        arm = max(1, r // 3)
        vert = (np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= r)
        horiz = (np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= r)
        return vert | horiz
    raise ValueError(f"unknown shape {shape!r}")


def render_item(rng, size):
    """One synthetic image: noisy gray background, one colored shape."""
    color_name = list(COLORS)[rng.integers(len(COLORS))]
    shape_name = SHAPES[rng.integers(len(SHAPES))]
    r = int(rng.integers(size // 6, size // 3))
    cx = int(rng.integers(r, size - r))
    cy = int(rng.integers(r, size - r))
    img = 0.45 + 0.10 * rng.random((size, size, 3))
    mask = _shape_mask(shape_name, size, cx, cy, r)
    color = np.asarray(COLORS[color_name])
    jitter = 1.0 + 0.05 * (rng.random(3) - 0.5)
    img[mask] = np.clip(color * jitter, 0.0, 1.0)
    ys, xs = np.nonzero(mask)
    box = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
    caption = f"a photo of a {color_name} {shape_name}"
    class_name = f"{color_name} {shape_name}"
    return img, mask, box, caption, class_name


def generate_dataset(out_dir, n_images, seed=0, size=32):
    """Write images, masks, and a manifest; returns the manifest path."""
    from PIL import Image

    out_dir = Path(out_dir)
    (out_dir / "imgs").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    classes = [f"{c} {s}" for c in COLORS for s in SHAPES]
    records = []
    for i in range(n_images):
        rng = np.random.default_rng(seed ^ i)
        img, mask, box, caption, class_name = render_item(rng, size)
        img_rel = f"imgs/{i:05d}.ppm"
        mask_rel = f"masks/{i:05d}.png"
        write_ppm(out_dir / img_rel, img)
        Image.fromarray((mask.astype(np.uint8)) * 255, "L").save(out_dir / mask_rel)
        records.append(
            ManifestRecord(image=img_rel, text=caption, mask=mask_rel, class_name=class_name, box=box)
        )
    return write_manifest(out_dir / "manifest.tsv", records, classes=classes)
