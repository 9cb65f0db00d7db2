"""Fine-tuning with explanation-guided region-phrase alignment.

Each step combines two objectives:

* a symmetric contrastive loss over the batch's pooled image and text
  embeddings, temperature-scaled by the model's own trainable scale; and
* a focal alignment loss between region embeddings and phrase embeddings,
  where a region embedding is the heat-weighted sum of the image's dense
  patch features under the explanation heat for that phrase.

Heats are computed against the current weights but treated as constants:
gradients flow through the dense features and the phrase encoder, never
through the explanation itself.  A step whose loss is not finite is
rejected outright — no parameter moves.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .explain import explain_image
from .images import load_image, resize_center_crop
from .model import encode_image, encode_text
from .phrases import DEFAULT_N_MAX, extract_phrases


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay.

    ``params`` maps names to tensors.  A parameter with no gradient is
    skipped entirely on that step (no decay either).
    """

    def __init__(self, params, lr=1e-5, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.1):
        if isinstance(params, dict):
            self.params = dict(params)
        else:
            self.params = {f"param{i}": p for i, p in enumerate(params)}
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= self.lr * (update + self.weight_decay * p.data)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def contrastive_loss(image_units, text_units, logit_scale):
    """Symmetric batch contrastive loss over unit embeddings.

    ``image_units`` and ``text_units`` are equal-length lists of 1-D unit
    tensors whose same-index entries are the matching pairs;
    ``logit_scale`` is a scalar tensor whose exponential multiplies the
    cosine logits.  Returns the mean of the row-wise and column-wise
    cross-entropies on the diagonal.
    """
    if len(image_units) != len(text_units) or not image_units:
        raise ValueError("need equal, nonzero numbers of image and text embeddings")
    n = len(image_units)
    imgs = ad.stack_rows(image_units)
    txts = ad.stack_rows(text_units)
    sims = ad.matmul(imgs, ad.transpose(txts))
    logits = ad.mul(sims, ad.texp(logit_scale))
    row_diag = ad.take_diag(ad.log_softmax(logits))
    col_diag = ad.take_diag(ad.log_softmax(ad.transpose(logits)))
    total = ad.add(ad.tsum(row_diag), ad.tsum(col_diag))
    return ad.mul(ad.neg(total), 1.0 / (2 * n))


def focal_region_loss(sim, eps=1e-4, neg_mask=None):
    """Focal alignment over a square region-phrase similarity matrix.

    Diagonal entries are matched pairs; off-diagonal entries are negatives
    weighted by ``neg_mask`` (default: every off-diagonal pair).  Passing a
    mask that zeroes pairs with identical phrase text avoids pushing a
    region away from another copy of its own phrase.  Similarities are
    clamped to (eps, 1-eps) so both logarithm branches stay finite; the
    focal weights down-weigh easy pairs.  Normalized by the number of
    regions.
    """
    if sim.data.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f"expected a square similarity matrix, got {sim.shape}")
    n = sim.shape[0]
    if neg_mask is None:
        neg_mask = 1.0 - np.eye(n)
    else:
        neg_mask = np.asarray(neg_mask, dtype=np.float64)
        if neg_mask.shape != (n, n):
            raise ValueError(f"neg_mask shape {neg_mask.shape} does not match {sim.shape}")
        if np.diag(neg_mask).any():
            raise ValueError("neg_mask must be zero on the diagonal")
    s = ad.clamp(sim, eps, 1.0 - eps)
    pos = ad.take_diag(s)
    one_minus_pos = ad.sub(1.0, pos)
    pos_term = ad.tsum(ad.mul(ad.mul(one_minus_pos, one_minus_pos), ad.tlog(pos)))
    neg_matrix = ad.mul(ad.mul(s, s), ad.tlog(ad.sub(1.0, s)))
    neg_term = ad.tsum(ad.mul(neg_matrix, ad.Tensor(neg_mask)))
    total = ad.neg(ad.add(pos_term, neg_term))
    return ad.mul(total, 1.0 / n)


def distinct_text_mask(texts):
    """Negative-pair mask that ignores pairs with identical phrase text."""
    n = len(texts)
    mask = np.ones((n, n))
    for i in range(n):
        for j in range(n):
            if i == j or texts[i] == texts[j]:
                mask[i, j] = 0.0
    return mask


# ---------------------------------------------------------------------------
# Batch preparation
# ---------------------------------------------------------------------------


@dataclass
class TrainItem:
    pixels: np.ndarray  # standardized 3*S*S encoder input
    encoded: object  # tokenized caption
    phrases: list = field(default_factory=list)
    phrase_encodings: list = field(default_factory=list)


def prepare_item(bundle, img01, text, n_max=DEFAULT_N_MAX):
    pixels = bundle.preprocess(resize_center_crop(img01, bundle.config.image_size))
    encoded = bundle.tokenizer.encode(text)
    phrases = extract_phrases(encoded.words, n_max=n_max)
    phrase_encodings = [bundle.tokenizer.encode(p.text) for p in phrases]
    return TrainItem(pixels=pixels, encoded=encoded, phrases=phrases,
                     phrase_encodings=phrase_encodings)


def prepare_items(bundle, manifest, indices, n_max=DEFAULT_N_MAX):
    items = []
    for i in indices:
        rec = manifest.records[i]
        img01 = load_image(manifest.resolve(rec.image))
        items.append(prepare_item(bundle, img01, rec.text, n_max=n_max))
    return items


# ---------------------------------------------------------------------------
# Training step
# ---------------------------------------------------------------------------


def _unit(feat):
    return ad.l2_normalize(feat)


def _phrase_heats(bundle, items, lam_mode):
    """Raw patch-level heats for every phrase, current weights, detached."""
    bundle.set_trainable(False)
    heats = []
    for item in items:
        rows = []
        for enc in item.phrase_encodings:
            hm = explain_image(bundle, item.pixels, enc, method="grad-eclip",
                               lam_mode=lam_mode)
            rows.append(hm.patch_values.ravel().copy())
        heats.append(rows)
    return heats


def finetune_step(bundle, optimizer, items, region_weight=1.0,
                  lam_mode="loosened"):
    """One optimization step over a prepared batch.

    Returns {"loss", "contrastive", "region", "rejected"}.  When the
    combined loss is not finite the step is rejected: gradients are
    cleared and no parameter changes.
    """
    if not items:
        raise ValueError("empty batch")
    heats = _phrase_heats(bundle, items, lam_mode) if region_weight else None

    bundle.set_trainable(True)
    logit_scale = bundle.weights["logit_scale"]
    region_val = 0.0
    with ad.Tape() as tape:
        image_units = []
        text_units = []
        for item in items:
            feat_i, _ = encode_image(bundle, item.pixels)
            feat_t, _ = encode_text(bundle, item.encoded)
            image_units.append(_unit(feat_i))
            text_units.append(_unit(feat_t))
        loss = contrastive_loss(image_units, text_units, logit_scale)
        contrastive_val = loss.item()

        if region_weight:
            regions = []
            phrase_units = []
            phrase_texts = []
            for item, item_heats in zip(items, heats):
                if not item_heats:
                    continue
                dense, _ = encode_image(bundle, item.pixels, dense_last=True)
                for heat, phrase, enc in zip(item_heats, item.phrases,
                                             item.phrase_encodings):
                    row = ad.Tensor(heat.reshape(1, -1))
                    pooled = ad.take_row(ad.matmul(row, dense), 0)
                    regions.append(_unit(pooled))
                    feat_p, _ = encode_text(bundle, enc)
                    phrase_units.append(_unit(feat_p))
                    phrase_texts.append(phrase.text)
            if regions:
                sim = ad.matmul(ad.stack_rows(regions),
                                ad.transpose(ad.stack_rows(phrase_units)))
                region_loss = focal_region_loss(
                    sim, neg_mask=distinct_text_mask(phrase_texts))
                region_val = region_loss.item()
                loss = ad.add(loss, ad.mul(region_loss, float(region_weight)))

        loss_val = loss.item()
        if not math.isfinite(loss_val):
            bundle.zero_grads()
            return {"loss": loss_val, "contrastive": contrastive_val,
                    "region": region_val, "rejected": True}
        tape.backward(loss)

    optimizer.step()
    bundle.zero_grads()
    return {"loss": loss_val, "contrastive": contrastive_val,
            "region": region_val, "rejected": False}


def train(bundle, manifest, steps=200, batch_size=8, lr=1e-5,
          weight_decay=0.1, seed=0, region_weight=1.0, lam_mode="loosened",
          limit=None, progress=None):
    """Seeded training loop over a manifest; returns per-step stats."""
    n = len(manifest.records) if limit is None else min(limit, len(manifest.records))
    if n == 0:
        raise ValueError("manifest has no records")
    batch_size = min(batch_size, n)
    rng = np.random.default_rng(seed)
    optimizer = AdamW(bundle.parameters(), lr=lr, weight_decay=weight_decay)
    cache = {}
    history = []
    for step in range(steps):
        idx = rng.choice(n, size=batch_size, replace=False)
        items = []
        for i in idx:
            i = int(i)
            if i not in cache:
                cache[i] = prepare_items(bundle, manifest, [i])[0]
            items.append(cache[i])
        stats = finetune_step(bundle, optimizer, items,
                              region_weight=region_weight, lam_mode=lam_mode)
        stats["step"] = step
        history.append(stats)
        if progress:
            progress(stats)
    return history


# ---------------------------------------------------------------------------
# Region classification (evaluation)
# ---------------------------------------------------------------------------


def patch_indices_for_box(config, box):
    """Flat patch indices whose centers fall inside a pixel box
    (x0, y0, x1, y1), end-exclusive; nearest patch if none do."""
    g = config.grid
    p = config.patch_size
    x0, y0, x1, y1 = box
    chosen = []
    for r in range(g):
        cy = (r + 0.5) * p
        for c in range(g):
            cx = (c + 0.5) * p
            if x0 <= cx < x1 and y0 <= cy < y1:
                chosen.append(r * g + c)
    if chosen:
        return chosen
    bx, by = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    best = min(
        range(g * g),
        key=lambda i: ((i % g + 0.5) * p - bx) ** 2 + ((i // g + 0.5) * p - by) ** 2,
    )
    return [best]


def patch_indices_for_mask(config, mask):
    """Flat patch indices covered (majority) by a pixel mask; the best
    single patch if none reach majority."""
    g = config.grid
    p = config.patch_size
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != (config.image_size, config.image_size):
        raise ValueError(f"mask shape {mask.shape} does not match image size")
    means = mask.reshape(g, p, g, p).mean(axis=(1, 3)).ravel()
    chosen = np.nonzero(means > 0.5)[0]
    if len(chosen):
        return chosen.tolist()
    return [int(np.argmax(means))]


def class_text_features(bundle, texts):
    """Unit text embeddings as a [K, D] array, inference only."""
    feats = []
    for t in texts:
        feat, _ = encode_text(bundle, bundle.tokenizer.encode(t))
        v = feat.numpy()
        feats.append(v / np.linalg.norm(v))
    return np.stack(feats)


def region_classify(bundle, pixels, candidate_feats, box=None, mask=None):
    """Nearest candidate text for the dense features pooled over a region.

    Exactly one of ``box``/``mask`` selects the region. Returns
    (index, similarities)."""
    if (box is None) == (mask is None):
        raise ValueError("pass exactly one of box or mask")
    if box is not None:
        idx = patch_indices_for_box(bundle.config, box)
    else:
        idx = patch_indices_for_mask(bundle.config, mask)
    dense, _ = encode_image(bundle, pixels, dense_last=True)
    pooled = dense.numpy()[idx].sum(axis=0)
    norm = np.linalg.norm(pooled)
    if norm > 0:
        pooled = pooled / norm
    sims = np.asarray(candidate_feats) @ pooled
    return int(np.argmax(sims)), sims
