"""Faithfulness and localization metrics.

Perturbation protocol: pixels are ranked by heat, descending, with raster
order breaking ties.  Deletion replaces the top-ranked pixels of the
original image with seeded per-channel uniform noise; insertion reveals
them on top of a per-channel-mean baseline.  Step 0 is always the
unperturbed starting point, each subsequent step perturbs a fixed fraction
more of the pixels, and the curve's area is trapezoidal, normalized by the
covered span.

Localization: the point game checks the heat's argmax (first raster
position on ties) against a mask; its energy variant measures the fraction
of total heat mass inside the mask; segmentation metrics binarize at the
map mean by default; average precision is threshold-free.
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class PerturbationCurve:
    fractions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.fractions = np.asarray(self.fractions, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.fractions.shape != self.values.shape or self.fractions.ndim != 1:
            raise ValueError("fractions and values must be equal-length 1-D arrays")
        if len(self.fractions) < 2:
            raise ValueError("a curve needs at least two samples")
        if not (np.diff(self.fractions) > 0).all():
            raise ValueError("fractions must be strictly increasing")

    @property
    def auc(self):
        return curve_auc(self.fractions, self.values)


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def curve_auc(fractions, values):
    """Trapezoidal area under the curve, normalized to the fraction span."""
    fractions = np.asarray(fractions, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    span = fractions[-1] - fractions[0]
    if span <= 0:
        raise ValueError("fraction span must be positive")
    return float(_trapezoid(values, fractions) / span)


def rank_pixels(heat):
    """Flat pixel indices ordered by heat descending, raster order on ties."""
    flat = np.asarray(heat, dtype=np.float64).ravel()
    return np.argsort(-flat, kind="stable")


def perturbation_curve(
    image01,
    heat,
    scorer,
    mode="deletion",
    steps=100,
    step_fraction=0.005,
    seed=0,
):
    """Score a progressively perturbed image; returns a PerturbationCurve.

    ``scorer`` maps an H*W*3 array in [0, 1] to a float.  The replacement
    noise for deletion is drawn once from a generator seeded with ``seed``,
    so curves are reproducible and independent of the step count.
    """
    image01 = np.asarray(image01, dtype=np.float64)
    heat = np.asarray(heat, dtype=np.float64)
    if image01.ndim != 3 or image01.shape[2] != 3:
        raise ValueError(f"expected an H*W*3 image, got shape {image01.shape}")
    if heat.shape != image01.shape[:2]:
        raise ValueError(f"heat map {heat.shape} does not match image {image01.shape[:2]}")
    if mode not in ("deletion", "insertion"):
        raise ValueError(f"unknown mode {mode!r}")

    n_pixels = heat.size
    order = rank_pixels(heat)
    flat_img = image01.reshape(n_pixels, 3)

    if mode == "deletion":
        start = flat_img.copy()
        replacement = np.random.default_rng(seed).random((n_pixels, 3))
    else:
        baseline = np.tile(flat_img.mean(axis=0), (n_pixels, 1))
        start = baseline
        replacement = flat_img

    fractions = np.arange(steps + 1) * step_fraction
    values = np.empty(steps + 1)
    work = start.copy()
    prev_k = 0
    for i in range(steps + 1):
        k = min(n_pixels, int(round(i * step_fraction * n_pixels)))
        if k > prev_k:
            idx = order[prev_k:k]
            work[idx] = replacement[idx]
            prev_k = k
        values[i] = scorer(work.reshape(image01.shape))
    return PerturbationCurve(fractions=fractions, values=values)


def text_perturbation_curve(words, importances, scorer, mode="deletion", steps=5):
    """Word-level deletion/insertion in importance-rank order.

    ``scorer`` maps a list of words (possibly empty) to a float.  Step i
    perturbs the round(i/steps * n) most important words.
    """
    words = list(words)
    importances = np.asarray(importances, dtype=np.float64)
    if len(words) != len(importances):
        raise ValueError("words and importances must have equal length")
    if not words:
        raise ValueError("cannot perturb an empty sentence")
    order = np.argsort(-importances, kind="stable")
    n = len(words)
    fractions = np.arange(steps + 1) / steps
    values = np.empty(steps + 1)
    for i in range(steps + 1):
        k = int(round(i / steps * n))
        chosen = set(order[:k].tolist())
        if mode == "deletion":
            kept = [w for j, w in enumerate(words) if j not in chosen]
        elif mode == "insertion":
            kept = [w for j, w in enumerate(words) if j in chosen]
        else:
            raise ValueError(f"unknown mode {mode!r}")
        values[i] = scorer(kept)
    return PerturbationCurve(fractions=fractions, values=values)


# ---------------------------------------------------------------------------
# Localization
# ---------------------------------------------------------------------------


def point_game_hit(heat, mask):
    """True when the heat's argmax (first raster position on ties) is in
    the mask."""
    heat = np.asarray(heat, dtype=np.float64)
    mask = np.asarray(mask)
    if heat.shape != mask.shape:
        raise ValueError(f"heat {heat.shape} and mask {mask.shape} shapes differ")
    idx = int(np.argmax(heat))
    return bool(mask.ravel()[idx])


def energy_in_mask(heat, mask):
    """Fraction of total heat mass that falls inside the mask."""
    heat = np.asarray(heat, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if heat.shape != mask.shape:
        raise ValueError(f"heat {heat.shape} and mask {mask.shape} shapes differ")
    total = heat.sum()
    if total <= 0:
        return 0.0
    return float(heat[mask].sum() / total)


def segmentation_metrics(heat, mask, threshold=None):
    """Pixel accuracy and intersection-over-union of the binarized map.

    The default threshold is the map's mean value.
    """
    heat = np.asarray(heat, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if heat.shape != mask.shape:
        raise ValueError(f"heat {heat.shape} and mask {mask.shape} shapes differ")
    if threshold is None:
        threshold = heat.mean()
    pred = heat > threshold
    tp = np.count_nonzero(pred & mask)
    tn = np.count_nonzero(~pred & ~mask)
    fp = np.count_nonzero(pred & ~mask)
    fn = np.count_nonzero(~pred & mask)
    acc = (tp + tn) / heat.size
    union = tp + fp + fn
    iou = tp / union if union else 1.0
    return {"pixel_accuracy": float(acc), "mask_iou": float(iou)}


def average_precision(heat, mask):
    """Threshold-free AP: rank pixels by heat, average precision at each
    positive."""
    heat = np.asarray(heat, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if heat.shape != mask.shape:
        raise ValueError(f"heat {heat.shape} and mask {mask.shape} shapes differ")
    n_pos = int(mask.sum())
    if n_pos == 0:
        return 0.0
    order = rank_pixels(heat)
    hits = mask.ravel()[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    return float(precision[hits].sum() / n_pos)


# ---------------------------------------------------------------------------
# Classification and retrieval
# ---------------------------------------------------------------------------


def topk_hit(logits, target, k):
    """True when target is among the k highest logits (stable order)."""
    logits = np.asarray(logits, dtype=np.float64)
    order = np.argsort(-logits, kind="stable")
    return int(target) in set(order[:k].tolist())


def retrieval_recall(sim, ks=(1, 5, 10)):
    """Recall@k in both directions for a paired similarity matrix.

    ``sim[i, j]`` scores image i against text j; pair (i, i) is the match.
    Returns {"image_to_text": {k: r}, "text_to_image": {k: r}}.
    """
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f"expected a square similarity matrix, got {sim.shape}")
    n = sim.shape[0]
    out = {"image_to_text": {}, "text_to_image": {}}
    for k in ks:
        hits_i2t = sum(topk_hit(sim[i], i, k) for i in range(n))
        hits_t2i = sum(topk_hit(sim[:, j], j, k) for j in range(n))
        out["image_to_text"][k] = hits_i2t / n
        out["text_to_image"][k] = hits_t2i / n
    return out


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def ols_fit(x, y):
    """Ordinary least squares y = slope*x + intercept; returns slope,
    intercept, and r-squared."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("ols_fit needs two equal-length 1-D samples (n >= 2)")
    mx, my = x.mean(), y.mean()
    sxx = ((x - mx) ** 2).sum()
    if sxx == 0:
        raise ValueError("x is constant; slope is undefined")
    sxy = ((x - mx) * (y - my)).sum()
    slope = sxy / sxx
    intercept = my - slope * mx
    syy = ((y - my) ** 2).sum()
    r2 = 0.0 if syy == 0 else float((sxy * sxy) / (sxx * syy))
    return float(slope), float(intercept), r2


def word_importance_means(sentences_importances):
    """Corpus-level mean importance per word.

    Takes an iterable of (words, importances) pairs; returns a dict
    word -> mean of its per-sentence (already normalized) importances.
    """
    sums = {}
    counts = {}
    for words, importances in sentences_importances:
        for w, v in zip(words, importances):
            sums[w] = sums.get(w, 0.0) + float(v)
            counts[w] = counts.get(w, 0) + 1
    return {w: sums[w] / counts[w] for w in sums}
