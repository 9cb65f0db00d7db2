"""Dataset-level evaluation drivers.

Each driver walks a manifest, computes one protocol's numbers, and returns
a plain-dict summary; curve protocols also return per-step series that
``write_report`` saves as CSV files (step_fraction,value).  Reports are
deterministic byte-for-byte: anything run-dependent (timing, host) goes
into a separate run-manifest sidecar, never into the report itself.

Per-item randomness is derived as seed XOR item-index so any slice of a
dataset reproduces the same perturbations regardless of evaluation order.
"""

import csv
import io
import json
import os

import numpy as np

from .explain import METHODS, explain_image, explain_text
from .images import load_image, resize_center_crop, standardize
from .metrics import (
    PerturbationCurve,
    average_precision,
    energy_in_mask,
    perturbation_curve,
    point_game_hit,
    retrieval_recall,
    segmentation_metrics,
    text_perturbation_curve,
    topk_hit,
    word_importance_means,
    ols_fit,
)
from .model import encode_image, encode_text

DEFAULT_TEMPLATE = "a photo of a {}"


# ---------------------------------------------------------------------------
# Scorers
# ---------------------------------------------------------------------------


def image_scorer(bundle, encoded, head_mode="multi"):
    """Maps an H*W*3 image in [0, 1] (already model-sized) to its cosine
    match against a fixed encoded text."""
    cfg = bundle.config
    feat_t, _ = encode_text(bundle, encoded, head_mode=head_mode)
    unit_t = feat_t.numpy()
    unit_t = unit_t / np.linalg.norm(unit_t)

    def score(image01):
        pixels = standardize(np.asarray(image01, dtype=np.float64), cfg.mean, cfg.std)
        feat_i, _ = encode_image(bundle, pixels, head_mode=head_mode)
        v = feat_i.numpy()
        return float(v @ unit_t / np.linalg.norm(v))

    return score


def text_scorer(bundle, pixels, head_mode="multi"):
    """Maps a list of words to the cosine match between their sentence and
    a fixed standardized image."""
    feat_i, _ = encode_image(bundle, pixels, head_mode=head_mode)
    unit_i = feat_i.numpy()
    unit_i = unit_i / np.linalg.norm(unit_i)

    def score(words):
        encoded = bundle.tokenizer.encode(" ".join(words), allow_empty=True)
        feat_t, _ = encode_text(bundle, encoded, head_mode=head_mode)
        v = feat_t.numpy()
        return float(v @ unit_i / np.linalg.norm(v))

    return score


def _load_model_sized(bundle, manifest, record):
    img01 = load_image(manifest.resolve(record.image))
    return resize_center_crop(img01, bundle.config.image_size)


def _load_mask(manifest, record, size):
    mask01 = load_image(manifest.resolve(record.mask))
    mask01 = resize_center_crop(mask01, size)
    return mask01.mean(axis=2) > 0.5


def _item_seed(seed, index):
    return (seed ^ index) & 0x7FFFFFFF


# ---------------------------------------------------------------------------
# Protocol drivers
# ---------------------------------------------------------------------------


def evaluate_image_perturbation(
    bundle,
    manifest,
    method="grad-eclip",
    lam_mode="loosened",
    steps=100,
    step_fraction=0.005,
    seed=0,
    limit=None,
):
    """Deletion and insertion curves for image explanations, averaged over
    the manifest."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    records = manifest.records[:limit] if limit else manifest.records
    if not records:
        raise ValueError("manifest has no records")
    del_sum = np.zeros(steps + 1)
    ins_sum = np.zeros(steps + 1)
    fractions = None
    for i, rec in enumerate(records):
        img01 = _load_model_sized(bundle, manifest, rec)
        pixels = bundle.preprocess(img01)
        encoded = bundle.tokenizer.encode(rec.text)
        heat = explain_image(bundle, pixels, encoded, method=method, lam_mode=lam_mode)
        scorer = image_scorer(bundle, encoded)
        item_seed = _item_seed(seed, i)
        dcurve = perturbation_curve(
            img01, heat.values, scorer, mode="deletion",
            steps=steps, step_fraction=step_fraction, seed=item_seed,
        )
        icurve = perturbation_curve(
            img01, heat.values, scorer, mode="insertion",
            steps=steps, step_fraction=step_fraction, seed=item_seed,
        )
        del_sum += dcurve.values
        ins_sum += icurve.values
        fractions = dcurve.fractions
    n = len(records)
    deletion = PerturbationCurve(fractions=fractions, values=del_sum / n)
    insertion = PerturbationCurve(fractions=fractions, values=ins_sum / n)
    return {
        "protocol": "image-perturbation",
        "method": method,
        "items": n,
        "deletion_auc": deletion.auc,
        "insertion_auc": insertion.auc,
        "curves": {"deletion": deletion, "insertion": insertion},
    }


def evaluate_text_perturbation(
    bundle,
    manifest,
    method="grad-eclip",
    lam_mode="loosened",
    steps=5,
    limit=None,
):
    """Deletion and insertion curves for word-level explanations."""
    records = manifest.records[:limit] if limit else manifest.records
    if not records:
        raise ValueError("manifest has no records")
    del_sum = np.zeros(steps + 1)
    ins_sum = np.zeros(steps + 1)
    fractions = None
    used = 0
    for rec in records:
        img01 = _load_model_sized(bundle, manifest, rec)
        pixels = bundle.preprocess(img01)
        encoded = bundle.tokenizer.encode(rec.text)
        if not encoded.words:
            continue
        sal = explain_text(bundle, pixels, encoded, method=method, lam_mode=lam_mode)
        scorer = text_scorer(bundle, pixels)
        dcurve = text_perturbation_curve(
            sal.words, sal.importances, scorer, mode="deletion", steps=steps
        )
        icurve = text_perturbation_curve(
            sal.words, sal.importances, scorer, mode="insertion", steps=steps
        )
        del_sum += dcurve.values
        ins_sum += icurve.values
        fractions = dcurve.fractions
        used += 1
    if not used:
        raise ValueError("no records with usable captions")
    deletion = PerturbationCurve(fractions=fractions, values=del_sum / used)
    insertion = PerturbationCurve(fractions=fractions, values=ins_sum / used)
    return {
        "protocol": "text-perturbation",
        "method": method,
        "items": used,
        "deletion_auc": deletion.auc,
        "insertion_auc": insertion.auc,
        "curves": {"deletion": deletion, "insertion": insertion},
    }


def evaluate_localization(
    bundle,
    manifest,
    method="grad-eclip",
    lam_mode="loosened",
    limit=None,
):
    """Point-game, energy, and segmentation quality against masks."""
    records = manifest.records[:limit] if limit else manifest.records
    usable = [r for r in records if r.mask]
    if not usable:
        raise ValueError("manifest has no records with masks")
    hits = 0
    energy = 0.0
    acc = 0.0
    iou = 0.0
    ap = 0.0
    for rec in usable:
        img01 = _load_model_sized(bundle, manifest, rec)
        pixels = bundle.preprocess(img01)
        encoded = bundle.tokenizer.encode(rec.text)
        heat = explain_image(bundle, pixels, encoded, method=method, lam_mode=lam_mode)
        mask = _load_mask(manifest, rec, bundle.config.image_size)
        hits += point_game_hit(heat.values, mask)
        energy += energy_in_mask(heat.values, mask)
        seg = segmentation_metrics(heat.values, mask)
        acc += seg["pixel_accuracy"]
        iou += seg["mask_iou"]
        ap += average_precision(heat.values, mask)
    n = len(usable)
    return {
        "protocol": "localization",
        "method": method,
        "items": n,
        "point_game": hits / n,
        "energy_point_game": energy / n,
        "pixel_accuracy": acc / n,
        "mask_iou": iou / n,
        "average_precision": ap / n,
    }


def evaluate_zero_shot(bundle, manifest, template=DEFAULT_TEMPLATE, ks=(1,), limit=None):
    """Template-prompt classification accuracy over the manifest classes."""
    if not manifest.classes:
        raise ValueError("manifest declares no classes")
    records = manifest.records[:limit] if limit else manifest.records
    usable = [r for r in records if r.class_name]
    if not usable:
        raise ValueError("manifest has no records with class labels")
    class_feats = []
    for name in manifest.classes:
        encoded = bundle.tokenizer.encode(template.format(name))
        feat, _ = encode_text(bundle, encoded)
        v = feat.numpy()
        class_feats.append(v / np.linalg.norm(v))
    class_feats = np.stack(class_feats)
    correct = {k: 0 for k in ks}
    for rec in usable:
        img01 = _load_model_sized(bundle, manifest, rec)
        pixels = bundle.preprocess(img01)
        feat, _ = encode_image(bundle, pixels)
        v = feat.numpy()
        logits = class_feats @ (v / np.linalg.norm(v))
        target = manifest.class_index(rec.class_name)
        for k in ks:
            correct[k] += topk_hit(logits, target, k)
    n = len(usable)
    return {
        "protocol": "zero-shot",
        "template": template,
        "items": n,
        "accuracy": {k: correct[k] / n for k in ks},
    }


def evaluate_retrieval(bundle, manifest, ks=(1, 5, 10), limit=None):
    """Paired image/text recall@k in both directions."""
    records = manifest.records[:limit] if limit else manifest.records
    if not records:
        raise ValueError("manifest has no records")
    img_feats = []
    txt_feats = []
    for rec in records:
        img01 = _load_model_sized(bundle, manifest, rec)
        pixels = bundle.preprocess(img01)
        fi, _ = encode_image(bundle, pixels)
        ft, _ = encode_text(bundle, bundle.tokenizer.encode(rec.text))
        vi = fi.numpy()
        vt = ft.numpy()
        img_feats.append(vi / np.linalg.norm(vi))
        txt_feats.append(vt / np.linalg.norm(vt))
    sim = np.stack(img_feats) @ np.stack(txt_feats).T
    ks = tuple(k for k in ks if k <= len(records)) or (1,)
    recalls = retrieval_recall(sim, ks=ks)
    return {
        "protocol": "retrieval",
        "items": len(records),
        "image_to_text": recalls["image_to_text"],
        "text_to_image": recalls["text_to_image"],
    }


def evaluate_word_statistics(
    bundle,
    manifest,
    method="grad-eclip",
    lam_mode="loosened",
    limit=None,
):
    """Corpus-level word importances and their trend against word frequency."""
    records = manifest.records[:limit] if limit else manifest.records
    pairs = []
    for rec in records:
        img01 = _load_model_sized(bundle, manifest, rec)
        pixels = bundle.preprocess(img01)
        encoded = bundle.tokenizer.encode(rec.text)
        if not encoded.words:
            continue
        sal = explain_text(bundle, pixels, encoded, method=method, lam_mode=lam_mode)
        pairs.append((sal.words, sal.importances))
    if not pairs:
        raise ValueError("no records with usable captions")
    means = word_importance_means(pairs)
    counts = {}
    for words, _ in pairs:
        for w in words:
            counts[w] = counts.get(w, 0) + 1
    words_sorted = sorted(means)
    result = {
        "protocol": "word-statistics",
        "items": len(pairs),
        "word_means": {w: means[w] for w in words_sorted},
        "word_counts": {w: counts[w] for w in words_sorted},
    }
    if len(words_sorted) >= 2:
        freqs = np.array([counts[w] for w in words_sorted], dtype=np.float64)
        vals = np.array([means[w] for w in words_sorted], dtype=np.float64)
        if not np.all(freqs == freqs[0]):
            slope, intercept, r2 = ols_fit(np.log(freqs), vals)
            result["frequency_trend"] = {
                "slope": slope, "intercept": intercept, "r_squared": r2,
            }
    return result


# ---------------------------------------------------------------------------
# Report writing
# ---------------------------------------------------------------------------


def _curve_csv(curve):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step_fraction", "value"])
    for f, v in zip(curve.fractions, curve.values):
        writer.writerow([f"{f:.6f}", f"{v:.10f}"])
    return buf.getvalue()


def summary_json(summary):
    """Deterministic JSON for a driver summary (curves as AUC only)."""
    clean = {k: v for k, v in summary.items() if k != "curves"}
    return json.dumps(clean, indent=2, sort_keys=True) + "\n"


def write_report(summary, out_dir, run_info=None):
    """Write summary.json plus one CSV per curve; volatile run facts go to
    run-manifest.json so the report proper is byte-stable."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    path = os.path.join(out_dir, "summary.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write(summary_json(summary))
    paths["summary"] = path
    for name, curve in summary.get("curves", {}).items():
        cpath = os.path.join(out_dir, f"{name}.csv")
        with open(cpath, "w", encoding="utf-8", newline="") as f:
            f.write(_curve_csv(curve))
        paths[name] = cpath
    if run_info is not None:
        mpath = os.path.join(out_dir, "run-manifest.json")
        with open(mpath, "w", encoding="utf-8") as f:
            f.write(json.dumps(run_info, indent=2, sort_keys=True) + "\n")
        paths["run_manifest"] = mpath
    return paths
