"""Command-line interface.

Exit codes: 0 success, 2 bad usage or arguments, 3 unreadable or invalid
inputs (model container, images, manifests), 4 runtime failures (training
collapse, missing optional dependency).

Every command that writes a report also writes a ``run-manifest.json``
sidecar carrying the volatile facts of the run (timing, host, library
versions); the reports themselves are byte-stable for identical inputs
and seeds.
"""

import json
import os
import platform
import sys
import time

import click
import numpy as np

from . import __version__
from ._kernels import BACKEND as KERNEL_BACKEND
from .container import ContainerError
from .evaluate import (
    DEFAULT_TEMPLATE,
    evaluate_image_perturbation,
    evaluate_localization,
    evaluate_retrieval,
    evaluate_text_perturbation,
    evaluate_word_statistics,
    evaluate_zero_shot,
    write_report,
)
from .explain import LAM_MODES, METHODS, explain_image, explain_text
from .images import ImageError, load_image, resize_center_crop, save_png
from .manifests import load_manifest
from .model import ModelBundle
from .render import destandardize, overlay

EXIT_INPUT = 3
EXIT_RUNTIME = 4

EVAL_PROTOCOLS = (
    "image-perturbation",
    "text-perturbation",
    "localization",
    "zero-shot",
    "retrieval",
    "word-stats",
)


def _fail(message, code):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_bundle(model_path):
    path = model_path or os.environ.get("GECLIP_MODEL")
    if not path:
        raise click.UsageError("no model container: pass --model or set GECLIP_MODEL")
    try:
        return ModelBundle.load(path)
    except FileNotFoundError:
        _fail(f"model container not found: {path}", EXIT_INPUT)
    except (ContainerError, ValueError, OSError) as e:
        _fail(f"cannot load model container {path}: {e}", EXIT_INPUT)


def _load_manifest(path):
    try:
        return load_manifest(path)
    except FileNotFoundError:
        _fail(f"manifest not found: {path}", EXIT_INPUT)
    except ValueError as e:
        _fail(f"bad manifest: {e}", EXIT_INPUT)


def _parse_layers(text):
    if not text:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise click.UsageError(f"--layers must be a comma-separated list of integers, got {text!r}")


def _run_manifest(out_dir, seed, started, extra):
    info = {
        "seed": seed,
        "elapsed_seconds": round(time.time() - started, 3),
        "version": __version__,
        "kernel_backend": KERNEL_BACKEND,
        "python": platform.python_version(),
        "platform": platform.platform(),
    }
    info.update(extra)
    path = os.path.join(out_dir, "run-manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(info, indent=2, sort_keys=True) + "\n")
    return path


@click.group()
@click.version_option(version=__version__, prog_name="clipscope")
def main():
    """Visual and textual explanations for dual-encoder image-text models."""


# ---------------------------------------------------------------------------
# explain
# ---------------------------------------------------------------------------


@main.command()
@click.argument("image_path", type=click.Path())
@click.argument("text")
@click.option("--model", "model_path", default=None, help="Model container (or GECLIP_MODEL).")
@click.option("--method", type=click.Choice(METHODS), default="grad-eclip", show_default=True)
@click.option("--lam-mode", type=click.Choice(LAM_MODES), default="loosened", show_default=True)
@click.option("--layers", default=None, help="Comma-separated layer indices (negatives allowed).")
@click.option("--signed", is_flag=True, help="Keep negative per-layer contributions.")
@click.option("--upsample", type=click.Choice(("bilinear", "nearest")), default="bilinear",
              show_default=True)
@click.option("--cmap", type=click.Choice(("jet", "hot", "gray")), default="jet", show_default=True)
@click.option("--alpha", type=float, default=0.5, show_default=True)
@click.option("--out", "out_dir", default="explain-out", show_default=True,
              help="Output directory.")
@click.option("--seed", type=int, default=0, show_default=True)
def explain(image_path, text, model_path, method, lam_mode, layers, signed,
            upsample, cmap, alpha, out_dir, seed):
    """Explain how IMAGE_PATH and TEXT match: heat map, overlay, word saliency."""
    started = time.time()
    bundle = _load_bundle(model_path)
    layer_list = _parse_layers(layers)
    try:
        img01 = load_image(image_path)
    except FileNotFoundError:
        _fail(f"image not found: {image_path}", EXIT_INPUT)
    except ImageError as e:
        _fail(f"cannot read image {image_path}: {e}", EXIT_INPUT)
    img01 = resize_center_crop(img01, bundle.config.image_size)
    pixels = bundle.preprocess(img01)
    try:
        encoded = bundle.tokenizer.encode(text)
    except ValueError as e:
        raise click.UsageError(f"cannot tokenize text: {e}")

    try:
        heat = explain_image(bundle, pixels, encoded, method=method,
                             lam_mode=lam_mode, layers=layer_list,
                             signed=signed, upsample=upsample)
    except ValueError as e:
        raise click.UsageError(str(e))

    os.makedirs(out_dir, exist_ok=True)
    heat_doc = {
        "method": method,
        "lam_mode": lam_mode,
        "layers": layer_list,
        "signed": signed,
        "text": text,
        "score": heat.score,
        "heatmap": heat.to_record(),
    }
    heat_path = os.path.join(out_dir, "heatmap.json")
    with open(heat_path, "w", encoding="utf-8") as f:
        f.write(json.dumps(heat_doc, indent=2, sort_keys=True) + "\n")

    base01 = destandardize(pixels, bundle.config.mean, bundle.config.std)
    overlay_path = os.path.join(out_dir, "overlay.png")
    save_png(overlay_path, overlay(base01, heat.values, cmap=cmap, alpha=alpha))

    written = [heat_path, overlay_path]
    if method != "grad-cam":
        try:
            sal = explain_text(bundle, pixels, encoded, method=method,
                               lam_mode=lam_mode, layers=layer_list)
        except ValueError:
            sal = None
        if sal is not None:
            sal_doc = {
                "method": method,
                "lam_mode": lam_mode,
                "text": text,
                "score": sal.score,
                "words": sal.to_records(),
            }
            sal_path = os.path.join(out_dir, "saliency.json")
            with open(sal_path, "w", encoding="utf-8") as f:
                f.write(json.dumps(sal_doc, indent=2, sort_keys=True) + "\n")
            written.append(sal_path)

    _run_manifest(out_dir, seed, started, {
        "command": "explain", "method": method, "image": os.path.abspath(image_path),
    })
    click.echo(f"score {heat.score:.6f} method {method}")
    for path in written:
        click.echo(f"wrote {path}")


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


@main.command("eval")
@click.argument("protocol", type=click.Choice(EVAL_PROTOCOLS))
@click.option("--model", "model_path", default=None)
@click.option("--data", "data_path", required=True, help="Dataset manifest (.tsv).")
@click.option("--method", type=click.Choice(METHODS), default="grad-eclip", show_default=True)
@click.option("--lam-mode", type=click.Choice(LAM_MODES), default="loosened", show_default=True)
@click.option("--steps", type=int, default=None,
              help="Perturbation steps (default: 100 image, 5 text).")
@click.option("--step-fraction", type=float, default=0.005, show_default=True,
              help="Pixel fraction per image perturbation step.")
@click.option("--ks", default="1,5,10", show_default=True,
              help="Comma-separated k values for retrieval/zero-shot.")
@click.option("--template", default=DEFAULT_TEMPLATE, show_default=True)
@click.option("--limit", type=int, default=None, help="Use only the first N records.")
@click.option("--out", "out_dir", default="eval-out", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def eval_command(protocol, model_path, data_path, method, lam_mode, steps,
                 step_fraction, ks, template, limit, out_dir, seed):
    """Run one evaluation protocol over a dataset manifest."""
    started = time.time()
    bundle = _load_bundle(model_path)
    manifest = _load_manifest(data_path)
    try:
        ks_list = tuple(int(k) for k in ks.split(",") if k.strip())
    except ValueError:
        raise click.UsageError(f"--ks must be comma-separated integers, got {ks!r}")

    try:
        if protocol == "image-perturbation":
            summary = evaluate_image_perturbation(
                bundle, manifest, method=method, lam_mode=lam_mode,
                steps=steps or 100, step_fraction=step_fraction,
                seed=seed, limit=limit)
        elif protocol == "text-perturbation":
            summary = evaluate_text_perturbation(
                bundle, manifest, method=method, lam_mode=lam_mode,
                steps=steps or 5, limit=limit)
        elif protocol == "localization":
            summary = evaluate_localization(
                bundle, manifest, method=method, lam_mode=lam_mode, limit=limit)
        elif protocol == "zero-shot":
            summary = evaluate_zero_shot(
                bundle, manifest, template=template, ks=ks_list, limit=limit)
        elif protocol == "retrieval":
            summary = evaluate_retrieval(bundle, manifest, ks=ks_list, limit=limit)
        else:
            summary = evaluate_word_statistics(
                bundle, manifest, method=method, lam_mode=lam_mode, limit=limit)
    except ValueError as e:
        _fail(f"evaluation failed: {e}", EXIT_INPUT)

    paths = write_report(summary, out_dir)
    _run_manifest(out_dir, seed, started, {
        "command": "eval", "protocol": protocol, "method": method,
        "data": os.path.abspath(data_path),
    })
    headline = {k: v for k, v in summary.items()
                if isinstance(v, (int, float)) and k != "items"}
    click.echo(f"{protocol} over {summary['items']} items: "
               + json.dumps(headline, sort_keys=True))
    for name, path in sorted(paths.items()):
        click.echo(f"wrote {path}")


# ---------------------------------------------------------------------------
# finetune
# ---------------------------------------------------------------------------


@main.command()
@click.option("--model", "model_path", default=None)
@click.option("--data", "data_path", required=True)
@click.option("--out", "out_path", required=True, help="Where to save the tuned container.")
@click.option("--steps", type=int, default=200, show_default=True)
@click.option("--batch-size", type=int, default=8, show_default=True)
@click.option("--lr", type=float, default=1e-5, show_default=True)
@click.option("--weight-decay", type=float, default=0.1, show_default=True)
@click.option("--region-weight", type=float, default=1.0, show_default=True)
@click.option("--lam-mode", type=click.Choice(LAM_MODES), default="loosened", show_default=True)
@click.option("--limit", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--history", "history_path", default=None,
              help="Optional JSON file for per-step losses.")
def finetune(model_path, data_path, out_path, steps, batch_size, lr,
             weight_decay, region_weight, lam_mode, limit, seed, history_path):
    """Fine-tune with contrastive plus region-phrase alignment losses."""
    from .finetune import train  # deferred: pulls in the whole training stack

    started = time.time()
    bundle = _load_bundle(model_path)
    manifest = _load_manifest(data_path)
    try:
        history = train(bundle, manifest, steps=steps, batch_size=batch_size,
                        lr=lr, weight_decay=weight_decay, seed=seed,
                        region_weight=region_weight, lam_mode=lam_mode,
                        limit=limit)
    except ValueError as e:
        _fail(f"training failed: {e}", EXIT_INPUT)

    rejected = sum(h["rejected"] for h in history)
    if rejected == len(history):
        _fail("every training step was rejected (non-finite loss)", EXIT_RUNTIME)

    bundle.set_trainable(False)
    bundle.zero_grads()
    bundle.save(out_path)
    if history_path:
        with open(history_path, "w", encoding="utf-8") as f:
            f.write(json.dumps(history, indent=2, sort_keys=True) + "\n")
    out_dir = os.path.dirname(os.path.abspath(out_path)) or "."
    _run_manifest(out_dir, seed, started, {
        "command": "finetune", "steps": steps, "rejected_steps": rejected,
        "data": os.path.abspath(data_path),
    })
    first = np.mean([h["loss"] for h in history[:10]])
    last = np.mean([h["loss"] for h in history[-10:]])
    click.echo(f"loss {first:.4f} -> {last:.4f} over {steps} steps "
               f"({rejected} rejected)")
    click.echo(f"wrote {out_path}")


# ---------------------------------------------------------------------------
# gen-toy-data
# ---------------------------------------------------------------------------


@main.command("gen-toy-data")
@click.option("--out", "out_dir", required=True)
@click.option("--n", "n_images", type=int, default=200, show_default=True)
@click.option("--size", type=int, default=32, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--model-out", default=None,
              help="Also write a randomly initialized toy model container here.")
def gen_toy_data(out_dir, n_images, size, seed, model_out):
    """Generate a colored-shapes dataset (images, masks, manifest)."""
    from .toydata import build_toy_bundle, generate_dataset

    manifest_path = generate_dataset(out_dir, n_images, seed=seed, size=size)
    click.echo(f"wrote {n_images} images under {out_dir}")
    click.echo(f"wrote {manifest_path}")
    if model_out:
        bundle = build_toy_bundle(seed=seed, image_size=size)
        bundle.save(model_out)
        click.echo(f"wrote {model_out}")


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


@main.command()
@click.option("--model", "model_path", default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(model_path, host, port):
    """Serve explanations over HTTP."""
    import uvicorn

    from .service import create_app

    bundle = _load_bundle(model_path)
    uvicorn.run(create_app(bundle), host=host, port=port)


# ---------------------------------------------------------------------------
# convert-weights
# ---------------------------------------------------------------------------


@main.command("convert-weights")
@click.option("--input", "input_path", required=True,
              help="Torch state-dict checkpoint (.pt).")
@click.option("--vocab", "vocab_path", required=True, help="Tokenizer vocab text file.")
@click.option("--merges", "merges_path", required=True, help="Tokenizer merges text file.")
@click.option("--out", "out_path", required=True, help="Output container path.")
def convert_weights(input_path, vocab_path, merges_path, out_path):
    """Convert a torch dual-encoder checkpoint into a model container."""
    try:
        from .convert import convert_torch_checkpoint
    except ImportError as e:
        _fail(f"torch is required for conversion: {e}", EXIT_RUNTIME)
    try:
        config = convert_torch_checkpoint(input_path, vocab_path, merges_path, out_path)
    except FileNotFoundError as e:
        _fail(str(e), EXIT_INPUT)
    except (KeyError, ValueError) as e:
        _fail(f"unrecognized checkpoint layout: {e}", EXIT_INPUT)
    click.echo(f"wrote {out_path} ({config.vision_layers}+{config.text_layers} layers, "
               f"embed dim {config.embed_dim})")


if __name__ == "__main__":
    main()
