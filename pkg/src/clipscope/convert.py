"""Offline conversion of torch dual-encoder checkpoints into containers.

Understands the common layout: a vision transformer with a patch
convolution, class token, pre/post layer norms and a projection, plus a
text transformer with token/positional embeddings, a final norm, and a
projection.  Shapes drive the inferred configuration; head counts follow
the usual width/64 rule of this model family.
"""

import numpy as np
import torch

from .autodiff import Tensor
from .model import ModelBundle, ModelConfig
from .tokenizer import Tokenizer


def _get(sd, key):
    if key not in sd:
        raise KeyError(f"checkpoint is missing {key!r}")
    return sd[key].detach().cpu().numpy().astype(np.float64)


def _count_layers(sd, prefix):
    n = 0
    while f"{prefix}.{n}.ln_1.weight" in sd:
        n += 1
    if n == 0:
        raise KeyError(f"no transformer blocks under {prefix!r}")
    return n


def _block_weights(sd, src, dst, out):
    out[f"{dst}.norm1.gain"] = _get(sd, f"{src}.ln_1.weight")
    out[f"{dst}.norm1.bias"] = _get(sd, f"{src}.ln_1.bias")
    out[f"{dst}.attn.qkv.weight"] = _get(sd, f"{src}.attn.in_proj_weight")
    out[f"{dst}.attn.qkv.bias"] = _get(sd, f"{src}.attn.in_proj_bias")
    out[f"{dst}.attn.out.weight"] = _get(sd, f"{src}.attn.out_proj.weight")
    out[f"{dst}.attn.out.bias"] = _get(sd, f"{src}.attn.out_proj.bias")
    out[f"{dst}.norm2.gain"] = _get(sd, f"{src}.ln_2.weight")
    out[f"{dst}.norm2.bias"] = _get(sd, f"{src}.ln_2.bias")
    out[f"{dst}.mlp.fc1.weight"] = _get(sd, f"{src}.mlp.c_fc.weight")
    out[f"{dst}.mlp.fc1.bias"] = _get(sd, f"{src}.mlp.c_fc.bias")
    out[f"{dst}.mlp.fc2.weight"] = _get(sd, f"{src}.mlp.c_proj.weight")
    out[f"{dst}.mlp.fc2.bias"] = _get(sd, f"{src}.mlp.c_proj.bias")


def state_dict_to_weights(sd):
    """Map a torch state dict to (config, {name: ndarray})."""
    conv = _get(sd, "visual.conv1.weight")
    vision_width, _, patch, _ = conv.shape
    vis_pos = _get(sd, "visual.positional_embedding")
    n_patches = vis_pos.shape[0] - 1
    grid = int(round(n_patches**0.5))
    if grid * grid != n_patches:
        raise ValueError(f"positional embedding implies a non-square grid ({n_patches} patches)")
    token_embed = _get(sd, "token_embedding.weight")
    text_pos = _get(sd, "positional_embedding")
    proj = _get(sd, "visual.proj")

    config = ModelConfig(
        image_size=grid * patch,
        patch_size=patch,
        vision_width=vision_width,
        vision_layers=_count_layers(sd, "visual.transformer.resblocks"),
        vision_heads=max(1, vision_width // 64),
        text_width=token_embed.shape[1],
        text_layers=_count_layers(sd, "transformer.resblocks"),
        text_heads=max(1, token_embed.shape[1] // 64),
        embed_dim=proj.shape[1],
        vocab_size=token_embed.shape[0],
        context_length=text_pos.shape[0],
    )

    weights = {
        "visual.patch_proj.weight": conv.reshape(vision_width, -1),
        "visual.cls_token": _get(sd, "visual.class_embedding"),
        "visual.pos_embed": vis_pos,
        "visual.pre_norm.gain": _get(sd, "visual.ln_pre.weight"),
        "visual.pre_norm.bias": _get(sd, "visual.ln_pre.bias"),
        "visual.post_norm.gain": _get(sd, "visual.ln_post.weight"),
        "visual.post_norm.bias": _get(sd, "visual.ln_post.bias"),
        "visual.proj": proj,
        "text.token_embed": token_embed,
        "text.pos_embed": text_pos,
        "text.final_norm.gain": _get(sd, "ln_final.weight"),
        "text.final_norm.bias": _get(sd, "ln_final.bias"),
        "text.proj": _get(sd, "text_projection"),
        "logit_scale": _get(sd, "logit_scale").reshape(()),
    }
    for i in range(config.vision_layers):
        _block_weights(sd, f"visual.transformer.resblocks.{i}",
                       f"visual.layers.{i}", weights)
    for i in range(config.text_layers):
        _block_weights(sd, f"transformer.resblocks.{i}",
                       f"text.layers.{i}", weights)
    return config, weights


def convert_torch_checkpoint(input_path, vocab_path, merges_path, out_path):
    """Load a torch checkpoint, map it, and save a container; returns the
    inferred config."""
    loaded = torch.load(input_path, map_location="cpu", weights_only=True)
    if isinstance(loaded, dict) and "state_dict" in loaded:
        loaded = loaded["state_dict"]
    if not isinstance(loaded, dict):
        raise ValueError("checkpoint does not contain a state dict")
    config, weights = state_dict_to_weights(loaded)

    with open(vocab_path, encoding="utf-8") as f:
        vocab_lines = f.read().splitlines()
    with open(merges_path, encoding="utf-8") as f:
        merges_lines = f.read().splitlines()
    tokenizer = Tokenizer(vocab_lines, merges_lines,
                          context_length=config.context_length)
    if len(vocab_lines) != config.vocab_size:
        raise ValueError(
            f"vocab has {len(vocab_lines)} entries but the checkpoint embeds "
            f"{config.vocab_size} tokens"
        )
    bundle = ModelBundle(
        config=config,
        weights={k: Tensor(v) for k, v in weights.items()},
        tokenizer=tokenizer,
        vocab_lines=vocab_lines,
        merges_lines=merges_lines,
    )
    bundle.save(out_path)
    return config
