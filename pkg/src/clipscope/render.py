"""Heat-map rendering: analytic colormaps and overlay composition."""

import numpy as np

COLORMAPS = ("jet", "hot", "gray")


def apply_colormap(x, name="jet"):
    """Map values in [0, 1] to RGB in [0, 1]; shape (...,) -> (..., 3)."""
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    if name == "jet":
        r = np.clip(1.5 - np.abs(4.0 * x - 3.0), 0.0, 1.0)
        g = np.clip(1.5 - np.abs(4.0 * x - 2.0), 0.0, 1.0)
        b = np.clip(1.5 - np.abs(4.0 * x - 1.0), 0.0, 1.0)
    elif name == "hot":
        r = np.clip(3.0 * x, 0.0, 1.0)
        g = np.clip(3.0 * x - 1.0, 0.0, 1.0)
        b = np.clip(3.0 * x - 2.0, 0.0, 1.0)
    elif name == "gray":
        r = g = b = x
    else:
        raise ValueError(f"unknown colormap {name!r} (expected one of {COLORMAPS})")
    return np.stack([r, g, b], axis=-1)


def overlay(image01, heat01, cmap="jet", alpha=0.5):
    """Blend a colormapped heat map over an RGB image; both in [0, 1]."""
    image01 = np.asarray(image01, dtype=np.float64)
    heat01 = np.asarray(heat01, dtype=np.float64)
    if image01.shape[:2] != heat01.shape:
        raise ValueError(
            f"image {image01.shape[:2]} and heat map {heat01.shape} sizes differ"
        )
    colored = apply_colormap(heat01, cmap)
    return np.clip((1.0 - alpha) * image01 + alpha * colored, 0.0, 1.0)


def destandardize(pixels, mean, std):
    """Invert encoder standardization: 3*H*W -> H*W*3 in [0, 1]."""
    pixels = np.asarray(pixels, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64).reshape(3, 1, 1)
    std = np.asarray(std, dtype=np.float64).reshape(3, 1, 1)
    img = pixels * std + mean
    return np.clip(img.transpose(1, 2, 0), 0.0, 1.0)
