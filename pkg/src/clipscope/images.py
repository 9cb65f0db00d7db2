"""Image loading, saving, and encoder preprocessing.

PNG and JPEG go through Pillow; binary PPM (P6) is parsed and written
directly so tests and fixtures need no image library at all.  Pixels are
carried as H*W*3 float64 in [0, 1]; the encoder sees a channel-first array
standardized with per-channel mean and scale.
"""

import io

import numpy as np

from . import _kernels

# Per-channel statistics the released dual-encoder checkpoints were trained
# with; containers may override them in their header.
DEFAULT_MEAN = (0.48145466, 0.4578275, 0.40821073)
DEFAULT_STD = (0.26862954, 0.26130258, 0.27577711)


class ImageError(ValueError):
    """Raised when an image cannot be parsed."""


def _read_ppm_header_token(buf):
    # Tokens are separated by whitespace; '#' starts a comment to end of line.
    tok = b""
    while True:
        c = buf.read(1)
        if not c:
            raise ImageError("truncated image header")
        if c == b"#":
            while c and c != b"\n":
                c = buf.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_ppm(data):
    """Parse binary PPM (P6) bytes into an H*W*3 float64 array in [0, 1]."""
    buf = io.BytesIO(data)
    magic = buf.read(2)
    if magic != b"P6":
        raise ImageError("not a binary PPM file (expected P6 magic)")
    width = int(_read_ppm_header_token(buf))
    height = int(_read_ppm_header_token(buf))
    maxval = int(_read_ppm_header_token(buf))
    if width <= 0 or height <= 0:
        raise ImageError(f"invalid image dimensions {width}x{height}")
    if not 0 < maxval < 256:
        raise ImageError(f"unsupported maxval {maxval} (one byte per sample only)")
    raw = buf.read(width * height * 3)
    if len(raw) != width * height * 3:
        raise ImageError("truncated pixel data")
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)
    return arr.astype(np.float64) / maxval


def write_ppm(path, img):
    """Write an H*W*3 array in [0, 1] as binary PPM (P6)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ImageError(f"expected an H*W*3 array, got shape {img.shape}")
    h, w, _ = img.shape
    pixels = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())


def load_image_bytes(data):
    """Decode PNG/JPEG/PPM bytes into an H*W*3 float64 array in [0, 1]."""
    if data[:2] == b"P6":
        return read_ppm(data)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise ImageError("PNG/JPEG support requires Pillow; use PPM instead") from exc
    try:
        with Image.open(io.BytesIO(data)) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
    except Exception as exc:
        raise ImageError(f"cannot decode image: {exc}") from exc
    return arr


def load_image(path):
    with open(path, "rb") as f:
        return load_image_bytes(f.read())


def save_png(path, img):
    """Write an H*W*3 (or H*W*4) array in [0, 1] as PNG."""
    from PIL import Image

    pixels = np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    mode = "RGBA" if pixels.ndim == 3 and pixels.shape[2] == 4 else "RGB"
    Image.fromarray(pixels, mode).save(path, format="PNG")


def resize_bilinear(img, out_h, out_w):
    """Channel-wise bilinear resize of an H*W*C array."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return _kernels.bilinear_resize(img, out_h, out_w)
    out = np.empty((out_h, out_w, img.shape[2]), dtype=np.float64)
    for c in range(img.shape[2]):
        out[:, :, c] = _kernels.bilinear_resize(np.ascontiguousarray(img[:, :, c]), out_h, out_w)
    return out


def resize_nearest(grid, out_h, out_w):
    """Nearest-neighbor resize of a 2-D grid with half-pixel centers."""
    grid = np.asarray(grid, dtype=np.float64)
    in_h, in_w = grid.shape
    rows = np.clip(np.floor((np.arange(out_h) + 0.5) * in_h / out_h).astype(int), 0, in_h - 1)
    cols = np.clip(np.floor((np.arange(out_w) + 0.5) * in_w / out_w).astype(int), 0, in_w - 1)
    return grid[np.ix_(rows, cols)]


def resize_center_crop(img, size):
    """Scale the shorter side to ``size`` then crop the center square."""
    h, w = img.shape[:2]
    if h <= w:
        new_h, new_w = size, max(size, int(round(w * size / h)))
    else:
        new_h, new_w = max(size, int(round(h * size / w))), size
    resized = resize_bilinear(img, new_h, new_w)
    top = (new_h - size) // 2
    left = (new_w - size) // 2
    return resized[top : top + size, left : left + size]


def standardize(img, mean=DEFAULT_MEAN, std=DEFAULT_STD):
    """[0,1] H*W*3 -> channel-first standardized 3*H*W."""
    img = np.asarray(img, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64).reshape(1, 1, 3)
    std = np.asarray(std, dtype=np.float64).reshape(1, 1, 3)
    out = (img - mean) / std
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def preprocess(img, size, mean=DEFAULT_MEAN, std=DEFAULT_STD):
    """Full encoder preprocessing: resize, center crop, standardize."""
    return standardize(resize_center_crop(img, size), mean, std)
