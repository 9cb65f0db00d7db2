"""Weight container format.

Layout:

* bytes 0-7: magic ``GECW0001``
* bytes 8-15: little-endian u64 header length
* header: UTF-8 JSON (space padded) holding a free-form ``config`` mapping
  and an ordered ``manifest`` list of ``{name, dtype, shape, offset, length}``
* payload: raw little-endian IEEE-754 float32 tensor data

The payload starts on a 64-byte file boundary and every tensor offset
(relative to the payload) is 64-byte aligned.  Tokenizer vocab and merges
are ordinary text files stored next to the container and referenced from
the header by relative name.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GECW0001"
ALIGN = 64


class ContainerError(ValueError):
    """Raised when a weight container cannot be parsed."""


def _align_up(n, align=ALIGN):
    return (n + align - 1) // align * align


def save_container(path, config, tensors, tokenizer_files=None):
    """Write tensors (an insertion-ordered mapping name -> array) and config.

    ``tokenizer_files`` maps header keys (``vocab``, ``merges``) to lists of
    text lines; each is written next to the container and referenced from
    the header by file name.
    """
    path = Path(path)
    header_cfg = dict(config)
    if tokenizer_files:
        ref = {}
        for key, lines in tokenizer_files.items():
            fname = f"{path.stem}.{key}.txt"
            (path.parent / fname).write_text("\n".join(lines) + "\n", encoding="utf-8")
            ref[key] = fname
        header_cfg["tokenizer_files"] = ref

    manifest = []
    offset = 0
    blobs = []
    for name, arr in tensors.items():
        # np.asarray keeps 0-d shapes; ascontiguousarray would promote them.
        arr32 = np.asarray(arr, dtype="<f4")
        offset = _align_up(offset)
        manifest.append(
            {
                "name": name,
                "dtype": "f32",
                "shape": list(arr32.shape),
                "offset": offset,
                "length": arr32.nbytes,
            }
        )
        blobs.append((offset, arr32.tobytes(order="C")))
        offset += arr32.nbytes

    header = {"config": header_cfg, "manifest": manifest}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload_start = _align_up(len(MAGIC) + 8 + len(header_bytes))
    header_bytes += b" " * (payload_start - len(MAGIC) - 8 - len(header_bytes))

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        pos = 0
        for ofs, blob in blobs:
            if ofs > pos:
                f.write(b"\x00" * (ofs - pos))
            f.write(blob)
            pos = ofs + len(blob)
    return path


def load_container(path):
    """Read a container; returns (config dict, tensors dict, manifest list).

    Tensor data is promoted to float64 on load.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ContainerError(f"cannot read weight container: {exc}") from exc
    if raw[: len(MAGIC)] != MAGIC:
        raise ContainerError("bad magic: not a weight container")
    if len(raw) < len(MAGIC) + 8:
        raise ContainerError("truncated container header")
    (header_len,) = struct.unpack_from("<Q", raw, len(MAGIC))
    header_end = len(MAGIC) + 8 + header_len
    if header_end > len(raw):
        raise ContainerError("header length exceeds file size")
    try:
        header = json.loads(raw[len(MAGIC) + 8 : header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"invalid container header: {exc}") from exc

    config = header.get("config", {})
    manifest = header.get("manifest", [])
    payload = raw[header_end:]
    tensors = {}
    for entry in manifest:
        name = entry["name"]
        if entry.get("dtype") != "f32":
            raise ContainerError(f"tensor {name}: unsupported dtype {entry.get('dtype')!r}")
        ofs, length = int(entry["offset"]), int(entry["length"])
        shape = tuple(int(s) for s in entry["shape"])
        if ofs % ALIGN:
            raise ContainerError(f"tensor {name}: offset {ofs} is not {ALIGN}-byte aligned")
        expected = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if length != expected:
            raise ContainerError(f"tensor {name}: length {length} does not match shape {shape}")
        if ofs + length > len(payload):
            raise ContainerError(f"tensor {name}: data extends past end of file")
        arr = np.frombuffer(payload, dtype="<f4", count=length // 4, offset=ofs)
        tensors[name] = arr.reshape(shape).astype(np.float64)
    return config, tensors, manifest


def tokenizer_paths(container_path, config):
    """Resolve the tokenizer text files referenced from a container header."""
    ref = config.get("tokenizer_files")
    if not ref:
        raise ContainerError("container header does not reference tokenizer files")
    base = Path(container_path).parent
    vocab = base / ref["vocab"]
    merges = base / ref["merges"]
    for p in (vocab, merges):
        if not p.exists():
            raise ContainerError(f"missing tokenizer file: {p}")
    return vocab, merges
