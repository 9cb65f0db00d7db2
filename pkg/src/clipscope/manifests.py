"""Dataset manifests: line-delimited, tab-separated key=value records.

Comment lines start with ``#``; a ``# classes:`` header declares the
comma-separated class-name list used by classification metrics.  Paths in
records are resolved relative to the manifest's directory.

Example::

    # classes: red circle, blue square
    image=imgs/0.ppm\ttext=a photo of a red circle\tmask=masks/0.png\tclass=red circle
"""

from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ManifestRecord:
    image: str = ""
    text: str = ""
    mask: str = ""
    class_name: str = ""
    box: tuple = ()  # (x0, y0, x1, y1), end-exclusive pixel coords
    extras: dict = field(default_factory=dict)

    def to_line(self):
        parts = []
        if self.image:
            parts.append(f"image={self.image}")
        if self.text:
            parts.append(f"text={self.text}")
        if self.mask:
            parts.append(f"mask={self.mask}")
        if self.class_name:
            parts.append(f"class={self.class_name}")
        if self.box:
            parts.append("box=" + ",".join(str(int(v)) for v in self.box))
        for k, v in self.extras.items():
            parts.append(f"{k}={v}")
        return "\t".join(parts)


@dataclass
class DatasetManifest:
    records: list
    classes: list
    base_dir: Path

    def resolve(self, rel):
        return self.base_dir / rel

    def class_index(self, name):
        try:
            return self.classes.index(name)
        except ValueError:
            raise ValueError(f"class {name!r} is not declared in the manifest header") from None


def load_manifest(path):
    path = Path(path)
    classes = []
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if body.lower().startswith("classes:"):
                    classes = [c.strip() for c in body[len("classes:") :].split(",") if c.strip()]
                continue
            rec = ManifestRecord()
            for part in line.split("\t"):
                if "=" not in part:
                    raise ValueError(f"{path}:{lineno}: malformed field {part!r} (expected key=value)")
                key, value = part.split("=", 1)
                if key == "image":
                    rec.image = value
                elif key == "text":
                    rec.text = value
                elif key == "mask":
                    rec.mask = value
                elif key == "class":
                    rec.class_name = value
                elif key == "box":
                    coords = tuple(int(v) for v in value.split(","))
                    if len(coords) != 4:
                        raise ValueError(f"{path}:{lineno}: box needs 4 coordinates, got {value!r}")
                    rec.box = coords
                else:
                    rec.extras[key] = value
            records.append(rec)
    return DatasetManifest(records=records, classes=classes, base_dir=path.parent)


def write_manifest(path, records, classes=None):
    path = Path(path)
    lines = []
    if classes:
        lines.append("# classes: " + ", ".join(classes))
    lines.extend(rec.to_line() for rec in records)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
