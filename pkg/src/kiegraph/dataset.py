"""Parsing, validation and preprocessing of annotated document corpora.

The on-disk annotation format is UTF-8 JSON lines, one record per line:

    {"file_name": ..., "height": H, "width": W,
     "annotations": [{"box": [x1,y1,...,x4,y4], "text": ..., "label": int}, ...]}

Boxes are quadrilaterals (8 numbers) converted to axis-aligned rectangles
via corner min/max. Images are PNG/JPEG referenced by file_name relative
to the corpus root.
"""

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .categories import DEFAULT_CATEGORIES, DEFAULT_DICTIONARY
from .errors import ParseError, ValidationError

ANNOTATION_FILE = "annotations.jsonl"


@dataclass
class TextRegion:
    """One text box: top-left corner, extents, recognized text, optional label."""

    x: float
    y: float
    w: float
    h: float
    text: str
    label: int | None = None

    def validate(self):
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(f"region has non-positive extents: w={self.w}, h={self.h}")
        if self.x < 0 or self.y < 0:
            raise ValidationError(f"region has negative origin: x={self.x}, y={self.y}")
        if not self.text.strip():
            raise ValidationError("region text is empty after trim")
        if self.label is not None and not DEFAULT_CATEGORIES.is_valid_label(self.label):
            raise ValidationError(f"label {self.label} outside [0,25)")


@dataclass
class SampleRecord:
    """Annotation-only view of one document (image not yet loaded)."""

    file_name: str
    width: int
    height: int
    regions: list
    template_id: str = ""


@dataclass
class DocumentSample:
    """One document: raster image plus its text regions."""

    image: np.ndarray  # (C,H,W), values in [0,1]
    regions: list
    source_id: str = ""
    template_id: str = ""

    def validate(self):
        if self.image.ndim != 3:
            raise ValidationError(f"image must be (C,H,W), got shape {self.image.shape}")
        if not self.regions:
            raise ValidationError("sample has no regions")
        h, w = self.image.shape[1], self.image.shape[2]
        for r in self.regions:
            r.validate()
            if r.x + r.w > w + 1e-6 or r.y + r.h > h + 1e-6:
                raise ValidationError(
                    f"region ({r.x},{r.y},{r.w},{r.h}) exceeds image bounds {(w, h)}"
                )


def _derive_template_id(regions):
    store_value = DEFAULT_CATEGORIES.index("store_name_value")
    for r in regions:
        if r.label == store_value:
            return " ".join(r.text.split()).lower()
    return ""


def _quad_to_rect(box, where):
    xs = box[0::2]
    ys = box[1::2]
    x, y = min(xs), min(ys)
    w, h = max(xs) - x, max(ys) - y
    if w <= 0 or h <= 0:
        raise ValidationError(f"{where}: degenerate quadrilateral {box}")
    return float(x), float(y), float(w), float(h)


def parse_annotations(stream, label_map=None):
    """Parse a JSON-lines annotation stream into SampleRecords.

    stream may be bytes, str, or an iterable of lines. label_map optionally
    remaps raw integer labels onto the canonical category indices.
    Empty-text boxes are dropped; every other violation raises.
    """
    if isinstance(stream, bytes):
        stream = stream.decode("utf-8").splitlines()
    elif isinstance(stream, str):
        stream = stream.splitlines()
    records = []
    for lineno, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        if not line.strip():
            continue
        where = f"line {lineno}"
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"{where}: invalid JSON ({e.msg})") from None
        try:
            file_name = raw["file_name"]
            width = int(raw["width"])
            height = int(raw["height"])
            annotations = raw["annotations"]
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{where}: missing or malformed record field ({e})") from None
        if width <= 0 or height <= 0:
            raise ValidationError(f"{where}: non-positive image size {width}x{height}")
        regions = []
        for ann in annotations:
            box = ann.get("box")
            if not isinstance(box, (list, tuple)) or len(box) != 8:
                raise ParseError(f"{where}: box must hold 8 numbers, got {box!r}")
            text = ann.get("text", "")
            if not isinstance(text, str):
                raise ParseError(f"{where}: text must be a string")
            if not text.strip():
                continue  # empty-text boxes are rejected at parse
            x, y, w, h = _quad_to_rect(box, where)
            label = ann.get("label")
            if label is not None:
                label = int(label)
                if label_map is not None:
                    if label not in label_map:
                        raise ValidationError(f"{where}: label {label} not in label map")
                    label = label_map[label]
                if not DEFAULT_CATEGORIES.is_valid_label(label):
                    raise ValidationError(f"{where}: label {label} outside [0,25)")
            if x < 0 or y < 0 or x + w > width or y + h > height:
                raise ValidationError(
                    f"{where}: box ({x},{y},{w},{h}) outside image {width}x{height}"
                )
            regions.append(TextRegion(x=x, y=y, w=w, h=h, text=text, label=label))
        if not regions:
            raise ValidationError(f"{where}: record has no usable regions")
        records.append(
            SampleRecord(
                file_name=file_name,
                width=width,
                height=height,
                regions=regions,
                template_id=_derive_template_id(regions),
            )
        )
    return records


def serialize_annotations(records):
    """Inverse of parse_annotations; returns the JSON-lines text."""
    lines = []
    for rec in records:
        annotations = []
        for r in rec.regions:
            x0, y0 = r.x, r.y
            x1, y1 = r.x + r.w, r.y + r.h
            ann = {
                "box": [x0, y0, x1, y0, x1, y1, x0, y1],
                "text": r.text,
            }
            if r.label is not None:
                ann["label"] = r.label
            annotations.append(ann)
        lines.append(
            json.dumps(
                {
                    "file_name": rec.file_name,
                    "height": rec.height,
                    "width": rec.width,
                    "annotations": annotations,
                },
                sort_keys=True,
            )
        )
    return "\n".join(lines) + "\n"


def load_image(path):
    """Load a PNG/JPEG as float (C,H,W) in [0,1]; grayscale keeps one channel."""
    with Image.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB") if "A" in img.mode or img.mode == "P" else img.convert("L")
        arr = np.asarray(img, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        return arr[None, :, :]
    return arr.transpose(2, 0, 1)


class Corpus:
    """Lazy-loading view of a corpus directory (annotations + images)."""

    def __init__(self, records, root):
        self.records = records
        self.root = Path(root)

    @classmethod
    def load(cls, path, label_map=None):
        path = Path(path)
        ann = path / ANNOTATION_FILE if path.is_dir() else path
        root = ann.parent
        records = parse_annotations(ann.read_bytes(), label_map=label_map)
        return cls(records, root)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        rec = self.records[i]
        image = load_image(self.root / rec.file_name)
        sample = DocumentSample(
            image=image,
            regions=[replace(r) for r in rec.regions],
            source_id=rec.file_name,
            template_id=rec.template_id,
        )
        sample.validate()
        return sample


def verify_split_disjoint(train_records, test_records):
    """Report template_ids shared by the two splits (empty ids ignored)."""
    train_t = {r.template_id for r in train_records if r.template_id}
    test_t = {r.template_id for r in test_records if r.template_id}
    overlap = sorted(train_t & test_t)
    return {
        "overlap": overlap,
        "train_templates": len(train_t),
        "test_templates": len(test_t),
        "disjoint": not overlap,
    }


def _resize_bilinear(image, out_h, out_w):
    c, h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0).astype(image.dtype)
    wx = np.clip(xs - x0, 0.0, 1.0).astype(image.dtype)
    top = image[:, y0[:, None], x0[None, :]] * (1 - wx) + image[:, y0[:, None], x1[None, :]] * wx
    bot = image[:, y1[:, None], x0[None, :]] * (1 - wx) + image[:, y1[:, None], x1[None, :]] * wx
    return top * (1 - wy[:, None]) + bot * wy[:, None]


def resize_sample(sample, target):
    """Resize to target x target (bilinear); boxes scale proportionally."""
    if target <= 0:
        raise ValidationError(f"resize target must be positive, got {target}")
    c, h, w = sample.image.shape
    sx, sy = target / w, target / h
    image = _resize_bilinear(sample.image, target, target)
    regions = []
    for r in sample.regions:
        x = min(r.x * sx, target)
        y = min(r.y * sy, target)
        rw = min(r.w * sx, target - x)
        rh = min(r.h * sy, target - y)
        regions.append(replace(r, x=x, y=y, w=rw, h=rh))
    out = DocumentSample(
        image=image,
        regions=regions,
        source_id=sample.source_id,
        template_id=sample.template_id,
    )
    out.validate()
    return out


def random_crop(sample, p, rng):
    """With probability p, crop to a random rectangle containing all boxes."""
    if not 0.0 <= p <= 1.0:
        raise ValidationError(f"crop probability must be in [0,1], got {p}")
    if p == 0.0 or rng.random() >= p:
        return sample
    c, h, w = sample.image.shape
    x0u = min(r.x for r in sample.regions)
    y0u = min(r.y for r in sample.regions)
    x1u = max(r.x + r.w for r in sample.regions)
    y1u = max(r.y + r.h for r in sample.regions)
    left = int(rng.integers(0, math.floor(x0u) + 1))
    top = int(rng.integers(0, math.floor(y0u) + 1))
    right = int(rng.integers(math.ceil(x1u), w + 1))
    bottom = int(rng.integers(math.ceil(y1u), h + 1))
    image = sample.image[:, top:bottom, left:right]
    regions = [replace(r, x=r.x - left, y=r.y - top) for r in sample.regions]
    out = DocumentSample(
        image=image,
        regions=regions,
        source_id=sample.source_id,
        template_id=sample.template_id,
    )
    out.validate()
    return out


def encode_text(s, dictionary=DEFAULT_DICTIONARY):
    """Map a string to dictionary indices; unknown characters fall back."""
    return [dictionary.index(ch) for ch in s]
