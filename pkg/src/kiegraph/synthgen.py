"""Synthetic receipt corpus generator with template-disjoint splits.

Every money-like value (subtotal, tax, tips, total, product price) is drawn
from one shared grammar, so those categories cannot be told apart from
their own text or pixels; only the neighboring caption and its placement
disambiguate them. Non-money values (dates, phones, times, items) stay
textually recognizable. That asymmetry is what the graph has to exploit.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import glyphs
from .categories import DEFAULT_CATEGORIES as CATS
from .dataset import DocumentSample, SampleRecord, TextRegion, serialize_annotations
from .errors import ValidationError

CANVAS_W = 192
CANVAS_H = 256

_KEY_VARIANTS = {
    "store_name": ("STORE:", "MERCHANT:", "SHOP:"),
    "store_addr": ("ADDRESS:", "ADDR:", "LOCATION:"),
    "tel": ("TEL:", "PHONE:", "TEL NO:"),
    "date": ("DATE:", "DATE", "DT:"),
    "time": ("TIME:", "TIME"),
    "prod_item": ("ITEM", "PRODUCT", "DESC"),
    "prod_qty": ("QTY", "QTY.", "#"),
    "prod_price": ("PRICE", "AMOUNT", "AMT"),
    "subtotal": ("SUBTOTAL", "SUB-TOTAL", "SUB TTL", "SUBTOTAL:"),
    "tax": ("TAX", "TAX:", "VAT", "SALES TAX"),
    "tips": ("TIP", "TIPS", "GRATUITY", "TIP:"),
    "total": ("TOTAL", "TOTAL:", "TOTAL DUE", "BALANCE"),
}

_PRODUCTS = (
    "COFFEE", "BAGEL", "MILK", "BREAD", "SODA", "CHIPS", "SOAP", "JUICE",
    "APPLE", "DONUT", "WATER", "TEA", "RICE", "EGGS", "CHEESE", "PASTA",
)

_STREETS = ("OAK", "MAIN", "ELM", "PINE", "HILL", "LAKE", "PARK", "MILL")
_STREET_SUFFIX = ("ST", "AVE", "RD", "BLVD", "LN")

_FOOTERS = ("THANK YOU", "WELCOME", "CASH", "CHANGE DUE", "HAVE A GOOD DAY")
_SEPARATORS = ("----------", "**********", "==========")

_SYLLABLES = ("KA", "RO", "MI", "TA", "LU", "VE", "NO", "SHA", "BEL", "DOR",
              "GRE", "PLU", "ZAN", "QUI", "FER", "WES")


@dataclass
class TemplateSpec:
    """Frozen layout decisions that define one receipt template."""

    template_id: str
    store_name: str
    key_texts: dict  # stem -> caption text, absent stems have no key box
    date_style: int
    tel_style: int
    left_x: int
    value_x: int
    qty_x: int
    price_x: int
    row_gap: int
    title_scale: int  # font-block scale for the store-name line
    body_scale: int = 1
    n_items_range: tuple = (1, 3)
    has_tel: bool = True
    has_time: bool = True
    has_tips: bool = True
    has_qty_key: bool = True


def _money(rng):
    return f"${rng.integers(0, 100)}.{rng.integers(0, 100):02d}"


def _date(rng, style):
    m, d, y = rng.integers(1, 13), rng.integers(1, 29), rng.integers(2019, 2027)
    if style == 0:
        return f"{m:02d}/{d:02d}/{y}"
    if style == 1:
        return f"{y}-{m:02d}-{d:02d}"
    return f"{m:02d}-{d:02d}-{y}"


def _tel(rng, style):
    a, b, c = rng.integers(200, 1000), rng.integers(200, 1000), rng.integers(0, 10000)
    if style == 0:
        return f"{a}-{b}-{c:04d}"
    return f"({a}) {b}-{c:04d}"


def _time(rng):
    return f"{rng.integers(0, 24):02d}:{rng.integers(0, 60):02d}"


def _store_name(rng, used):
    while True:
        w1 = "".join(_SYLLABLES[i] for i in rng.integers(0, len(_SYLLABLES), size=2))
        w2 = "".join(_SYLLABLES[i] for i in rng.integers(0, len(_SYLLABLES), size=1))
        name = f"{w1} {w2}"
        if name not in used and len(name) <= 11:
            used.add(name)
            return name


def make_template(rng, used_names, force_all=False):
    """Draw one TemplateSpec; force_all turns every optional feature on."""
    name = _store_name(rng, used_names)
    keys = {}
    for stem, variants in _KEY_VARIANTS.items():
        keys[stem] = variants[rng.integers(0, len(variants))]
    if not force_all and rng.random() > 0.4:
        del keys["store_name"]  # store name usually appears bare
    has_tel = force_all or rng.random() < 0.8
    has_time = force_all or rng.random() < 0.8
    has_tips = force_all or rng.random() < 0.7
    has_qty_key = force_all or rng.random() < 0.7
    return TemplateSpec(
        template_id=" ".join(name.split()).lower(),
        store_name=name,
        key_texts=keys,
        date_style=int(rng.integers(0, 3)),
        tel_style=int(rng.integers(0, 2)),
        left_x=int(rng.integers(6, 15)),
        value_x=int(rng.integers(110, 126)),
        qty_x=int(rng.integers(88, 100)),
        price_x=int(rng.integers(128, 140)),
        row_gap=int(rng.integers(11, 14)),
        title_scale=int(rng.integers(1, 3)),
        has_tel=has_tel,
        has_time=has_time,
        has_tips=has_tips,
        has_qty_key=has_qty_key,
    )


def render_image(layout, height=CANVAS_H, width=CANVAS_W):
    """Render (x, y, scale, text) items as glyph blocks on a white canvas."""
    canvas = np.ones((1, height, width), dtype=np.float32)
    for x, y, scale, text in layout:
        w, h = glyphs.text_extent(text, scale)
        if x < 0 or y < 0 or x + w > width or y + h > height:
            raise ValidationError(
                f"text block {text!r} at ({x},{y}) size ({w},{h}) exceeds canvas"
            )
        for k, ch in enumerate(text):
            bits = glyphs.glyph(ch)
            if scale != 1:
                bits = np.kron(bits, np.ones((scale, scale), dtype=bool))
            gy, gx = y, x + k * glyphs.CELL_W * scale
            region = canvas[0, gy : gy + bits.shape[0], gx : gx + bits.shape[1]]
            region[bits] = 0.0
    return canvas


class _DocBuilder:
    def __init__(self, template, rng):
        self.t = template
        self.rng = rng
        self.layout = []
        self.regions = []
        self.y = int(rng.integers(6, 14))

    def put(self, x, text, label, scale=1):
        w, h = glyphs.text_extent(text, scale)
        self.layout.append((x, self.y, scale, text))
        self.regions.append(
            TextRegion(x=float(x), y=float(self.y), w=float(w), h=float(h),
                       text=text, label=label)
        )
        return w

    def row(self, extra_gap=0):
        self.y += self.t.row_gap + extra_gap

    def key_value_row(self, stem, value_text, value_x=None):
        """Caption at the left margin, value to its right on the same row."""
        t = self.t
        key = t.key_texts.get(stem)
        if key is not None:
            self.put(t.left_x, key, CATS.index(f"{stem}_key"))
        vx = t.value_x if value_x is None else value_x
        self.put(vx, value_text, CATS.index(f"{stem}_value"))
        self.row()


def generate_document(template, rng, doc_name):
    """Build one DocumentSample for a template; values vary per document."""
    t = template
    b = _DocBuilder(t, rng)

    jitter = int(rng.integers(0, 12))
    if "store_name" in t.key_texts:
        b.put(t.left_x, t.key_texts["store_name"], CATS.index("store_name_key"))
        b.row()
    b.put(t.left_x + jitter, t.store_name, CATS.index("store_name_value"), t.title_scale)
    b.row(extra_gap=(t.title_scale - 1) * glyphs.GLYPH_H)

    addr = f"{rng.integers(1, 9999)} {_STREETS[rng.integers(0, len(_STREETS))]} " \
           f"{_STREET_SUFFIX[rng.integers(0, len(_STREET_SUFFIX))]}"
    b.put(t.left_x, t.key_texts["store_addr"], CATS.index("store_addr_key"))
    b.put(t.left_x + 62, addr, CATS.index("store_addr_value"))
    b.row()

    if t.has_tel:
        b.key_value_row("tel", _tel(rng, t.tel_style), value_x=t.left_x + 50)
    b.key_value_row("date", _date(rng, t.date_style), value_x=t.left_x + 42)
    if t.has_time:
        b.key_value_row("time", _time(rng), value_x=t.left_x + 42)

    b.put(t.left_x, _SEPARATORS[rng.integers(0, len(_SEPARATORS))], 0)
    b.row()

    b.put(t.left_x, t.key_texts["prod_item"], CATS.index("prod_item_key"))
    if t.has_qty_key:
        b.put(t.qty_x, t.key_texts["prod_qty"], CATS.index("prod_qty_key"))
    b.put(t.price_x, t.key_texts["prod_price"], CATS.index("prod_price_key"))
    b.row()

    n_items = int(rng.integers(t.n_items_range[0], t.n_items_range[1] + 1))
    for _ in range(n_items):
        b.put(t.left_x, _PRODUCTS[rng.integers(0, len(_PRODUCTS))],
              CATS.index("prod_item_value"))
        b.put(t.qty_x, str(rng.integers(1, 10)), CATS.index("prod_qty_value"))
        b.put(t.price_x, _money(rng), CATS.index("prod_price_value"))
        b.row()

    b.put(t.left_x, _SEPARATORS[rng.integers(0, len(_SEPARATORS))], 0)
    b.row()

    b.key_value_row("subtotal", _money(rng))
    b.key_value_row("tax", _money(rng))
    if t.has_tips:
        b.key_value_row("tips", _money(rng))
    b.key_value_row("total", _money(rng))

    b.put(t.left_x + int(rng.integers(0, 30)),
          _FOOTERS[rng.integers(0, len(_FOOTERS))], 0)

    image = render_image(b.layout)
    sample = DocumentSample(
        image=image,
        regions=b.regions,
        source_id=doc_name,
        template_id=t.template_id,
    )
    sample.validate()
    value_cats = {r.label for r in b.regions if r.label in CATS.value_indices}
    if len(value_cats) < 6:
        raise ValidationError(
            f"document {doc_name} has only {len(value_cats)} value categories"
        )
    return sample


class MemoryCorpus:
    """In-memory corpus with the same read interface as dataset.Corpus."""

    def __init__(self, samples):
        self.samples = samples
        self.records = [
            SampleRecord(
                file_name=s.source_id,
                width=s.image.shape[2],
                height=s.image.shape[1],
                regions=s.regions,
                template_id=s.template_id,
            )
            for s in samples
        ]

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def generate_corpus(n_templates, docs_per_template, seed, test_fraction=0.2):
    """Generate (train, test) MemoryCorpus pairs with disjoint templates."""
    if n_templates < 2:
        raise ValidationError(f"need at least 2 templates, got {n_templates}")
    if docs_per_template < 1:
        raise ValidationError("docs_per_template must be >= 1")
    n_test = max(1, round(n_templates * test_fraction))
    n_train = n_templates - n_test
    if n_train < 1:
        raise ValidationError("split leaves no training templates")

    rng = np.random.Generator(np.random.PCG64(seed))
    used_names = set()
    templates = [
        make_template(rng, used_names, force_all=(i == 0 or i == n_train))
        for i in range(n_templates)
    ]
    splits = []
    for split, tpls in (("train", templates[:n_train]), ("test", templates[n_train:])):
        samples = []
        idx = 0
        for t in tpls:
            for _ in range(docs_per_template):
                name = f"images/doc_{idx:05d}.png"
                samples.append(generate_document(t, rng, name))
                idx += 1
        splits.append(MemoryCorpus(samples))
    return splits[0], splits[1]


def write_corpus(corpus, out_dir):
    """Write a corpus as annotations.jsonl plus PNG images."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    for sample in corpus.samples if isinstance(corpus, MemoryCorpus) else corpus:
        arr = (np.clip(sample.image, 0.0, 1.0) * 255).round().astype(np.uint8)
        img = Image.fromarray(arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0))
        img.save(out_dir / sample.source_id)
    (out_dir / "annotations.jsonl").write_text(
        serialize_annotations(corpus.records), encoding="utf-8"
    )


def label_distribution(records):
    """Count boxes per category name over a record sequence."""
    counts = {name: 0 for name in CATS.names}
    for rec in records:
        for r in rec.regions:
            if r.label is not None:
                counts[CATS.names[r.label]] += 1
    return counts
