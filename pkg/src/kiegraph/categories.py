"""Category taxonomy and the character dictionary for text encoding."""

from dataclasses import dataclass, field

from .errors import ValidationError

OTHERS = 0

# Canonical ordering: index 0 is "others", then key/value pairs. A key's
# value category is always the next index.
_PAIR_STEMS = (
    "store_name",
    "store_addr",
    "tel",
    "date",
    "time",
    "prod_item",
    "prod_qty",
    "prod_price",
    "subtotal",
    "tax",
    "tips",
    "total",
)

CATEGORY_NAMES = ("others",) + tuple(
    f"{stem}_{kind}" for stem in _PAIR_STEMS for kind in ("key", "value")
)


@dataclass(frozen=True)
class CategorySet:
    """The 25 region categories: 12 key/value pairs plus `others`."""

    names: tuple = CATEGORY_NAMES

    def __post_init__(self):
        if len(self.names) != 25:
            raise ValidationError(f"expected 25 categories, got {len(self.names)}")
        if len(set(self.names)) != 25:
            raise ValidationError("category names must be unique")

    @property
    def key_indices(self):
        return tuple(range(1, 25, 2))

    @property
    def value_indices(self):
        return tuple(range(2, 26, 2))

    @property
    def key_to_value(self):
        return {k: k + 1 for k in self.key_indices}

    def index(self, name):
        return self.names.index(name)

    def is_valid_label(self, label):
        return 0 <= label < 25


DEFAULT_CATEGORIES = CategorySet()

# Special characters follow the dictionary layout used for receipts:
# punctuation and currency marks that correlate with key information.
_SPECIALS = (
    "/", "\\", ".", "$", "€", "₤", "¥",
    ":", "-", "*", "#", "(", ")", "%", "@", "!", "'",
    "&", "=", ">", "+", '"', "×", "?", "<", "[", "]", "_",
)

_DIGITS = tuple("0123456789")
_LOWER = tuple("abcdefghijklmnopqrstuvwxyz")
_UPPER = tuple("ABCDEFGHIJKLMNOPQRSTUVWXYZ")


@dataclass(frozen=True)
class CharDictionary:
    """Fixed 91-entry character dictionary; index 90 is the unknown token."""

    chars: tuple = _DIGITS + _LOWER + _UPPER + _SPECIALS
    _lookup: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.chars) != 90:
            raise ValidationError(
                f"expected 90 known characters before unknown, got {len(self.chars)}"
            )
        if len(set(self.chars)) != 90:
            raise ValidationError("dictionary characters must be unique")
        object.__setattr__(self, "_lookup", {c: i for i, c in enumerate(self.chars)})

    def __len__(self):
        return 91

    @property
    def unknown_index(self):
        return 90

    def index(self, char):
        """Total lookup: any character maps to a valid index."""
        return self._lookup.get(char, 90)


DEFAULT_DICTIONARY = CharDictionary()
