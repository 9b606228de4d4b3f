"""Task-3 reinflection triples, unlabeled word lists, tag schema and vocabulary."""

import enum
import hashlib
import json
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from loguru import logger

from msved.common.const import NONE_LABEL, SPECIAL_SYMBOLS, UNK_ID
from msved.common.errors import ContractError, DataError, ParseError, SchemaError


def normalize(word: str) -> str:
    return unicodedata.normalize("NFC", word)


@dataclass(frozen=True)
class LabeledExample:
    source: str
    target_labels: tuple[tuple[str, str], ...]
    target: str

    def label_dict(self) -> dict[str, str]:
        return dict(self.target_labels)


@dataclass(frozen=True)
class UnlabeledWord:
    form: str
    provenance: str = "external"


class ParseState(enum.Enum):
    WAITING_FOR_KEY = "waiting_for_key"
    IN_KEY = "in_key"
    IN_VALUE = "in_value"


def parse_label_field(field: str) -> tuple[tuple[str, str], ...]:
    """Split `key=value,key=value` into ordered pairs.

    Raises ValueError with a description when the field is malformed.
    """
    pairs = []
    state = ParseState.WAITING_FOR_KEY
    key = value = ""

    def finish():
        if not key.strip():
            raise ValueError("empty tag category")
        if not value.strip():
            raise ValueError(f"empty label for category {key.strip()!r}")
        pairs.append((key.strip(), value.strip()))

    for char in field:
        if state == ParseState.WAITING_FOR_KEY:
            if char.isspace():
                continue
            if char in "=,":
                raise ValueError(f"unexpected {char!r} where a category name should start")
            key, value = char, ""
            state = ParseState.IN_KEY
        elif state == ParseState.IN_KEY:
            if char == "=":
                state = ParseState.IN_VALUE
            elif char == ",":
                raise ValueError(f"category {key.strip()!r} has no '=value'")
            else:
                key += char
        elif state == ParseState.IN_VALUE:
            if char == ",":
                finish()
                state = ParseState.WAITING_FOR_KEY
            elif char == "=":
                raise ValueError(f"second '=' in the label of category {key.strip()!r}")
            else:
                value += char

    if state == ParseState.IN_KEY:
        raise ValueError(f"category {key.strip()!r} has no '=value'")
    if state == ParseState.IN_VALUE:
        finish()
    if not pairs:
        raise ValueError("no labels")

    categories = [k for k, _ in pairs]
    if len(set(categories)) != len(categories):
        raise ValueError("repeated tag category")
    return tuple(pairs)


def format_label_field(labels: Iterable[tuple[str, str]], skip_none: bool = True) -> str:
    return ",".join(f"{k}={v}" for k, v in labels if not (skip_none and v == NONE_LABEL))


class TagSchema:
    """Ordered tag categories, each with an ordered label set starting at NONE."""

    def __init__(self, categories: Sequence[str], labels: dict[str, Sequence[str]]):
        if len(set(categories)) != len(categories):
            raise SchemaError("tag category names must be unique")
        self.categories = tuple(categories)
        self.labels: dict[str, tuple[str, ...]] = {}
        for category in self.categories:
            values = tuple(labels.get(category, ()))
            if len(set(values)) != len(values):
                raise SchemaError(f"labels of category {category!r} must be unique")
            if NONE_LABEL not in values:
                raise SchemaError(f"category {category!r} lacks the {NONE_LABEL} label")
            self.labels[category] = values
        self._index = {c: {v: i for i, v in enumerate(vs)} for c, vs in self.labels.items()}

    @property
    def size(self) -> int:
        return len(self.categories)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(self.labels[c]) for c in self.categories)

    def label_index(self, category: str, label: str) -> int:
        if category not in self._index:
            raise DataError(f"unknown tag category {category!r}")
        try:
            return self._index[category][label]
        except KeyError:
            raise DataError(f"unknown label {label!r} for tag category {category!r}") from None

    def complete(self, labels: Iterable[tuple[str, str]]) -> tuple[tuple[str, str], ...]:
        """Full label vector in schema order, NONE where a category is absent."""
        given = dict(labels)
        for category, label in given.items():
            self.label_index(category, label)
        return tuple((c, given.get(c, NONE_LABEL)) for c in self.categories)

    def label_ids(self, labels: Iterable[tuple[str, str]]) -> np.ndarray:
        return np.array([self.label_index(c, v) for c, v in self.complete(labels)], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"categories": list(self.categories),
                "labels": {c: list(self.labels[c]) for c in self.categories}}

    @classmethod
    def from_dict(cls, raw: dict) -> "TagSchema":
        try:
            return cls(raw["categories"], raw["labels"])
        except (KeyError, TypeError) as e:
            raise SchemaError(f"malformed schema: {e}") from e

    def schema_hash(self) -> str:
        payload = json.dumps(self.to_dict(), ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]

    def __eq__(self, other):
        return isinstance(other, TagSchema) and self.to_dict() == other.to_dict()

    def __repr__(self):
        return f"TagSchema({', '.join(f'{c}:{n}' for c, n in zip(self.categories, self.sizes))})"


class Vocab:
    """Character inventory; indices 0-3 are the special symbols."""

    def __init__(self, symbols: Sequence[str]):
        symbols = tuple(symbols)
        if symbols[: len(SPECIAL_SYMBOLS)] != SPECIAL_SYMBOLS:
            raise SchemaError("vocabulary must start with the special symbols")
        if len(set(symbols)) != len(symbols):
            raise SchemaError("vocabulary symbols must be unique")
        self.symbols = symbols
        self._index = {s: i for i, s in enumerate(symbols)}

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, symbol):
        return symbol in self._index

    @property
    def characters(self) -> tuple[str, ...]:
        return self.symbols[len(SPECIAL_SYMBOLS):]

    def encode(self, word: str) -> list[int]:
        return [self._index.get(ch, UNK_ID) for ch in normalize(word)]

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.symbols[i] for i in ids if i >= len(SPECIAL_SYMBOLS))

    def to_dict(self) -> dict:
        return {"symbols": list(self.symbols)}

    @classmethod
    def from_dict(cls, raw: dict) -> "Vocab":
        return cls(raw["symbols"])

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.symbols == other.symbols


def _read_lines(path: Path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as f:
            return f.read().splitlines()
    except UnicodeDecodeError as e:
        raise ParseError(f"not valid UTF-8: {e}", path) from e


def parse_task3_lines(lines: Iterable[str], schema: TagSchema | None = None, path=None) -> list[LabeledExample]:
    examples = []
    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        fields = line.rstrip("\r\n").split("\t")
        if len(fields) != 3:
            raise ParseError(f"expected 3 tab-separated fields, found {len(fields)}", path, line_number)
        source, label_field, target = (normalize(f.strip()) for f in fields)
        if not source or not target:
            raise ParseError("empty word", path, line_number)
        try:
            labels = parse_label_field(label_field)
        except ValueError as e:
            raise ParseError(f"malformed labels {label_field!r}: {e}", path, line_number) from None
        if schema is not None:
            try:
                labels = schema.complete(labels)
            except DataError as e:
                raise ParseError(str(e), path, line_number) from None
        examples.append(LabeledExample(source, labels, target))
    return examples


def parse_task3(path: str | Path, schema: TagSchema | None = None) -> list[LabeledExample]:
    """Read `source<TAB>key=value,...<TAB>target` lines.

    With a schema, every example is completed to the full label vector
    (absent categories become NONE) and unknown labels are rejected.
    """
    path = Path(path)
    examples = parse_task3_lines(_read_lines(path), schema, path)
    logger.debug(f"Parsed {len(examples)} labeled examples from {path}")
    return examples


def serialize_task3(examples: Iterable[LabeledExample], path: str | Path, skip_none: bool = True):
    """Write examples in the task-3 layout; NONE labels are left implicit by default."""
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            field = format_label_field(ex.target_labels, skip_none) or format_label_field(ex.target_labels, False)
            f.write(f"{ex.source}\t{field}\t{ex.target}\n")


def build_schema_and_vocab(
    labeled: Sequence[LabeledExample],
    unlabeled: Sequence[UnlabeledWord] = (),
    extra_words: Iterable[str] = (),
) -> tuple[TagSchema, Vocab]:
    """Categories and labels in first-occurrence order; characters from every corpus, in code-point order."""
    if not labeled:
        raise ContractError("building a schema needs at least one labeled example")

    categories: list[str] = []
    labels: dict[str, list[str]] = {}
    characters: set[str] = set()

    def add_chars(word: str):
        for ch in normalize(word):
            characters.add(ch)

    for ex in labeled:
        for category, label in ex.target_labels:
            if category not in labels:
                categories.append(category)
                labels[category] = [NONE_LABEL]
            if label not in labels[category]:
                labels[category].append(label)
        add_chars(ex.source)
        add_chars(ex.target)
    for word in unlabeled:
        add_chars(word.form)
    for word in extra_words:
        add_chars(word)

    return TagSchema(categories, labels), Vocab(SPECIAL_SYMBOLS + tuple(sorted(characters)))


def load_unlabeled(path: str | Path, limit: int | None = None, provenance: str = "external") -> list[UnlabeledWord]:
    """One word per line; NFC-normalized, deduplicated in first-occurrence order."""
    path = Path(path)
    seen: dict[str, None] = {}
    for line in _read_lines(path):
        if limit is not None and len(seen) >= limit:
            break
        word = normalize(line.strip())
        if word:
            seen.setdefault(word)
    words = [UnlabeledWord(w, provenance) for w in seen]
    logger.debug(f"Loaded {len(words)} unlabeled words from {path}")
    return words


def words_from_examples(examples: Iterable[LabeledExample]) -> list[UnlabeledWord]:
    """Surface forms of labeled data, usable as unlabeled words."""
    seen: dict[str, None] = {}
    for ex in examples:
        seen.setdefault(ex.source)
        seen.setdefault(ex.target)
    return [UnlabeledWord(w, "task") for w in seen]


def write_word_list(words: Iterable[str], path: str | Path):
    with open(path, "w", encoding="utf-8") as f:
        for word in words:
            f.write(f"{word}\n")
