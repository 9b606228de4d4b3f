"""A small, fully regular suffixing language for end-to-end checks.

Every lemma is a CVCVC stem. Forms concatenate the stem with a number, a
possessor and a case suffix, in that order, so each form determines its
lemma and its cell.
"""

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from loguru import logger

from msved.common.const import NONE_LABEL
from msved.common.errors import ConfigurationError

from .corpus import LabeledExample, UnlabeledWord, serialize_task3, write_word_list

CONSONANTS = "bdgkmprstz"
VOWELS = "aeou"

SUFFIXES = {
    "num": {"SG": "", "PL": "ler"},
    "poss": {NONE_LABEL: "", "PSS1S": "im", "PSS2S": "in"},
    "case": {"NOM": "", "ACC": "i", "DAT": "e", "LOC": "de"},
}
CATEGORIES = tuple(SUFFIXES)

Cell = tuple[tuple[str, str], ...]


def all_cells() -> list[Cell]:
    return [
        tuple(zip(CATEGORIES, labels))
        for labels in itertools.product(*(SUFFIXES[c].keys() for c in CATEGORIES))
    ]


def inflect(lemma: str, cell: Cell) -> str:
    return lemma + "".join(SUFFIXES[category][label] for category, label in cell)


@dataclass
class ToyLanguage:
    train: list[LabeledExample]
    dev: list[LabeledExample]
    test: list[LabeledExample]
    unlabeled: list[UnlabeledWord]
    lemma_of: dict[str, str] = field(repr=False)

    @property
    def lemmas(self) -> list[str]:
        return sorted(set(self.lemma_of.values()))


def _draw_lemmas(rng: np.random.Generator, count: int) -> list[str]:
    capacity = len(CONSONANTS) ** 3 * len(VOWELS) ** 2
    if count > capacity:
        raise ConfigurationError(f"at most {capacity} distinct lemmas fit the stem shape, asked for {count}")
    lemmas: dict[str, None] = {}
    while len(lemmas) < count:
        c = rng.choice(list(CONSONANTS), size=3)
        v = rng.choice(list(VOWELS), size=2)
        lemmas.setdefault(f"{c[0]}{v[0]}{c[1]}{v[1]}{c[2]}")
    return list(lemmas)


def generate_toy_language(
    seed: int = 0,
    n_lemmas: int = 300,
    n_train: int = 2000,
    n_dev: int = 500,
    n_test: int = 500,
    n_unlabeled: int = 5000,
) -> ToyLanguage:
    """Deterministic in `seed`: triples are distinct (lemma, source cell, target cell) draws."""
    rng = np.random.default_rng(seed)
    lemmas = _draw_lemmas(rng, n_lemmas)
    cells = all_cells()

    lemma_of = {inflect(lemma, cell): lemma for lemma in lemmas for cell in cells}
    forms = list(lemma_of)

    n_labeled = n_train + n_dev + n_test
    n_pairs = len(lemmas) * len(cells) * (len(cells) - 1)
    if n_labeled > n_pairs:
        raise ConfigurationError(f"only {n_pairs} distinct triples exist, asked for {n_labeled}")
    if n_unlabeled > len(forms):
        raise ConfigurationError(f"only {len(forms)} distinct forms exist, asked for {n_unlabeled}")

    seen = set()
    examples = []
    while len(examples) < n_labeled:
        lemma = lemmas[rng.integers(len(lemmas))]
        src, tgt = rng.choice(len(cells), size=2, replace=False)
        key = (lemma, int(src), int(tgt))
        if key in seen:
            continue
        seen.add(key)
        examples.append(LabeledExample(inflect(lemma, cells[src]), cells[tgt], inflect(lemma, cells[tgt])))

    picked = rng.choice(len(forms), size=n_unlabeled, replace=False)
    unlabeled = [UnlabeledWord(forms[i]) for i in picked]

    language = ToyLanguage(
        train=examples[:n_train],
        dev=examples[n_train : n_train + n_dev],
        test=examples[n_train + n_dev :],
        unlabeled=unlabeled,
        lemma_of=lemma_of,
    )
    logger.debug(
        f"Toy language: {len(lemmas)} lemmas, {len(forms)} forms, "
        f"{n_train}/{n_dev}/{n_test} triples, {n_unlabeled} unlabeled words"
    )
    return language


def write_toy_language(directory: str | Path, language: ToyLanguage) -> dict[str, Path]:
    """Write train/dev/test task-3 files, the unlabeled word list and a form-to-lemma table."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {name: directory / f"{name}.tsv" for name in ("train", "dev", "test")}
    for name, path in paths.items():
        serialize_task3(getattr(language, name), path)

    paths["unlabeled"] = directory / "unlabeled.txt"
    write_word_list((w.form for w in language.unlabeled), paths["unlabeled"])

    paths["lemmas"] = directory / "lemmas.tsv"
    with open(paths["lemmas"], "w", encoding="utf-8") as f:
        for form, lemma in language.lemma_of.items():
            f.write(f"{form}\t{lemma}\n")
    return paths
