#!/usr/bin/env python3

import os
import sys


def summarize(language):
    """
    Print corpus sizes and how the training pairs group into pseudo-lemmas.

    Args:
        language (ToyLanguage): Generated toy language
    """
    from msved.analysis.latents import pairs_from_examples, pseudo_lemma_grouping

    print(f"Lemmas: {len(language.lemmas)}, forms: {len(language.lemma_of)}")
    print(f"Triples: {len(language.train)} train / {len(language.dev)} dev / {len(language.test)} test")
    print(f"Unlabeled words: {len(language.unlabeled)}")

    groups = pseudo_lemma_grouping(pairs_from_examples(language.train))
    # a pseudo-lemma is pure when all its words share one true lemma
    pure = sum(len({language.lemma_of[w] for w in group}) == 1 for group in groups.groups())
    print(f"Pseudo-lemma groups in train: {groups.num_groups} ({pure} pure)")


def main():
    # Get output directory and seed from the command line
    out_dir = sys.argv[1] if len(sys.argv) > 1 else 'toy'
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0

    from msved.data.toy import generate_toy_language, write_toy_language

    language = generate_toy_language(seed)
    paths = write_toy_language(out_dir, language)
    for name, path in paths.items():
        print(f"✓ {name}: {path}")
    summarize(language)


if __name__ == "__main__":
    sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), ".."))
    try:
        import numpy  # noqa: F401
    except ImportError:
        print("Error: numpy is not installed.")
        print("Install it with: uv sync")
        sys.exit(1)

    main()
