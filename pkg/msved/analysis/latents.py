"""Pseudo-lemma groups and latent-mean export for clustering probes."""

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from msved.common.errors import ContractError
from msved.core import tensor as T
from msved.data.batching import CharBatch
from msved.data.corpus import LabeledExample, Vocab
from msved.model import network as N
from msved.model.params import ModelParams


@dataclass(frozen=True)
class PseudoLemmaGroups:
    """A partition of words; group ids are assigned in first-occurrence order."""

    group_of: dict[str, int]

    @property
    def num_groups(self) -> int:
        return len(set(self.group_of.values()))

    def groups(self) -> list[list[str]]:
        out: dict[int, list[str]] = {}
        for word, gid in self.group_of.items():
            out.setdefault(gid, []).append(word)
        return [out[g] for g in sorted(out)]


class _UnionFind:
    def __init__(self):
        self.parent: dict[str, str] = {}

    def add(self, x: str):
        self.parent.setdefault(x, x)

    def find(self, x: str) -> str:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def pseudo_lemma_grouping(word_pairs: Iterable[tuple[str, str]]) -> PseudoLemmaGroups:
    """Connected components of the graph whose edges are the pairs."""
    uf = _UnionFind()
    order: dict[str, None] = {}
    for a, b in word_pairs:
        for w in (a, b):
            uf.add(w)
            order.setdefault(w)
        uf.union(a, b)
    ids: dict[str, int] = {}
    group_of = {}
    for word in order:
        root = uf.find(word)
        group_of[word] = ids.setdefault(root, len(ids))
    return PseudoLemmaGroups(group_of)


def pairs_from_examples(examples: Iterable[LabeledExample]) -> list[tuple[str, str]]:
    return [(ex.source, ex.target) for ex in examples]


@dataclass(frozen=True)
class LatentRow:
    word: str
    group: int
    mu: np.ndarray


def export_latents(
    words: Sequence[str],
    params: ModelParams,
    vocab: Vocab,
    groups: PseudoLemmaGroups | None = None,
    batch_size: int = 64,
) -> list[LatentRow]:
    """The posterior mean of z for every word; no variance is added. Ungrouped words get -1."""
    rows = []
    with T.no_grad():
        for start in range(0, len(words), batch_size):
            chunk = list(words[start : start + batch_size])
            mu = N.infer_z(params, N.encode(params, CharBatch.from_words(chunk, vocab)).u).mu.values
            for word, vector in zip(chunk, mu):
                group = -1 if groups is None else groups.group_of.get(word, -1)
                rows.append(LatentRow(word, group, vector.copy()))
    return rows


def write_latents_tsv(rows: Iterable[LatentRow], path: str | Path):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            values = "\t".join(repr(float(v)) for v in row.mu)
            f.write(f"{row.word}\t{row.group}\t{values}\n")


def cosine_cluster_gap(rows: Sequence[LatentRow]) -> float:
    """Mean cosine similarity within groups minus mean similarity across groups.

    Rows with group -1 are ignored.
    """
    rows = [r for r in rows if r.group >= 0]
    if len(rows) < 2:
        raise ContractError("need at least two grouped rows")
    vectors = np.stack([r.mu for r in rows])
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    unit = vectors / np.where(norms == 0.0, 1.0, norms)
    sims = unit @ unit.T
    groups = np.array([r.group for r in rows])
    same = groups[:, None] == groups[None, :]
    off_diagonal = ~np.eye(len(rows), dtype=bool)
    intra, inter = same & off_diagonal, ~same
    if not intra.any() or not inter.any():
        raise ContractError("need at least one within-group and one cross-group pair")
    return float(sims[intra].mean() - sims[inter].mean())
