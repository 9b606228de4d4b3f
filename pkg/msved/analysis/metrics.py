from typing import Sequence

import numpy as np

from msved.common.errors import ContractError
from msved.core import tensor as T
from msved.data.batching import CharBatch
from msved.data.corpus import LabeledExample, TagSchema, Vocab, normalize
from msved.model import network as N
from msved.model.params import ModelParams


def exact_match_accuracy(predictions: Sequence[str], golds: Sequence[str]) -> float:
    if len(predictions) != len(golds):
        raise ContractError(f"{len(predictions)} predictions for {len(golds)} gold words")
    if not golds:
        raise ContractError("accuracy of an empty list is undefined")
    hits = sum(normalize(p) == normalize(g) for p, g in zip(predictions, golds))
    return hits / len(golds)


def classifier_accuracy(
    params: ModelParams,
    vocab: Vocab,
    schema: TagSchema,
    examples: Sequence[LabeledExample],
    batch_size: int = 64,
) -> dict[str, float]:
    """Per-category accuracy of argmax q(y_k | target word) against the gold target labels."""
    if not examples:
        raise ContractError("classifier accuracy needs at least one example")
    hits = np.zeros(schema.size)
    with T.no_grad():
        for start in range(0, len(examples), batch_size):
            chunk = examples[start : start + batch_size]
            batch = CharBatch.from_words([ex.target for ex in chunk], vocab)
            gold = np.stack([schema.label_ids(ex.target_labels) for ex in chunk])
            posterior = N.classify_tags(params, N.encode(params, batch).u)
            for k, log_probs in enumerate(posterior.log_probs):
                hits[k] += np.sum(np.argmax(log_probs.values, axis=-1) == gold[:, k])
    return {c: float(hits[k] / len(examples)) for k, c in enumerate(schema.categories)}
