import time
from dataclasses import dataclass
from typing import Iterable, Sequence

from loguru import logger

from msved.common.config import TrainingConfig, worker_threads
from msved.data.corpus import LabeledExample, TagSchema, Vocab
from msved.model.params import ModelParams

from .beam import DecodeResult, reinflect_all


@dataclass(frozen=True)
class Prediction:
    source: str
    labels: tuple[tuple[str, str], ...]
    word: str
    result: DecodeResult


def predict(
    params: ModelParams,
    vocab: Vocab,
    schema: TagSchema,
    requests: Sequence[tuple[str, Iterable[tuple[str, str]]]],
    config: TrainingConfig,
    beam_size: int | None = None,
    threads: int | None = None,
) -> list[Prediction]:
    """Reinflect (source word, labels) pairs. Missing categories decode as NONE."""
    start = time.perf_counter()
    completed = [schema.complete(labels) for _, labels in requests]
    encoded = [(vocab.encode(source), schema.label_ids(labels)) for (source, _), labels in zip(requests, completed)]
    results = reinflect_all(
        params,
        encoded,
        beam_size or config.beam_size,
        max_decode_factor=config.max_decode_factor,
        decode_slack=config.decode_slack,
        threads=threads or worker_threads(),
    )
    truncated = sum(r.truncated for r in results)
    if truncated:
        logger.debug(f"{truncated} of {len(results)} decodes hit the length cap")
    logger.debug(f"Decoded {len(results)} words in {time.perf_counter() - start:.2f}s")
    return [
        Prediction(source, labels, vocab.decode(r.chars), r)
        for (source, _), labels, r in zip(requests, completed, results)
    ]


def predict_examples(
    params: ModelParams,
    vocab: Vocab,
    schema: TagSchema,
    examples: Sequence[LabeledExample],
    config: TrainingConfig,
    **kwargs,
) -> list[Prediction]:
    return predict(params, vocab, schema, [(ex.source, ex.target_labels) for ex in examples], config, **kwargs)
