import json
from pathlib import Path
from typing import Iterable, Sequence

from msved.decoding.inference import Prediction


def attention_records(predictions: Sequence[Prediction], categories: Sequence[str]) -> Iterable[dict]:
    """One record per example and decoded position: the weight of every tag category.

    Position i is the step that emitted output character i; the last
    position is the step that emitted EOS.
    """
    for example_id, prediction in enumerate(predictions):
        for position, weights in enumerate(prediction.result.attention):
            yield {
                "example": example_id,
                "position": position,
                "weights": {c: float(w) for c, w in zip(categories, weights)},
            }


def write_attention_jsonl(predictions: Sequence[Prediction], categories: Sequence[str], path: str | Path) -> int:
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in attention_records(predictions, categories):
            f.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
            count += 1
    return count
