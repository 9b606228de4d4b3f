import json

import numpy as np

from msved.analysis.attention import attention_records, write_attention_jsonl
from msved.conftest import tiny_config
from msved.decoding.beam import DecodeResult
from msved.decoding.inference import Prediction, predict


def prediction(*rows):
    result = DecodeResult((4,) * (len(rows) - 1), -1.0, False, tuple(np.array(r) for r in rows))
    return Prediction("ev", (("case", "DAT"), ("num", "NONE")), "x" * (len(rows) - 1), result)


def test_records_cover_every_position():
    records = list(attention_records([prediction([0.9, 0.1], [0.25, 0.75]), prediction([0.5, 0.5])], ["case", "num"]))
    assert [(r["example"], r["position"]) for r in records] == [(0, 0), (0, 1), (1, 0)]
    assert records[1]["weights"] == {"case": 0.25, "num": 0.75}


def test_jsonl_is_one_record_per_line(tmp_path):
    path = tmp_path / "attention.jsonl"
    count = write_attention_jsonl([prediction([0.9, 0.1], [0.25, 0.75])], ["case", "num"], path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert count == len(lines) == 2
    assert json.loads(lines[0]) == {"example": 0, "position": 0, "weights": {"case": 0.9, "num": 0.1}}


def test_decoded_attention_rows_are_distributions(tiny_params, tiny_corpus, tmp_path):
    _, schema, vocab = tiny_corpus
    predictions = predict(tiny_params, vocab, schema, [("kedi", [("case", "LOC")])], tiny_config(beam_size=2))
    path = tmp_path / "attention.jsonl"
    count = write_attention_jsonl(predictions, schema.categories, path)
    assert count == len(predictions[0].result.attention)
    for line in path.read_text(encoding="utf-8").splitlines():
        weights = json.loads(line)["weights"]
        assert set(weights) == {"case", "num"}
        assert abs(sum(weights.values()) - 1.0) < 1e-9
