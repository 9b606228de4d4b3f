import os

import pytest

from msved.common.config import TrainingConfig
from msved.core import tensor as T
from msved.data.corpus import build_schema_and_vocab, parse_task3_lines
from msved.model.params import ModelDims, ModelParams

TINY_LINES = [
    "ev\tcase=DAT\teve",
    "kedi\tcase=LOC,num=PL\tkedilerde",
    "gel\tcase=ACC\tgeli",
]


def tiny_config(**changes) -> TrainingConfig:
    """A model small enough to gradient-check and train in a test."""
    base = dict(char_dim=4, tag_dim=3, hidden_dim=5, z_dim=3, mlp_dim=4, attention_dim=3,
                batch_size=2, ramp_steps=4, tau_rate=0.1, seed=3)
    base.update(changes)
    return TrainingConfig(**base)


@pytest.fixture(autouse=True)
def checked_tensors():
    """Every test runs with non-finite values raising; tests that need the lenient path opt out."""
    with T.checked_mode():
        yield


@pytest.fixture
def tiny_corpus():
    examples = parse_task3_lines(TINY_LINES)
    schema, vocab = build_schema_and_vocab(examples)
    return examples, schema, vocab


@pytest.fixture
def tiny_params(tiny_corpus):
    _, schema, vocab = tiny_corpus
    return ModelParams.from_config(tiny_config(), len(vocab), schema.sizes)


@pytest.fixture
def tiny_dims(tiny_params) -> ModelDims:
    return tiny_params.dims


def pytest_collection_modifyitems(config, items):
    if os.environ.get("MSVED_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set MSVED_RUN_SLOW=1 to run end-to-end training checks")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
