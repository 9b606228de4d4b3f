"""Accuracy as a function of the amount of unlabeled data.

One model is trained per unlabeled-prefix size. Size 0 has no unlabeled
term and is trained in bd-sup mode; every other size is semi-sup on the
first `size` unlabeled words.
"""

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from loguru import logger

from msved.common.config import TrainingConfig, TrainingMode
from msved.common.errors import ConfigurationError
from msved.data.corpus import LabeledExample, TagSchema, UnlabeledWord, Vocab, build_schema_and_vocab
from msved.decoding.inference import predict_examples
from msved.training.trainer import train

from .metrics import exact_match_accuracy

DEFAULT_STEP = 10_000


@dataclass(frozen=True)
class ScalingJob:
    size: int
    config: TrainingConfig
    labeled: tuple[LabeledExample, ...]
    unlabeled: tuple[UnlabeledWord, ...]
    dev: tuple[LabeledExample, ...]
    test: tuple[LabeledExample, ...]
    schema: TagSchema
    vocab: Vocab
    out_dir: str | None = None


@dataclass(frozen=True)
class ScalingRow:
    size: int
    mode: str
    dev_accuracy: float
    test_accuracy: float | None
    seconds: float


def default_sizes(n_unlabeled: int, step: int = DEFAULT_STEP) -> list[int]:
    if step < 1:
        raise ConfigurationError(f"scaling step must be positive, got {step}")
    return list(range(0, n_unlabeled + 1, step))


def scaling_jobs(
    config: TrainingConfig,
    labeled: Sequence[LabeledExample],
    unlabeled: Sequence[UnlabeledWord],
    dev: Sequence[LabeledExample],
    test: Sequence[LabeledExample] = (),
    sizes: Iterable[int] | None = None,
    out_dir: str | Path | None = None,
) -> list[ScalingJob]:
    if config.mode is not TrainingMode.SEMI_SUP:
        raise ConfigurationError(f"the scaling harness runs in semi-sup mode, not {config.mode.value}")
    sizes = sorted(set(default_sizes(len(unlabeled)) if sizes is None else sizes))
    if not sizes:
        raise ConfigurationError("no unlabeled sizes requested")
    if sizes[0] < 0:
        raise ConfigurationError(f"unlabeled sizes must be nonnegative, got {sizes[0]}")
    positive = [s for s in sizes if s > 0]
    if positive and positive[0] > len(unlabeled):
        raise ConfigurationError(
            f"only {len(unlabeled)} unlabeled words, fewer than the first step of {positive[0]}"
        )
    if positive and positive[-1] > len(unlabeled):
        raise ConfigurationError(f"only {len(unlabeled)} unlabeled words, asked for {positive[-1]}")

    extra = [ex.source for ex in list(dev) + list(test)]
    schema, vocab = build_schema_and_vocab(labeled, unlabeled, extra)
    jobs = []
    for size in sizes:
        job_config = config if size > 0 else config.override(mode=TrainingMode.BD_SUP.value)
        jobs.append(ScalingJob(
            size=size,
            config=job_config,
            labeled=tuple(labeled),
            unlabeled=tuple(unlabeled[:size]),
            dev=tuple(dev),
            test=tuple(test),
            schema=schema,
            vocab=vocab,
            out_dir=None if out_dir is None else str(Path(out_dir) / f"size_{size}"),
        ))
    return jobs


def run_scaling_job(job: ScalingJob) -> ScalingRow:
    start = time.perf_counter()
    result = train(
        job.config, job.labeled, job.unlabeled, job.dev, job.out_dir,
        schema=job.schema, vocab=job.vocab, run_info={"unlabeled_size": job.size},
    )
    test_accuracy = None
    if job.test:
        predictions = predict_examples(result.best.model(), job.vocab, job.schema, job.test, job.config)
        test_accuracy = exact_match_accuracy([p.word for p in predictions], [ex.target for ex in job.test])
    row = ScalingRow(
        size=job.size,
        mode=job.config.mode.value,
        dev_accuracy=result.best.state.best_dev_accuracy,
        test_accuracy=test_accuracy,
        seconds=time.perf_counter() - start,
    )
    logger.info(f"unlabeled size {row.size}: dev {row.dev_accuracy:.4f}, test {row.test_accuracy}")
    return row


def scaling_harness(
    config: TrainingConfig,
    labeled: Sequence[LabeledExample],
    unlabeled: Sequence[UnlabeledWord],
    dev: Sequence[LabeledExample],
    test: Sequence[LabeledExample] = (),
    sizes: Iterable[int] | None = None,
    out_dir: str | Path | None = None,
    map_fn: Callable = map,
) -> list[ScalingRow]:
    """One row per requested size, in increasing size order.

    `map_fn` runs the trainings; pass a remote map to fan them out.
    """
    jobs = scaling_jobs(config, labeled, unlabeled, dev, test, sizes, out_dir)
    rows = sorted(map_fn(run_scaling_job, jobs), key=lambda r: r.size)
    return rows


def write_scaling_table(rows: Sequence[ScalingRow], path: str | Path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("size\tmode\tdev_accuracy\ttest_accuracy\n")
        for row in rows:
            test = "" if row.test_accuracy is None else f"{row.test_accuracy:.4f}"
            f.write(f"{row.size}\t{row.mode}\t{row.dev_accuracy:.4f}\t{test}\n")
