"""Optimization loop for the three training regimes.

Randomness is derived from (seed, stream, counter): parameter init from the
seed alone, objective noise from the global step, batch order from the
epoch. A run resumed from a checkpoint therefore replays the same updates
as an unbroken run.
"""

import json
import time
from contextlib import nullcontext
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from loguru import logger

from msved.analysis.metrics import exact_match_accuracy
from msved.common.config import Interleave, TrainingConfig, TrainingMode
from msved.common.const import (
    CHECKPOINT_FILENAME,
    LAST_CHECKPOINT_FILENAME,
    METRICS_FILENAME,
    NOISE_STREAM,
    RESOLVED_CONFIG_FILENAME,
    SHUFFLE_STREAM,
)
from msved.common.errors import ConfigurationError
from msved.core import tensor as T
from msved.core.stochastic import NoiseSource, anneal_state_at
from msved.data.batching import batch_indices, labeled_batch, unlabeled_batch
from msved.data.corpus import LabeledExample, TagSchema, UnlabeledWord, Vocab, build_schema_and_vocab
from msved.decoding.inference import predict_examples
from msved.model.objectives import combined_objective, labeled_objective, unlabeled_objective
from msved.model.params import ModelParams

from .checkpoint import Checkpoint, TrainState
from .optimizer import Adadelta


@dataclass(frozen=True)
class ScheduledBatch:
    labeled: np.ndarray | None = None
    unlabeled: np.ndarray | None = None

    @property
    def kind(self) -> str:
        if self.labeled is not None and self.unlabeled is not None:
            return "joint"
        return "labeled" if self.labeled is not None else "unlabeled"


def _cycled_order(count: int, needed: int, rng: np.random.Generator | None) -> np.ndarray:
    chunks, total = [], 0
    while total < needed:
        chunk = np.arange(count) if rng is None else rng.permutation(count)
        chunks.append(chunk)
        total += count
    return np.concatenate(chunks)[:needed]


def interleave_batches(
    n_labeled: int,
    n_unlabeled: int,
    mode: TrainingMode | str,
    batch_size: int,
    rng: np.random.Generator | None = None,
    interleave: Interleave = Interleave.ALTERNATE,
) -> list[ScheduledBatch]:
    """One epoch of batches.

    Every labeled example appears exactly once. In semi-sup mode unlabeled
    batches follow in proportion to the corpus sizes (100 labeled and 300
    unlabeled words give three unlabeled batches per labeled one), cycling
    through the unlabeled words as needed.
    """
    mode = TrainingMode.parse(mode)
    if n_labeled < 1:
        raise ConfigurationError("training needs at least one labeled example")
    labeled = batch_indices(n_labeled, batch_size, rng)
    if mode is not TrainingMode.SEMI_SUP:
        return [ScheduledBatch(labeled=b) for b in labeled]
    if n_unlabeled < 1:
        raise ConfigurationError("semi-sup mode needs unlabeled words")

    ratio = n_unlabeled / n_labeled
    if interleave is Interleave.JOINT:
        per_step = max(1, int(round(batch_size * ratio)))
        order = _cycled_order(n_unlabeled, per_step * len(labeled), rng)
        return [
            ScheduledBatch(labeled=b, unlabeled=order[i * per_step : (i + 1) * per_step])
            for i, b in enumerate(labeled)
        ]

    n_unlabeled_batches = max(1, int(round(len(labeled) * ratio)))
    order = _cycled_order(n_unlabeled, n_unlabeled_batches * batch_size, rng)
    unlabeled = [order[j * batch_size : (j + 1) * batch_size] for j in range(n_unlabeled_batches)]
    schedule, emitted = [], 0
    for i, b in enumerate(labeled):
        schedule.append(ScheduledBatch(labeled=b))
        due = (i + 1) * n_unlabeled_batches // len(labeled)
        schedule.extend(ScheduledBatch(unlabeled=u) for u in unlabeled[emitted:due])
        emitted = due
    return schedule


@dataclass
class TrainResult:
    best: Checkpoint
    history: list[float] = field(default_factory=list)
    stopped_early: bool = False


class Trainer:
    def __init__(
        self,
        config: TrainingConfig,
        schema: TagSchema,
        vocab: Vocab,
        labeled: Sequence[LabeledExample],
        unlabeled: Sequence[UnlabeledWord] = (),
        *,
        params: ModelParams | None = None,
        optimizer: Adadelta | None = None,
        state: TrainState | None = None,
        metrics_path: str | Path | None = None,
    ):
        if not labeled:
            raise ConfigurationError("training needs at least one labeled example")
        if config.mode is TrainingMode.SEMI_SUP and not unlabeled:
            raise ConfigurationError("semi-sup mode needs unlabeled words")
        self.labeled = list(labeled)
        self.unlabeled = list(unlabeled) if config.mode is TrainingMode.SEMI_SUP else []
        if not config.schedules_resolved:
            config = config.resolve_schedules(self.steps_per_epoch(config))
        self.config = config
        self.schema = schema
        self.vocab = vocab
        self.params = params or ModelParams.from_config(config, len(vocab), schema.sizes)
        self.optimizer = optimizer or Adadelta.from_config(self.params, config)
        self.state = state or TrainState()
        self.metrics_path = Path(metrics_path) if metrics_path else None
        self.best: Checkpoint | None = None
        self._schedule_cache: tuple[int, list[ScheduledBatch]] | None = None

    @classmethod
    def from_checkpoint(
        cls,
        checkpoint: Checkpoint,
        labeled: Sequence[LabeledExample],
        unlabeled: Sequence[UnlabeledWord] = (),
        metrics_path: str | Path | None = None,
    ) -> "Trainer":
        params = checkpoint.model()
        optimizer = Adadelta.from_config(params, checkpoint.config)
        optimizer.load_state(checkpoint.optimizer)
        return cls(
            checkpoint.config,
            checkpoint.schema,
            checkpoint.vocab,
            labeled,
            unlabeled,
            params=params,
            optimizer=optimizer,
            state=replace(checkpoint.state),
            metrics_path=metrics_path,
        )

    def steps_per_epoch(self, config: TrainingConfig | None = None) -> int:
        config = config or self.config
        return len(interleave_batches(
            len(self.labeled), len(self.unlabeled), config.mode, config.batch_size, None, config.interleave
        ))

    def schedule(self, epoch: int) -> list[ScheduledBatch]:
        if self._schedule_cache is None or self._schedule_cache[0] != epoch:
            rng = np.random.default_rng([self.config.seed, SHUFFLE_STREAM, epoch])
            batches = interleave_batches(
                len(self.labeled), len(self.unlabeled), self.config.mode,
                self.config.batch_size, rng, self.config.interleave,
            )
            self._schedule_cache = (epoch, batches)
        return self._schedule_cache[1]

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(
            config=self.config,
            schema=self.schema,
            vocab=self.vocab,
            dims=self.params.dims,
            params=self.params.snapshot(),
            optimizer={group: {n: v.copy() for n, v in values.items()}
                       for group, values in self.optimizer.state().items()},
            state=replace(self.state),
            anneal=anneal_state_at(self.state.step, self.config),
        )

    def _write_metrics(self, record: dict):
        if self.metrics_path is None:
            return
        with open(self.metrics_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def train_step(self, item: ScheduledBatch) -> dict:
        config = self.config
        step = self.state.step
        anneal = anneal_state_at(step, config)
        noise = NoiseSource([config.seed, NOISE_STREAM, step])

        self.params.zero_grads()
        with T.checked_mode(True) if config.checked else nullcontext():
            labeled = None if item.labeled is None else labeled_batch(
                [self.labeled[i] for i in item.labeled], self.vocab, self.schema
            )
            unlabeled = None if item.unlabeled is None else unlabeled_batch(
                [self.unlabeled[i] for i in item.unlabeled], self.vocab
            )
            if labeled is not None and unlabeled is not None:
                objective = combined_objective(self.params, labeled, unlabeled, anneal, noise, config)
            elif labeled is not None:
                objective = labeled_objective(self.params, labeled, anneal, noise, config)
            else:
                objective = unlabeled_objective(self.params, unlabeled, anneal, noise, config)
            T.backward(T.neg(objective.value))
            clip = self.optimizer.step(self.params)

        self.state.step += 1
        record = {
            "event": "step",
            "step": step,
            "epoch": self.state.epoch,
            "mode": config.mode.value,
            "kind": item.kind,
            "lambda": anneal.lam,
            "tau": anneal.tau,
            "alpha": config.alpha,
            "grad_norm": None if clip is None else clip.norm,
            **objective.metrics(),
        }
        self._write_metrics(record)
        logger.debug(
            f"step {step} {item.kind}: objective={record['objective']:.4f} "
            f"lambda={anneal.lam:.3f} tau={anneal.tau:.3f}"
        )
        return record

    def advance(self, n_steps: int) -> list[dict]:
        """Run n optimizer updates, rolling over epoch boundaries without evaluating."""
        records = []
        for _ in range(n_steps):
            schedule = self.schedule(self.state.epoch)
            records.append(self.train_step(schedule[self.state.position]))
            self.state.position += 1
            if self.state.position >= len(schedule):
                self.state.epoch += 1
                self.state.position = 0
        return records

    def train_epoch(self) -> list[dict]:
        """Finish the current epoch."""
        return self.advance(len(self.schedule(self.state.epoch)) - self.state.position)

    def evaluate(self, dev: Sequence[LabeledExample]) -> float:
        predictions = predict_examples(self.params, self.vocab, self.schema, dev, self.config)
        return exact_match_accuracy([p.word for p in predictions], [ex.target for ex in dev])

    def record_epoch(self, epoch: int, dev_accuracy: float) -> bool:
        improved = dev_accuracy > self.state.best_dev_accuracy
        if improved:
            self.state.best_dev_accuracy = dev_accuracy
            self.state.best_epoch = epoch
            self.state.epochs_since_best = 0
            self.best = self.checkpoint()
        else:
            self.state.epochs_since_best += 1
        self._write_metrics({
            "event": "epoch",
            "epoch": epoch,
            "step": self.state.step,
            "dev_accuracy": dev_accuracy,
            "best_dev_accuracy": self.state.best_dev_accuracy,
        })
        return improved

    def should_stop(self) -> bool:
        return (
            self.state.epochs_since_best >= self.config.patience
            or self.state.epoch >= self.config.max_epochs
        )

    def fit(self, dev: Sequence[LabeledExample], out_dir: str | Path | None = None) -> TrainResult:
        if not dev:
            raise ConfigurationError("dev corpus is empty")
        out_dir = Path(out_dir) if out_dir else None
        if out_dir is not None and self.best is None and self.state.best_epoch >= 0:
            best_path = out_dir / CHECKPOINT_FILENAME
            if best_path.exists():
                self.best = Checkpoint.load(best_path)

        history = []
        while not self.should_stop():
            start = time.perf_counter()
            epoch = self.state.epoch
            self.train_epoch()
            accuracy = self.evaluate(dev)
            history.append(accuracy)
            improved = self.record_epoch(epoch, accuracy)
            logger.info(
                f"epoch {epoch}: dev accuracy {accuracy:.4f} (best {self.state.best_dev_accuracy:.4f} "
                f"at epoch {self.state.best_epoch}), {time.perf_counter() - start:.1f}s"
            )
            if out_dir is not None:
                if improved:
                    self.best.save(out_dir / CHECKPOINT_FILENAME)
                self.checkpoint().save(out_dir / LAST_CHECKPOINT_FILENAME)

        stopped_early = self.state.epochs_since_best >= self.config.patience
        if stopped_early:
            logger.info(f"No dev improvement for {self.config.patience} epochs; stopping")
        if self.best is None:
            self.best = self.checkpoint()
        return TrainResult(self.best, history, stopped_early)


def write_resolved_config(config: TrainingConfig, out_dir: str | Path, extra: dict | None = None) -> Path:
    path = Path(out_dir) / RESOLVED_CONFIG_FILENAME
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"config": config.to_dict(), "config_hash": config.config_hash(), "seed": config.seed,
               "mode": config.mode.value, **(extra or {})}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def train(
    config: TrainingConfig,
    labeled: Sequence[LabeledExample],
    unlabeled: Sequence[UnlabeledWord],
    dev: Sequence[LabeledExample],
    out_dir: str | Path | None = None,
    *,
    schema: TagSchema | None = None,
    vocab: Vocab | None = None,
    run_info: dict | None = None,
) -> TrainResult:
    """Train from scratch and return the checkpoint with the best dev accuracy."""
    if not dev:
        raise ConfigurationError("dev corpus is empty")
    if schema is None or vocab is None:
        built_schema, built_vocab = build_schema_and_vocab(labeled, unlabeled, (ex.source for ex in dev))
        schema, vocab = schema or built_schema, vocab or built_vocab
    labeled = [replace(ex, target_labels=schema.complete(ex.target_labels)) for ex in labeled]
    dev = [replace(ex, target_labels=schema.complete(ex.target_labels)) for ex in dev]

    metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / METRICS_FILENAME
        metrics_path.write_text("", encoding="utf-8")

    start = time.perf_counter()
    trainer = Trainer(config, schema, vocab, labeled, unlabeled, metrics_path=metrics_path)
    logger.info(
        f"Training {trainer.config.mode.value}: {len(labeled)} labeled, {len(trainer.unlabeled)} unlabeled, "
        f"{len(dev)} dev, {trainer.steps_per_epoch()} steps/epoch, {trainer.params.num_parameters} parameters"
    )
    if out_dir is not None:
        write_resolved_config(trainer.config, out_dir, run_info)
    result = trainer.fit(dev, out_dir)
    logger.info(
        f"Finished in {time.perf_counter() - start:.1f}s; best dev accuracy "
        f"{result.best.state.best_dev_accuracy:.4f}"
    )
    return result
