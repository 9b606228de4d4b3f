"""Command-line entry points: train, infer, evaluate, export-latents, scale, toy."""

import argparse
import sys
import time
from pathlib import Path

from loguru import logger

from msved.analysis.attention import write_attention_jsonl
from msved.analysis.latents import (
    cosine_cluster_gap,
    export_latents,
    pairs_from_examples,
    pseudo_lemma_grouping,
    write_latents_tsv,
)
from msved.analysis.metrics import classifier_accuracy, exact_match_accuracy
from msved.analysis.scaling import DEFAULT_STEP, default_sizes, scaling_harness, write_scaling_table
from msved.common.config import TrainingConfig, TrainingMode, resolve_config
from msved.common.const import CHECKPOINT_FILENAME, METRICS_FILENAME
from msved.common.errors import (
    ConfigurationError,
    ContractError,
    DataError,
    MsvedError,
    ParseError,
    SchemaError,
)
from msved.data.corpus import (
    format_label_field,
    load_unlabeled,
    parse_label_field,
    parse_task3,
    words_from_examples,
)
from msved.data.toy import generate_toy_language, write_toy_language
from msved.decoding.inference import predict, predict_examples
from msved.training.checkpoint import Checkpoint
from msved.training.trainer import train

USAGE_ERRORS = (ConfigurationError, ParseError, SchemaError, DataError)


def setup_logging(level: str = "INFO"):
    try:
        logger.remove(0)
        logger.add(sys.stderr, level=level)
    except ValueError:
        # Handle the case where logger is already initialized
        pass


def _config_from_args(args) -> TrainingConfig:
    return resolve_config(
        getattr(args, "config", None),
        mode=getattr(args, "mode", None),
        seed=getattr(args, "seed", None),
        beam_size=getattr(args, "beam", None),
        max_epochs=getattr(args, "max_epochs", None),
        batch_size=getattr(args, "batch_size", None),
        checked=True if getattr(args, "checked", False) else None,
    )


def _unlabeled_words(args, config: TrainingConfig, labeled, dev):
    words = []
    if args.unlabeled:
        words = load_unlabeled(args.unlabeled, args.limit_unlabeled)
    if getattr(args, "task_words", False):
        seen = {w.form for w in words}
        words += [w for w in words_from_examples(list(labeled) + list(dev)) if w.form not in seen]
    if config.mode is TrainingMode.SEMI_SUP and not words:
        raise ConfigurationError("semi-sup mode needs unlabeled words (--unlabeled or --task-words)")
    return words


def cmd_train(args) -> int:
    config = _config_from_args(args)
    labeled = parse_task3(args.train)
    dev = parse_task3(args.dev)
    unlabeled = _unlabeled_words(args, config, labeled, dev)
    out = Path(args.out)
    run_info = {"paths": {
        "train": str(args.train), "dev": str(args.dev),
        "unlabeled": None if args.unlabeled is None else str(args.unlabeled), "out": str(out),
    }}
    result = train(config, labeled, unlabeled, dev, out, run_info=run_info)

    if args.test:
        best = result.best
        test = parse_task3(args.test, best.schema)
        predictions = predict_examples(best.model(), best.vocab, best.schema, test, best.config)
        accuracy = exact_match_accuracy([p.word for p in predictions], [ex.target for ex in test])
        logger.info(f"test accuracy {accuracy:.4f}")
    logger.info(f"Wrote {out / CHECKPOINT_FILENAME} and {out / METRICS_FILENAME}")
    return 0


def _read_requests(path: Path) -> list[tuple[str, tuple]]:
    """`source<TAB>labels[<TAB>anything]` lines."""
    requests = []
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\r\n").split("\t")
            if len(fields) not in (2, 3):
                raise ParseError(f"expected 2 or 3 tab-separated fields, found {len(fields)}", path, line_number)
            try:
                labels = parse_label_field(fields[1])
            except ValueError as e:
                raise ParseError(f"malformed labels {fields[1]!r}: {e}", path, line_number) from None
            requests.append((fields[0].strip(), labels))
    return requests


def cmd_infer(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    config = checkpoint.config.override(beam_size=args.beam)
    requests = _read_requests(Path(args.input))
    predictions = []
    if requests:
        predictions = predict(checkpoint.model(), checkpoint.vocab, checkpoint.schema, requests, config)

    with open(args.output, "w", encoding="utf-8") as f:
        for p in predictions:
            f.write(f"{p.source}\t{format_label_field(p.labels)}\t{p.word}\n")
    if args.dump_attention:
        count = write_attention_jsonl(predictions, checkpoint.schema.categories, args.dump_attention)
        logger.info(f"Wrote {count} attention records to {args.dump_attention}")
    logger.info(f"Wrote {len(predictions)} predictions to {args.output}")
    return 0


def _last_fields(path: str) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\r\n").split("\t")[-1].strip() for line in f if line.strip()]


def cmd_evaluate(args) -> int:
    if args.checkpoint:
        if not args.test:
            raise ConfigurationError("--checkpoint needs --test")
        checkpoint = Checkpoint.load(args.checkpoint)
        config = checkpoint.config.override(beam_size=args.beam)
        gold = parse_task3(args.test, checkpoint.schema)
        predictions = predict_examples(checkpoint.model(), checkpoint.vocab, checkpoint.schema, gold, config)
        predicted = [p.word for p in predictions]
        for category, acc in classifier_accuracy(
            checkpoint.model(), checkpoint.vocab, checkpoint.schema, gold
        ).items():
            logger.debug(f"classifier accuracy {category}: {acc:.4f}")
    else:
        if not (args.predictions and args.gold):
            raise ConfigurationError("evaluate needs --predictions and --gold, or --checkpoint and --test")
        gold = parse_task3(args.gold)
        predicted = _last_fields(args.predictions)

    accuracy = exact_match_accuracy(predicted, [ex.target for ex in gold])
    if args.report:
        with open(args.report, "w", encoding="utf-8") as f:
            f.write("source\tlabels\tgold\tprediction\n")
            for ex, word in zip(gold, predicted):
                if word != ex.target:
                    f.write(f"{ex.source}\t{format_label_field(ex.target_labels)}\t{ex.target}\t{word}\n")
    print(f"{accuracy:.4f}")
    return 0


def cmd_export_latents(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    groups = None
    words: list[str] = []
    if args.pairs:
        examples = parse_task3(args.pairs)
        groups = pseudo_lemma_grouping(pairs_from_examples(examples))
        words = list(groups.group_of)
    if args.words:
        words = [w.form for w in load_unlabeled(args.words)]
    if not words:
        raise ConfigurationError("export-latents needs --words or --pairs")

    rows = export_latents(words, checkpoint.model(), checkpoint.vocab, groups)
    write_latents_tsv(rows, args.out)
    logger.info(f"Wrote {len(rows)} latent vectors of dimension {checkpoint.dims.z_dim} to {args.out}")
    if groups is not None and groups.num_groups > 1:
        try:
            logger.info(f"cosine cluster gap {cosine_cluster_gap(rows):.4f}")
        except ContractError as e:
            logger.debug(f"no cluster gap: {e}")
    return 0


def cmd_scale(args) -> int:
    config = _config_from_args(args)
    if config.mode is not TrainingMode.SEMI_SUP:
        config = config.override(mode=TrainingMode.SEMI_SUP.value)
    labeled = parse_task3(args.train)
    dev = parse_task3(args.dev)
    test = parse_task3(args.test) if args.test else []
    unlabeled = load_unlabeled(args.unlabeled, args.limit_unlabeled)
    if args.sizes:
        try:
            sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
        except ValueError:
            raise ConfigurationError(f"--sizes must be comma-separated integers, got {args.sizes!r}") from None
    else:
        sizes = default_sizes(len(unlabeled), args.step)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = scaling_harness(config, labeled, unlabeled, dev, test, sizes, out)
    write_scaling_table(rows, out / "scaling.tsv")
    logger.info(f"Wrote {len(rows)} rows to {out / 'scaling.tsv'}")
    return 0


def cmd_toy(args) -> int:
    language = generate_toy_language(
        seed=args.seed if args.seed is not None else 0,
        n_lemmas=args.lemmas,
        n_train=args.train_size,
        n_dev=args.dev_size,
        n_test=args.test_size,
        n_unlabeled=args.unlabeled_size,
    )
    paths = write_toy_language(args.out, language)
    logger.info(f"Wrote toy language to {args.out}: {', '.join(p.name for p in paths.values())}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msved", description=__doc__)
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    def training_flags(p):
        p.add_argument("--mode", choices=[m.value for m in TrainingMode])
        p.add_argument("--train", required=True)
        p.add_argument("--dev", required=True)
        p.add_argument("--test")
        p.add_argument("--unlabeled")
        p.add_argument("--limit-unlabeled", type=int)
        p.add_argument("--config")
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--max-epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--checked", action="store_true", help="abort on NaN/Inf")

    p = sub.add_parser("train", help="train a model")
    training_flags(p)
    p.add_argument("--task-words", action="store_true", help="add train/dev words to the unlabeled data")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="reinflect (source, labels) pairs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--beam", type=int)
    p.add_argument("--dump-attention")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="exact-match accuracy")
    p.add_argument("--predictions")
    p.add_argument("--gold")
    p.add_argument("--checkpoint")
    p.add_argument("--test")
    p.add_argument("--beam", type=int)
    p.add_argument("--report", help="TSV of the wrong predictions")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-latents", help="posterior means of z for a word list")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--words")
    p.add_argument("--pairs", help="task-3 file whose pairs define pseudo-lemma groups")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_latents)

    p = sub.add_parser("scale", help="accuracy against the amount of unlabeled data")
    training_flags(p)
    p.add_argument("--sizes", help="comma-separated unlabeled prefix sizes")
    p.add_argument("--step", type=int, default=DEFAULT_STEP)
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("toy", help="write the toy suffixing language")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--lemmas", type=int, default=300)
    p.add_argument("--train-size", type=int, default=2000)
    p.add_argument("--dev-size", type=int, default=500)
    p.add_argument("--test-size", type=int, default=500)
    p.add_argument("--unlabeled-size", type=int, default=5000)
    p.set_defaults(func=cmd_toy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    start = time.perf_counter()
    try:
        status = args.func(args)
    except USAGE_ERRORS as e:
        logger.error(str(e))
        return 2
    except OSError as e:
        logger.error(f"{e.filename or ''}: {e.strerror or e}")
        return 2
    except MsvedError as e:
        logger.error(str(e))
        return 1
    logger.debug(f"{args.command} finished in {time.perf_counter() - start:.1f}s")
    return status


if __name__ == "__main__":
    sys.exit(main())
