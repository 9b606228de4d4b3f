from pathlib import Path
import time

import modal

from msved import RESOLVED_CONFIG_FILENAME, SERVICE_REGIONS

app = modal.App("msved-reinflection")

# container specification for training runs
train_image = (
    modal.Image.debian_slim(python_version="3.12")
    .uv_pip_install(
        "numpy>=1.26",
        "loguru>=0.7",
    )
    .env({
        "MSVED_THREADS": "4",
    })
    .add_local_dir(Path(__file__).parent / "msved", remote_path="/root/msved")
)

runs_volume = modal.Volume.from_name("msved-runs", create_if_missing=True)
RUNS_DIR = Path("/runs")

MINUTES = 60  # seconds in a minute

with train_image.imports():
    from loguru import logger

    from msved.analysis.scaling import run_scaling_job, scaling_harness
    from msved.common.config import TrainingConfig
    from msved.data.corpus import UnlabeledWord, parse_task3_lines


@app.function(
    image=train_image,
    cpu=4,
    timeout=120 * MINUTES,
    region=SERVICE_REGIONS,
    volumes={RUNS_DIR: runs_volume},
)
def train_remote(config: dict, train_text: str, dev_text: str, unlabeled_words: list[str], run_name: str) -> dict:
    """Train one model on the given corpora and keep its outputs on the runs volume.

    Raises:
        RuntimeError: If training fails for any reason.
    """
    from msved.training.trainer import train

    try:
        out_dir = RUNS_DIR / run_name
        result = train(
            TrainingConfig.from_dict(config),
            parse_task3_lines(train_text.splitlines()),
            [UnlabeledWord(w) for w in unlabeled_words],
            parse_task3_lines(dev_text.splitlines()),
            out_dir,
            run_info={"run_name": run_name},
        )
        runs_volume.commit()
        logger.info(f"Run {run_name} stored in volume msved-runs")
        return {
            "run_name": run_name,
            "best_dev_accuracy": result.best.state.best_dev_accuracy,
            "best_epoch": result.best.state.best_epoch,
            "epochs": len(result.history),
            "resolved_config": (out_dir / RESOLVED_CONFIG_FILENAME).read_text(),
        }
    except Exception as e:
        raise RuntimeError(f"Training run {run_name} failed: {e}")


@app.function(image=train_image, cpu=4, timeout=120 * MINUTES, region=SERVICE_REGIONS)
def train_scaling_point(job):
    try:
        return run_scaling_job(job)
    except Exception as e:
        raise RuntimeError(f"Scaling run for {job.size} unlabeled words failed: {e}")


@app.function(image=train_image, timeout=240 * MINUTES, region=SERVICE_REGIONS)
def scale_remote(config: dict, train_text: str, dev_text: str, test_text: str,
                 unlabeled_words: list[str], sizes: list[int]) -> list[dict]:
    """Fan the scaling harness out: one container per unlabeled size."""
    try:
        rows = scaling_harness(
            TrainingConfig.from_dict(config),
            parse_task3_lines(train_text.splitlines()),
            [UnlabeledWord(w) for w in unlabeled_words],
            parse_task3_lines(dev_text.splitlines()),
            parse_task3_lines(test_text.splitlines()),
            sizes,
            map_fn=lambda _, jobs: train_scaling_point.map(jobs),
        )
    except Exception as e:
        raise RuntimeError(f"Scaling harness failed: {e}")
    return [vars(row) for row in rows]


@app.local_entrypoint()
def main(
    mode: str = "sd-sup",
    train: str = "",
    dev: str = "",
    test: str = "",
    unlabeled: str = "",
    sizes: str = "",
    run_name: str = "",
    seed: int = 1,
    max_epochs: int = 30,
):
    """Train remotely, or run the scaling harness when --sizes is given.

    Without --train the toy language is generated locally and shipped.
    """
    from msved.data.toy import generate_toy_language, write_toy_language

    config = TrainingConfig(mode=mode, seed=seed, max_epochs=max_epochs).to_dict()
    if not train:
        toy_dir = Path(".toy")
        paths = write_toy_language(toy_dir, generate_toy_language(seed))
        train, dev, test, unlabeled = (str(paths[k]) for k in ("train", "dev", "test", "unlabeled"))

    train_text = Path(train).read_text(encoding="utf-8")
    dev_text = Path(dev).read_text(encoding="utf-8")
    words = Path(unlabeled).read_text(encoding="utf-8").split() if unlabeled else []

    start_time = time.time()
    if sizes:
        config["mode"] = "semi-sup"
        test_text = Path(test).read_text(encoding="utf-8") if test else ""
        rows = scale_remote.remote(
            config, train_text, dev_text, test_text, words, [int(s) for s in sizes.split(",")]
        )
        for row in rows:
            print(f"{row['size']}\t{row['mode']}\t{row['dev_accuracy']:.4f}\t{row['test_accuracy']}")
    else:
        summary = train_remote.remote(config, train_text, dev_text, words, run_name or f"{mode}-seed{seed}")
        print(f"Best dev accuracy {summary['best_dev_accuracy']:.4f} at epoch {summary['best_epoch']}")
    print(f"Time taken: {time.time() - start_time:.1f} seconds")
