"""Binary checkpoints.

Layout: the 8-byte magic, a little-endian uint32 format version, a uint64
header length, a UTF-8 JSON header (sorted keys) and then the raw tensors as
little-endian float64 in the order the header lists them.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from loguru import logger

from msved.common.config import TrainingConfig
from msved.common.const import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from msved.common.errors import MsvedError, SchemaError
from msved.core.stochastic import AnnealState
from msved.data.corpus import TagSchema, Vocab
from msved.model.params import ModelDims, ModelParams

_PREFIX = struct.Struct("<8sIQ")


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    position: int = 0
    best_dev_accuracy: float = -1.0
    best_epoch: int = -1
    epochs_since_best: int = 0

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class Checkpoint:
    config: TrainingConfig
    schema: TagSchema
    vocab: Vocab
    dims: ModelDims
    params: dict[str, np.ndarray]
    optimizer: dict[str, dict[str, np.ndarray]]
    state: TrainState
    anneal: AnnealState

    def model(self) -> ModelParams:
        return ModelParams.from_snapshot(self.dims, self.params)

    def to_bytes(self) -> bytes:
        arrays: list[tuple[str, np.ndarray]] = [(f"param/{n}", v) for n, v in self.params.items()]
        for group in ("sq_grad", "sq_delta"):
            arrays += [(f"{group}/{n}", v) for n, v in self.optimizer.get(group, {}).items()]

        header = {
            "config": self.config.to_dict(),
            "config_hash": self.config.config_hash(),
            "schema": self.schema.to_dict(),
            "schema_hash": self.schema.schema_hash(),
            "vocab": self.vocab.to_dict(),
            "dims": self.dims.to_dict(),
            "seed": self.config.seed,
            "state": self.state.to_dict(),
            "anneal": {"step": self.anneal.step, "lambda": self.anneal.lam, "tau": self.anneal.tau},
            "tensors": [[name, list(values.shape)] for name, values in arrays],
        }
        header_bytes = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
        chunks = [_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header_bytes)), header_bytes]
        chunks += [np.ascontiguousarray(values, dtype="<f8").tobytes() for _, values in arrays]
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < _PREFIX.size:
            raise SchemaError("checkpoint is truncated")
        magic, version, header_len = _PREFIX.unpack_from(data)
        if magic != CHECKPOINT_MAGIC:
            raise SchemaError("not a checkpoint file")
        if version != CHECKPOINT_VERSION:
            raise SchemaError(f"unsupported checkpoint version {version}")
        offset = _PREFIX.size
        try:
            header = json.loads(data[offset : offset + header_len].decode("utf-8"))
            return cls._from_header(header, data, offset + header_len)
        except MsvedError:
            raise
        except (ValueError, KeyError, TypeError, AttributeError) as e:
            raise SchemaError(f"malformed checkpoint header: {e!r}") from None

    @classmethod
    def _from_header(cls, header: dict, data: bytes, offset: int) -> "Checkpoint":
        tensors = {}
        for name, shape in header["tensors"]:
            count = int(np.prod(shape)) if shape else 1
            end = offset + 8 * count
            if end > len(data):
                raise SchemaError(f"checkpoint is truncated inside tensor {name}")
            tensors[name] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
            offset = end
        if offset != len(data):
            raise SchemaError("trailing bytes after the last checkpoint tensor")

        config = TrainingConfig.from_dict(header["config"])
        schema = TagSchema.from_dict(header["schema"])
        if schema.schema_hash() != header["schema_hash"]:
            raise SchemaError("checkpoint schema does not match its recorded hash")

        def group(prefix):
            return {n.split("/", 1)[1]: v for n, v in tensors.items() if n.startswith(prefix + "/")}

        anneal = header["anneal"]
        return cls(
            config=config,
            schema=schema,
            vocab=Vocab.from_dict(header["vocab"]),
            dims=ModelDims.from_dict(header["dims"]),
            params=group("param"),
            optimizer={"sq_grad": group("sq_grad"), "sq_delta": group("sq_delta")},
            state=TrainState(**header["state"]),
            anneal=AnnealState(anneal["step"], anneal["lambda"], anneal["tau"]),
        )

    def save(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(self.to_bytes())
        tmp.replace(path)
        logger.debug(f"Saved checkpoint at step {self.state.step} to {path}")

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
