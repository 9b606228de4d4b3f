"""Learnable weights of the encoder, the inference networks and the decoder.

GRU weight matrices pack the reset, update and candidate gates side by side
as three column blocks of width `hidden_dim`, in that order.
"""

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from msved.common.config import TrainingConfig
from msved.common.const import INIT_STREAM
from msved.common.errors import DimensionError, SchemaError
from msved.core import tensor as T
from msved.core.tensor import Tensor


@dataclass(frozen=True)
class ModelDims:
    vocab_size: int
    tag_sizes: tuple[int, ...]
    char_dim: int = 300
    tag_dim: int = 200
    hidden_dim: int = 256
    z_dim: int = 150
    mlp_dim: int = 256
    attention_dim: int = 128

    @classmethod
    def from_config(cls, config: TrainingConfig, vocab_size: int, tag_sizes) -> "ModelDims":
        return cls(
            vocab_size=vocab_size,
            tag_sizes=tuple(int(n) for n in tag_sizes),
            char_dim=config.char_dim,
            tag_dim=config.tag_dim,
            hidden_dim=config.hidden_dim,
            z_dim=config.z_dim,
            mlp_dim=config.mlp_dim,
            attention_dim=config.attention_dim,
        )

    @property
    def encoding_dim(self) -> int:
        return 2 * self.hidden_dim

    @property
    def num_tags(self) -> int:
        return len(self.tag_sizes)

    def to_dict(self) -> dict:
        raw = asdict(self)
        raw["tag_sizes"] = list(self.tag_sizes)
        return raw

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelDims":
        raw = dict(raw)
        raw["tag_sizes"] = tuple(raw["tag_sizes"])
        return cls(**raw)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        """Name and shape of every parameter tensor, in a fixed order."""
        H, E, D = self.hidden_dim, self.char_dim, self.tag_dim
        shapes: dict[str, tuple[int, ...]] = {"char_emb": (self.vocab_size, E)}
        for k, n in enumerate(self.tag_sizes):
            shapes[f"tag_emb.{k}"] = (n, D)
        for direction in ("enc_fwd", "enc_bwd"):
            shapes[f"{direction}.W_x"] = (E, 3 * H)
            shapes[f"{direction}.W_h"] = (H, 3 * H)
            shapes[f"{direction}.b"] = (3 * H,)
        for head in ("z_mu", "z_logvar"):
            shapes.update(_mlp_shapes(head, self.encoding_dim, self.mlp_dim, self.z_dim))
        for k, n in enumerate(self.tag_sizes):
            shapes.update(_mlp_shapes(f"cls.{k}", self.encoding_dim, self.mlp_dim, n))
        shapes["att.W_s"] = (H, self.attention_dim)
        shapes["att.W_t"] = (D, self.attention_dim)
        shapes["att.v"] = (self.attention_dim, 1)
        shapes["dec.W_x"] = (E + self.z_dim + D, 3 * H)
        shapes["dec.W_h"] = (H, 3 * H)
        shapes["dec.b"] = (3 * H,)
        shapes["dec_init.W"] = (self.z_dim, H)
        shapes["dec_init.b"] = (H,)
        shapes["out.W"] = (H, self.vocab_size)
        shapes["out.b"] = (self.vocab_size,)
        return shapes


def _mlp_shapes(prefix: str, n_in: int, n_hidden: int, n_out: int) -> dict[str, tuple[int, ...]]:
    return {
        f"{prefix}.W1": (n_in, n_hidden),
        f"{prefix}.b1": (n_hidden,),
        f"{prefix}.W2": (n_hidden, n_out),
        f"{prefix}.b2": (n_out,),
    }


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    limit = np.sqrt(6.0 / (shape[0] + shape[-1]))
    return rng.uniform(-limit, limit, size=shape)


class ModelParams:
    """Named parameter tensors. Iteration order is the order of `ModelDims.shapes`."""

    def __init__(self, dims: ModelDims, tensors: dict[str, Tensor]):
        expected = dims.shapes()
        if list(tensors) != list(expected):
            raise SchemaError("parameter names do not match the model dimensions")
        for name, t in tensors.items():
            if t.shape != expected[name]:
                raise DimensionError(f"parameter {name}", expected[name], t.shape)
        self.dims = dims
        self.tensors = tensors

    @classmethod
    def initialize(cls, dims: ModelDims, seed: int) -> "ModelParams":
        """Fan-scaled uniform matrices, zero biases, zero output layers for mu and log-variance."""
        rng = np.random.default_rng([seed, INIT_STREAM])
        tensors = {}
        for name, shape in dims.shapes().items():
            if len(shape) == 1 or name in ("z_mu.W2", "z_logvar.W2"):
                values = np.zeros(shape)
            else:
                values = _glorot(rng, shape)
            tensors[name] = T.parameter(values)
        return cls(dims, tensors)

    @classmethod
    def from_config(cls, config: TrainingConfig, vocab_size: int, tag_sizes) -> "ModelParams":
        return cls.initialize(ModelDims.from_config(config, vocab_size, tag_sizes), config.seed)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.tensors.values())

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def tag_embedding(self, k: int) -> Tensor:
        return self.tensors[f"tag_emb.{k}"]

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {n: t for n, t in self.tensors.items() if n == prefix or n.startswith(prefix + ".")}

    @property
    def num_parameters(self) -> int:
        return int(sum(t.values.size for t in self))

    def zero_grads(self):
        T.zero_grads(self)

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self.tensors.items()}

    def load_snapshot(self, snapshot: dict[str, np.ndarray]):
        missing = set(self.tensors) - set(snapshot)
        if missing:
            raise SchemaError(f"snapshot lacks parameters: {', '.join(sorted(missing))}")
        for name, t in self.tensors.items():
            values = np.asarray(snapshot[name], dtype=np.float64)
            if values.shape != t.shape:
                raise DimensionError(f"parameter {name}", t.shape, values.shape)
            t.values = values.copy()

    @classmethod
    def from_snapshot(cls, dims: ModelDims, snapshot: dict[str, np.ndarray]) -> "ModelParams":
        params = cls(dims, {n: T.parameter(np.zeros(s)) for n, s in dims.shapes().items()})
        params.load_snapshot(snapshot)
        return params

    def clone(self) -> "ModelParams":
        return ModelParams.from_snapshot(self.dims, self.snapshot())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t.values)) for t in self)
