import enum
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, get_type_hints

from loguru import logger

from .errors import ConfigurationError


class TrainingMode(enum.Enum):
    SD_SUP = "sd-sup"
    BD_SUP = "bd-sup"
    SEMI_SUP = "semi-sup"

    @classmethod
    def parse(cls, value: "str | TrainingMode") -> "TrainingMode":
        if isinstance(value, cls):
            return value
        normalized = str(value).strip().lower().replace("_", "-")
        for mode in cls:
            if mode.value == normalized:
                return mode
        raise ConfigurationError(
            f"Invalid mode: {value!r} (expected one of {', '.join(m.value for m in cls)})"
        )


class Interleave(enum.Enum):
    # separate optimizer updates for labeled and unlabeled batches
    ALTERNATE = "alternate"
    # one update on the sum of a labeled and an unlabeled batch
    JOINT = "joint"


@dataclass(frozen=True)
class TrainingConfig:
    """Every scalar knob of a training run.

    Defaults follow the published hyperparameters where they exist
    (lambda_m, beta, alpha, dimensions, patience, beam size). `ramp_steps`
    and `tau_rate` may be left as None; `resolve_schedules` fills them in
    once the number of updates per epoch is known.
    """

    mode: TrainingMode = TrainingMode.SD_SUP
    lambda_m: float = 0.2
    beta: float = 0.4
    alpha: float = 0.8
    classification_weight: float = 1.0
    labeled_autoencoder: bool = False

    char_dim: int = 300
    tag_dim: int = 200
    hidden_dim: int = 256
    z_dim: int = 150
    mlp_dim: int = 256
    attention_dim: int = 128

    tau_init: float = 1.0
    tau_min: float = 0.5
    tau_rate: float | None = None
    ramp_steps: int | None = None
    ramp_epochs: float = 2.0

    batch_size: int = 32
    interleave: Interleave = Interleave.ALTERNATE
    adadelta_rho: float = 0.95
    adadelta_eps: float = 1e-6
    grad_clip_norm: float = 5.0
    patience: int = 10
    max_epochs: int = 30
    seed: int = 1

    beam_size: int = 8
    max_decode_factor: float = 2.0
    decode_slack: int = 5

    checked: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", TrainingMode.parse(self.mode))
        if not isinstance(self.interleave, Interleave):
            try:
                object.__setattr__(self, "interleave", Interleave(str(self.interleave).lower()))
            except ValueError:
                raise ConfigurationError(f"Invalid interleave: {self.interleave!r}") from None

        if not 0.0 <= self.lambda_m <= 1.0:
            raise ConfigurationError(f"lambda_m must lie in [0, 1], got {self.lambda_m}")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigurationError(f"beta must lie in [0, 1), got {self.beta}")
        if self.alpha < 0.0:
            raise ConfigurationError(f"alpha must be nonnegative, got {self.alpha}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be at least 1, got {self.patience}")
        if not 0.0 < self.tau_min <= self.tau_init:
            raise ConfigurationError(
                f"need 0 < tau_min <= tau_init, got tau_min={self.tau_min}, tau_init={self.tau_init}"
            )
        if self.tau_rate is not None and self.tau_rate < 0.0:
            raise ConfigurationError(f"tau_rate must be nonnegative, got {self.tau_rate}")
        if self.ramp_steps is not None and self.ramp_steps < 0:
            raise ConfigurationError(f"ramp_steps must be nonnegative, got {self.ramp_steps}")
        for name in ("char_dim", "tag_dim", "hidden_dim", "z_dim", "mlp_dim", "attention_dim",
                     "batch_size", "max_epochs", "beam_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.adadelta_rho < 1.0 or self.adadelta_eps <= 0.0:
            raise ConfigurationError("adadelta_rho must lie in (0, 1) and adadelta_eps be positive")
        if self.grad_clip_norm <= 0.0:
            raise ConfigurationError(f"grad_clip_norm must be positive, got {self.grad_clip_norm}")

    @property
    def schedules_resolved(self) -> bool:
        return self.ramp_steps is not None and self.tau_rate is not None

    def resolve_schedules(self, steps_per_epoch: int) -> "TrainingConfig":
        """Fill in the lambda ramp length and the tau decay rate.

        The ramp defaults to `ramp_epochs` epochs of updates; tau decays
        exponentially so that it reaches tau_min a third of the way through
        `max_epochs`.
        """
        steps_per_epoch = max(1, steps_per_epoch)
        ramp_steps = self.ramp_steps
        if ramp_steps is None:
            ramp_steps = int(round(self.ramp_epochs * steps_per_epoch))
        tau_rate = self.tau_rate
        if tau_rate is None:
            horizon = max(1.0, self.max_epochs * steps_per_epoch / 3.0)
            tau_rate = math.log(self.tau_init / self.tau_min) / horizon
        return replace(self, ramp_steps=ramp_steps, tau_rate=tau_rate)

    def to_dict(self) -> dict[str, Any]:
        raw = asdict(self)
        raw["mode"] = self.mode.value
        raw["interleave"] = self.interleave.value
        return raw

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigurationError(f"Unknown config keys: {', '.join(unknown)}")
        hints = get_type_hints(cls)
        return cls(**{key: _coerce(key, value, hints[key]) for key, value in raw.items()})

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()[:16]

    def override(self, **changes) -> "TrainingConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        if not changes:
            return self
        merged = self.to_dict()
        merged.update(changes)
        return TrainingConfig.from_dict(merged)


def _coerce(key: str, value: Any, hint) -> Any:
    if value is None:
        return None
    if isinstance(hint, type) and issubclass(hint, enum.Enum):
        return value
    target = hint
    # Optional[X] and X | None
    args = getattr(hint, "__args__", None)
    if args:
        non_none = [a for a in args if a is not type(None)]
        target = non_none[0] if non_none else hint
        if isinstance(value, str) and value.strip().lower() in ("none", "null", ""):
            return None
    try:
        if target is bool:
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered in ("1", "true", "yes", "on"):
                    return True
                if lowered in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if target is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if target is float:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"Invalid value for {key}: {value!r}") from None
    return value


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Read a JSON object or `key=value` lines (# comments allowed)."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"Cannot read config file {path}: {e}") from e

    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(stripped)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"Invalid JSON in {path}: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{path} must hold a JSON object")
        return raw

    raw = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{line_number}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def resolve_config(config_path: str | Path | None = None, **flag_overrides) -> TrainingConfig:
    """Defaults, then the config file, then flags."""
    config = TrainingConfig()
    if config_path is not None:
        config = config.override(**read_config_file(config_path))
        logger.debug(f"Loaded config file {config_path}")
    return config.override(**flag_overrides)


def worker_threads() -> int:
    value = os.environ.get("MSVED_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        raise ConfigurationError(f"MSVED_THREADS must be an integer, got {value!r}") from None
