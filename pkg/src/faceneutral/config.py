"""Training configuration and its line-oriented file format.

Config files are plain ``key = value`` text: blank lines and ``#``
comments are skipped, unknown keys are rejected. The canonical rendering
(:func:`config_to_text`) is what gets echoed into checkpoints, so a parsed
and re-rendered config is byte-stable.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .losses import LossWeights


class ConfigError(ValueError):
    """Bad key, value, or syntax in a config file."""


@dataclass(frozen=True)
class TrainConfig:
    weights: LossWeights = LossWeights()
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 300
    batch_size: int = 16
    seed: int = 0
    train_fraction: float = 0.7
    d_steps_per_g_step: int = 1
    paper_literal_decoder_relu: bool = False
    generator_linear_head: bool = False
    saturating_gan: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1 or self.d_steps_per_g_step < 1:
            raise ConfigError("epochs, batch_size, d_steps_per_g_step must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")


_WEIGHT_KEYS = tuple(f.name for f in fields(LossWeights))
_FLOAT_KEYS = ("learning_rate", "beta1", "beta2", "train_fraction")
_INT_KEYS = ("epochs", "batch_size", "seed", "d_steps_per_g_step")
_BOOL_KEYS = ("paper_literal_decoder_relu", "generator_linear_head", "saturating_gan")


def _parse_bool(key: str, raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def parse_config_text(text: str) -> TrainConfig:
    seen: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen[key] = value

    weight_kwargs = {}
    kwargs = {}
    for key, value in seen.items():
        try:
            if key in _WEIGHT_KEYS:
                weight_kwargs[key] = float(value)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key in _BOOL_KEYS:
                kwargs[key] = _parse_bool(key, value)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{key}: bad value {value!r}") from None
    try:
        return TrainConfig(weights=LossWeights(**weight_kwargs), **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> TrainConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_to_text(config: TrainConfig) -> str:
    lines = [f"{k} = {repr(getattr(config.weights, k))}" for k in _WEIGHT_KEYS]
    for key in _FLOAT_KEYS:
        lines.append(f"{key} = {repr(getattr(config, key))}")
    for key in _INT_KEYS:
        lines.append(f"{key} = {getattr(config, key)}")
    for key in _BOOL_KEYS:
        lines.append(f"{key} = {'true' if getattr(config, key) else 'false'}")
    return "\n".join(lines) + "\n"
