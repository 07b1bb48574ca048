"""Model and training configuration, read from flat ``key = value`` files.

Keys follow the hyper-parameter table names in snake case (``hidden_size``,
``head_number``, ``distance_calculation`` ...).  Defaults are desk-scale.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    pass


_CHOICES = {
    "optimizer": ("adam", "bertadam", "sgd"),
    "aggregation_level": ("token", "utterance"),
    "activation_function": ("relu",),
    "distance_calculation": ("absolute", "relative"),
    "temporal_encoding": ("sinusoid", "learnable"),
    "inference_graph": ("predicted", "gold"),
    "train_dtype": ("float32", "float64"),
}


@dataclass
class ModelConfig:
    # architecture
    hidden_size: int = 64
    word_embedding_dimension: int = 64
    head_number: int = 4
    encoder_layer_number: int = 2
    decoder_layer_number: int = 2
    feed_forward_size: int = 256
    activation_function: str = "relu"
    graph_layer_number: int = 1
    gat_layer_number: int = 2
    gat_embedding_dimension: int = 64
    max_turns: int = 16  # rows of the learnable temporal table
    max_entity_slots: int = 5  # linking classes are 0..max_entity_slots
    leaky_slope: float = 0.01
    dropout: float = 0.0  # reserved; must stay 0
    # history modelling
    use_hsg: bool = True
    use_temporal: bool = True
    hsg_pointer: bool = True
    aggregation_level: str = "token"
    distance_calculation: str = "absolute"
    temporal_encoding: str = "sinusoid"
    retention: int | None = 50
    concat_turns: int = 1  # previous (question, answer) pairs placed in the input
    inference_graph: str = "predicted"
    # decoding and execution
    max_decode_len: int = 24
    grammar_mask: bool = True
    approx_tolerance: int = 1
    # objective and optimization
    loss_component_weight: tuple = (1.0, 1.0, 1.0, 1.0)
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    train_dtype: str = "float32"
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self):
        for key, allowed in _CHOICES.items():
            val = getattr(self, key)
            if val not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {val!r}")
        if self.hidden_size % self.head_number:
            raise ConfigError(f"hidden_size {self.hidden_size} not divisible by head_number {self.head_number}")
        if self.word_embedding_dimension != self.hidden_size:
            raise ConfigError("word_embedding_dimension must equal hidden_size")
        if len(self.loss_component_weight) != 4 or any(w < 0 for w in self.loss_component_weight):
            raise ConfigError("loss_component_weight needs four nonnegative weights")
        if self.dropout != 0.0:
            raise ConfigError("dropout is not implemented; leave it at 0")
        for key in ("max_turns", "max_entity_slots", "max_decode_len", "batch_size", "concat_turns"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.retention is not None and self.retention < 0:
            raise ConfigError("retention must be >= 0 or 'none'")
        return self

    @property
    def lambdas(self):
        return tuple(float(w) for w in self.loss_component_weight)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "extra"}
        out["loss_component_weight"] = list(self.lambdas)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "loss_component_weight" in d:
            d["loss_component_weight"] = tuple(d["loss_component_weight"])
        return cls(**d)

    def dumps(self) -> str:
        lines = []
        for key, val in self.to_dict().items():
            if isinstance(val, (list, tuple)):
                val = ",".join(_fmt(v) for v in val)
            else:
                val = _fmt(val)
            lines.append(f"{key} = {val}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _convert(name: str, text: str, default):
    text = text.strip()
    if name == "loss_component_weight":
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) == 1:
            parts = parts * 4
        return tuple(float(p) for p in parts)
    if name == "retention":
        return None if text.lower() in ("none", "unbounded", "") else int(text)
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    value = text.lower().replace("-", "")
    return value


def parse_config(text: str, base: ModelConfig | None = None) -> ModelConfig:
    """Apply ``key = value`` lines (``#`` comments allowed) on top of ``base``."""
    base = base or ModelConfig()
    defaults = {f.name: getattr(base, f.name) for f in fields(base) if f.name != "extra"}
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.lower().replace(" ", "_").replace("-", "_")
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            changes[key] = _convert(key, val, defaults[key])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    try:
        return base.replace(**changes)
    except ConfigError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, base: ModelConfig | None = None) -> ModelConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read(), base)


def parse_temporal(text: str) -> tuple[str, str]:
    """``relative-learnable``, ``absolute:sinusoid`` and similar -> (distance, encoding)."""
    for sep in ("-", ":", ",", "/", "x"):
        parts = text.lower().split(sep)
        if len(parts) == 2 and parts[0] in _CHOICES["distance_calculation"] \
                and parts[1] in _CHOICES["temporal_encoding"]:
            return parts[0], parts[1]
    raise ConfigError(f"temporal mode must look like absolute-sinusoid, got {text!r}")
