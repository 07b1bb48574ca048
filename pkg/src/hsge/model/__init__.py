"""The HSGE parser: features, network, decoding and training."""

from .config import ConfigError, ModelConfig, load_config, parse_config, parse_temporal
from .features import Featurizer, LabelSpace, WordVocab, collate
from .inference import AssemblyError, Prediction, predict_dialogues, predict_examples
from .network import HSGEModel, TemporalRangeError

__all__ = [
    "ConfigError", "ModelConfig", "load_config", "parse_config", "parse_temporal",
    "Featurizer", "LabelSpace", "WordVocab", "collate",
    "AssemblyError", "Prediction", "predict_dialogues", "predict_examples",
    "HSGEModel", "TemporalRangeError",
]
